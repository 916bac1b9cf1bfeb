"""Model files and run manifests."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .errors import ParseError
from .spectral import ChannelMatrix, validate_channel


def parse_model(doc: dict) -> tuple[ChannelMatrix, int]:
    """Validate a ``{"k", "M", "b"}`` document."""
    if not isinstance(doc, dict):
        raise ParseError("model document must be a JSON object")
    for name in ("k", "M", "b"):
        if name not in doc:
            raise ParseError(f"model is missing required field {name!r}")
    k, M, b = doc["k"], doc["M"], doc["b"]
    if not isinstance(k, int) or isinstance(k, bool):
        raise ParseError(f"field 'k' must be an integer, got {k!r}")
    if not isinstance(b, int) or isinstance(b, bool) or b < 2:
        raise ParseError(f"field 'b' must be an integer >= 2, got {b!r}")
    if not isinstance(M, list) or not all(isinstance(r, list) for r in M):
        raise ParseError("field 'M' must be a list of rows")
    if len(M) != k or any(len(r) != k for r in M):
        raise ParseError(f"field 'M' must be {k}x{k} to match 'k'")
    try:
        rows = [[float(x) for x in r] for r in M]
    except (TypeError, ValueError) as exc:
        raise ParseError(f"field 'M' has a non-numeric entry: {exc}") from None
    return validate_channel(rows), b


def load_model(path) -> tuple[ChannelMatrix, int]:
    """Read and validate a model file.

    Raises ParseError for unreadable or malformed files; channel validation
    errors (NotStochastic, ...) propagate unchanged.
    """
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ParseError(f"cannot read model file {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"model file {path} is not valid JSON: {exc}") from None
    return parse_model(doc)


def model_document(channel: ChannelMatrix, b: int) -> dict:
    return {"k": channel.k, "M": channel.entries.tolist(), "b": b}


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    master_seed: int | None = None
    tool_version: str = __version__
    started: str = ""
    finished: str = ""
    outputs: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        try:
            doc = json.loads(text)
            return cls(**doc)
        except (json.JSONDecodeError, TypeError) as exc:
            raise ParseError(f"invalid manifest: {exc}") from None

    def write(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def read(cls, path) -> "RunManifest":
        try:
            return cls.from_json(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ParseError(f"cannot read manifest {path}: {exc}") from None
