"""Command-line entry point: ``ksm <subcommand> ...``.

Every subcommand prints its JSON report on stdout.  With ``--out DIR`` the
report, the CSV tables and a ``manifest.json`` are written to ``DIR``;
``ksm replay DIR/manifest.json --out OTHER`` reruns the recorded
configuration.  Exit codes: 0 success, 1 verification failure, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path


from . import __version__
from .bound_verifier import (
    DEFAULT_ZETA_GRID,
    bound_report,
    check_corollary_bound,
    check_theorem_bound,
    clt_diagnostics,
)
from .broadcast_sim import SimSpec, census_distribution_check, default_threads, run_batch, run_per_root
from .config import RunManifest, load_model, model_document, parse_model, sha256_file
from .errors import KsmError
from .exact_oracles import DEFAULT_NODES, brute_force, mgf_exact, moments_exact, square_mgf_quadrature
from .phylo_cov import make_pair, run_cov_experiment
from .spectral import Phase, analyze, cprime_lower_bound

log = logging.getLogger("ksm")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


@dataclass
class Outcome:
    code: int
    report: dict
    files: dict[str, str] = field(default_factory=dict)


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}")


def _root(text: str) -> str:
    if text == "stationary" or (text.startswith("state:") and text[6:].isdigit() and int(text[6:]) >= 1):
        return text
    raise argparse.ArgumentTypeError("expected 'stationary' or 'state:<i>' with i >= 1")


def _root_state(text: str) -> int | None:
    return None if text == "stationary" else int(text[6:]) - 1


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _spectral(config):
    channel, b = parse_model(config["model"])
    return analyze(channel, b)


def cmd_analyze(config, threads) -> Outcome:
    sd = _spectral(config)
    report = sd.to_dict()
    report["c_prime_floor"] = cprime_lower_bound(sd) if sd.phase is Phase.KESTEN_STIGUM else None
    return Outcome(EXIT_OK, report)


def cmd_simulate(config, threads) -> Outcome:
    sd = _spectral(config)
    spec = SimSpec(sd, config["n"], config["replicas"], config["seed"], _root_state(config["root"]))
    log.info("simulating %d replicas at level %d", spec.replicas, spec.n)
    batch = run_batch(
        spec, config["zeta"], square_zeta_grid=config["square_zeta"],
        threads=threads, keep_rows=config["replicas_csv"],
    )
    report = batch.to_dict()
    census = census_distribution_check(spec, batch)
    report["census_check"] = {
        "applicable": census.applicable,
        "frequencies": list(census.frequencies),
        "pi": list(census.pi),
        "max_deviation": census.max_deviation if census.applicable else None,
    }
    files = {}
    if config["replicas_csv"]:
        r = batch.rows
        header = ["replica", "root_state", "s_n", "q_n"] + [f"census_{i + 1}" for i in range(sd.k)]
        rows = (
            [int(a), int(b) + 1, float(s), float(q)] + [int(c) for c in cen]
            for a, b, s, q, cen in zip(r["replica"], r["root_state"], r["s_n"], r["q_n"], r["census"])
        )
        files["replicas.csv"] = _csv(header, rows)
    return Outcome(EXIT_OK, report, files)


def cmd_oracle(config, threads) -> Outcome:
    sd = _spectral(config)
    n, zeta, mode = config["n"], config["zeta"], config["mode"]
    if mode == "mgf":
        table = mgf_exact(sd, n, zeta)
        rows = [(lv, i + 1, z, g) for lv, i, z, g in table.rows()]
        report = {"mode": mode, "levels": table.levels, "zeta_grid": table.zeta_grid.tolist(),
                  "log_mgf": table.values.tolist()}
        return Outcome(EXIT_OK, report, {"table.csv": _csv(["n", "i", "zeta", "value"], rows)})
    if mode == "moments":
        mt = moments_exact(sd, n)
        rows = [(lv, i + 1, float(mt.mean[lv, i]), float(mt.second[lv, i]))
                for lv in range(n + 1) for i in range(sd.k)]
        report = {"mode": mode, "mean": mt.mean.tolist(), "second_moment": mt.second.tolist()}
        return Outcome(EXIT_OK, report, {"table.csv": _csv(["n", "i", "mean", "second_moment"], rows)})
    if mode == "brute":
        report = {"mode": mode, "n": n, "per_root_state": []}
        rows = []
        for i in range(sd.k):
            bf = brute_force(sd, n, i)
            lm = bf.log_mgf(zeta)
            rows += [(n, i + 1, float(z), float(v)) for z, v in zip(zeta, lm)]
            report["per_root_state"].append({
                "root_state": i + 1, "configurations": int(bf.probs.size),
                "mean": bf.mean, "second_moment": bf.second_moment,
                "distribution": [list(p) for p in bf.distribution()],
            })
        return Outcome(EXIT_OK, report, {"table.csv": _csv(["n", "i", "zeta", "value"], rows)})
    # square
    rows, entries = [], []
    for z in zeta:
        sq = square_mgf_quadrature(sd, n, z, config["nodes"])
        entries.append({"zeta": z, "values": sq.values.tolist(), "converged": sq.converged,
                        "relative_change": sq.relative_change})
        rows += [(n, i + 1, z, float(v)) for i, v in enumerate(sq.values)]
    report = {"mode": mode, "n": n, "nodes": config["nodes"], "square_mgf": entries}
    code = EXIT_OK if all(e["converged"] for e in entries) else EXIT_FAIL
    return Outcome(code, report, {"table.csv": _csv(["n", "i", "zeta", "value"], rows)})


def cmd_verify_mgf(config, threads) -> Outcome:
    sd = _spectral(config)
    rep = bound_report(sd, config["n_max"], config["zeta"], model_id=config.get("model_id", ""))
    c = rep.empirical_c[-1] + 1e-9 if config["c"] == "auto" else float(config["c"])
    rep.declared_c = float(c)
    rep.verdicts = [bool(e <= c) for e in rep.empirical_c]
    check = check_theorem_bound(rep, c)
    report = rep.to_dict()
    report["theorem_check"] = {"c": check.c, "passed": check.passed, "first_violation": check.first_violation}
    if config["zeta_probe"] is not None:
        cor = check_corollary_bound(sd, range(config["n_max"] + 1), config["zeta_probe"],
                                    require_convergence=False)
        report["corollary"] = cor.to_dict()
    ok = check.passed and (rep.uniformly_bounded or not config["assert_bounded"])
    rows = [(n, i + 1, z, g, bd, m) for n, i, z, g, bd, m in check.rows(rep.table, rep.nu)]
    files = {"bound.csv": _csv(["n", "i", "zeta", "gamma", "bound", "margin"], rows)}
    return Outcome(EXIT_OK if ok else EXIT_FAIL, report, files)


def cmd_clt(config, threads) -> Outcome:
    sd = _spectral(config)
    n = config["n"]
    batch = run_per_root(sd, n, config["replicas"], config["seed"], threads=threads)
    spec = SimSpec(sd, n, config["replicas"], config["seed"])
    rep = clt_diagnostics(spec, batch)
    header = ["n", "root_state", "count", "mean", "mean_se", "variance", "skewness", "excess_kurtosis"]
    rows = [[n] + [r[h] for h in header[1:]] for r in rep.per_root]
    code = EXIT_OK if rep.gaussian_consistent else EXIT_FAIL
    return Outcome(code, rep.to_dict(), {"clt.csv": _csv(header, rows)})


def cmd_cov(config, threads) -> Outcome:
    sd = _spectral(config)
    u, v = config["pair"]
    pair = make_pair(config["m"], u, v, sd.b, config["n"])
    exp = run_cov_experiment(sd, config["n"], pair, config["ell"], config["repeats"], config["seed"])
    rows = [(r, float(x)) for r, x in enumerate(exp.values)]
    return Outcome(EXIT_OK, exp.to_dict(sd), {"cov.csv": _csv(["repeat", "cov_hat"], rows)})


COMMANDS = {
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
    "oracle": cmd_oracle,
    "verify-mgf": cmd_verify_mgf,
    "clt": cmd_clt,
    "cov": cmd_cov,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ksm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name, help_text, model=True):
        p = sub.add_parser(name, help=help_text)
        if model:
            p.add_argument("--model", required=True, help="model JSON file {k, M, b}")
        p.add_argument("--out", type=Path, help="directory for report, tables and manifest")
        p.add_argument("--threads", type=int, help="worker threads (default: $KSM_THREADS or CPU count)")
        return p

    add("analyze", "spectral data of a channel")

    p = add("simulate", "Monte Carlo batch of S_n / Q_n")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--root", type=_root, default="stationary", help="stationary | state:<i> (1-based)")
    p.add_argument("--replicas", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--zeta", type=_floats, default=[-1.0, -0.5, 0.5, 1.0])
    p.add_argument("--square-zeta", type=_floats, default=[])
    p.add_argument("--replicas-csv", action="store_true", help="also write per-replica rows")

    p = add("oracle", "exact MGF / moment / enumeration / square-MGF tables")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--zeta", type=_floats, default=list(DEFAULT_ZETA_GRID))
    p.add_argument("--mode", choices=["mgf", "moments", "brute", "square"], default="mgf")
    p.add_argument("--nodes", type=int, default=DEFAULT_NODES)

    p = add("verify-mgf", "check the exponential-moment bound on exact tables")
    p.add_argument("--n-max", type=int, default=12)
    p.add_argument("--zeta", type=_floats, default=list(DEFAULT_ZETA_GRID))
    p.add_argument("--c", default="auto", help="'auto' or a constant")
    p.add_argument("--zeta-probe", type=float, default=0.05, help="square-MGF probe (negative to skip)")
    p.add_argument("--no-assert-bounded", dest="assert_bounded", action="store_false")

    p = add("clt", "Gaussian-consistency of Q_n below the threshold")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--replicas", type=int, required=True, help="replicas per root state")
    p.add_argument("--seed", type=int, default=0)

    p = add("cov", "deep covariance estimator for a node pair")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--pair", required=True, help="u,v level-m node indices (0-based)")
    p.add_argument("--ell", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=1)

    p = add("replay", "rerun the configuration recorded in a manifest", model=False)
    p.add_argument("manifest", type=Path)
    return parser


def resolve_config(args) -> dict:
    """Everything that determines a run's outputs, with the model embedded."""
    channel, b = load_model(args.model)
    config = {"command": args.command, "model": model_document(channel, b),
              "model_id": Path(args.model).stem}
    skip = {"command", "model", "out", "threads"}
    for key, value in vars(args).items():
        if key not in skip:
            config[key] = value
    if args.command == "cov":
        try:
            u, v = (int(x) for x in args.pair.split(","))
        except ValueError:
            raise KsmError(f"--pair must be 'u,v', got {args.pair!r}") from None
        config["pair"] = [u, v]
    if args.command == "verify-mgf" and config["zeta_probe"] is not None and config["zeta_probe"] < 0:
        config["zeta_probe"] = None
    if args.command == "verify-mgf" and config["c"] != "auto":
        try:
            float(config["c"])
        except ValueError:
            raise KsmError(f"--c must be 'auto' or a number, got {config['c']!r}") from None
    return config


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def run(config: dict, out: Path | None, threads: int | None) -> Outcome:
    threads = threads or default_threads()
    started = _now()
    outcome = COMMANDS[config["command"]](config, threads)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        outputs = {"report.json": json.dumps(outcome.report, indent=2) + "\n", **outcome.files}
        for name, text in outputs.items():
            (out / name).write_text(text, encoding="utf-8")
        manifest = RunManifest(
            command=config["command"], config={**config, "threads": threads},
            master_seed=config.get("seed"), started=started, finished=_now(),
            outputs={name: sha256_file(out / name) for name in outputs},
        )
        manifest.write(out / "manifest.json")
    return outcome


def dispatch(argv) -> int:
    parser = build_parser()
    argv = list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "replay":
            manifest = RunManifest.read(args.manifest)
            config = {k: v for k, v in manifest.config.items() if k != "threads"}
            if config.get("command") not in COMMANDS:
                raise KsmError(f"manifest names unknown command {config.get('command')!r}")
        else:
            config = resolve_config(args)
        outcome = run(config, args.out, args.threads)
    except (KsmError, ValueError) as exc:
        print(f"ksm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(json.dumps(outcome.report, indent=2))
    return outcome.code


def main() -> None:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(name)s: %(message)s")
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
