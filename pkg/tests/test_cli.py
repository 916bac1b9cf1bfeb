import csv
import json

import pytest

from ksm import __version__
from ksm.cli import dispatch
from ksm.config import RunManifest, load_model, sha256_file
from ksm.errors import NotStochastic, ParseError


def write_model(path, p=0.1, b=2, **override):
    doc = {"k": 2, "M": [[1 - p, p], [p, 1 - p]], "b": b}
    doc.update(override)
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture
def ks_model(tmp_path):
    return write_model(tmp_path / "bsc01.json")


@pytest.fixture
def sub_model(tmp_path):
    return write_model(tmp_path / "bsc03.json", p=0.3)


def run_cli(capsys, *argv):
    code = dispatch(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_load_model(tmp_path):
    channel, b = load_model(write_model(tmp_path / "m.json"))
    assert channel.k == 2 and b == 2


def test_load_model_bad_row(tmp_path):
    path = write_model(tmp_path / "m.json", M=[[0.9, 0.2], [0.1, 0.9]])
    with pytest.raises(NotStochastic, match="row 0"):
        load_model(path)


def test_load_model_missing_field(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps({"k": 2, "M": [[0.9, 0.1], [0.1, 0.9]]}))
    with pytest.raises(ParseError, match="'b'"):
        load_model(path)
    path.write_text("{not json")
    with pytest.raises(ParseError):
        load_model(path)


def test_analyze(capsys, ks_model):
    code, out, _ = run_cli(capsys, "analyze", "--model", ks_model)
    assert code == 0
    doc = json.loads(out)
    assert doc["lambda"] == pytest.approx(0.8)
    assert doc["c_prime_floor"] == pytest.approx(25 / 14)


def test_usage_errors(capsys, ks_model, tmp_path):
    assert run_cli(capsys, )[0] == 2
    assert run_cli(capsys, "frobnicate")[0] == 2
    assert run_cli(capsys, "simulate", "--model", ks_model)[0] == 2
    assert run_cli(capsys, "simulate", "--model", ks_model, "--n", "2", "--replicas", "5",
                   "--root", "state:0")[0] == 2
    bad = write_model(tmp_path / "bad.json", M=[[0.9, 0.2], [0.1, 0.9]])
    code, _, err = run_cli(capsys, "analyze", "--model", bad)
    assert code == 2 and "row 0" in err


def test_version(capsys):
    code, out, _ = run_cli(capsys, "--version")
    assert code == 0 and __version__ in out


def test_verify_mgf_subcritical_fails(capsys, sub_model):
    code, out, _ = run_cli(capsys, "verify-mgf", "--model", sub_model, "--zeta-probe", "-1")
    assert code == 1
    doc = json.loads(out)
    assert not doc["uniformly_bounded"]
    assert doc["theorem_check"]["passed"]


def test_verify_mgf_with_explicit_c(capsys, ks_model, tmp_path):
    code, out, _ = run_cli(capsys, "verify-mgf", "--model", ks_model, "--c", "0",
                           "--no-assert-bounded", "--out", str(tmp_path / "o"))
    assert code == 1
    assert json.loads(out)["theorem_check"]["first_violation"] is not None
    with open(tmp_path / "o" / "bound.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert set(rows[0]) == {"n", "i", "zeta", "gamma", "bound", "margin"}
    assert {r["i"] for r in rows} == {"1", "2"}


def test_verify_mgf_corollary_section(capsys, ks_model):
    code, out, _ = run_cli(capsys, "verify-mgf", "--model", ks_model, "--n-max", "10",
                           "--no-assert-bounded")
    assert code == 0
    cor = json.loads(out)["corollary"]
    assert cor["zeta_probe"] == 0.05 and cor["stabilized"]


def test_clt_on_ks_model_is_usage_error(capsys, ks_model):
    code, _, err = run_cli(capsys, "clt", "--model", ks_model, "--n", "4", "--replicas", "10000")
    assert code == 2 and "lambda" in err


@pytest.mark.parametrize("mode", ["mgf", "moments", "brute", "square"])
def test_oracle_modes(capsys, ks_model, tmp_path, mode):
    out_dir = tmp_path / mode
    zeta = "0.05" if mode == "square" else "-1,0.5"
    code, out, _ = run_cli(capsys, "oracle", "--model", ks_model, "--n", "2", "--mode", mode,
                           f"--zeta={zeta}", "--out", str(out_dir))
    assert code == 0
    assert json.loads(out)["mode"] == mode
    assert (out_dir / "table.csv").read_text().startswith("n,i,")


def test_simulate_writes_manifest_and_replays(capsys, ks_model, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["simulate", "--model", ks_model, "--n", "3", "--replicas", "3000", "--seed", "4",
            "--root", "state:2", "--replicas-csv"]
    code, out, _ = run_cli(capsys, *args, "--out", str(a), "--threads", "1")
    assert code == 0
    doc = json.loads(out)
    assert [r["root_state"] for r in doc["per_root_state"]] == [2]
    manifest = RunManifest.read(a / "manifest.json")
    assert manifest.command == "simulate" and manifest.master_seed == 4
    assert manifest.tool_version == __version__
    for name, digest in manifest.outputs.items():
        assert sha256_file(a / name) == digest
    with open(a / "replicas.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3000 and {r["root_state"] for r in rows} == {"2"}
    assert all(int(r["census_1"]) + int(r["census_2"]) == 8 for r in rows)

    code, out2, _ = run_cli(capsys, "replay", str(a / "manifest.json"), "--out", str(b), "--threads", "3")
    assert code == 0 and out2 == out
    for name in manifest.outputs:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_manifest_round_trip():
    m = RunManifest("cov", {"n": 5, "pair": [0, 1]}, master_seed=9, outputs={"x": "ab"})
    assert RunManifest.from_json(m.to_json()) == m
    with pytest.raises(ParseError):
        RunManifest.from_json("[]")


def test_replay_missing_manifest(capsys, tmp_path):
    assert run_cli(capsys, "replay", str(tmp_path / "none.json"))[0] == 2


def test_threads_from_environment(capsys, ks_model, tmp_path, monkeypatch):
    monkeypatch.setenv("KSM_THREADS", "2")
    run_cli(capsys, "simulate", "--model", ks_model, "--n", "2", "--replicas", "10",
            "--out", str(tmp_path / "o"))
    assert RunManifest.read(tmp_path / "o" / "manifest.json").config["threads"] == 2


def test_cov_command(capsys, ks_model, tmp_path):
    code, out, _ = run_cli(capsys, "cov", "--model", ks_model, "--n", "4", "--m", "1",
                           "--pair", "0,1", "--ell", "500", "--repeats", "3", "--out", str(tmp_path / "c"))
    assert code == 0
    doc = json.loads(out)
    assert doc["distance"] == 2 and doc["target"] == pytest.approx(0.64)
    assert len((tmp_path / "c" / "cov.csv").read_text().splitlines()) == 4
    assert run_cli(capsys, "cov", "--model", ks_model, "--n", "4", "--m", "1",
                   "--pair", "0,0", "--ell", "5")[0] == 2
    assert run_cli(capsys, "cov", "--model", ks_model, "--n", "4", "--m", "1",
                   "--pair", "zero", "--ell", "5")[0] == 2
