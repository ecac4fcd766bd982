import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from gpseg.blowup import ProfileError
from gpseg.cli import EXIT_CONFIG, EXIT_GATE, GateFailure, gate, main, validate_report
from gpseg.config import ConfigError, config_from_dict
from gpseg.matching import MatchingError
from gpseg.outer import DegenerateInputError

SMALL = {
    "dim": 3,
    "domain": {"kind": "ball"},
    "f": {"kind": "power", "lam": 0.0, "p": 1.0},
    "h": {"kind": "power", "lam": 0.0, "p": 1.0},
    "g_list": [1e4, 1e5, 1e6, 1e7],
    "grid": {"base_count": 4000},
    "blowup": {"T": 6.0, "n_nodes": 4001},
    "seed": 3,
    "probe_samples": 4,
}


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def run(tmp_path, sub, cfg=SMALL, out="out", extra=()):
    return main([sub, "--config", write_config(tmp_path, cfg), "--out", str(tmp_path / out), *extra])


def test_bad_gamma_exits_2_and_names_field(tmp_path, capsys):
    assert run(tmp_path, "outer", {**SMALL, "gamma": 1.5}) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "gamma" in err


@pytest.mark.parametrize(
    "patch, field",
    [
        ({"g_list": [500.0, 1e5]}, "g_list[0]"),
        ({"g_list": [1e5, 1e4]}, "g_list"),
        ({"colour": 1}, "colour"),
        ({"f": {"kind": "power", "lam": 0.0}}, "f.p"),
        ({"f": {"kind": "quartic"}}, "f.kind"),
        ({"domain": {"kind": "annulus", "inner_radius": 1.2}}, "domain.inner_radius"),
        ({"blowup": {"n_nodes": 4000}}, "blowup.n_nodes"),
        ({"dim": 2.5}, "dim"),
    ],
)
def test_config_validation_names_field(patch, field):
    with pytest.raises(ConfigError) as exc:
        config_from_dict({**SMALL, **patch})
    assert exc.value.field == field


def test_malformed_json_and_flags(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    assert main(["outer", "--config", str(bad)]) == EXIT_CONFIG
    assert run(tmp_path, "verify", extra=("--g", "1e6")) == EXIT_CONFIG
    assert run(tmp_path, "verify", {**SMALL, "g_list": [1e4, 1e5, 1e6]}) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "--g" in err and "g_list" in err


def test_config_hash_stable_under_key_order():
    a = config_from_dict(SMALL)
    b = config_from_dict(dict(reversed(list(SMALL.items()))))
    assert a.digest() == b.digest()
    # defaults filled in explicitly give the same experiment
    c = config_from_dict({**SMALL, "gamma": 0.5, "tolerances": {"newton": 1e-9}})
    assert c.digest() == a.digest()
    assert config_from_dict({**SMALL, "seed": 4}).digest() != a.digest()
    assert config_from_dict({**SMALL, "output": "elsewhere"}).digest() == a.digest()


def test_profile_twice_uses_cache(tmp_path):
    assert run(tmp_path, "profile") == 0
    first = (tmp_path / "out" / "profile.csv").read_bytes()
    report1 = (tmp_path / "out" / "report.json").read_bytes()
    assert run(tmp_path, "profile") == 0
    assert (tmp_path / "out" / "profile.csv").read_bytes() == first
    assert (tmp_path / "out" / "report.json").read_bytes() == report1
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["stages"]["profile"] == "pass (cached)"
    header = first.split(b"\n", 1)[0]
    assert header == b"t,U,V,dU,dV"
    rep = json.loads(report1)
    assert rep["stages"]["profile"]["k"] > 0
    assert rep["stages"]["outer"]["psi0"] > 0


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("solve")
    status = main(["solve", "--config", write_config(tmp, SMALL), "--out", str(tmp / "out"), "--g", "1e6"])
    return status, tmp / "out"


def test_solve_artifacts(solved):
    status, out = solved
    assert status == 0
    rep = json.loads((out / "report.json").read_text())
    validate_report(rep)
    entry = rep["stages"]["solve"]["1.000e06"]
    assert entry["positive"] and entry["newton_iterations"] <= 6
    par = rep["stages"]["construct"]["1.000e06"]["matching"]
    for key in ("xi", "mu1", "delta1", "A0", "B0", "A1", "B1", "a1", "b1"):
        assert key in par
    assert "b0" in rep["stages"]["inner"]
    lines = (out / "solve_g1.000e06.csv").read_text().splitlines()
    assert lines[0] == "r,u,v,phi,psi,log_u,log_v"
    table = np.loadtxt(out / "solve_g1.000e06.csv", delimiter=",", skiprows=1)
    assert table.shape[1] == 7
    # 17 significant digits round-trip doubles exactly
    mid = lines[len(lines) // 2].split(",")
    assert all(float(x) == float(f"{float(x):.17g}") for x in mid)


def test_manifest_lists_every_file(solved):
    _, out = solved
    manifest = json.loads((out / "manifest.json").read_text())
    listed = {f["path"]: f["sha256"] for f in manifest["files"]}
    on_disk = {p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file()} - {"manifest.json"}
    assert set(listed) == on_disk
    for path, digest in listed.items():
        assert hashlib.sha256((out / path).read_bytes()).hexdigest() == digest
    assert manifest["exit_status"] == 0 and manifest["started"] <= manifest["finished"]


def test_solve_report_is_deterministic(solved, tmp_path):
    _, out = solved
    assert main(["solve", "--config", write_config(tmp_path, SMALL), "--out", str(tmp_path / "b"), "--g", "1e6"]) == 0
    assert (tmp_path / "b" / "report.json").read_bytes() == (out / "report.json").read_bytes()


def test_gate_failure_exits_nonzero_and_names_gate(tmp_path, capsys):
    # a positive-definite reaction term has no sign-changing limit solution
    cfg = {**SMALL, "f": {"kind": "cubic", "a": 1.0, "b": 1.0}, "h": {"kind": "cubic", "a": 1.0, "b": 1.0}}
    assert run(tmp_path, "outer", cfg) == EXIT_GATE
    assert "gate 'limit-problem'" in capsys.readouterr().err
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["exit_status"] == EXIT_GATE and "limit-problem" in manifest["error"]


@pytest.mark.parametrize(
    "exc, name",
    [
        (DegenerateInputError("slope_gap", "equal slopes"), "nondegeneracy"),
        (MatchingError("order 1: condition number 1e12"), "matching-conditioning"),
        (ProfileError("truncation", "tail too large"), "truncation"),
        (ValueError("anything else"), "construct"),
    ],
)
def test_gate_names(exc, name):
    with pytest.raises(GateFailure) as info:
        with gate("construct"):
            raise exc
    assert info.value.gate == name


def test_report_requires_provenance():
    rep = {"schema": "x", "config_hash": "h", "subcommand": "s", "config": {}, "stages": {"a": {"x": 1.0}}}
    with pytest.raises(ValueError, match="source"):
        validate_report(rep)
    rep["stages"]["a"]["source"] = "op"
    validate_report(rep)


def test_entry_point_runs():
    res = subprocess.run([sys.executable, "-m", "gpseg.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "gpseg" in res.stdout


def test_default_profile_matches_golden_report(tmp_path):
    from pathlib import Path

    root = Path(__file__).resolve().parents[1]
    golden = json.loads((root / "docs" / "golden" / "default-report.json").read_text())
    cfg = json.loads((root / "configs" / "default.json").read_text())
    assert run(tmp_path, "profile", cfg) == 0
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    assert rep["config_hash"] == golden["config_hash"]
    for stage in ("outer", "profile"):
        for key, want in golden["stages"][stage].items():
            if isinstance(want, float):
                assert rep["stages"][stage][key] == pytest.approx(want, rel=1e-9, abs=1e-12), (stage, key)
