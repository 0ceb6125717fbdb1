import json
import subprocess
import sys

import numpy as np
import pytest

from lrpmor.bench import write_matrix_market
from lrpmor.cli import main


def run(*argv):
    return main([str(a) for a in argv])


def _json(path):
    return json.loads(path.read_text())


@pytest.fixture(scope="module")
def penzl_reduced(tmp_path_factory):
    out = tmp_path_factory.mktemp("reduced")
    assert run("reduce", "--builtin", "penzl", "--tail", 100, "--out", out) == 0
    return out


def test_generate_penzl_manifest_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("generate", "--builtin", "penzl", "--tail", 100, "--out", a) == 0
    assert run("generate", "--builtin", "penzl", "--tail", 100, "--out", b) == 0
    mtx = sorted(p.name for p in a.glob("*.mtx"))
    assert mtx == ["A0.mtx", "B.mtx", "C.mtx", "E.mtx", "U.mtx", "V.mtx"]
    man = _json(a / "manifest.json")
    assert man["n"] == 106 and man["k"] == 3 and man["mode"] == "general"
    for f in a.iterdir():
        assert f.read_bytes() == (b / f.name).read_bytes()


def test_generate_oscillator_dimension(tmp_path):
    assert run("generate", "--builtin", "oscillator", "--d", 100, "--out", tmp_path) == 0
    assert _json(tmp_path / "manifest.json")["n_states"] == 402


def test_reduce_penzl_summary(penzl_reduced):
    summary = _json(penzl_reduced / "summary.json")
    assert summary["orders"] == [10, 1, 6, 1]
    assert max(summary["eps"]) <= 1e-6
    assert summary["settings"]["tol"] == 1e-6
    assert "reduction" in _json(penzl_reduced / "timing.json")
    assert (penzl_reduced / "hsv.csv").read_text().startswith("subsystem,index,hsv")
    assert (penzl_reduced / "H3_A.mtx").is_file()


def test_reduce_full_orders_have_zero_bound(tmp_path):
    assert run("reduce", "--builtin", "penzl", "--tail", 10, "--orders", "full",
               "--out", tmp_path) == 0
    assert _json(tmp_path / "summary.json")["eps"] == [0.0] * 4


def test_reduction_time_grows_with_model_size(tmp_path):
    times = []
    for d in (50, 100, 200):
        out = tmp_path / f"d{d}"
        assert run("reduce", "--builtin", "oscillator", "--d", d, "--out", out) == 0
        times.append(_json(out / "timing.json")["reduction"])
    assert times[0] < times[1] < times[2]


def test_sample_bundle(tmp_path):
    assert run("sample", "--builtin", "penzl", "--N", 500, "--out", tmp_path) == 0
    man = _json(tmp_path / "manifest.json")
    assert man["n_points"] == 500
    for name, shape in (("H1", (500, 1, 1)), ("H2", (500, 1, 6)), ("H3", (500, 6, 6)),
                        ("H4", (500, 6, 1))):
        assert np.load(tmp_path / f"{name}.npy").shape == shape


def test_vf_exact_fit_and_warm_start(tmp_path):
    # tail 4: H at p = 0 has the four poles -1..-4
    samples = tmp_path / "s"
    assert run("sample", "--builtin", "penzl", "--tail", 4, "--N", 100, "--window", "0.01,100",
               "--out", samples) == 0
    assert run("vf", "--samples", samples, "--p", "0,0,0", "--order", 4,
               "--out", tmp_path / "v0") == 0
    assert _json(tmp_path / "v0" / "vf.json")["e"] < 1e-12
    # at p > 0 the true order is 3 pairs + 4 real poles
    assert run("vf", "--samples", samples, "--p", "1,2,3", "--order", 10,
               "--out", tmp_path / "v1") == 0
    assert run("vf", "--samples", samples, "--p", "1.01,2,3", "--warm-start", tmp_path / "v1",
               "--out", tmp_path / "v2") == 0
    rep = _json(tmp_path / "v2" / "vf.json")
    assert rep["iterations"] <= 2 and rep["converged"] and rep["order"] == 10
    assert (tmp_path / "v2" / "model_A.mtx").is_file()


def test_optimize_loose_tolerance_single_pass(tmp_path):
    assert run("optimize", "--builtin", "penzl", "--tail", 20, "--pipeline", "alg1",
               "--p0", "10,20,30", "--bounds", "0:100", "--tau", 1e6, "--out", tmp_path) == 0
    rep = _json(tmp_path / "report.json")
    assert len(rep["report"]["order_history"]) == 1 and rep["failure"] is None
    assert rep["settings"]["tau"] == 1e6
    trace = (tmp_path / "trace.csv").read_text().splitlines()
    assert trace[0] == "step,total_order,error_estimate"


def test_optimize_with_full_reports_acceleration(tmp_path):
    assert run("optimize", "--builtin", "penzl", "--tail", 20, "--pipeline", "alg2",
               "--p0", "10,20,30", "--bounds", "0:100", "--tau", 1e6, "--r0", 12,
               "--full", "--out", tmp_path) == 0
    timing = _json(tmp_path / "timing.json")
    assert timing["acceleration_factor"] > 0
    assert "full_report" in _json(tmp_path / "report.json")


def test_optimize_budget_failure_exits_2(tmp_path):
    code = run("optimize", "--builtin", "penzl", "--tail", 20, "--p0", "10,20,30",
               "--bounds", "0:100", "--tau", 1e-300, "--max-outer", 1, "--orders", "2,1,2,1",
               "--out", tmp_path)
    assert code == 2
    rep = _json(tmp_path / "report.json")
    assert rep["failure"].startswith("MaxOuterIterations")


def test_check_penzl_bundle_passes(tmp_path, penzl_reduced):
    assert run("check", "--reduced", penzl_reduced, "--box", "1:100", "--samples", 100,
               "--out", tmp_path) == 0
    rep = _json(tmp_path / "check.json")
    assert rep["passed"] and rep["stability"]["n_samples"] == 100
    assert rep["settings"]["seed"] == 42


def test_check_is_seeded(tmp_path, penzl_reduced):
    for name in ("a", "b"):
        run("check", "--reduced", penzl_reduced, "--box", "1:100", "--seed", 3,
            "--out", tmp_path / name)
    assert (tmp_path / "a" / "check.json").read_bytes() == \
        (tmp_path / "b" / "check.json").read_bytes()


def test_check_detects_unstable_first_subsystem(tmp_path):
    bundle = tmp_path / "bad"
    bundle.mkdir()
    stable = (np.array([[-1.0]]), np.array([[1.0]]), np.array([[1.0]]))
    for name in ("H1", "H2", "H3", "H4"):
        A, B, C = stable
        if name == "H1":
            A = np.array([[0.5]])
        for key, X in zip("ABC", (A, B, C)):
            write_matrix_market(bundle / f"{name}_{key}.mtx", X)
    (bundle / "summary.json").write_text(json.dumps(
        {"orders": [1] * 4, "eps": [0.0] * 4, "mode": "general", "param_map": [0]}))
    assert run("check", "--reduced", bundle, "--box", "0:1", "--out", tmp_path / "c") == 1
    rep = _json(tmp_path / "c" / "check.json")
    assert not rep["passed"] and rep["stability"]["worst_real_part"] > 0


def test_check_oscillator_positive_real(tmp_path):
    red = tmp_path / "red"
    assert run("reduce", "--builtin", "oscillator", "--d", 50, "--out", red) == 0
    assert run("check", "--reduced", red, "--box", "0:5000", "--samples", 20, "--pr",
               "--out", tmp_path / "c") == 0
    assert _json(tmp_path / "c" / "check.json")["positive_real"]["passed"]


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[model]\nbuiltin = penzl\ntail = 10\n\n[reduce]\ntol = 1e-3\n")
    assert run("--config", cfg, "reduce", "--out", tmp_path / "a") == 0
    a = _json(tmp_path / "a" / "summary.json")
    assert a["model"]["n"] == 16 and a["settings"]["tol"] == "1e-3"
    assert run("--config", cfg, "reduce", "--tol", "1e-8", "--out", tmp_path / "b") == 0
    b = _json(tmp_path / "b" / "summary.json")
    assert b["settings"]["tol"] == "1e-8" and sum(b["orders"]) > sum(a["orders"])


def test_model_directory_round_trip(tmp_path):
    assert run("generate", "--builtin", "penzl", "--tail", 10, "--out", tmp_path / "m") == 0
    assert run("reduce", "--model", tmp_path / "m", "--out", tmp_path / "r") == 0
    assert run("reduce", "--builtin", "penzl", "--tail", 10, "--out", tmp_path / "r2") == 0
    assert _json(tmp_path / "r" / "summary.json")["orders"] == \
        _json(tmp_path / "r2" / "summary.json")["orders"]


def test_exit_codes(tmp_path, capsys):
    assert run("reduce", "--out", tmp_path) == 1                      # no model source
    assert run("reduce", "--builtin", "nope", "--out", tmp_path) == 1  # usage error
    assert run("vf", "--samples", tmp_path / "missing", "--p", "0", "--out", tmp_path) == 1
    assert run("optimize", "--builtin", "penzl", "--pipeline", "alg9", "--out", tmp_path) == 1
    # unstable A0 is a numerical failure that names the subsystems
    m = tmp_path / "unstable"
    assert run("generate", "--builtin", "penzl", "--tail", 2, "--out", m) == 0
    A0 = np.eye(8)
    write_matrix_market(m / "A0.mtx", A0)
    capsys.readouterr()
    assert run("reduce", "--model", m, "--out", tmp_path / "r") == 2
    assert "H1" in capsys.readouterr().err


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "lrpmor.cli", "generate", "--builtin", "penzl",
                           "--tail", "3", "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "manifest.json").is_file()
