import json
import subprocess
import sys

import pytest

from parabolic_lab.cli import ConfigError, load_config, main

SMALL_FLAT = {"params": {"cells_per_unit": 8, "depth": 3}}


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def run(tmp_path, sub, cfg, out="out", extra=()):
    return main([sub, "--config", write(tmp_path, cfg), "--out", str(tmp_path / out), *extra])


@pytest.mark.parametrize("sub,cfg", [
    ("solve", {"solver": {"n": 2, "nz": 8, "nt": 6}, "coefficients": {"kind": "random-elliptic",
                                                                     "offdiag": 0.3}}),
    ("kernel", SMALL_FLAT),
    ("ainfty", SMALL_FLAT),
    ("rh", SMALL_FLAT),
    ("kkpt", SMALL_FLAT),
    ("carleson", {"solver": {"n": 1, "nz": 16, "nt": 32}, "coefficients": {"kind": "bump"}}),
    ("bmo-check", {"params": {"draws": 3}}),
    ("p0", {"params": {"n": 1, "C": 1.0, "K": 0.0}}),
])
def test_subcommands_succeed(tmp_path, sub, cfg):
    assert run(tmp_path, sub, cfg) == 0
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    assert rep["subcommand"] == sub and rep["passed"]
    assert (tmp_path / "out" / "timing.json").exists()


def test_p0_value(tmp_path):
    run(tmp_path, "p0", {"params": {"n": 1, "C": 0.0, "K": 0.0}})
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    assert rep["result"]["p0"] == 4.0


def test_reports_are_reproducible(tmp_path):
    cfg = {"solver": {"n": 2, "nz": 8, "nt": 6}, "coefficients": {"kind": "random-elliptic"},
           "params": {"data": {"kind": "random"}}}
    run(tmp_path, "solve", cfg, "a", ("--seed", "7"))
    run(tmp_path, "solve", cfg, "b", ("--seed", "7"))
    for name in ("report.json", "ntmax.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_graph_domain_solve(tmp_path):
    cfg = {"solver": {"n": 2, "nz": 8, "nt": 4},
           "domain": {"n": 2, "hx": 0.05, "time": [0, 0.2], "lateral": [-1, 1],
                      "psi": {"kind": "sine", "amp": 0.05, "kx": 2.0}}}
    assert run(tmp_path, "solve", cfg) == 0


@pytest.mark.parametrize("cfg", [
    {"coefficients": {"kind": "nope"}},
    {"coefficients": {"lam": 2.0, "Lam": 1.0}},
    {"solver": {"nz": 0}},
    {"experiment": "kernel"},
    {"domain": {"psi": {"kind": "samples", "csv": "missing.csv"}}},
])
def test_invalid_config_exit_2(tmp_path, cfg):
    assert run(tmp_path, "solve", cfg) == 2


def test_missing_config_and_params(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2
    assert run(tmp_path, "p0", {"params": {"n": 1}}) == 2
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, {"seed": -1}), "solve")


def test_numerical_failure_exit_3(tmp_path):
    # a steep graph folds the adapted map
    cfg = {"solver": {"n": 2, "nz": 8, "nt": 2},
           "domain": {"n": 2, "hx": 0.01, "time": [0, 0.2], "lateral": [-1, 1], "gamma": 2.0,
                      "psi": {"kind": "sine", "amp": 3.0, "kx": 40.0}}}
    assert run(tmp_path, "solve", cfg) == 3


def test_console_entry_point(tmp_path):
    cfg = write(tmp_path, {"params": {"n": 2, "C": 0.5, "K": 1.0}})
    res = subprocess.run([sys.executable, "-m", "parabolic_lab.cli", "p0", "--config", cfg,
                          "--out", str(tmp_path / "o"), "--threads", "1"],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    timing = json.loads((tmp_path / "o" / "timing.json").read_text())
    assert timing["threads"] == "1" or timing["threads"] == 1
