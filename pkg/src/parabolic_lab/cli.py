"""Command line entry point.

    parabolic-lab <subcommand> --config cfg.json --out dir/ [--threads N] [--seed S]

Reports are JSON (``report.json``) plus CSV tables, written atomically.  Wall
clock goes to ``timing.json`` so that reports stay byte-identical between
runs with the same config and seed.

Exit codes: 0 ok, 1 a flagged check failed, 2 invalid config, 3 numerical
failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

log = logging.getLogger("parabolic_lab")

SUBCOMMANDS = ("solve", "kernel", "carleson", "bmo-check", "ainfty", "rh", "kkpt", "p0",
               "oracle-validate")

THREAD_ENV = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "experiment": {"enum": list(SUBCOMMANDS)},
        "seed": {"type": "integer", "minimum": 0},
        "domain": {
            "type": "object",
            "properties": {
                "n": {"enum": [1, 2, 3]},
                "psi": {"type": "object", "properties": {
                    "kind": {"enum": ["zero", "linear", "sine", "samples"]}}},
                "gamma": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "coefficients": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["identity", "diagonal", "random-elliptic",
                                  "oscillatory-witness", "bump"]},
                "lam": {"type": "number", "exclusiveMinimum": 0},
                "Lam": {"type": "number", "exclusiveMinimum": 0},
                "diag": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                "offdiag": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "drift": {"type": "number", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "solver": {
            "type": "object",
            "properties": {
                "n": {"enum": [1, 2, 3]},
                "nz": {"type": "integer", "minimum": 2},
                "nx": {"type": "integer", "minimum": 1},
                "nt": {"type": "integer", "minimum": 1},
                "h": {"type": "number", "exclusiveMinimum": 0},
                "ht": {"type": "number", "exclusiveMinimum": 0},
                "method": {"enum": ["direct", "bicgstab"]},
                "tol": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "functionals": {
            "type": "object",
            "properties": {
                "a": {"type": "number", "exclusiveMinimum": 0},
                "r": {"type": "number", "exclusiveMinimum": 0},
                "radii": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
            },
        },
        "params": {"type": "object"},
    },
}


class ConfigError(ValueError):
    pass


def load_config(path, subcommand: str, seed=None) -> dict:
    import jsonschema

    if path is None:
        cfg = {}
        base = Path(".")
    else:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            cfg = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        base = p.parent
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        raise ConfigError(f"config failed validation: {e.message}") from e
    if cfg.get("experiment", subcommand) != subcommand:
        raise ConfigError(f"config is for '{cfg['experiment']}', not '{subcommand}'")
    co = cfg.get("coefficients", {})
    if "lam" in co and "Lam" in co and not co["lam"] < co["Lam"]:
        raise ConfigError("coefficients need lam < Lam")
    psi = cfg.get("domain", {}).get("psi", {})
    if psi.get("kind") == "samples" and "csv" in psi:
        if not (base / psi["csv"]).exists():
            raise ConfigError(f"referenced file not found: {psi['csv']}")
    cfg.setdefault("seed", 0)
    if seed is not None:
        cfg["seed"] = int(seed)
    cfg["_base_dir"] = str(base)
    return cfg


# report helpers

def _jsonable(x):
    import numpy as np

    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        return v if v == v and abs(v) != float("inf") else str(v)
    return x


def write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


# builders

def build_grid(cfg: dict):
    from .geometry import Grid

    s = cfg.get("solver", {})
    n = int(s.get("n", cfg.get("domain", {}).get("n", 1)))
    nz = int(s.get("nz", 32))
    h = float(s.get("h", 1.0 / nz))
    nx = int(s.get("nx", nz if n > 1 else 1))
    ht = float(s.get("ht", h * h))
    nt = int(s.get("nt", 32))
    return Grid(n, nz, h, nt, ht, nx=nx, hx=h, x_lo=-nx * h / 2 if n > 1 else 0.0)


def build_coefficients(cfg: dict, grid, seed: int):
    import numpy as np

    from . import experiments as ex
    from .solver import (diagonal_coefficients, identity_coefficients, random_elliptic,
                         scalar_coefficients)

    c = cfg.get("coefficients", {"kind": "identity"})
    kind = c.get("kind", "identity")
    if kind == "identity":
        coeffs = identity_coefficients(grid)
    elif kind == "diagonal":
        diag = c.get("diag", [1.0] * grid.n)
        if len(diag) != grid.n:
            raise ConfigError("diag needs one entry per dimension")
        coeffs = diagonal_coefficients(grid, diag)
    elif kind == "random-elliptic":
        rng = np.random.default_rng(int(c.get("seed", seed)))
        coeffs = random_elliptic(grid, float(c.get("lam", 0.5)), float(c.get("Lam", 2.0)), rng,
                                 offdiag=float(c.get("offdiag", 0.0)),
                                 drift=float(c.get("drift", 0.0)))
    elif kind == "oscillatory-witness":
        coeffs = scalar_coefficients(grid, ex.witness_coefficient(grid.heights))
    else:
        coeffs = scalar_coefficients(grid, ex.bump_coefficient(grid.heights))
    dom = cfg.get("domain")
    if dom and dom.get("psi", {}).get("kind", "zero") != "zero":
        from .geometry import GraphDomain
        from .pullback import build_map, transform_coefficients

        spec = dict(dom)
        spec.setdefault("n", grid.n)
        if int(spec["n"]) != grid.n:
            raise ConfigError("domain and solver dimensions differ")
        domain = GraphDomain.from_spec(spec, cfg["_base_dir"])
        amap = build_map(domain, grid, float(dom.get("gamma", 0.1)))
        coeffs = transform_coefficients(coeffs.A, amap)
    return coeffs


def _data(cfg: dict, grid, seed: int):
    import numpy as np

    from .solver import BoundaryData

    p = cfg.get("params", {}).get("data", {"kind": "gaussian"})
    kind = p.get("kind", "gaussian")
    bs = grid.boundary_shape
    if kind == "constant":
        return BoundaryData(lateral=float(p.get("value", 1.0)))
    if kind == "random":
        rng = np.random.default_rng(seed)
        return BoundaryData(lateral=rng.uniform(-1, 1, bs))
    width = float(p.get("width", 0.1))
    t = grid.times.reshape((-1,) + (1,) * grid.m)
    f = np.exp(-((t - grid.times.mean()) ** 2) / (2 * width ** 4))
    if grid.m:
        X = grid.lateral_mesh()
        f = f * np.exp(-np.sum(X ** 2, axis=-1) / (2 * width ** 2))[None]
    return BoundaryData(lateral=np.broadcast_to(f, bs))


# subcommands: each returns (report, tables, ok)

def cmd_solve(cfg):
    import numpy as np

    from .experiments import grid_tag
    from .functionals import ntmax
    from .solver import assemble, solve

    seed = cfg["seed"]
    g = build_grid(cfg)
    coeffs = build_coefficients(cfg, g, seed)
    op = assemble(coeffs, g)
    s = cfg.get("solver", {})
    sol = solve(op, _data(cfg, g, seed), method=s.get("method", "direct"), tol=float(s.get("tol", 1e-10)))
    a = float(cfg.get("functionals", {}).get("a", 2.0))
    N = ntmax(sol, a)
    lo, hi = sol.max_principle_gap()
    rep = {"grid": grid_tag(g), "operator": op.report, "max_principle_gap": [lo, hi],
           "max_residual": float(sol.residual.max()), "aperture": a,
           "ntmax_max": float(N.max())}
    rows = [(k + 1, i, float(v)) for (k, i), v in np.ndenumerate(N.reshape(N.shape[0], -1))]
    return rep, {"ntmax.csv": (["step", "lateral_index", "N"], rows)}, lo >= -1e-8 and hi >= -1e-8


def _flat(cfg):
    from .experiments import flat_heat

    p = cfg.get("params", {})
    return flat_heat(int(p.get("cells_per_unit", 16)), int(p.get("depth", 5)))


def cmd_kernel(cfg):
    from .experiments import doubling_experiment, grid_tag

    fh = _flat(cfg)
    w = fh.weights
    dbl = doubling_experiment(fh)
    rep = {"grid": grid_tag(fh.grid), "total_mass": w.total(), "min_weight": w.min_weight(),
           "lateral_mass": fh.kernel.lateral_mass, "other_mass": fh.kernel.other_mass,
           "doubling": dbl}
    K = fh.kernel.K.ravel()
    rows = [(k + 1, float(t), float(v)) for k, (t, v) in enumerate(zip(fh.grid.times, K))]
    ok = abs(w.total() - 1) < 1e-8 and w.min_weight() >= -1e-12 and dbl["omega_Delta_d"] >= 0.05
    return rep, {"kernel.csv": (["step", "time", "K"], rows)}, ok


def cmd_ainfty(cfg):
    from .experiments import ainfty_experiment

    fh = _flat(cfg)
    deltas = cfg.get("params", {}).get("deltas", [0.1, 0.01, 0.001])
    res = ainfty_experiment(fh, deltas)
    rows = [(i, d, float(v)) for i, row in enumerate(res["table"]) for d, v in zip(deltas, row)]
    mono = bool((res["table"][:, :-1] >= res["table"][:, 1:]).all()) if len(deltas) > 1 else True
    res["monotone"] = mono
    return res, {"ainfty.csv": (["ball", "delta", "eps"], rows)}, mono


def cmd_rh(cfg):
    from .experiments import cz_experiment, grid_tag, _test_balls
    from .measure import best_p, reverse_holder

    fh = _flat(cfg)
    p = cfg.get("params", {})
    balls = _test_balls(fh)
    ps = p.get("p", [1.5, 2.0, 4.0])
    quot = [reverse_holder(fh.kernel, fh.grid, q, balls) for q in ps]
    bp = best_p(fh.kernel, fh.grid, balls, float(p.get("cap", 10.0)), float(p.get("bound", 2.0)))
    cz = cz_experiment(fh, float(p.get("beta", 0.5)))
    cert = cz["certificate"]
    rep = {"grid": grid_tag(fh.grid), "p": ps, "quotients": quot, "best_p": bp, "cz": cz}
    ok = cert["passes"] and cert["empirical_delta"] >= cert["delta0_prediction"]
    return rep, {"rh.csv": (["p", "quotient"], list(zip(ps, quot)))}, ok


def cmd_carleson(cfg):
    import numpy as np

    from .experiments import grid_tag
    from .functionals import (carleson_norm, cube_family, gradient_density, oscillation_density,
                              sup_ball_energy)
    from .solver import assemble, solve

    seed = cfg["seed"]
    g = build_grid(cfg)
    coeffs = build_coefficients(cfg, g, seed)
    op = assemble(coeffs, g)
    sol = solve(op, _data(cfg, g, seed))
    fcfg = cfg.get("functionals", {})
    radii = fcfg.get("radii") or [g.h * 2 ** (k / 2) for k in range(2, 9)]
    skip = g.nt // 8
    energies = sup_ball_energy(sol, radii, skip, per_radius=True)
    A = coeffs.A if coeffs.A.ndim == g.n + 2 else coeffs.A[0]
    fam_r = [r for r in (2.0 ** (-j / 2) for j in range(0, 60)) if g.h < r <= g.H]
    fam = cube_family(g, fam_r)
    osc = carleson_norm(oscillation_density(A, g), fam)
    grd = carleson_norm(gradient_density(A, g), fam)
    rep = {"grid": grid_tag(g), "sup_ball_energy": float(np.nanmax(energies)),
           "per_radius": list(zip(radii, energies.tolist())),
           "carleson_norm": {"oscillation": osc, "gradient": grd}}
    return rep, {"sup_ball_energy.csv": (["radius", "energy"], list(zip(radii, energies.tolist())))}, True


def cmd_bmo(cfg):
    from .experiments import bmo_family_ratios, bounded_data_energies

    p = cfg.get("params", {})
    draws = int(p.get("draws", 50))
    e = bounded_data_energies(draws, cfg["seed"])
    amp = bmo_family_ratios(mode="amplitude")
    dil = bmo_family_ratios(mode="dilation")
    rep = {"bounded_data": e, "bmo_family": {"amplitude": amp, "dilation": dil}}
    ok = e["max_over_median"] < 3 and amp["spread"] < 2 and dil["spread"] < 2
    rows = [(i, float(v)) for i, v in enumerate(e["energies"])]
    return rep, {"bounded_energies.csv": (["draw", "sup_ball_energy"], rows)}, ok


def cmd_kkpt(cfg):
    from .experiments import cover_lengths, lower_bound_run

    p = cfg.get("params", {})
    fh = _flat(cfg)
    res = lower_bound_run(fh, float(p.get("delta0", 1e-3)), float(p.get("eps0", 0.01)),
                          float(p.get("rho", 0.1)))
    lengths = cover_lengths(fh, p.get("deltas", [1e-2, 1e-3, 1e-4]), float(p.get("length_eps0", 0.1)))
    rep = {"lower_bound": res, "cover_lengths": lengths}
    ok = (res["fraction_ok"] >= 0.9 and res["c_meas"] > 0 and all(res["cover_checks"].values())
          and lengths["slope"] > 0)
    rows = [(i, J, float(t)) for i, (J, t) in enumerate(zip(res["J"], res["tally"]))]
    return rep, {"tallies.csv": (["cell", "J", "tally"], rows)}, ok


def cmd_p0(cfg):
    from .exponents import delta0_solve, epsilon_of_beta, p0_estimate

    p = cfg.get("params", {})
    try:
        n, C, K = int(p["n"]), float(p["C"]), float(p["K"])
    except KeyError as e:
        raise ConfigError(f"p0 needs params.n, params.C and params.K ({e} missing)") from e
    if C < 0 or K < 0 or n not in (1, 2, 3):
        raise ConfigError("p0 needs n in {1,2,3} and C, K >= 0")
    table = []
    for beta in p.get("betas", [0.1, 0.25, 0.5]):
        for eps in p.get("eps", [0.1, 0.5, 0.9]):
            table.append({"beta": beta, "eps": eps, "delta0": delta0_solve(n, eps, beta)})
    rep = {"n": n, "C": C, "K": K, "C_source": p.get("C_source", "supplied"),
           "p0": p0_estimate(n, C, K), "delta0": table}
    if "beta" in p:
        rep["eps_of_beta"] = epsilon_of_beta(C, K, float(p["beta"]))
    return rep, {}, True


def cmd_oracle(cfg):
    from .experiments import oracle_validate

    p = cfg.get("params", {})
    res = oracle_validate(int(p.get("mc_samples", 10 ** 6)), cfg["seed"])
    return {"checks": res}, {}, all(v["passed"] for v in res.values())


COMMANDS = {
    "solve": cmd_solve, "kernel": cmd_kernel, "carleson": cmd_carleson, "bmo-check": cmd_bmo,
    "ainfty": cmd_ainfty, "rh": cmd_rh, "kkpt": cmd_kkpt, "p0": cmd_p0,
    "oracle-validate": cmd_oracle,
}


def run(subcommand: str, cfg: dict):
    """Run one experiment; returns (report, tables, ok)."""
    rep, tables, ok = COMMANDS[subcommand](cfg)
    echo = {k: v for k, v in cfg.items() if not k.startswith("_")}
    report = {"subcommand": subcommand, "config": echo, "seed": cfg["seed"],
              "result": rep, "passed": bool(ok)}
    return _jsonable(report), tables, bool(ok)


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="parabolic-lab", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", help="JSON config file")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--threads", type=int, default=None, help="thread cap for BLAS/FFT")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = args.threads or os.environ.get("PARABOLIC_LAB_THREADS")
    if threads:
        for var in THREAD_ENV:
            os.environ[var] = str(threads)
    try:
        cfg = load_config(args.config, args.subcommand, args.seed)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    from .dyadic import CoverError
    from .geometry import GeometryError
    from .oracle import QuadratureError
    from .solver import AssemblyError, SolverError

    t0 = time.perf_counter()
    try:
        report, tables, ok = run(args.subcommand, cfg)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (AssemblyError, SolverError, QuadratureError, CoverError, GeometryError,
            FloatingPointError, ArithmeticError) as e:
        print(f"numerical failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 3
    wall = time.perf_counter() - t0
    out = Path(args.out)
    write_atomic(out / "report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    for name, (header, rows) in tables.items():
        write_atomic(out / name, csv_text(header, rows))
    write_atomic(out / "timing.json", json.dumps({"wall_seconds": wall, "threads": threads}) + "\n")
    log.info("%s finished in %.2f s", args.subcommand, wall)
    print(f"{args.subcommand}: {'ok' if ok else 'FAILED'} -> {out / 'report.json'}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
