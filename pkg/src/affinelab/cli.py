"""Batch front door: experiment configs, sweeps, verification, plot + CSV output.

Configs are JSON documents with a "version" field; unknown keys are rejected
so a misspelled tolerance fails loudly.  Every mode writes its delimited
results (CSV/JSON, floats via repr so they round-trip) and renders the
matching matplotlib figure next to them — except verify-all, whose report
must be byte-reproducible and therefore stays figure-free.

Exit codes: 0 ok, 2 config error, 3 numerical failure, 4 verification failure.
"""

from __future__ import annotations

import argparse
import cmath
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import asymptotics as asym
from . import report as figs
from . import verify, wang
from .cubics import mu_roots
from .transport import eig3, holonomy
from .errors import ConfigError, ConvergenceError, SingularPointError
from .fields import CubicDifferential, GeodesicSegment, Grid2D, ScalarField
from .surface import export_mesh, integrate_embedding

MODES = ("mu-roots", "solve", "transport", "sweep", "prop4", "surface", "verify-all")

DEFAULT_CONFIG = {
    "version": 1,
    "mode": "verify-all",
    "u0": [2.0],
    "lambda": [1.0],
    "theta": [0.0],
    "L": [1.0],
    "sigma": 0.5,
    "boundary": "subsolution",
    "grid": {"x0": 0.0, "x1": 1.0, "y0": 0.0, "y1": 1.0,
             "nx": 64, "ny": 64, "periodic": True},
    "region": {"kind": "annulus", "r_inner": 0.5, "r_outer": 0.9},
    "segment": {"start": [0.15, 0.2]},
    "chord": {"z_start": [0.5316149095065544, 0.3051266590067821],
              "theta": 0.0, "L": 0.3},
    "samples": 4096,
    "iterations": 30,
    "tolerances": {"solver": 1e-9, "transport_rtol": 1e-10},
    "out": "results",
}

_GRID_KEYS = {"x0", "x1", "y0", "y1", "nx", "ny", "periodic"}
_REGION_KEYS = {"kind", "r_inner", "r_outer", "x0", "x1", "y0", "y1"}
_SEGMENT_KEYS = {"start"}
_CHORD_KEYS = {"z_start", "theta", "L"}
_TOL_KEYS = {"solver", "transport_rtol"}


def _fmt(x: float) -> str:
    return repr(float(x))


def _as_complex(v) -> complex:
    if isinstance(v, (int, float)):
        return complex(v)
    if isinstance(v, (list, tuple)) and len(v) == 2:
        return complex(float(v[0]), float(v[1]))
    raise ConfigError(f"expected number or [re, im] pair, got {v!r}")


def _check_keys(d: dict, allowed: set, where: str):
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")


def load_config(path: str | None, mode: str | None, out: str | None) -> dict:
    cfg = {k: (dict(v) if isinstance(v, dict) else v) for k, v in DEFAULT_CONFIG.items()}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            user = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(
                f"config parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
            ) from exc
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
        _check_keys(user, set(DEFAULT_CONFIG), "config root")
        for k, v in user.items():
            if isinstance(v, dict) and isinstance(cfg.get(k), dict):
                cfg[k] = {**cfg[k], **v}
            else:
                cfg[k] = v
    if mode is not None:
        cfg["mode"] = mode
    if out is not None:
        cfg["out"] = out
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict):
    if cfg.get("version") != 1:
        raise ConfigError(f"unsupported config version {cfg.get('version')!r}")
    if cfg["mode"] not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {cfg['mode']!r}")
    _check_keys(cfg["grid"], _GRID_KEYS, "grid")
    _check_keys(cfg["region"], _REGION_KEYS, "region")
    _check_keys(cfg["segment"], _SEGMENT_KEYS, "segment")
    _check_keys(cfg["chord"], _CHORD_KEYS, "chord")
    _check_keys(cfg["tolerances"], _TOL_KEYS, "tolerances")
    for key in ("lambda", "theta", "L", "u0"):
        if not isinstance(cfg[key], list) or not cfg[key]:
            raise ConfigError(f"{key} must be a non-empty list")
    if any((not isinstance(l, (int, float))) or l <= 0 for l in cfg["lambda"]):
        raise ConfigError("all lambda values must be positive numbers")
    if any(v <= 0 for v in cfg["tolerances"].values()):
        raise ConfigError("tolerances must be positive")
    if any(l < 0 for l in cfg["L"]):
        raise ConfigError("L values must be >= 0")
    if cfg["sigma"] < 0:
        raise ConfigError("sigma must be >= 0")


def _grid_from(cfg: dict) -> Grid2D:
    g = cfg["grid"]
    periodic = bool(g.get("periodic", False))
    return Grid2D(g["x0"], g["x1"], g["y0"], g["y1"], int(g["nx"]), int(g["ny"]),
                  periodic, periodic)


def _u0_from(cfg: dict, lam: float) -> CubicDifferential:
    return CubicDifferential([_as_complex(c) for c in cfg["u0"]], scale=lam)


def _region_from(cfg: dict):
    r = cfg["region"]
    if r["kind"] == "annulus":
        return wang.Annulus(r["r_inner"], r["r_outer"])
    if r["kind"] == "rect":
        return wang.Rectangle(r["x0"], r["x1"], r["y0"], r["y1"])
    raise ConfigError(f"unknown region kind {r['kind']!r}")


def _write_json(path: Path, obj):
    path.write_text(json.dumps(verify._jsonable(obj), indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: str, rows):
    lines = [header]
    lines.extend(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row)
                 for row in rows)
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# modes
# ---------------------------------------------------------------------------

def _run_mu_roots(cfg: dict, out: Path) -> int:
    rows = []
    for th in cfg["theta"]:
        mu = mu_roots(th)
        print(" ".join(_fmt(v) for v in (th, mu.mu1, mu.mu2, mu.mu3)))
        rows.append((float(th), mu.mu1, mu.mu2, mu.mu3))
    _write_csv(out / "mu_roots.csv", "theta,mu1,mu2,mu3", rows)
    figs.save_mu_roots_figure(out / "mu_roots.png")
    return 0


def _solve_problem(cfg: dict, lam: float):
    grid = _grid_from(cfg)
    u = _u0_from(cfg, lam)
    if grid.periodic_x:
        problem = wang.WangProblem(u, grid, boundary="periodic")
    else:
        boundary = cfg["boundary"]
        if boundary == "subsolution":
            boundary = None
        problem = wang.WangProblem(u, grid, boundary=boundary, kappa=-cfg["sigma"])
    rep = wang.solve(problem, tol=cfg["tolerances"]["solver"])
    return problem, rep


def _flat_deviation_sups(problem, psi):
    """(m_sup, g_sup) of the flat-metric deviation over the zero-free nodes."""
    grid = problem.grid
    z = grid.z_nodes()
    u0v = problem.u.u0(z)
    mask = np.abs(u0v) > 1e-6 * max(abs(c) for c in problem.u.coefficients)
    if not np.any(mask):
        return math.nan, math.nan
    u2 = problem.u_abs2_nodes()
    q = u2 * np.exp(-3.0 * psi.values)
    m_sup = float(np.max(np.abs(q[mask] - 0.5)))
    s_z = problem.u.u0_prime(z)[mask] / (3.0 * u0v[mask])
    weight = np.abs(u0v[mask] / 2.0) ** (-1.0 / 3.0)
    g_sup = float(np.max(np.abs(psi.complex_derivative_grid()[mask] - s_z) * weight))
    return m_sup, g_sup


def _run_solve(cfg: dict, out: Path) -> int:
    lam = float(cfg["lambda"][0])
    problem, rep = _solve_problem(cfg, lam)
    rep.psi.to_csv(out / "psi.csv")
    m_sup, g_sup = _flat_deviation_sups(problem, rep.psi)
    _write_json(out / "solve_report.json",
                {**rep.to_json_dict(problem), "m_sup": m_sup, "g_sup": g_sup})
    figs.save_field_figure(rep.psi, out / "psi.png",
                           title=f"conformal factor, lambda={lam:g}")
    print(f"solved: {rep.iterations} iterations, residual {_fmt(rep.final_residual)}")
    return 0


def _run_transport(cfg: dict, out: Path) -> int:
    grid = _grid_from(cfg)
    if not grid.periodic_x:
        raise ConfigError("transport mode expects a periodic (torus) grid")
    start = _as_complex(cfg["segment"]["start"])
    rtol = cfg["tolerances"]["transport_rtol"]
    combos = [(lam, th, L) for lam in cfg["lambda"]
              for th in cfg["theta"] for L in cfg["L"]]

    def one(combo):
        lam, th, L = combo
        _, rep = _solve_problem(cfg, lam)
        u = _u0_from(cfg, lam)
        seg = GeodesicSegment(start, start + L * cmath.exp(1j * th))
        return holonomy(rep.psi, u, seg, rtol=rtol)

    workers = max(1, int(os.environ.get("AFFINELAB_THREADS", "1")))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, combos))
    else:
        results = [one(c) for c in combos]

    docs = [hr.to_json_dict() for hr in results]
    _write_json(out / "holonomy.json", docs)
    rows = [(d["lambda"], d["theta"], d["L"], *d["log_spectrum"], *d["predicted"],
             d["det_drift"]) for d in docs]
    _write_csv(out / "holonomy.csv",
               "lambda,theta,L,l1,l2,l3,pred1,pred2,pred3,det_drift", rows)
    figs.save_holonomy_figure(docs, out / "holonomy.png")
    for d in docs:
        print(" ".join(_fmt(v) for v in (d["lambda"], d["theta"], d["L"],
                                         *d["log_spectrum"])))
    return 0


def _run_sweep(cfg: dict, out: Path) -> int:
    grid = _grid_from(cfg)
    if grid.periodic_x:
        raise ConfigError("sweep mode expects a Dirichlet (non-periodic) grid")
    u0 = CubicDifferential([_as_complex(c) for c in cfg["u0"]])
    sweep = wang.verify_metric_asymptotics(
        u0, _region_from(cfg), cfg["lambda"], grid, sigma=cfg["sigma"],
        tol=cfg["tolerances"]["solver"], keep_fields=False)
    sweep.to_csv(out / "metric_sweep.csv")
    record_keys = ("lambda", "grid", "iterations", "final_residual", "m_sup", "g_sup")
    _write_json(out / "metric_sweep.json", {
        "records": [{k: r[k] for k in record_keys} for r in sweep.records],
        "slope_m": sweep.slope_m,
        "slope_g": sweep.slope_g,
    })
    figs.save_metric_sweep_figure(sweep, out / "metric_sweep.png")
    print(f"slope_m {_fmt(sweep.slope_m)} slope_g {_fmt(sweep.slope_g)}")
    return 0


def _run_prop4(cfg: dict, out: Path) -> int:
    grid = _grid_from(cfg)
    if grid.periodic_x:
        raise ConfigError("prop4 mode expects a Dirichlet (non-periodic) grid")
    u0 = CubicDifferential([_as_complex(c) for c in cfg["u0"]])
    sweep = wang.verify_metric_asymptotics(
        u0, _region_from(cfg), cfg["lambda"], grid, sigma=cfg["sigma"],
        tol=cfg["tolerances"]["solver"])
    chord = cfg["chord"]
    z0 = _as_complex(chord["z_start"])
    rows = []
    for lam in cfg["lambda"]:
        psi = sweep.fields[float(lam)]
        sys = asym.perturbed_system_from_field(
            psi, u0.with_scale(lam), z0, chord["theta"], chord["L"],
            int(cfg["samples"]))
        sol = asym.SystemSolution.from_picard(sys, iterations=int(cfg["iterations"]))
        growth = asym.column_growth_check(sol)
        fm = sol.frame_matrix()
        dev1, dev2 = asym.char_poly_compare(fm)
        xi = eig3(fm.Phi)
        view = verify._SpectrumView(fm, xi, np.log(np.abs(xi)) + fm.log_scale)
        br = asym.eigenvalue_bracket(view)
        factor, certified = sys.certificate()
        rows.append({
            "lambda": float(lam), "theta": chord["theta"], "L": chord["L"],
            "rho1": float(br.rho[0]), "rho2": float(br.rho[1]),
            "rho3": float(br.rho[2]), "dev1": dev1, "dev2": dev2,
            "offdiag_sup_ratio": growth.col1_ratio, "certified": certified,
            "R_ratio": sys.R * sys.lam13,
        })
    _write_csv(out / "prop4.csv",
               "lambda,theta,L,rho1,rho2,rho3,dev1,dev2,offdiag_sup_ratio,certified",
               [(r["lambda"], r["theta"], r["L"], r["rho1"], r["rho2"], r["rho3"],
                 r["dev1"], r["dev2"], r["offdiag_sup_ratio"],
                 int(r["certified"])) for r in rows])
    _write_json(out / "prop4.json", rows)
    figs.save_prop4_figure(rows, out / "prop4.png")
    for r in rows:
        print(" ".join(_fmt(v) for v in (r["lambda"], r["dev1"], r["dev2"],
                                         r["offdiag_sup_ratio"])))
    return 0


def _run_surface(cfg: dict, out: Path) -> int:
    lam = float(cfg["lambda"][0])
    u = _u0_from(cfg, lam)
    if not u.is_constant():
        raise ConfigError("surface mode expects a constant U0 (torus model)")
    psi_level = math.log(8.0 * lam**2) / 3.0
    grid = Grid2D(0.0, 0.5, 0.0, 0.5, 17, 17)
    _, rep = _solve_problem(cfg, lam)
    solved_level = float(np.mean(rep.psi.values))
    if abs(solved_level - psi_level) > 1e-8:
        raise ConvergenceError("solved torus level disagrees with closed form",
                               abs(solved_level - psi_level))
    psi = ScalarField.constant(grid, solved_level)
    patch = integrate_embedding(psi, u)
    export_mesh(patch, "obj", out / "surface.obj")
    export_mesh(patch, "csv", out / "surface.csv")
    _write_json(out / "embedding_report.json", {
        "lambda": lam,
        "compatibility_residual": patch.compatibility_residual(),
        "det_invariant_deviation": patch.det_invariant_deviation(),
        "reality_error": patch.reality_error,
    })
    figs.save_surface_figure(patch, out / "surface.png")
    print(f"patch exported: compatibility residual "
          f"{_fmt(patch.compatibility_residual())}")
    return 0


def _run_verify_all(cfg: dict, out: Path) -> int:
    suite = verify.VerificationSuite()
    report = suite.run_all(emit=print)
    (out / "verify_report.json").write_bytes(verify.report_json_bytes(report))
    return 0 if report["all_passed"] else 4


def run(cfg: dict) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    mode = cfg["mode"]
    handlers = {
        "mu-roots": _run_mu_roots,
        "solve": _run_solve,
        "transport": _run_transport,
        "sweep": _run_sweep,
        "prop4": _run_prop4,
        "surface": _run_surface,
        "verify-all": _run_verify_all,
    }
    return handlers[mode](cfg, out)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="affinelab",
        description="Wang-equation solves, flat-geodesic holonomy spectra, and "
                    "their asymptotic verification.")
    parser.add_argument("--config", help="JSON experiment config")
    parser.add_argument("--mode", choices=MODES, help="override the config mode")
    parser.add_argument("--out", help="output directory (default: results)")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.mode, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ConvergenceError, SingularPointError, ArithmeticError, OverflowError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
