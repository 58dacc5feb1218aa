"""Damped-Newton solver for Wang's equation on flat tori and Dirichlet rectangles.

The conformal factor of a two-dimensional hyperbolic affine sphere with cubic
differential U satisfies

    psi_zbar_z + |U|^2 e^(-2 psi) - (1/2) e^psi = 0.

Everything here is stored in the x4 convention (Delta = 4 d_z d_zbar on the
flat chart), optionally with a curvature source kappa:

    F(psi) = Delta psi + 4 |U|^2 e^(-2 psi) - 2 e^psi - 2 kappa.

The linearization adds the strictly negative diagonal
-8 |U|^2 e^(-2 psi) - 2 e^psi, so the Jacobian is an irreducibly diagonally
dominant M-matrix: Newton from the constant supersolution decreases
monotonically and the discrete comparison principle pins the solution
between the barriers

    e^s = 2^(1/3) |U|^(2/3)            (exact solution off the zeros, kappa = 0),
    S   = log r,  r^3 - sigma r^2 - 4 lambda^2 sup|U0|^2 = 0.

The generalized coefficient 4 lambda^2 sup|U0|^2 keeps S a supersolution for
any polynomial U0 on the chart (the classical normalization assumes the norm
of U0 is pinned at 1/2 on the region of interest).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .cubics import supersolution_root
from .errors import ConvergenceError, GridMismatchError
from .fields import CubicDifferential, Grid2D, ScalarField

__all__ = [
    "WangProblem",
    "Barrier",
    "SolveReport",
    "Annulus",
    "Rectangle",
    "residual",
    "solve",
    "barriers",
    "subsolution_field",
    "verify_metric_asymptotics",
    "MetricSweep",
]

SUBSOLUTION_CLAMP = -1e3


# ---------------------------------------------------------------------------
# problem definition
# ---------------------------------------------------------------------------

@dataclass
class WangProblem:
    """Discretized instance of Wang's equation.

    boundary: "periodic", a ScalarField (its boundary ring is the Dirichlet
    data), a float constant, or None (Dirichlet data defaults to the
    subsolution).  kappa: constant or node array; sigma = max(0, max(-kappa)).
    """

    u: CubicDifferential
    grid: Grid2D
    boundary: object = None
    kappa: object = 0.0

    def __post_init__(self):
        if self.is_periodic:
            if not (self.grid.periodic_x and self.grid.periodic_y):
                raise ValueError("periodic problem needs a doubly periodic grid")
            if not self.u.is_constant():
                raise ValueError("periodic (torus) problems need a constant U0")
        else:
            if self.grid.periodic_x or self.grid.periodic_y:
                raise ValueError("Dirichlet problem on a periodic grid")
        if min(self.grid.nx, self.grid.ny) < 8:
            raise ValueError("PDE grids need at least 8 nodes per axis")

    @property
    def is_periodic(self) -> bool:
        return isinstance(self.boundary, str) and self.boundary == "periodic"

    @property
    def kappa_nodes(self) -> np.ndarray:
        if isinstance(self.kappa, ScalarField):
            return self.kappa.values
        return np.full((self.grid.ny, self.grid.nx), float(self.kappa))

    @property
    def sigma(self) -> float:
        return float(max(0.0, np.max(-self.kappa_nodes)))

    def u_abs2_nodes(self) -> np.ndarray:
        uu = self.u(self.grid.z_nodes())
        return (uu * np.conj(uu)).real

    def boundary_values(self) -> np.ndarray:
        """Dirichlet data on the full node array (only the ring is used)."""
        if self.is_periodic:
            raise ValueError("periodic problem has no Dirichlet data")
        if self.boundary is None:
            return subsolution_field(self).values
        if isinstance(self.boundary, ScalarField):
            if self.boundary.grid != self.grid:
                raise GridMismatchError("boundary data on wrong grid")
            return self.boundary.values
        return np.full((self.grid.ny, self.grid.nx), float(self.boundary))

    def boundary_mask(self) -> np.ndarray:
        m = np.zeros((self.grid.ny, self.grid.nx), dtype=bool)
        if not self.is_periodic:
            m[0, :] = m[-1, :] = True
            m[:, 0] = m[:, -1] = True
        return m


def _laplacian_with_identity_boundary(grid: Grid2D, periodic: bool) -> sp.csr_matrix:
    """5-point Laplacian; on Dirichlet grids boundary rows are identity."""
    nx, ny = grid.nx, grid.ny
    n = nx * ny
    ax = 1.0 / grid.hx**2
    ay = 1.0 / grid.hy**2
    rows, cols, vals = [], [], []

    def idx(j, i):
        return j * nx + i

    for j in range(ny):
        for i in range(nx):
            k = idx(j, i)
            on_boundary = (not periodic) and (i in (0, nx - 1) or j in (0, ny - 1))
            if on_boundary:
                rows.append(k)
                cols.append(k)
                vals.append(1.0)
                continue
            rows.append(k)
            cols.append(k)
            vals.append(-2.0 * (ax + ay))
            for di, dj, w in ((-1, 0, ax), (1, 0, ax), (0, -1, ay), (0, 1, ay)):
                ii, jj = i + di, j + dj
                if periodic:
                    ii %= nx
                    jj %= ny
                rows.append(k)
                cols.append(idx(jj, ii))
                vals.append(w)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


_LAPLACIAN_CACHE: dict = {}


def _laplacian(problem: WangProblem) -> sp.csr_matrix:
    g = problem.grid
    key = (g.x0, g.x1, g.y0, g.y1, g.nx, g.ny, problem.is_periodic)
    if key not in _LAPLACIAN_CACHE:
        _LAPLACIAN_CACHE[key] = _laplacian_with_identity_boundary(g, problem.is_periodic)
    return _LAPLACIAN_CACHE[key]


# ---------------------------------------------------------------------------
# residual and Newton solve
# ---------------------------------------------------------------------------

def _nonlinear_terms(problem: WangProblem, v: np.ndarray):
    """(g, g') of the zero-order part 4|U|^2 e^(-2 psi) - 2 e^psi - 2 kappa."""
    u2 = problem.u_abs2_nodes()
    kap = problem.kappa_nodes
    with np.errstate(over="ignore"):
        em2 = np.exp(-2.0 * v)
        ep = np.exp(v)
    g = 4.0 * u2 * em2 - 2.0 * ep - 2.0 * kap
    gp = -8.0 * u2 * em2 - 2.0 * ep
    return g, gp


def _residual_vector(problem: WangProblem, v: np.ndarray, lap: sp.csr_matrix) -> np.ndarray:
    g, _ = _nonlinear_terms(problem, v)
    f = lap @ v.ravel() + np.where(problem.boundary_mask().ravel(), 0.0, g.ravel())
    if not problem.is_periodic:
        bmask = problem.boundary_mask().ravel()
        f[bmask] = v.ravel()[bmask] - problem.boundary_values().ravel()[bmask]
    return f


def residual(psi: ScalarField, problem: WangProblem) -> ScalarField:
    """PDE residual field 4 psi_zzbar + 4|U|^2 e^(-2 psi) - 2 e^psi - 2 kappa.

    On Dirichlet grids the boundary entries hold the data mismatch
    psi - data instead (the PDE stencil does not reach outside the grid).
    """
    if psi.grid != problem.grid:
        raise GridMismatchError("field and problem grids differ")
    f = _residual_vector(problem, psi.values, _laplacian(problem))
    return ScalarField(problem.grid, f.reshape(problem.grid.ny, problem.grid.nx))


@dataclass
class SolveReport:
    psi: ScalarField
    iterations: int
    final_residual: float
    residual_history: list
    max_pointwise_increase: float

    def to_json_dict(self, problem: WangProblem) -> dict:
        g = problem.grid
        return {
            "lambda": problem.u.scale,
            "grid": [g.nx, g.ny],
            "iterations": self.iterations,
            "final_residual": self.final_residual,
        }


def solve(problem: WangProblem, initial: ScalarField | None = None,
          tol: float = 1e-10, max_iterations: int = 60) -> SolveReport:
    """Damped Newton iteration on the discrete residual, to max-norm < tol.

    Starts from the constant supersolution S when no initial field is given
    (from there the iterates decrease monotonically).  Steps are halved until
    the residual norm drops; the sparse Jacobian is refactored every
    iteration (direct LU).
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    lap = _laplacian(problem)
    if initial is None:
        v = np.full((problem.grid.ny, problem.grid.nx), barriers(problem).sup)
    else:
        if initial.grid != problem.grid:
            raise GridMismatchError("initial field on wrong grid")
        v = initial.values.copy()
    if not problem.is_periodic:
        bmask = problem.boundary_mask()
        v[bmask] = problem.boundary_values()[bmask]
    bmask_flat = problem.boundary_mask().ravel()

    f = _residual_vector(problem, v, lap)
    res = float(np.max(np.abs(f)))
    history = [res]
    max_increase = 0.0
    for it in range(1, max_iterations + 1):
        if res < tol:
            return SolveReport(ScalarField(problem.grid, v), it - 1, res, history, max_increase)
        _, gp = _nonlinear_terms(problem, v)
        diag = np.where(bmask_flat, 0.0, gp.ravel())
        jac = (lap + sp.diags(diag)).tocsc()
        # identity boundary rows break the pattern symmetry MMD_AT_PLUS_A wants
        perm = "MMD_AT_PLUS_A" if problem.is_periodic else "COLAMD"
        try:
            delta = splu(jac, permc_spec=perm).solve(-f)
        except RuntimeError as exc:  # singular factorization: corrupted grid
            raise ConvergenceError(f"linear solve failed: {exc}", res) from exc
        alpha = 1.0
        while True:
            vn = v + alpha * delta.reshape(v.shape)
            fn = _residual_vector(problem, vn, lap)
            resn = float(np.max(np.abs(fn))) if np.all(np.isfinite(fn)) else math.inf
            if resn < res:
                break
            alpha *= 0.5
            if alpha < 2.0**-30:
                raise ConvergenceError("Newton damping stalled", res)
        max_increase = max(max_increase, float(np.max(vn - v)))
        v, f, res = vn, fn, resn
        history.append(res)
    raise ConvergenceError(f"no convergence after {max_iterations} iterations", res)


# ---------------------------------------------------------------------------
# barriers
# ---------------------------------------------------------------------------

@dataclass
class Barrier:
    """Subsolution field s and constant supersolution S = log r."""

    sub: ScalarField
    sup: float
    sigma: float
    r: float


def subsolution_field(problem: WangProblem) -> ScalarField:
    """s with e^s = 2^(1/3) |U|^(2/3), clamped near the zeros of U0."""
    z = problem.grid.z_nodes()
    absu = np.abs(problem.u(z))
    with np.errstate(divide="ignore"):
        s = math.log(2.0) / 3.0 + (2.0 / 3.0) * np.log(absu)
    s = np.maximum(np.nan_to_num(s, nan=SUBSOLUTION_CLAMP, neginf=SUBSOLUTION_CLAMP),
                   SUBSOLUTION_CLAMP)
    return ScalarField(problem.grid, s)


def barriers(problem: WangProblem, sigma: float | None = None) -> Barrier:
    """Barrier pair for the problem; sigma defaults to max(0, max(-kappa)).

    The supersolution constant is log r with r the positive root of
    x^3 - sigma x^2 - 4 lambda^2 sup|U0|^2, i.e. the barrier cubic evaluated
    at the effective amplitude 2 lambda sup|U0|.  This always dominates the
    clamped subsolution (r^3 >= 4 lambda^2 sup|U0|^2 >= 2 e^{3s} pointwise).
    """
    if sigma is None:
        sigma = problem.sigma
    if sigma < 0.0:
        raise ValueError("sigma must be >= 0")
    sub = subsolution_field(problem)
    sup_u0 = float(np.max(np.abs(problem.u.u0(problem.grid.z_nodes()))))
    root = supersolution_root(sigma, 2.0 * problem.u.scale * sup_u0)
    cap = math.log(root.r)
    if not np.all(sub.values <= cap + 1e-12):
        raise ArithmeticError("subsolution exceeds supersolution")
    return Barrier(sub, cap, sigma, root.r)


# ---------------------------------------------------------------------------
# asymptotic verification sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Annulus:
    """r_inner <= |z - center| <= r_outer."""

    r_inner: float
    r_outer: float
    center: complex = 0j

    def mask(self, grid: Grid2D) -> np.ndarray:
        r = np.abs(grid.z_nodes() - self.center)
        return (r >= self.r_inner) & (r <= self.r_outer)


@dataclass(frozen=True)
class Rectangle:
    x0: float
    x1: float
    y0: float
    y1: float

    def mask(self, grid: Grid2D) -> np.ndarray:
        z = grid.z_nodes()
        return ((z.real >= self.x0) & (z.real <= self.x1)
                & (z.imag >= self.y0) & (z.imag <= self.y1))


@dataclass
class MetricSweep:
    """Per-lambda records of the flat-metric deviation and its decay slopes."""

    records: list
    slope_m: float
    slope_g: float
    fields: dict = field(default_factory=dict, repr=False)
    problems: dict = field(default_factory=dict, repr=False)

    def csv_text(self) -> str:
        lines = ["lambda,m,g"]
        for r in self.records:
            lines.append(f"{r['lambda']!r},{r['m_sup']!r},{r['g_sup']!r}")
        return "\n".join(lines) + "\n"

    def to_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write(self.csv_text())


def _fit_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def verify_metric_asymptotics(u0: CubicDifferential, region, lambdas,
                              grid: Grid2D | None = None, *, sigma: float = 1.0,
                              tol: float = 1e-10, warm_start: bool = True,
                              keep_fields: bool = True) -> MetricSweep:
    """Solve across the lambda sweep and measure the flat-metric deviations.

    For each lambda the Dirichlet problem (boundary data = subsolution,
    curvature source kappa = -sigma) is solved and two suprema are taken
    over the region mask:

        m = sup |  |U|^2 e^(-3 psi) - 1/2 |
        g = sup | (psi_z - u0'/(3 u0)) * |u0/2|^(-1/3) |

    g is the gradient of the conformal factor relative to the singular flat
    metric, measured in the chart where U0 is the constant cubic 2 dz^3 (for
    a constant U0 it reduces to sup |psi_z|).  psi_z comes from the
    second-order node stencils of the solved field.  Returns the records and
    least-squares slopes of log m and log g against log lambda.
    """
    if grid is None:
        grid = Grid2D(-2.5, 2.5, -2.5, 2.5, 256, 256)
    lambdas = sorted(float(l) for l in lambdas)
    if not lambdas or lambdas[0] <= 0:
        raise ValueError("lambdas must be positive")
    mask = region.mask(grid)
    if not np.any(mask):
        raise ValueError("region contains no grid nodes")
    z = grid.z_nodes()
    u0v = u0.u0(z)
    if np.any(np.abs(u0v[mask]) == 0.0):
        raise ValueError("region touches a zero of U0")
    s_z = u0.u0_prime(z) / (3.0 * u0v)
    weight = np.abs(u0v / 2.0) ** (-1.0 / 3.0)

    records = []
    fields = {}
    problems = {}
    prev = None
    prev_lam = None
    for lam in lambdas:
        problem = WangProblem(u0.with_scale(lam), grid, boundary=None, kappa=-sigma)
        if warm_start and prev is not None:
            init = ScalarField(grid, prev.values + (2.0 / 3.0) * math.log(lam / prev_lam))
        else:
            init = None
        report = solve(problem, initial=init, tol=tol)
        psi = report.psi
        u2 = problem.u_abs2_nodes()
        with np.errstate(over="ignore"):
            q = u2 * np.exp(-3.0 * psi.values)
        m_sup = float(np.max(np.abs(q[mask] - 0.5)))
        psi_z = psi.complex_derivative_grid()
        g_sup = float(np.max(np.abs(psi_z[mask] - s_z[mask]) * weight[mask]))
        records.append({
            "lambda": lam,
            "grid": [grid.nx, grid.ny],
            "iterations": report.iterations,
            "final_residual": report.final_residual,
            "m_sup": m_sup,
            "g_sup": g_sup,
            "q_max": float(np.max(q[mask])),
        })
        if keep_fields:
            fields[lam] = psi
            problems[lam] = problem
        prev, prev_lam = psi, lam

    ms = [r["m_sup"] for r in records]
    gs = [r["g_sup"] for r in records]
    slope_m = _fit_slope(lambdas, ms) if len(lambdas) > 1 else math.nan
    slope_g = _fit_slope(lambdas, gs) if len(lambdas) > 1 else math.nan
    return MetricSweep(records, slope_m, slope_g, fields, problems)
