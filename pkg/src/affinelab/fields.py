"""Polynomial cubic differentials, rectangular grids, and sampled conformal factors.

The chart is a single complex coordinate z.  A cubic differential is a
polynomial U0(z) times a positive scale lambda (the total differential is
U = lambda * U0).  Away from its zeros U induces the singular flat metric
2^(1/3) |U|^(2/3) |dz|^2, whose geodesics are straight lines in the flat
coordinate w = integral of (U/2)^(1/3) dz.  Conformal factors psi live on
uniform rectangular grids (periodic for torus models, plain for Dirichlet
models) and are differentiated with second-order stencils.
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .errors import GridMismatchError, OutOfDomainError, SingularPointError

__all__ = [
    "CubicDifferential",
    "Grid2D",
    "ScalarField",
    "GeodesicSegment",
    "flat_metric_factor",
    "flat_coordinate",
    "complex_derivative",
    "point_segment_distance",
]

_LOG2 = math.log(2.0)


# ---------------------------------------------------------------------------
# cubic differentials
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CubicDifferential:
    """U = scale * U0(z) dz^3 with U0 a polynomial, coefficients ascending in z."""

    coefficients: tuple
    scale: float = 1.0

    def __post_init__(self):
        coeffs = tuple(complex(c) for c in self.coefficients)
        if not coeffs:
            raise ValueError("need at least one coefficient")
        if all(c == 0 for c in coeffs):
            raise ValueError("cubic differential must not be identically zero")
        if not (math.isfinite(self.scale) and self.scale > 0.0):
            raise ValueError(f"scale must be positive and finite, got {self.scale!r}")
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def degree(self) -> int:
        d = len(self.coefficients) - 1
        while d > 0 and self.coefficients[d] == 0:
            d -= 1
        return d

    def with_scale(self, lam: float) -> "CubicDifferential":
        return CubicDifferential(self.coefficients, lam)

    def u0(self, z):
        """Evaluate the unscaled polynomial U0 by Horner's rule (scalar or array)."""
        acc = np.zeros_like(np.asarray(z, dtype=complex)) if isinstance(z, np.ndarray) else 0j
        for c in reversed(self.coefficients):
            acc = acc * z + c
        return acc

    def u0_prime(self, z):
        acc = np.zeros_like(np.asarray(z, dtype=complex)) if isinstance(z, np.ndarray) else 0j
        for k in range(len(self.coefficients) - 1, 0, -1):
            acc = acc * z + k * self.coefficients[k]
        return acc

    def __call__(self, z):
        return self.scale * self.u0(z)

    def is_constant(self) -> bool:
        return self.degree == 0

    def coefficient_scale(self, z) -> float:
        """Magnitude scale of U0 near z, for residual and singularity thresholds."""
        r = max(1.0, abs(z))
        return float(sum(abs(c) * r**k for k, c in enumerate(self.coefficients)))

    def zeros(self) -> list:
        """All roots of U0 with multiplicity (companion-matrix eigenvalues)."""
        d = self.degree
        if d == 0:
            return []
        desc = [self.coefficients[k] for k in range(d, -1, -1)]
        roots = np.roots(desc)
        for r in roots:
            tol = 1e-8 * self.coefficient_scale(r)
            if abs(self.u0(complex(r))) > tol:
                raise ArithmeticError(f"polynomial root residual too large at {r!r}")
        return [complex(r) for r in roots]


def flat_metric_factor(u: CubicDifferential, z: complex, *, tiny: float = 1e-12) -> float:
    """phi with e^phi = 2^(1/3) |U(z)|^(2/3), the singular flat conformal factor.

    Raises SingularPointError when |U(z)| falls below tiny times the local
    coefficient scale (machine-scaled zero detection).
    """
    val = u(complex(z))
    if abs(val) <= tiny * u.scale * u.coefficient_scale(z):
        raise SingularPointError(f"U vanishes near z={z!r} (|U|={abs(val):.3e})")
    return _LOG2 / 3.0 + (2.0 / 3.0) * math.log(abs(val))


def continued_cube_root(w: complex, prev: complex | None) -> complex:
    """Cube root of w: principal when prev is None, else the branch nearest prev."""
    if w == 0:
        return 0j
    principal = cmath.exp(cmath.log(w) / 3.0)
    if prev is None:
        return principal
    rot = cmath.exp(2j * cmath.pi / 3.0)
    best = principal
    best_d = abs(principal - prev)
    cand = principal
    for _ in range(2):
        cand *= rot
        d = abs(cand - prev)
        if d < best_d:
            best, best_d = cand, d
    return best


def point_segment_distance(p: complex, a: complex, b: complex) -> float:
    """Euclidean distance from p to the segment [a, b]."""
    ab = b - a
    denom = abs(ab) ** 2
    if denom == 0.0:
        return abs(p - a)
    t = ((p - a) * ab.conjugate()).real / denom
    t = min(1.0, max(0.0, t))
    return abs(p - (a + t * ab))


def _path_clearance_check(u: CubicDifferential, pts: list, delta: float):
    zs = u.zeros()
    for a, b in zip(pts[:-1], pts[1:]):
        for z0 in zs:
            d = point_segment_distance(z0, a, b)
            if d < delta:
                raise SingularPointError(
                    f"path passes within {d:.3e} of the zero {z0!r} (clearance {delta:.3e})"
                )


def flat_coordinate(u: CubicDifferential, path, *, tol: float = 1e-9,
                    clearance: float | None = None) -> complex:
    """w(end) = integral of (U/2)^(1/3) dzeta along a polyline from path[0].

    The cube-root branch is fixed at the path start by the principal value and
    continued along the path (nearest-root continuation at every quadrature
    node).  Composite Simpson per segment, panels doubled until the value
    settles to tol.
    """
    pts = [complex(p) for p in path]
    if len(pts) < 2:
        raise ValueError("path needs at least two points")
    diam = max(abs(p - q) for p in pts for q in pts)
    if diam == 0.0:
        return 0j
    delta = clearance if clearance is not None else 1e-3 * diam
    _path_clearance_check(u, pts, delta)

    def once(n_panels: int) -> complex:
        total = 0j
        prev = None
        for a, b in zip(pts[:-1], pts[1:]):
            seg = b - a
            if seg == 0:
                continue
            n = n_panels
            ts = np.arange(2 * n + 1) / (2.0 * n)
            vals = []
            for t in ts:
                g = continued_cube_root(u(a + t * seg) / 2.0, prev)
                vals.append(g)
                prev = g
            h = seg / n
            acc = 0j
            for i in range(n):
                acc += (h / 6.0) * (vals[2 * i] + 4.0 * vals[2 * i + 1] + vals[2 * i + 2])
            total += acc
        return total

    w_prev = once(8)
    n = 16
    while n <= 1 << 16:
        w = once(n)
        if abs(w - w_prev) <= tol * max(1.0, abs(w)):
            return w
        w_prev = w
        n *= 2
    raise ArithmeticError("flat-coordinate quadrature did not settle")


# ---------------------------------------------------------------------------
# grids and sampled fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Grid2D:
    """Uniform rectangular grid on [x0,x1] x [y0,y1]; periodic flags per axis.

    On a periodic axis the right/top edge is identified with the left/bottom
    one, so the spacing is (x1-x0)/nx instead of /(nx-1).
    """

    x0: float
    x1: float
    y0: float
    y1: float
    nx: int
    ny: int
    periodic_x: bool = False
    periodic_y: bool = False

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError("empty rectangle")
        if self.nx < 2 or self.ny < 2:
            raise ValueError("need at least 2 nodes per axis")

    @property
    def hx(self) -> float:
        return (self.x1 - self.x0) / (self.nx if self.periodic_x else self.nx - 1)

    @property
    def hy(self) -> float:
        return (self.y1 - self.y0) / (self.ny if self.periodic_y else self.ny - 1)

    def x_nodes(self) -> np.ndarray:
        return self.x0 + self.hx * np.arange(self.nx)

    def y_nodes(self) -> np.ndarray:
        return self.y0 + self.hy * np.arange(self.ny)

    def z_nodes(self) -> np.ndarray:
        """Complex node coordinates, shape (ny, nx)."""
        x = self.x_nodes()
        y = self.y_nodes()
        return x[None, :] + 1j * y[:, None]

    def contains(self, z: complex) -> bool:
        ok_x = self.periodic_x or (self.x0 - 1e-12 <= z.real <= self.x1 + 1e-12)
        ok_y = self.periodic_y or (self.y0 - 1e-12 <= z.imag <= self.y1 + 1e-12)
        return ok_x and ok_y

    def fractional_index(self, z):
        """(fy, fx) fractional node indices of z, wrapping periodic axes."""
        x = np.asarray(np.real(z), dtype=float)
        y = np.asarray(np.imag(z), dtype=float)
        fx = (x - self.x0) / self.hx
        fy = (y - self.y0) / self.hy
        if self.periodic_x:
            fx = np.mod(fx, self.nx)
        else:
            if np.any(fx < -1e-9) or np.any(fx > self.nx - 1 + 1e-9):
                raise OutOfDomainError(f"x out of range for {self}")
            fx = np.clip(fx, 0.0, self.nx - 1)
        if self.periodic_y:
            fy = np.mod(fy, self.ny)
        else:
            if np.any(fy < -1e-9) or np.any(fy > self.ny - 1 + 1e-9):
                raise OutOfDomainError(f"y out of range for {self}")
            fy = np.clip(fy, 0.0, self.ny - 1)
        return fy, fx


def _bilinear(values: np.ndarray, grid: Grid2D, z):
    fy, fx = grid.fractional_index(z)
    ny, nx = values.shape
    ix = np.floor(fx).astype(int)
    iy = np.floor(fy).astype(int)
    if grid.periodic_x:
        ix0, ix1 = ix % nx, (ix + 1) % nx
    else:
        ix = np.minimum(ix, nx - 2)
        ix0, ix1 = ix, ix + 1
    if grid.periodic_y:
        iy0, iy1 = iy % ny, (iy + 1) % ny
    else:
        iy = np.minimum(iy, ny - 2)
        iy0, iy1 = iy, iy + 1
    tx = fx - np.floor(fx) if grid.periodic_x else fx - ix
    ty = fy - np.floor(fy) if grid.periodic_y else fy - iy
    v00 = values[iy0, ix0]
    v01 = values[iy0, ix1]
    v10 = values[iy1, ix0]
    v11 = values[iy1, ix1]
    return (v00 * (1 - tx) * (1 - ty) + v01 * tx * (1 - ty)
            + v10 * (1 - tx) * ty + v11 * tx * ty)


class ScalarField:
    """Real field sampled on a Grid2D (the conformal factor psi and friends).

    Interpolation is bilinear and exact at nodes; derivatives use central
    second-order differences (one-sided second order at plain boundaries,
    wrapped on periodic axes).  A cached bicubic spline is available for
    consumers that need smoother off-node sampling.
    """

    def __init__(self, grid: Grid2D, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.ny, grid.nx):
            raise GridMismatchError(f"values shape {values.shape} != {(grid.ny, grid.nx)}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        self.grid = grid
        self.values = values.copy()
        self.values.setflags(write=False)
        self._derivs = None
        self._spline = None

    @classmethod
    def from_function(cls, grid: Grid2D, fn) -> "ScalarField":
        return cls(grid, np.vectorize(lambda z: float(fn(z)))(grid.z_nodes()))

    @classmethod
    def constant(cls, grid: Grid2D, value: float) -> "ScalarField":
        return cls(grid, np.full((grid.ny, grid.nx), float(value)))

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.grid, values)

    def shifted(self, delta: float) -> "ScalarField":
        return ScalarField(self.grid, self.values + delta)

    def sample(self, z):
        """Bilinear interpolation (exact at nodes); scalar or array argument."""
        out = _bilinear(self.values, self.grid, z)
        return float(out) if np.ndim(z) == 0 else out

    # -- derivatives ------------------------------------------------------

    def _axis_derivative(self, axis: int) -> np.ndarray:
        v = self.values
        g = self.grid
        periodic = g.periodic_y if axis == 0 else g.periodic_x
        h = g.hy if axis == 0 else g.hx
        if periodic:
            return (np.roll(v, -1, axis=axis) - np.roll(v, 1, axis=axis)) / (2.0 * h)
        return np.gradient(v, h, axis=axis, edge_order=2)

    def derivative_arrays(self):
        """(d/dx, d/dy) node arrays, second order."""
        if self._derivs is None:
            self._derivs = (self._axis_derivative(1), self._axis_derivative(0))
        return self._derivs

    def complex_derivative_grid(self) -> np.ndarray:
        dx, dy = self.derivative_arrays()
        return 0.5 * (dx - 1j * dy)

    def complex_derivative(self, z):
        """psi_z = (psi_x - i psi_y)/2 from node stencils, bilinear off nodes."""
        out = _bilinear(self.complex_derivative_grid(), self.grid, z)
        return complex(out) if np.ndim(z) == 0 else out

    # -- smooth sampling ---------------------------------------------------

    def _build_spline(self):
        g = self.grid
        pad = 4
        x = g.x_nodes()
        y = g.y_nodes()
        v = self.values
        if g.periodic_x:
            x = np.concatenate([x[-pad:] - (g.x1 - g.x0), x, x[:pad] + (g.x1 - g.x0)])
            v = np.concatenate([v[:, -pad:], v, v[:, :pad]], axis=1)
        if g.periodic_y:
            y = np.concatenate([y[-pad:] - (g.y1 - g.y0), y, y[:pad] + (g.y1 - g.y0)])
            v = np.concatenate([v[-pad:, :], v, v[:pad, :]], axis=0)
        return RectBivariateSpline(y, x, v, kx=3, ky=3)

    def _wrap(self, z):
        g = self.grid
        x = np.asarray(np.real(z), dtype=float)
        y = np.asarray(np.imag(z), dtype=float)
        if g.periodic_x:
            x = g.x0 + np.mod(x - g.x0, g.x1 - g.x0)
        if g.periodic_y:
            y = g.y0 + np.mod(y - g.y0, g.y1 - g.y0)
        return x, y

    def sample_spline(self, z, dx: int = 0, dy: int = 0):
        """Bicubic sampling (and derivatives) for smooth off-node evaluation."""
        if self._spline is None:
            self._spline = self._build_spline()
        x, y = self._wrap(z)
        out = self._spline.ev(y, x, dx=dy, dy=dx)
        return float(out) if np.ndim(z) == 0 else out

    def complex_derivative_spline(self, z):
        dx = self.sample_spline(z, dx=1)
        dy = self.sample_spline(z, dy=1)
        out = 0.5 * (np.asarray(dx) - 1j * np.asarray(dy))
        return complex(out) if np.ndim(z) == 0 else out

    # -- serialization ------------------------------------------------------

    def to_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write(self._csv_text())

    def _csv_text(self) -> str:
        g = self.grid
        head = ("nx,ny,x0,x1,y0,y1,periodic_x,periodic_y\n"
                f"{g.nx},{g.ny},{g.x0!r},{g.x1!r},{g.y0!r},{g.y1!r},"
                f"{int(g.periodic_x)},{int(g.periodic_y)}\n")
        body = "\n".join(repr(float(v)) for v in self.values.ravel())
        return head + body + "\n"

    @classmethod
    def from_csv(cls, path) -> "ScalarField":
        with open(path) as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
        if lines[0] != "nx,ny,x0,x1,y0,y1,periodic_x,periodic_y":
            raise ValueError("unrecognized field CSV header")
        nx, ny, x0, x1, y0, y1, px, py = lines[1].split(",")
        grid = Grid2D(float(x0), float(x1), float(y0), float(y1),
                      int(nx), int(ny), bool(int(px)), bool(int(py)))
        vals = np.array([float(v) for v in lines[2:]], dtype=float)
        return cls(grid, vals.reshape(grid.ny, grid.nx))

    def to_json(self, path):
        g = self.grid
        doc = {
            "nx": g.nx, "ny": g.ny,
            "bounds": [g.x0, g.x1, g.y0, g.y1],
            "periodic": [g.periodic_x, g.periodic_y],
            "values": [[float(v) for v in row] for row in self.values],
        }
        with open(path, "w", newline="\n") as fh:
            json.dump(doc, fh)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "ScalarField":
        with open(path) as fh:
            doc = json.load(fh)
        x0, x1, y0, y1 = doc["bounds"]
        grid = Grid2D(x0, x1, y0, y1, doc["nx"], doc["ny"], *map(bool, doc["periodic"]))
        return cls(grid, np.array(doc["values"], dtype=float))


def complex_derivative(field: ScalarField, z):
    """Module-level alias for ScalarField.complex_derivative."""
    return field.complex_derivative(z)


# ---------------------------------------------------------------------------
# geodesic segments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GeodesicSegment:
    """Straight segment z_a -> z_b in a flat chart, with declared zero clearance.

    L and theta come from z_b - z_a = L * exp(i * theta).  A degenerate
    segment (z_a == z_b) is allowed and transports to the identity.
    """

    start: complex
    end: complex
    clearance: float = 1e-3

    def __post_init__(self):
        if self.clearance <= 0.0:
            raise ValueError("clearance must be positive")
        object.__setattr__(self, "start", complex(self.start))
        object.__setattr__(self, "end", complex(self.end))

    @property
    def length(self) -> float:
        return abs(self.end - self.start)

    @property
    def theta(self) -> float:
        d = self.end - self.start
        return math.atan2(d.imag, d.real) if d != 0 else 0.0

    def point(self, t: float) -> complex:
        """Point at arclength t from the start."""
        if self.length == 0.0:
            return self.start
        return self.start + t * cmath.exp(1j * self.theta)

    def check_clearance(self, u: CubicDifferential):
        for z0 in u.zeros():
            d = point_segment_distance(z0, self.start, self.end)
            if d < self.clearance:
                raise SingularPointError(
                    f"segment passes within {d:.3e} of the zero {z0!r}"
                    f" (clearance {self.clearance:.3e})"
                )
