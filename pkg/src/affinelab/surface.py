"""Reconstruct the affine-sphere immersion from the frame equations; export meshes.

The immersion f: Omega -> R^3 is the first row of the frame (f, f_z, f_zbar),
which is transported node to node by the same fundamental solutions used for
holonomy.  A reality-compatible initial frame (first row real, third row the
conjugate of the second) stays reality-compatible along the flow, and
d(log det)/dz = psi_z makes det(f, f_z, f_zbar) e^{-psi} a constant of the
patch — a transported-frame invariant checked after the fact.

Note the determinant of a reality-compatible frame is purely imaginary:
det(f, f_z, f_zbar) = (i/2) det(f, f_x, f_y).  The default frame normalizes
it to (i/2) e^{psi(base)}, the conformal volume normalization.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError
from .fields import CubicDifferential, GeodesicSegment, Grid2D, ScalarField
from .transport import _integrate, _SegmentCoefficients, path_independence_residual

__all__ = [
    "EmbeddedPatch",
    "default_initial_frame",
    "integrate_embedding",
    "export_mesh",
    "mesh_obj_text",
    "mesh_csv_text",
]

_OMEGA = cmath.exp(2j * cmath.pi / 3.0)
_REALITY_TOL = 1e-9


def default_initial_frame(psi0: float) -> np.ndarray:
    """Reality-compatible frame with det = (i/2) e^{psi0}.

    f points along (1,1,1); the derivative rows follow the Fourier pattern of
    the constant-coefficient (Titeica) case, scaled so the conformal volume
    normalization holds.
    """
    m = math.exp(psi0 / 2.0)
    c = 1.0 / (6.0 * math.sqrt(3.0))
    f = np.array([c, c, c], dtype=complex)
    f_z = m * np.array([1.0, _OMEGA**2, _OMEGA], dtype=complex)
    return np.array([f, f_z, np.conj(f_z)])


def _check_reality(frame: np.ndarray):
    if np.max(np.abs(frame[0].imag)) > _REALITY_TOL:
        raise ValueError("initial frame first row must be real")
    if np.max(np.abs(frame[2] - np.conj(frame[1]))) > _REALITY_TOL:
        raise ValueError("initial frame third row must conjugate the second")


@dataclass
class EmbeddedPatch:
    """Immersion values and transported frames on a grid."""

    grid: Grid2D
    psi: ScalarField
    f: np.ndarray            # (ny, nx, 3) real
    frames: np.ndarray       # (ny, nx, 3, 3) complex
    reality_error: float

    def compatibility_residual(self) -> float:
        """max over interior nodes of | Delta_h f / 4 - e^psi f / 2 |."""
        g = self.grid
        lap = np.zeros_like(self.f)
        v = self.f
        lap[1:-1, 1:-1] = ((v[1:-1, 2:] - 2 * v[1:-1, 1:-1] + v[1:-1, :-2]) / g.hx**2
                           + (v[2:, 1:-1] - 2 * v[1:-1, 1:-1] + v[:-2, 1:-1]) / g.hy**2)
        target = 0.5 * np.exp(self.psi.values)[:, :, None] * v
        r = np.linalg.norm(lap / 4.0 - target, axis=2)
        return float(np.max(r[1:-1, 1:-1]))

    def det_invariant_deviation(self) -> float:
        """max relative drift of det(frame) e^{-psi} across the patch."""
        dets = np.linalg.det(self.frames)
        ratio = dets * np.exp(-self.psi.values)
        base = ratio[0, 0]
        return float(np.max(np.abs(ratio / base - 1.0)))

    def titeica_products(self, u: CubicDifferential) -> np.ndarray:
        """Products of the immersion coordinates that are pure exponentials.

        In the constant-coefficient case each R^3 coordinate column of the
        frame decomposes along the common eigenvectors of (A_z, A_zbar), so a
        fixed linear map turns the three coordinates of f into single
        exponentials e^{alpha_k z + beta_k zbar}.  Since the alpha_k (and the
        beta_k) sum to trace(A_z) = psi_z = 0, their product is constant over
        the patch: the classical x1 x2 x3 = const affine sphere.
        """
        psi0 = float(self.psi.values[0, 0])
        u0 = complex(u(complex(self.grid.x0, self.grid.y0)))
        a_z = np.array([
            [0.0, 1.0, 0.0],
            [0.0, 0.0, u0 * math.exp(-psi0)],
            [0.5 * math.exp(psi0), 0.0, 0.0],
        ], dtype=complex)
        _, vecs = np.linalg.eig(a_z)
        # expansion of the base frame's coordinate columns in the eigenbasis
        m = np.linalg.solve(vecs, self.frames[0, 0])
        t = np.linalg.inv(m.T)
        coords = np.einsum("ij,yxj->yxi", t, self.f.astype(complex))
        return np.prod(coords, axis=2)


def _edge_transport(coeff_cache, psi, u, a: complex, b: complex, steps: int) -> np.ndarray:
    seg = GeodesicSegment(a, b, clearance=coeff_cache["clearance"])
    sampler = _SegmentCoefficients(psi, u, seg, sampling="spline")
    ts = seg.length * np.arange(2 * steps + 1) / (2.0 * steps)
    stage = sampler.matrices(ts)
    return _integrate(stage, seg.length / steps, sampler.is_constant(stage))


def integrate_embedding(psi: ScalarField, u: CubicDifferential,
                        initial_frame: np.ndarray | None = None,
                        base: complex | None = None, *, steps_per_edge: int = 8,
                        clearance: float = 1e-6,
                        integrability_tol: float = 1e-4) -> EmbeddedPatch:
    """Transport the frame to every grid node along scanlines and extract f.

    The scan is deterministic: along the base row away from the base node,
    then up and down each column.  psi must satisfy the integrability
    condition; a path-independence residual above integrability_tol between
    the two elbow paths to the opposite corner aborts the reconstruction.
    """
    grid = psi.grid
    if base is None:
        base = complex(grid.x0, grid.y0)
    x = grid.x_nodes()
    y = grid.y_nodes()
    i0 = int(np.argmin(np.abs(x - base.real)))
    j0 = int(np.argmin(np.abs(y - base.imag)))
    if abs(x[i0] - base.real) > 1e-9 * max(1, abs(base)) or \
       abs(y[j0] - base.imag) > 1e-9 * max(1, abs(base)):
        raise ValueError("base point must be a grid node")

    if initial_frame is None:
        initial_frame = default_initial_frame(psi.sample(base))
    frame0 = np.asarray(initial_frame, dtype=complex)
    if frame0.shape != (3, 3):
        raise ValueError("initial frame must be 3x3")
    _check_reality(frame0)

    corner = complex(x[-1] if i0 == 0 else x[0], y[-1] if j0 == 0 else y[0])
    if corner != base:
        elbow1 = [base, complex(corner.real, base.imag), corner]
        elbow2 = [base, complex(base.real, corner.imag), corner]
        resid = path_independence_residual(psi, u, base, corner, (elbow1, elbow2),
                                           clearance=clearance)
        if resid > integrability_tol:
            raise ConvergenceError(
                f"field is not integrable: path-independence residual {resid:.3e} "
                f"exceeds {integrability_tol:.1e}", resid)

    cache = {"clearance": clearance}
    frames = np.zeros((grid.ny, grid.nx, 3, 3), dtype=complex)
    frames[j0, i0] = frame0

    # base row, outward from the base node
    for i in range(i0 + 1, grid.nx):
        phi = _edge_transport(cache, psi, u, complex(x[i - 1], y[j0]),
                              complex(x[i], y[j0]), steps_per_edge)
        frames[j0, i] = phi @ frames[j0, i - 1]
    for i in range(i0 - 1, -1, -1):
        phi = _edge_transport(cache, psi, u, complex(x[i + 1], y[j0]),
                              complex(x[i], y[j0]), steps_per_edge)
        frames[j0, i] = phi @ frames[j0, i + 1]
    # columns, outward from the base row
    for i in range(grid.nx):
        for j in range(j0 + 1, grid.ny):
            phi = _edge_transport(cache, psi, u, complex(x[i], y[j - 1]),
                                  complex(x[i], y[j]), steps_per_edge)
            frames[j, i] = phi @ frames[j - 1, i]
        for j in range(j0 - 1, -1, -1):
            phi = _edge_transport(cache, psi, u, complex(x[i], y[j + 1]),
                                  complex(x[i], y[j]), steps_per_edge)
            frames[j, i] = phi @ frames[j + 1, i]

    f_complex = frames[:, :, 0, :]
    reality = float(np.max(np.abs(f_complex.imag)))
    return EmbeddedPatch(grid, psi, f_complex.real.copy(), frames, reality)


# ---------------------------------------------------------------------------
# mesh export
# ---------------------------------------------------------------------------

def mesh_obj_text(patch: EmbeddedPatch) -> str:
    """Wavefront OBJ: vertices in row-major node order, quads split to triangles."""
    ny, nx = patch.f.shape[:2]
    if nx * ny == 0:
        raise ValueError("empty patch")
    lines = []
    for j in range(ny):
        for i in range(nx):
            vx, vy, vz = (repr(float(c)) for c in patch.f[j, i])
            lines.append(f"v {vx} {vy} {vz}")
    for j in range(ny - 1):
        for i in range(nx - 1):
            a = j * nx + i + 1
            b = j * nx + i + 2
            c = (j + 1) * nx + i + 1
            d = (j + 1) * nx + i + 2
            lines.append(f"f {a} {b} {c}")
            lines.append(f"f {b} {d} {c}")
    return "\n".join(lines) + "\n"


def mesh_csv_text(patch: EmbeddedPatch) -> str:
    ny, nx = patch.f.shape[:2]
    if nx * ny == 0:
        raise ValueError("empty patch")
    lines = ["x,y,z"]
    for j in range(ny):
        for i in range(nx):
            lines.append(",".join(repr(float(c)) for c in patch.f[j, i]))
    return "\n".join(lines) + "\n"


def export_mesh(patch: EmbeddedPatch, fmt: str, path) -> None:
    """Write the patch as OBJ or CSV; byte output is deterministic."""
    if fmt == "obj":
        text = mesh_obj_text(patch)
    elif fmt == "csv":
        text = mesh_csv_text(patch)
    else:
        raise ValueError(f"unknown mesh format {fmt!r}")
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
