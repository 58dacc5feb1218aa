"""Frame transport along flat geodesics and holonomy eigenvalue extraction.

The frame (f, f_z, f_zbar) of the affine immersion satisfies the first-order
system

    d(frame)/dz    = A_z    * frame,   A_z    = [[0, 1, 0], [0, psi_z, U e^-psi], [e^psi/2, 0, 0]],
    d(frame)/dzbar = A_zbar * frame,   A_zbar = [[0, 0, 1], [e^psi/2, 0, 0], [0, conj(U) e^-psi, conj(psi_z)]].

Along a straight segment z(t) = z_a + t e^{i theta} the fundamental solution
solves Phi(0) = I, dPhi/dt = (e^{i theta} A_z + e^{-i theta} A_zbar) Phi, and
its eigenvalues carry the holonomy data.  Integration happens in the unscaled
frame; the lambda^(1/3)-scaled version P = D A_z D^{-1}, Q = D A_zbar D^{-1}
with D = diag(1, lambda^(-1/3), lambda^(-1/3)) is a conjugation and leaves
eigenvalues untouched.

For exponents lambda^(1/3) mu_1 L beyond overflow comfort the integrator
subtracts lambda^(1/3) mu_1 I from the coefficient matrix and records the
removed log-scale; all spectral reporting is overflow-safe through that
shift.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .cubics import SpectralTriple, mu_roots, predicted_log_spectrum
from .errors import ConvergenceError
from .fields import CubicDifferential, GeodesicSegment, ScalarField

__all__ = [
    "StructureMatrices",
    "FrameMatrix",
    "HolonomyResult",
    "structure_matrices",
    "transport",
    "holonomy",
    "path_independence_residual",
    "eig3",
    "graded_eig3",
]

RESCALE_THRESHOLD = 200.0
_REAL_EIG_TOL = 1e-8


# ---------------------------------------------------------------------------
# structure matrices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StructureMatrices:
    """Unscaled (A_z, A_zbar) and lambda^(1/3)-scaled (P, Q) frame matrices."""

    A_z: np.ndarray
    A_zbar: np.ndarray
    P: np.ndarray
    Q: np.ndarray


def _frame_matrices(psi: float, psi_z: complex, u_val: complex):
    ue = u_val * math.exp(-psi)
    ep = 0.5 * math.exp(psi)
    a_z = np.array([
        [0.0, 1.0, 0.0],
        [0.0, psi_z, ue],
        [ep, 0.0, 0.0],
    ], dtype=complex)
    a_zbar = np.array([
        [0.0, 0.0, 1.0],
        [ep, 0.0, 0.0],
        [0.0, np.conj(u_val) * math.exp(-psi), np.conj(psi_z)],
    ], dtype=complex)
    return a_z, a_zbar


def structure_matrices(psi: float, psi_z: complex, u_val: complex, lam: float) -> StructureMatrices:
    """Assemble the frame coefficient matrices at a point.

    u_val is the full U = lambda * U0 value there; lam only enters the
    diagonal conjugation D = diag(1, lambda^(-1/3), lambda^(-1/3)) that turns
    (A_z, A_zbar) into (P, Q).
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    a_z, a_zbar = _frame_matrices(psi, psi_z, u_val)
    d = np.diag([1.0, lam ** (-1.0 / 3.0), lam ** (-1.0 / 3.0)])
    dinv = np.diag([1.0, lam ** (1.0 / 3.0), lam ** (1.0 / 3.0)])
    return StructureMatrices(a_z, a_zbar, d @ a_z @ dinv, d @ a_zbar @ dinv)


# ---------------------------------------------------------------------------
# coefficient sampling along a segment
# ---------------------------------------------------------------------------

class _SegmentCoefficients:
    """C(t) = e^{i theta} A_z + e^{-i theta} A_zbar along a straight segment."""

    def __init__(self, psi: ScalarField, u: CubicDifferential,
                 segment: GeodesicSegment, sampling: str = "spline",
                 gauge: str = "unscaled"):
        if sampling not in ("spline", "bilinear"):
            raise ValueError("sampling must be 'spline' or 'bilinear'")
        if gauge not in ("unscaled", "scaled"):
            raise ValueError("gauge must be 'unscaled' or 'scaled'")
        segment.check_clearance(u)
        self.psi = psi
        self.u = u
        self.segment = segment
        self.sampling = sampling
        self.gauge = gauge

    def _sample_psi(self, zs: np.ndarray):
        if self.sampling == "spline":
            vals = self.psi.sample_spline(zs)
            dz = self.psi.complex_derivative_spline(zs)
        else:
            vals = self.psi.sample(zs)
            dz = self.psi.complex_derivative(zs)
        return np.asarray(vals, dtype=float), np.asarray(dz, dtype=complex)

    def matrices(self, ts: np.ndarray) -> np.ndarray:
        """Stack of C(t) for the given arclength samples, shape (len(ts), 3, 3)."""
        seg = self.segment
        zs = seg.start + ts * cmath.exp(1j * seg.theta)
        psis, psi_zs = self._sample_psi(zs)
        uvals = self.u(zs)
        eio = cmath.exp(1j * seg.theta)
        out = np.zeros((len(ts), 3, 3), dtype=complex)
        em = np.exp(-psis)
        ep = 0.5 * np.exp(psis)
        # e^{i theta} A_z
        out[:, 0, 1] = eio
        out[:, 1, 1] = eio * psi_zs
        out[:, 1, 2] = eio * uvals * em
        out[:, 2, 0] = eio * ep
        # + e^{-i theta} A_zbar
        out[:, 0, 2] += np.conj(eio)
        out[:, 1, 0] += np.conj(eio) * ep
        out[:, 2, 1] += np.conj(eio) * np.conj(uvals) * em
        out[:, 2, 2] += np.conj(eio) * np.conj(psi_zs)
        if self.gauge == "scaled":
            lam3 = self.u.scale ** (1.0 / 3.0)
            out[:, 0, :] /= lam3
            out[:, :, 0] *= lam3
        return out

    def is_constant(self, sample: np.ndarray) -> bool:
        spread = np.max(np.abs(sample - sample[0]))
        return spread <= 1e-14 * max(1.0, float(np.max(np.abs(sample[0]))))


def _rk4_step_matrix(c: np.ndarray, h: float) -> np.ndarray:
    """One classical RK4 step for the linear constant system: a degree-4 Taylor."""
    hc = h * c
    eye = np.eye(3, dtype=complex)
    return eye + hc + hc @ hc / 2.0 + hc @ hc @ hc / 6.0 + hc @ hc @ hc @ hc / 24.0


def _integrate(stage: np.ndarray, h: float, constant: bool) -> np.ndarray:
    """March RK4 through precomputed stage matrices C(t_k), C(t_k + h/2), ..."""
    if constant:
        n = (len(stage) - 1) // 2
        return np.linalg.matrix_power(_rk4_step_matrix(stage[0], h), n)
    phi = np.eye(3, dtype=complex)
    n = (len(stage) - 1) // 2
    for k in range(n):
        c0 = stage[2 * k]
        cm = stage[2 * k + 1]
        c1 = stage[2 * k + 2]
        k1 = c0 @ phi
        k2 = cm @ (phi + 0.5 * h * k1)
        k3 = cm @ (phi + 0.5 * h * k2)
        k4 = c1 @ (phi + h * k3)
        phi = phi + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return phi


# ---------------------------------------------------------------------------
# fundamental solutions
# ---------------------------------------------------------------------------

@dataclass
class FrameMatrix:
    """Fundamental solution at the segment end, stored as Phi * e^{-log_scale}."""

    Phi: np.ndarray
    log_scale: float
    lam: float
    theta: float
    L: float
    psi_start: float
    psi_end: float
    steps: int = 0

    def det_stored(self) -> complex:
        return complex(np.linalg.det(self.Phi))

    def det_drift(self) -> float:
        """|det Phi * e^{-(psi_end - psi_start)} - 1| (zero for exact transport)."""
        expo = 3.0 * self.log_scale - (self.psi_end - self.psi_start)
        return abs(self.det_stored() * math.exp(expo) - 1.0)

    def trace_stored(self) -> complex:
        return complex(np.trace(self.Phi))

    def second_symmetric_stored(self) -> complex:
        a = self.Phi
        m = (a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
             + a[0, 0] * a[2, 2] - a[0, 2] * a[2, 0]
             + a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1])
        return complex(m)


def transport(psi: ScalarField, u: CubicDifferential, segment: GeodesicSegment,
              steps: int | None = None, *, rtol: float = 1e-10,
              sampling: str = "spline", gauge: str = "unscaled",
              rescale_threshold: float = RESCALE_THRESHOLD) -> FrameMatrix:
    """Integrate the frame IVP along the segment with classical RK4.

    With explicit steps the result is cross-checked against the half-step
    count and a disagreement above 1e-6 raises (step count too small).
    Without steps the count doubles from 256 until successive results agree
    to rtol.  When lambda^(1/3) mu_1 L exceeds the rescale threshold the
    shifted system (C - lambda^(1/3) mu_1 I) is integrated instead and the
    removed exponential is recorded in log_scale.
    """
    lam = u.scale
    p_start = float(psi.sample_spline(segment.start) if sampling == "spline"
                    else psi.sample(segment.start))
    if segment.length == 0.0:
        return FrameMatrix(np.eye(3, dtype=complex), 0.0, lam, segment.theta, 0.0,
                           p_start, p_start)
    p_end = float(psi.sample_spline(segment.end) if sampling == "spline"
                  else psi.sample(segment.end))
    coeffs = _SegmentCoefficients(psi, u, segment, sampling, gauge)

    mu1 = mu_roots(segment.theta).mu1
    growth = np.cbrt(lam) * mu1 * segment.length
    shift = np.cbrt(lam) * mu1 if growth > rescale_threshold else 0.0
    log_scale = shift * segment.length

    eye = np.eye(3)

    def run(n: int) -> np.ndarray:
        ts = segment.length * np.arange(2 * n + 1) / (2.0 * n)
        stage = coeffs.matrices(ts)
        if shift:
            stage -= shift * eye
        return _integrate(stage, segment.length / n, coeffs.is_constant(stage))

    def rel_diff(a: np.ndarray, b: np.ndarray) -> float:
        return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))

    if steps is not None:
        if steps < 2:
            raise ValueError("need at least 2 steps")
        phi = run(steps)
        phi_half = run(max(1, steps // 2))
        if rel_diff(phi_half, phi) > 1e-6:
            raise ConvergenceError(
                f"step count {steps} too small (halving disagreement "
                f"{rel_diff(phi_half, phi):.3e})")
        return FrameMatrix(phi, log_scale, lam, segment.theta, segment.length,
                           p_start, p_end, steps)

    n = 256
    phi_prev = run(n)
    while n <= (1 << 17):
        n *= 2
        phi = run(n)
        if rel_diff(phi_prev, phi) <= rtol:
            return FrameMatrix(phi, log_scale, lam, segment.theta, segment.length,
                               p_start, p_end, n)
        phi_prev = phi
    raise ConvergenceError("transport did not reach the requested tolerance")


# ---------------------------------------------------------------------------
# eigenvalues
# ---------------------------------------------------------------------------

def _cardano(c2: complex, c1: complex, c0: complex) -> np.ndarray:
    """Roots of x^3 + c2 x^2 + c1 x + c0 by the trigonometric/Cardano formula."""
    p = c1 - c2 * c2 / 3.0
    q = 2.0 * c2**3 / 27.0 - c2 * c1 / 3.0 + c0
    shift = -c2 / 3.0
    if p == 0 and q == 0:
        return np.array([shift, shift, shift])
    s = cmath.sqrt(q * q / 4.0 + p**3 / 27.0)
    u3 = -q / 2.0 + s
    if abs(-q / 2.0 - s) > abs(u3):
        u3 = -q / 2.0 - s
    u = u3 ** (1.0 / 3.0)
    omega = cmath.exp(2j * cmath.pi / 3.0)
    roots = []
    for k in range(3):
        uk = u * omega**k
        roots.append(uk - p / (3.0 * uk) + shift)
    return np.array(roots)


def graded_eig3(a: np.ndarray) -> np.ndarray:
    """Eigenvalues of a strongly graded near-diagonal 3x3 matrix.

    Dense eigensolvers only deliver absolute accuracy eps * ||A||, which
    destroys eigenvalues living many orders below the norm.  When the matrix
    is a small perturbation of a graded diagonal, quasi-degenerate
    perturbation theory recovers every eigenvalue at its own scale: cluster
    the diagonal by magnitude, fold the coupling to other clusters in at
    second order, and diagonalize each cluster block exactly.  Falls back to
    the dense solver whenever the corrections are not provably negligible.
    """
    a = np.asarray(a, dtype=complex)
    d = np.diag(a)
    if np.any(d == 0):
        return eig3(a)
    logs = np.log(np.abs(d))
    order = np.argsort(-logs)
    clusters = [[order[0]]]
    for idx in order[1:]:
        if logs[clusters[-1][-1]] - logs[idx] < 2.0:
            clusters[-1].append(idx)
        else:
            clusters.append([idx])
    if len(clusters) == 1:
        return eig3(a)
    eigs = np.zeros(3, dtype=complex)
    for cluster in clusters:
        others = [k for k in range(3) if k not in cluster]
        scale = max(abs(d[k]) for k in cluster)
        block = np.array([[a[i, j] for j in cluster] for i in cluster])
        ok = True
        for bi, i in enumerate(cluster):
            for bj, j in enumerate(cluster):
                corr = 0j
                for k in others:
                    gap = 0.5 * (d[i] + d[j]) - d[k]
                    if gap == 0:
                        ok = False
                        break
                    corr += a[i, k] * a[k, j] / gap
                block[bi, bj] += corr
                if abs(corr) > 1e-8 * scale:
                    ok = False
            # off-cluster couplings must be perturbative at this scale
            for k in others:
                if abs(a[i, k] * a[k, i]) > 1e-8 * scale * abs(d[i] - d[k]):
                    ok = False
        if not ok:
            return eig3(a)
        if len(cluster) == 1:
            eigs[cluster[0]] = block[0, 0]
        else:
            tr = block[0, 0] + block[1, 1]
            disc = cmath.sqrt((block[0, 0] - block[1, 1]) ** 2
                              + 4.0 * block[0, 1] * block[1, 0])
            eigs[cluster[0]] = 0.5 * (tr + disc)
            eigs[cluster[1]] = 0.5 * (tr - disc)
    return eigs[np.argsort(-np.abs(eigs), kind="stable")]


def eig3(a: np.ndarray) -> np.ndarray:
    """Eigenvalues of a 3x3 matrix, sorted by modulus descending.

    Closed-form characteristic cubic first; falls back to QR iteration when
    the closed-form roots fail their residual check (ill-conditioned
    coefficients, e.g. tight clusters next to a dominant eigenvalue).
    """
    a = np.asarray(a, dtype=complex)
    c2 = -np.trace(a)
    c1 = (a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
          + a[0, 0] * a[2, 2] - a[0, 2] * a[2, 0]
          + a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1])
    c0 = -np.linalg.det(a)
    roots = _cardano(complex(c2), complex(c1), complex(c0))
    ok = True
    for x in roots:
        resid = abs(x**3 + c2 * x**2 + c1 * x + c0)
        scale = abs(x) ** 3 + abs(c2) * abs(x) ** 2 + abs(c1) * abs(x) + abs(c0)
        if resid > 1e-9 * max(scale, 1e-300):
            ok = False
            break
    # clustered roots are exactly where the closed form loses digits (the
    # residual stays small there even for badly placed roots), so prefer the
    # backward-stable dense solver for any near-multiple root
    if ok:
        top = float(np.max(np.abs(roots)))
        for i in range(3):
            for j in range(i + 1, 3):
                if abs(roots[i] - roots[j]) < 1e-3 * max(top, 1e-300):
                    ok = False
    if not ok:
        roots = np.linalg.eigvals(a)
    return roots[np.argsort(-np.abs(roots), kind="stable")]


# ---------------------------------------------------------------------------
# holonomy data
# ---------------------------------------------------------------------------

@dataclass
class HolonomyResult:
    """Eigenvalue data of a fundamental solution, overflow-safe via log_scale."""

    frame: FrameMatrix
    xi_stored: np.ndarray
    log_moduli: np.ndarray
    log_spectrum: SpectralTriple
    predicted: SpectralTriple
    det_drift: float
    real_eigenvalues: bool

    @property
    def xi(self) -> np.ndarray:
        """Eigenvalues in the original scale (may overflow for huge exponents)."""
        return self.xi_stored * math.exp(self.log_scale)

    @property
    def log_scale(self) -> float:
        return self.frame.log_scale

    def to_json_dict(self) -> dict:
        return {
            "lambda": self.frame.lam,
            "theta": self.frame.theta,
            "L": self.frame.L,
            "xi": [[float(x.real), float(x.imag)] for x in self.xi],
            "log_spectrum": [float(v) for v in self.log_spectrum.as_array()],
            "predicted": [float(v) for v in self.predicted.as_array()],
            "det_drift": self.det_drift,
        }


# Eigenvalues extracted from an assembled Phi(L) carry an absolute error of
# order eps * e^spread (Bauer-Fike on the integration rounding), so the
# smallest eigenvalue loses relative accuracy once the spread passes ~22 and
# the product-determinant identity degrades past 1e-10 already near 10.
STABILIZED_SPREAD = 10.0


def _flat_chart_segment(u: CubicDifferential, segment: GeodesicSegment):
    """(theta, L) of the segment in the chart where U0 = 2 dz^3.

    For a constant U0 the chart change is the fixed rotation-dilation
    (U0/2)^(1/3); for non-constant U0 the raw z-chart data is returned (the
    segment is then only a fundamental-solution path, not a flat geodesic).
    """
    if u.is_constant() and segment.length > 0:
        c13 = cmath.exp(cmath.log(u.coefficients[0] / 2.0) / 3.0)
        disp = (segment.end - segment.start) * c13
        return math.atan2(disp.imag, disp.real), abs(disp)
    return segment.theta, segment.length


def holonomy(psi: ScalarField, u: CubicDifferential, segment: GeodesicSegment,
             *, stabilized: str | bool = "auto", samples: int = 4096,
             picard_iterations: int = 30, **transport_kwargs) -> HolonomyResult:
    """Transport along the segment and extract the eigenvalue data.

    The log-spectrum is projected to the unimodular class (subtract one third
    of log det), so it sums to zero up to rounding; the predicted triple is
    lambda^(1/3) mu_i L from the spectral cubic, with theta and L measured in
    the flat chart.  Non-real eigenvalues are flagged, not rejected: open
    segments need not have loop holonomy.

    Past a moderate eigenvalue spread lambda^(1/3)(mu_1 - mu_3) L, no
    assembled double-precision Phi(L) can resolve the small eigenvalues
    (rounding eps * e^spread swamps them), so for constant differentials the
    computation switches to the diagonalized gauge: the system is conjugated
    into the Fourier eigenbasis and each column is integrated at its own
    exponential scale through the fixed-point machinery, keeping every
    eigenvalue relatively accurate.
    """
    theta_flat, length_flat = _flat_chart_segment(u, segment)
    mu = mu_roots(theta_flat)
    spread = np.cbrt(u.scale) * (mu.mu1 - mu.mu3) * length_flat
    use_stabilized = (stabilized is True
                      or (stabilized == "auto" and spread > STABILIZED_SPREAD
                          and u.is_constant()))
    if use_stabilized:
        from .asymptotics import SystemSolution, perturbed_system_from_field

        system = perturbed_system_from_field(psi, u, segment.start, theta_flat,
                                             length_flat, samples)
        fm = SystemSolution.from_picard(system, picard_iterations).frame_matrix()
        xi = graded_eig3(fm.Phi)
    else:
        fm = transport(psi, u, segment, **transport_kwargs)
        fm.theta = theta_flat
        fm.L = length_flat
        xi = eig3(fm.Phi)
    det_stored = fm.det_stored()
    log_det_stored = math.log(abs(det_stored)) if det_stored != 0 else -math.inf
    log_moduli = np.log(np.abs(xi)) + fm.log_scale
    ls = np.log(np.abs(xi)) - log_det_stored / 3.0
    real = bool(np.all(np.abs(xi.imag) <= _REAL_EIG_TOL * (1.0 + np.abs(xi))))
    return HolonomyResult(
        frame=fm,
        xi_stored=xi,
        log_moduli=log_moduli,
        log_spectrum=SpectralTriple(*(float(v) for v in ls)),
        predicted=predicted_log_spectrum(u.scale, theta_flat, length_flat),
        det_drift=fm.det_drift(),
        real_eigenvalues=real,
    )


def path_independence_residual(psi: ScalarField, u: CubicDifferential,
                               z_a: complex, z_b: complex, paths,
                               clearance: float = 1e-3,
                               **transport_kwargs) -> float:
    """||Phi_path1 - Phi_path2|| / ||Phi_path1|| over two polylines z_a -> z_b.

    Near zero exactly when psi satisfies the integrability condition (the
    connection is flat); a non-solution field produces order-one curvature
    and a residual far above integrator error.
    """
    if len(paths) != 2:
        raise ValueError("need exactly two paths")
    phis = []
    for path in paths:
        pts = [complex(p) for p in path]
        if abs(pts[0] - complex(z_a)) > 1e-12 or abs(pts[-1] - complex(z_b)) > 1e-12:
            raise ValueError("path endpoints do not match z_a, z_b")
        phi = np.eye(3, dtype=complex)
        scale = 0.0
        for a, b in zip(pts[:-1], pts[1:]):
            if a == b:
                continue
            fm = transport(psi, u, GeodesicSegment(a, b, clearance), **transport_kwargs)
            phi = fm.Phi @ phi
            scale += fm.log_scale
        phis.append((phi, scale))
    (p1, s1), (p2, s2) = phis
    # common rescale: the two paths share endpoints, so the honest comparison
    # is between p1 e^{s1} and p2 e^{s2}; shift by s1 to stay bounded
    p2 = p2 * math.exp(s2 - s1)
    return float(np.linalg.norm(p1 - p2) / np.linalg.norm(p1))
