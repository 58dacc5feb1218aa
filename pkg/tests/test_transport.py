import cmath
import math

import numpy as np
import pytest
from scipy.linalg import expm

from affinelab.errors import ConvergenceError
from affinelab.fields import CubicDifferential, GeodesicSegment, Grid2D, ScalarField
from affinelab.transport import (eig3, graded_eig3, holonomy,
                                 path_independence_residual,
                                 structure_matrices, transport)
from affinelab.wang import WangProblem, solve, subsolution_field


def torus_setup(lam, n=32):
    grid = Grid2D(0.0, 1.0, 0.0, 1.0, n, n, periodic_x=True, periodic_y=True)
    u = CubicDifferential([2.0], scale=lam)
    psi = ScalarField.constant(grid, math.log(8.0 * lam**2) / 3.0)
    return psi, u


def exact_torus_fundamental(lam, theta, length):
    """Matrix exponential of the constant coefficient matrix (the oracle)."""
    psi0 = math.log(8.0 * lam**2) / 3.0
    sm = structure_matrices(psi0, 0.0, 2.0 * lam, lam)
    c = cmath.exp(1j * theta) * sm.A_z + cmath.exp(-1j * theta) * sm.A_zbar
    return expm(length * c)


class TestStructureMatrices:
    def test_unit_case(self):
        sm = structure_matrices(math.log(2.0), 0.0, 2.0, 1.0)
        cyclic = np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]], dtype=complex)
        assert np.allclose(sm.A_z, cyclic, atol=1e-15)
        assert np.allclose(sm.P, cyclic, atol=1e-15)

    def test_scaled_case(self):
        # psi solved at lambda = 8 is log 8; P becomes 2 x cyclic
        sm = structure_matrices(math.log(8.0), 0.0, 16.0, 8.0)
        cyclic = np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]], dtype=complex)
        assert np.allclose(sm.P, 2.0 * cyclic, atol=1e-14)

    def test_trace_identity(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            psi = rng.uniform(-1, 2)
            psi_z = complex(*rng.standard_normal(2))
            uval = complex(*rng.standard_normal(2))
            lam = math.exp(rng.uniform(0, 5))
            th = rng.uniform(0, 2 * math.pi)
            sm = structure_matrices(psi, psi_z, uval, lam)
            tr = np.trace(cmath.exp(1j * th) * sm.P + cmath.exp(-1j * th) * sm.Q)
            assert abs(tr - 2.0 * (cmath.exp(1j * th) * psi_z).real) < 1e-12

    def test_conjugation_preserves_eigenvalues(self):
        sm = structure_matrices(0.7, 0.1 + 0.2j, 3.0 + 1.0j, 27.0)
        e1 = np.sort_complex(np.linalg.eigvals(sm.A_z))
        e2 = np.sort_complex(np.linalg.eigvals(sm.P))
        assert np.allclose(e1, e2, rtol=1e-10, atol=1e-12)


class TestTransport:
    def test_matches_exponential_oracle(self):
        psi, u = torus_setup(1.0)
        seg = GeodesicSegment(0.1 + 0.1j, 1.1 + 0.1j)
        fm = transport(psi, u, seg)
        oracle = exact_torus_fundamental(1.0, 0.0, 1.0)
        assert np.linalg.norm(fm.Phi - oracle) < 1e-9

    def test_eigenvalue_moduli_theta_pi_six(self):
        psi, u = torus_setup(1.0)
        seg = GeodesicSegment(0j, 2.0 * cmath.exp(1j * math.pi / 6))
        fm = transport(psi, u, seg)
        moduli = np.sort(np.abs(eig3(fm.Phi)))[::-1]
        s3 = 2.0 * math.sqrt(3.0)
        assert np.allclose(moduli, [math.exp(s3), 1.0, math.exp(-s3)], rtol=1e-8)

    def test_zero_length_identity(self):
        psi, u = torus_setup(1.0)
        fm = transport(psi, u, GeodesicSegment(0.3, 0.3))
        assert np.array_equal(fm.Phi, np.eye(3, dtype=complex))

    def test_det_identity_along_nonloop(self):
        # on a zero-free patch the flat factor solves the equation, so the
        # determinant must track e^{psi(end) - psi(start)}
        u = CubicDifferential([0, 2.0], scale=3.0)
        grid = Grid2D(1.0, 2.0, -0.5, 0.5, 65, 65)
        prob = WangProblem(u, grid)
        psi = subsolution_field(prob)
        seg = GeodesicSegment(1.2 + 0.1j, 1.8 - 0.2j)
        fm = transport(psi, u, seg)
        assert fm.det_drift() < 1e-8

    def test_step_count_too_small(self):
        psi, u = torus_setup(1000.0)
        seg = GeodesicSegment(0j, 1.0)
        with pytest.raises(ConvergenceError):
            transport(psi, u, seg, steps=8)

    def test_richardson_order(self):
        # non-constant coefficients: doubling steps cuts the error ~16x
        u = CubicDifferential([0, 2.0], scale=3.0)
        grid = Grid2D(1.0, 2.0, -0.5, 0.5, 65, 65)
        psi = subsolution_field(WangProblem(u, grid))
        seg = GeodesicSegment(1.2 + 0.1j, 1.8 - 0.2j)
        ref = transport(psi, u, seg, rtol=1e-12).Phi
        e1 = np.linalg.norm(transport(psi, u, seg, steps=64).Phi - ref)
        e2 = np.linalg.norm(transport(psi, u, seg, steps=128).Phi - ref)
        assert e1 / e2 >= 12.0

    def test_scaled_gauge_same_eigenvalues(self):
        psi, u = torus_setup(8.0)
        seg = GeodesicSegment(0.2 + 0.1j, 0.7 + 0.6j)
        e_un = np.sort(np.abs(eig3(transport(psi, u, seg).Phi)))
        e_sc = np.sort(np.abs(eig3(transport(psi, u, seg, gauge="scaled").Phi)))
        assert np.allclose(e_un, e_sc, rtol=1e-9)


class TestEig3:
    def test_matches_lapack_on_random(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
            got = np.sort_complex(eig3(a))
            ref = np.sort_complex(np.linalg.eigvals(a))
            assert np.allclose(got, ref, rtol=1e-10, atol=1e-12)

    def test_graded_recovers_small_eigenvalue(self):
        d = np.diag([1.0, 1e-8, 1e-15]).astype(complex)
        rng = np.random.default_rng(1)
        e = 1e-17 * (rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3)))
        np.fill_diagonal(e, 0.0)
        got = np.sort(np.abs(graded_eig3(d + e)))
        # dense solvers lose this eigenvalue entirely (eps * ||A|| ~ 2e-16)
        assert abs(got[0] / 1e-15 - 1.0) < 1e-6

    def test_graded_falls_back_when_coupled(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        got = np.sort_complex(graded_eig3(a))
        ref = np.sort_complex(np.linalg.eigvals(a))
        assert np.allclose(got, ref, rtol=1e-9, atol=1e-12)


class TestHolonomy:
    def test_unit_lambda(self):
        psi, u = torus_setup(1.0)
        hr = holonomy(psi, u, GeodesicSegment(0.1 + 0.1j, 1.1 + 0.1j))
        assert np.allclose(hr.log_spectrum.as_array(), (2.0, -1.0, -1.0), atol=1e-7)
        assert np.allclose(hr.predicted.as_array(), (2.0, -1.0, -1.0), atol=1e-12)
        assert hr.det_drift < 1e-8
        assert hr.real_eigenvalues

    def test_lambda_64(self):
        psi, u = torus_setup(64.0)
        hr = holonomy(psi, u, GeodesicSegment(0j, 1.0))
        assert np.allclose(hr.log_spectrum.as_array(), (8.0, -4.0, -4.0), atol=1e-6)

    def test_log_spectrum_sums_to_zero(self):
        psi, u = torus_setup(64.0)
        hr = holonomy(psi, u, GeodesicSegment(0j, 0.7 + 0.4j))
        assert abs(sum(hr.log_spectrum.as_array())) < 1e-10

    def test_short_segment_near_identity(self):
        psi, u = torus_setup(1.0)
        hr = holonomy(psi, u, GeodesicSegment(0.2, 0.2 + 1e-7))
        assert np.max(np.abs(hr.log_spectrum.as_array())) < 1e-6

    def test_flat_chart_conversion_for_nonunit_constant(self):
        # U0 = 16 (not 2): the flat chart rescales lengths by (U0/2)^(1/3) = 2
        lam = 1.0
        grid = Grid2D(0.0, 1.0, 0.0, 1.0, 16, 16, periodic_x=True, periodic_y=True)
        u = CubicDifferential([16.0], scale=lam)
        psi = ScalarField.constant(grid, math.log(8.0 * 64.0) / 3.0)
        hr = holonomy(psi, u, GeodesicSegment(0j, 0.5))
        # flat length 1.0, theta 0 -> spectrum (2, -1, -1)
        assert np.allclose(hr.predicted.as_array(), (2.0, -1.0, -1.0), atol=1e-12)
        assert np.allclose(hr.log_spectrum.as_array(), (2.0, -1.0, -1.0), atol=1e-7)


class TestPathIndependence:
    def test_solved_field_is_flat(self):
        grid = Grid2D(0.0, 1.0, 0.0, 1.0, 32, 32, periodic_x=True, periodic_y=True)
        prob = WangProblem(CubicDifferential([2.0], scale=1.0), grid, boundary="periodic")
        psi = solve(prob, tol=1e-11).psi
        u = CubicDifferential([2.0], scale=1.0)
        paths = ([0j, 0.5, 0.5 + 0.5j], [0j, 0.5j, 0.5 + 0.5j])
        assert path_independence_residual(psi, u, 0j, 0.5 + 0.5j, paths) < 1e-8

    def test_perturbed_field_is_not(self):
        psi, u = torus_setup(1.0)
        paths = ([0j, 0.5, 0.5 + 0.5j], [0j, 0.5j, 0.5 + 0.5j])
        resid = path_independence_residual(psi.shifted(0.1), u, 0j, 0.5 + 0.5j, paths)
        assert resid > 1e-3

    def test_coincident_paths(self):
        psi, u = torus_setup(1.0)
        path = [0j, 0.3 + 0.1j, 0.5 + 0.5j]
        assert path_independence_residual(psi, u, 0j, 0.5 + 0.5j, (path, list(path))) == 0.0

    def test_endpoint_validation(self):
        psi, u = torus_setup(1.0)
        with pytest.raises(ValueError):
            path_independence_residual(psi, u, 0j, 1j, ([0j, 0.5], [0j, 1j]))
