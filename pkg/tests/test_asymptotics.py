import math

import numpy as np
import pytest

from affinelab.asymptotics import (PerturbedSystem, SystemSolution,
                                   _cumulative_simpson, char_poly_compare,
                                   column_growth_check,
                                   contraction_certificate, cyclic_matrix,
                                   eigenvalue_bracket, integrate_system,
                                   mu_eigensystem,
                                   perturbed_system_from_field,
                                   picard_fixed_point)
from affinelab.cubics import mu_roots
from affinelab.errors import ConvergenceError
from affinelab.fields import CubicDifferential, GeodesicSegment, Grid2D, ScalarField
from affinelab.transport import holonomy


def torus_field(lam, n=32):
    grid = Grid2D(0.0, 1.0, 0.0, 1.0, n, n, periodic_x=True, periodic_y=True)
    return ScalarField.constant(grid, math.log(8.0 * lam**2) / 3.0)


class TestEigensystem:
    def test_diagonalizes_cyclic_matrix(self):
        for th in (0.0, 0.4, math.pi / 3, 2.0):
            mus, v = mu_eigensystem(th)
            m = cyclic_matrix(th)
            assert np.allclose(v.conj().T @ v, np.eye(3), atol=1e-14)
            d = v.conj().T @ m @ v
            assert np.allclose(d, np.diag(mus.as_array()), atol=1e-12)

    def test_matches_mu_roots(self):
        for th in (0.0, 0.7, 1.9):
            mus, _ = mu_eigensystem(th)
            assert np.allclose(mus.as_array(), mu_roots(th).as_array(), atol=1e-12)


class TestCumulativeSimpson:
    def test_cubic_exact_at_even_points(self):
        # paired-panel Simpson integrates cubics exactly; the odd-point fill
        # is a local quadratic, so exactness holds on the even prefix
        t = np.linspace(0.0, 2.0, 9)
        y = t**3
        got = _cumulative_simpson(y.astype(complex), t[1] - t[0])
        assert np.allclose(got.real[::2], (t**4 / 4.0)[::2], atol=1e-13)

    def test_fourth_order(self):
        errs = []
        for n in (16, 32):
            t = np.linspace(0.0, 1.0, n + 1)
            got = _cumulative_simpson(np.exp(t).astype(complex), t[1] - t[0])
            errs.append(np.max(np.abs(got.real - (np.exp(t) - 1.0))))
        assert errs[0] / errs[1] > 12.0


class TestCertificate:
    @pytest.mark.parametrize("R,L,factor,certified", [
        (0.01, 1.0, 0.020404, True),
        (1.0, 1.0, 14.778, False),
        (0.0, 3.0, 0.0, True),
    ])
    def test_examples(self, R, L, factor, certified):
        f, c = contraction_certificate(R, L)
        assert abs(f - factor) < 1e-3 * max(factor, 1.0) + 1e-12
        assert c is certified

    def test_validation(self):
        with pytest.raises(ValueError):
            contraction_certificate(-0.1, 1.0)
        with pytest.raises(ValueError):
            contraction_certificate(0.1, 0.0)


class TestPicard:
    def test_zero_b_fixed_in_one_iteration(self):
        sys0 = PerturbedSystem.zero(0.3, 64.0, 1.0, samples=512)
        for j in range(3):
            col = picard_fixed_point(sys0, j, 1)
            assert col.last_delta == 0.0
            assert abs(col.norm - 1.0) < 1e-14

    def test_constant_b_matches_rk(self):
        rng = np.random.default_rng(5)
        b = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        b *= 0.01 / np.max(np.abs(b))
        sysb = PerturbedSystem.constant(math.pi / 4, 64.0, 1.0, b, samples=2048)
        sol = integrate_system(sysb)
        for j in range(3):
            col = picard_fixed_point(sysb, j, 30)
            assert np.max(np.abs(col.values - sol.column_weighted(j))) < 1e-6

    def test_contraction_monotonicity(self):
        # successive iterate distances shrink at least by the certified factor
        rng = np.random.default_rng(9)
        b = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        b *= 0.05 / np.max(np.abs(b))
        sysb = PerturbedSystem.constant(0.9, 27.0, 1.0, b, samples=1024)
        factor, certified = sysb.certificate()
        assert certified
        deltas = []
        prev = None
        for its in (1, 2, 3, 4, 5):
            col = picard_fixed_point(sysb, 0, its)
            deltas.append(col.last_delta)
        for d_prev, d_next in zip(deltas, deltas[1:]):
            if d_next > 1e-15:
                assert d_next <= 1.1 * factor * d_prev

    def test_divergence_detected_when_uncertified(self):
        # Picard for a linear system converges factorially in the long run,
        # so genuine growth needs an iteration-map norm well above one; the
        # detector then fires during the growing transient.
        rng = np.random.default_rng(3)
        b = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        b *= 10.0 / np.max(np.abs(b))
        sysb = PerturbedSystem.constant(0.5, 1.0, 2.0, b, samples=512)
        assert not sysb.certificate()[1]
        with pytest.raises(ConvergenceError):
            picard_fixed_point(sysb, 0, 25)
        # override runs without raising
        picard_fixed_point(sysb, 0, 3, override_uncertified=True)

    def test_uncertified_but_convergent_does_not_raise(self):
        # the certificate is sufficient, not necessary: a mildly uncertified
        # system whose distances shrink monotonically completes normally
        rng = np.random.default_rng(4)
        b = rng.standard_normal((3, 3))
        b *= 1.0 / np.max(np.abs(b))
        sysb = PerturbedSystem.constant(0.5, 8.0, 1.0, b, samples=512)
        assert not sysb.certificate()[1]
        col = picard_fixed_point(sysb, 0, 25)
        assert col.last_delta < 1e-10

    def test_torus_derived_system_is_unperturbed(self):
        lam = 64.0
        psi = torus_field(lam)
        u = CubicDifferential([2.0], scale=lam)
        sys = perturbed_system_from_field(psi, u, 0.1 + 0.1j, 0.4, 1.0, samples=512)
        assert sys.R < 1e-12
        col = picard_fixed_point(sys, 0, 2)
        assert col.last_delta < 1e-12

    def test_quadrature_error_reported(self):
        sysb = PerturbedSystem.constant(0.3, 27.0, 1.0, 0.01 * np.ones((3, 3)),
                                        samples=512)
        col = picard_fixed_point(sysb, 1, 20)
        assert col.quad_error < 1e-8


class TestColumnGrowth:
    def test_zero_b_exact(self):
        sys0 = PerturbedSystem.zero(0.3, 64.0, 1.0, samples=4096)
        sol = integrate_system(sys0)
        g = column_growth_check(sol)
        assert g.offdiag_max == 0.0
        assert g.diag_dev_max < 1e-8

    def test_single_sample_is_identity(self):
        sys0 = PerturbedSystem.zero(0.3, 8.0, 1.0, samples=2)
        sol = integrate_system(sys0)
        assert np.allclose(sol.Y[0], np.eye(3), atol=1e-15)

    def test_picard_assembly_matches_rk_at_moderate_spread(self):
        rng = np.random.default_rng(11)
        b = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        b *= 0.02 / np.max(np.abs(b))
        sysb = PerturbedSystem.constant(0.7, 64.0, 0.5, b, samples=1024)
        rk = integrate_system(sysb)
        pic = SystemSolution.from_picard(sysb, 30)
        assert np.max(np.abs(rk.Y - pic.Y)) < 1e-8


class TestBracketAndCharPoly:
    def test_torus_exact_brackets(self):
        lam = 1000.0
        psi = torus_field(lam)
        u = CubicDifferential([2.0], scale=lam)
        hr = holonomy(psi, u, GeodesicSegment(0j, math.cos(math.pi / 6)
                                              + 1j * math.sin(math.pi / 6)))
        br = eigenvalue_bracket(hr)
        assert np.allclose(br.rho, 1.0, atol=1e-6)
        assert br.identity_dev < 1e-10
        assert br.all_ok

    def test_double_root_joint_bracket(self):
        lam = 64.0
        psi = torus_field(lam)
        u = CubicDifferential([2.0], scale=lam)
        hr = holonomy(psi, u, GeodesicSegment(0j, 1.0))  # theta = 0: mu2 = mu3
        br = eigenvalue_bracket(hr)
        assert br.all_ok

    def test_char_poly_torus(self):
        lam = 64.0
        psi = torus_field(lam)
        u = CubicDifferential([2.0], scale=lam)
        hr = holonomy(psi, u, GeodesicSegment(0.1, 0.1 + 0.5j))
        dev1, dev2 = char_poly_compare(hr.frame)
        assert dev1 < 1e-8 and dev2 < 1e-8

    def test_identity_matrix_zero_exponents(self):
        from affinelab.transport import FrameMatrix
        fm = FrameMatrix(np.eye(3, dtype=complex), 0.0, 1.0, 0.0, 0.0, 0.0, 0.0)
        dev1, dev2 = char_poly_compare(fm)
        assert dev1 == 0.0 and dev2 == 0.0

    def test_theta_shift_leaves_torus_tables_invariant(self):
        # theta -> theta + 2 pi / 3 permutes nothing in the mu multiset
        lam = 64.0
        psi = torus_field(lam)
        u = CubicDifferential([2.0], scale=lam)
        rows = []
        for shift in (0.0, 2.0 * math.pi / 3.0):
            th = 0.5 + shift
            seg = GeodesicSegment(0j, 0.8 * complex(math.cos(th), math.sin(th)))
            hr = holonomy(psi, u, seg)
            br = eigenvalue_bracket(hr)
            rows.append(np.concatenate([np.sort(hr.log_spectrum.as_array()), br.rho]))
        assert np.allclose(rows[0], rows[1], atol=1e-9)
