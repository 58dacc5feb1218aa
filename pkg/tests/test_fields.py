import math

import numpy as np
import pytest

from affinelab.errors import OutOfDomainError, SingularPointError
from affinelab.fields import (CubicDifferential, GeodesicSegment, Grid2D,
                              ScalarField, flat_coordinate, flat_metric_factor)


class TestCubicDifferential:
    def test_constant_eval(self):
        u = CubicDifferential([2.0])
        assert u(3 + 4j) == 2.0

    def test_scaled_linear_eval(self):
        u = CubicDifferential([0, 2.0], scale=5.0)
        assert u(1.0) == 10.0
        assert u(0.0) == 0.0

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            CubicDifferential([0.0, 0.0])
        with pytest.raises(ValueError):
            CubicDifferential([2.0], scale=-1.0)

    def test_zeros(self):
        assert CubicDifferential([2.0]).zeros() == []
        assert CubicDifferential([0, 2.0]).zeros() == [0j]
        roots = sorted(CubicDifferential([-2.0, 0, 2.0]).zeros(), key=lambda z: z.real)
        assert np.allclose(roots, [-1.0, 1.0], atol=1e-10)

    def test_derivative(self):
        u = CubicDifferential([1.0, 2.0, 3.0])  # 1 + 2z + 3z^2
        assert u.u0_prime(2.0) == 2.0 + 12.0


class TestFlatMetricFactor:
    def test_unit_scale(self):
        u = CubicDifferential([2.0])
        assert abs(flat_metric_factor(u, 0.3 + 0.1j) - math.log(2.0)) < 1e-14

    def test_lambda_eight(self):
        u = CubicDifferential([2.0], scale=8.0)
        assert abs(flat_metric_factor(u, 0j) - 3 * math.log(2.0)) < 1e-14

    def test_singular_at_zero(self):
        u = CubicDifferential([0, 2.0])
        with pytest.raises(SingularPointError):
            flat_metric_factor(u, 0j)

    def test_cube_identity(self):
        # e^(3 phi) = 2 |U|^2 in exact arithmetic
        rng = np.random.default_rng(7)
        u = CubicDifferential([1.0, -2.0 + 1j, 0.5], scale=3.0)
        for _ in range(25):
            z = complex(*rng.uniform(-2, 2, 2))
            absu = abs(u(z))
            if absu < 1e-3:
                continue
            phi = flat_metric_factor(u, z)
            assert abs(math.exp(3 * phi) / (2 * absu**2) - 1.0) < 1e-12


class TestFlatCoordinate:
    def test_constant_differential(self):
        u = CubicDifferential([2.0])
        c = 1.0 + 2.0j
        assert abs(flat_coordinate(u, [0, c]) - c) < 1e-9

    def test_lambda_scaling(self):
        u = CubicDifferential([2.0], scale=8.0)
        c = 0.5 - 1.0j
        assert abs(flat_coordinate(u, [0, c]) - 2.0 * c) < 1e-9

    def test_cubic_monomial(self):
        # (z^3)^(1/3) = z continued from z=1; integral of z from 1 to 2
        u = CubicDifferential([0, 0, 0, 2.0])
        assert abs(flat_coordinate(u, [1.0, 2.0]) - 1.5) < 1e-9

    def test_additivity_and_reversal(self):
        u = CubicDifferential([1.0, 0.5, 2.0], scale=2.0)
        a, b, c = 1.0 + 0.2j, 2.0 - 0.5j, 3.0 + 1.0j
        w_ab = flat_coordinate(u, [a, b])
        w_bc = flat_coordinate(u, [b, c])
        w_abc = flat_coordinate(u, [a, b, c])
        assert abs(w_abc - (w_ab + w_bc)) < 1e-9
        assert abs(flat_coordinate(u, [b, a]) + w_ab) < 1e-9

    def test_singular_path(self):
        u = CubicDifferential([0, 2.0])
        with pytest.raises(SingularPointError):
            flat_coordinate(u, [-1.0, 1.0])  # crosses the zero at 0


def make_field(fn, nx=33, ny=33, periodic=False):
    grid = Grid2D(0.0, 1.0, 0.0, 1.0, nx, ny, periodic, periodic)
    z = grid.z_nodes()
    return ScalarField(grid, np.vectorize(fn)(z.real, z.imag))


class TestScalarField:
    def test_constant_derivative(self):
        f = make_field(lambda x, y: 1.7)
        assert abs(f.complex_derivative(0.5 + 0.5j)) < 1e-14

    def test_linear_x(self):
        f = make_field(lambda x, y: x)
        for z in (0.5 + 0.5j, 0.25 + 0.125j, 0.0j, 1.0 + 1.0j):
            assert abs(f.complex_derivative(z) - 0.5) < 1e-12

    def test_linear_y(self):
        f = make_field(lambda x, y: y)
        assert abs(f.complex_derivative(0.5 + 0.5j) + 0.5j) < 1e-12

    def test_second_order_convergence(self):
        def fn(x, y):
            return math.sin(x) * math.sin(y)

        errs = []
        for n in (17, 33):
            f = make_field(fn, nx=n, ny=n)
            z = 0.5 + 0.5j
            exact = 0.5 * (math.cos(0.5) * math.sin(0.5) - 1j * math.sin(0.5) * math.cos(0.5))
            errs.append(abs(f.complex_derivative(z) - exact))
        assert errs[0] / errs[1] > 3.0

    def test_out_of_domain(self):
        f = make_field(lambda x, y: x)
        with pytest.raises(OutOfDomainError):
            f.complex_derivative(2.0 + 0.5j)

    def test_periodic_wrap(self):
        f = make_field(lambda x, y: 1.0, periodic=True)
        assert f.sample(5.3 + 7.9j) == 1.0

    def test_interpolation_exact_at_nodes(self):
        f = make_field(lambda x, y: x * x + 3 * y)
        g = f.grid
        for j, i in ((0, 0), (5, 7), (32, 32)):
            z = complex(g.x_nodes()[i], g.y_nodes()[j])
            assert f.sample(z) == f.values[j, i]


class TestSerialization:
    @pytest.fixture
    def field(self):
        rng = np.random.default_rng(3)
        grid = Grid2D(-1.0, 2.0, 0.5, 1.5, 9, 11)
        vals = rng.standard_normal((11, 9)) * np.exp(rng.uniform(-30, 30, (11, 9)))
        return ScalarField(grid, vals)

    def test_csv_roundtrip_bit_exact(self, field, tmp_path):
        p = tmp_path / "f.csv"
        field.to_csv(p)
        back = ScalarField.from_csv(p)
        assert back.grid == field.grid
        assert np.array_equal(back.values, field.values)

    def test_json_roundtrip_bit_exact(self, field, tmp_path):
        p = tmp_path / "f.json"
        field.to_json(p)
        back = ScalarField.from_json(p)
        assert back.grid == field.grid
        assert np.array_equal(back.values, field.values)


class TestGeodesicSegment:
    def test_length_and_angle(self):
        seg = GeodesicSegment(1.0 + 1.0j, 1.0 + 3.0j)
        assert abs(seg.length - 2.0) < 1e-15
        assert abs(seg.theta - math.pi / 2) < 1e-15

    def test_clearance_violation(self):
        seg = GeodesicSegment(-1.0, 1.0, clearance=0.1)
        with pytest.raises(SingularPointError):
            seg.check_clearance(CubicDifferential([0, 2.0]))

    def test_degenerate_segment(self):
        seg = GeodesicSegment(1.0, 1.0)
        assert seg.length == 0.0
        assert seg.theta == 0.0
