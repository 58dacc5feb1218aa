import math

import numpy as np
import pytest

from affinelab.errors import ConvergenceError
from affinelab.fields import CubicDifferential, Grid2D, ScalarField
from affinelab.surface import (EmbeddedPatch, default_initial_frame,
                               export_mesh, integrate_embedding, mesh_csv_text,
                               mesh_obj_text)


@pytest.fixture(scope="module")
def titeica_patch():
    grid = Grid2D(0.0, 0.5, 0.0, 0.5, 17, 17)
    u = CubicDifferential([2.0], scale=1.0)
    psi = ScalarField.constant(grid, math.log(2.0))
    return integrate_embedding(psi, u), u, grid


class TestInitialFrame:
    def test_reality_structure(self):
        f = default_initial_frame(0.7)
        assert np.max(np.abs(f[0].imag)) == 0.0
        assert np.allclose(f[2], np.conj(f[1]))

    def test_det_normalization(self):
        for psi0 in (0.0, math.log(2.0), 2.5):
            f = default_initial_frame(psi0)
            det = np.linalg.det(f)
            assert abs(det - 0.5j * math.exp(psi0)) < 1e-14 * math.exp(psi0)


class TestEmbedding:
    def test_base_node_keeps_initial_row(self, titeica_patch):
        patch, _, _ = titeica_patch
        f0 = default_initial_frame(math.log(2.0))
        assert np.allclose(patch.f[0, 0], f0[0].real, atol=1e-14)

    def test_compatibility_residual(self, titeica_patch):
        patch, _, grid = titeica_patch
        assert patch.compatibility_residual() < 10.0 * grid.hx**2

    def test_reality(self, titeica_patch):
        patch, _, _ = titeica_patch
        assert patch.reality_error < 1e-8

    def test_det_invariant_constant(self, titeica_patch):
        patch, _, _ = titeica_patch
        assert patch.det_invariant_deviation() < 1e-6

    def test_titeica_product_constant(self, titeica_patch):
        patch, u, _ = titeica_patch
        prod = patch.titeica_products(u)
        assert np.max(np.abs(prod / prod[0, 0] - 1.0)) < 1e-6

    def test_rotation_leaves_residuals_unchanged(self, titeica_patch):
        patch, u, grid = titeica_patch
        th = 0.7
        rot = np.array([[math.cos(th), -math.sin(th), 0.0],
                        [math.sin(th), math.cos(th), 0.0],
                        [0.0, 0.0, 1.0]])
        psi = ScalarField.constant(grid, math.log(2.0))
        rotated = integrate_embedding(psi, u,
                                      initial_frame=default_initial_frame(math.log(2.0)) @ rot.T)
        a = patch.compatibility_residual()
        b = rotated.compatibility_residual()
        # identical up to the rounding of the extra matrix product
        assert abs(a - b) < 1e-9 * a
        assert rotated.det_invariant_deviation() < 1e-6

    def test_general_unimodular_map_preserves_det_invariant(self, titeica_patch):
        _, u, grid = titeica_patch
        shear = np.array([[1.0, 0.4, 0.0], [0.0, 1.0, 0.0], [0.3, 0.0, 1.0]])
        assert abs(np.linalg.det(shear) - 1.0) < 1e-14
        psi = ScalarField.constant(grid, math.log(2.0))
        patch = integrate_embedding(psi, u,
                                    initial_frame=default_initial_frame(math.log(2.0)) @ shear.T)
        assert patch.det_invariant_deviation() < 1e-6

    def test_aborts_on_non_integrable_field(self, titeica_patch):
        _, u, grid = titeica_patch
        psi = ScalarField.constant(grid, math.log(2.0) + 0.1)
        with pytest.raises(ConvergenceError):
            integrate_embedding(psi, u)

    def test_rejects_non_real_frame(self, titeica_patch):
        _, u, grid = titeica_patch
        psi = ScalarField.constant(grid, math.log(2.0))
        bad = default_initial_frame(math.log(2.0)).astype(complex)
        bad[0, 0] += 1j
        with pytest.raises(ValueError):
            integrate_embedding(psi, u, initial_frame=bad)


def tiny_patch():
    grid = Grid2D(0.0, 1.0, 0.0, 1.0, 2, 2)
    f = np.arange(12, dtype=float).reshape(2, 2, 3)
    return EmbeddedPatch(grid, ScalarField.constant(grid, 0.0), f,
                         np.zeros((2, 2, 3, 3), dtype=complex), 0.0)


class TestExport:
    def test_obj_two_by_two(self):
        lines = mesh_obj_text(tiny_patch()).strip().splitlines()
        assert sum(1 for ln in lines if ln.startswith("v ")) == 4
        assert sum(1 for ln in lines if ln.startswith("f ")) == 2
        assert lines[0] == "v 0.0 1.0 2.0"
        assert lines[-1] == "f 2 4 3"

    def test_csv_header(self):
        lines = mesh_csv_text(tiny_patch()).splitlines()
        assert lines[0] == "x,y,z"
        assert len(lines) == 5

    def test_deterministic_bytes(self, titeica_patch, tmp_path):
        patch, _, _ = titeica_patch
        p1, p2 = tmp_path / "a.obj", tmp_path / "b.obj"
        export_mesh(patch, "obj", p1)
        export_mesh(patch, "obj", p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert b"\r" not in p1.read_bytes()

    def test_unknown_format(self):
        with pytest.raises(ValueError):
            export_mesh(tiny_patch(), "stl", "/tmp/x.stl")

    def test_empty_patch_errors(self):
        patch = tiny_patch()
        patch.f = np.zeros((0, 0, 3))
        with pytest.raises(ValueError):
            mesh_obj_text(patch)
