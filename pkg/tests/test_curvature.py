import math

import numpy as np
import pytest

from helfrichflow import (
    DomainError,
    Isometry,
    curvature_field,
    gauss_curvature,
    mean_curvature,
    meshgen,
    mixed_vertex_areas,
    second_form_quantities,
    total_area,
    transform_mesh,
    with_vertices,
)
from helfrichflow.curvature import export_csv


class TestSphereValues:
    def test_mean_curvature_unit_sphere(self, icosphere4):
        _, h = mean_curvature(icosphere4)
        assert np.abs(h + 2.0).max() / 2.0 < 0.02

    def test_gauss_curvature_unit_sphere(self, icosphere4):
        k = gauss_curvature(icosphere4)
        assert np.abs(k - 1.0).max() < 0.03

    def test_radius_two_sphere(self):
        sphere = meshgen.icosphere(3, radius=2.0)
        field = curvature_field(sphere)
        assert np.abs(field.h + 1.0).max() < 0.02
        assert np.abs(field.k - 0.25).max() < 0.03


class TestFlatRegion:
    def test_box_interior_vertices_flat(self):
        box = meshgen.box_grid(8, size=(2.0, 2.0, 1.0))
        field = curvature_field(box)
        v = box.vertices
        ztop = v[:, 2].max()
        interior = (
            (np.abs(v[:, 2] - ztop) < 1e-12)
            & (v[:, 0] > 1e-9) & (v[:, 0] < 2.0 - 1e-9)
            & (v[:, 1] > 1e-9) & (v[:, 1] < 2.0 - 1e-9)
        )
        assert interior.sum() >= 9
        assert np.abs(field.h[interior]).max() < 1e-6
        assert np.abs(field.k[interior]).max() < 1e-6


class TestScaling:
    def test_h_and_k_scaling_exact(self, icosphere3):
        field = curvature_field(icosphere3)
        doubled = with_vertices(icosphere3, 2.0 * icosphere3.vertices)
        field2 = curvature_field(doubled)
        assert np.abs(field2.h - field.h / 2.0).max() <= 1e-12 * np.abs(field.h).max()
        assert np.abs(field2.k - field.k / 4.0).max() <= 1e-12 * np.abs(field.k).max()


class TestGaussBonnet:
    def test_sphere(self, icosphere4):
        field = curvature_field(icosphere4)
        total = float((field.k * field.area).sum())
        assert total == pytest.approx(4.0 * math.pi, rel=1e-9)

    def test_torus(self, torus_mesh):
        field = curvature_field(torus_mesh)
        total = float((field.k * field.area).sum())
        assert abs(total) <= 1e-9 * 4.0 * math.pi

    def test_any_genus_zero_shape(self, mesh_corpus):
        for name, mesh in mesh_corpus:
            field = curvature_field(mesh)
            total = float((field.k * field.area).sum())
            expected = 4.0 * math.pi * (1 - mesh.genus)
            assert total == pytest.approx(expected, abs=1e-9 * 4.0 * math.pi), name

    def test_areas_partition_total_area(self, mesh_corpus):
        for name, mesh in mesh_corpus:
            areas = mixed_vertex_areas(mesh)
            assert float(areas.sum()) == pytest.approx(total_area(mesh), rel=1e-12), name


class TestRigidMotionInvariance:
    def test_h_k_invariant(self, icosphere3, rng):
        g = Isometry(
            Isometry.rotation(rng.normal(size=3), 1.1).linear, rng.normal(size=3)
        )
        field = curvature_field(icosphere3)
        moved = curvature_field(transform_mesh(icosphere3, g))
        assert np.abs(moved.h - field.h).max() <= 1e-12 * np.abs(field.h).max()
        assert np.abs(moved.k - field.k).max() <= 1e-12 * np.abs(field.k).max()


class TestRefinementConvergence:
    def test_monotone_max_error_on_spheres(self):
        errs_h, errs_k = [], []
        for level in (2, 3, 4, 5):
            field = curvature_field(meshgen.icosphere(level))
            errs_h.append(np.abs(field.h + 2.0).max())
            errs_k.append(np.abs(field.k - 1.0).max())
        assert all(a > b for a, b in zip(errs_h, errs_h[1:])), errs_h
        assert all(a > b for a, b in zip(errs_k, errs_k[1:])), errs_k


class TestSecondForm:
    def test_unit_sphere_values(self, icosphere4):
        field = curvature_field(icosphere4)
        ii_sq, a_sq = second_form_quantities(field)
        # principal curvatures (1, 1): |II|^2 = 2, |A|^2 = 4
        assert np.abs(ii_sq - 2.0).max() < 0.05
        assert np.abs(a_sq - 4.0).max() < 0.10

    def test_cylinder_barrel(self):
        cyl = meshgen.capped_cylinder(radius=1.0, height=6.0, segments_around=64,
                                      segments_along=48)
        field = curvature_field(cyl)
        z = cyl.vertices[:, 2]
        barrel = (z > 2.0) & (z < 4.0)
        # principal curvatures (1, 0): |H| = 1, K = 0, |II|^2 = 1
        ii_sq, _ = second_form_quantities(field)
        assert np.abs(field.h[barrel] + 1.0).max() < 0.01
        assert np.abs(field.k[barrel]).max() < 1e-6
        assert np.abs(ii_sq[barrel] - 1.0).max() < 0.02

    def test_umbilic_inequality(self, mesh_corpus):
        # (kappa1 - kappa2)^2 >= 0  <=>  |II|^2 >= |Hbar|^2 / 2.  Spheres are
        # the equality case, where the independent discretizations of H and K
        # leave a gap at the level of their own error, so the check carries
        # discretization slack and runs on the resolved smooth geometries
        # (random rough perturbations have no pointwise curvature identity)
        smooth_prefixes = ("icosphere", "ellipsoid", "torus", "bumpy")
        for name, mesh in mesh_corpus:
            if not name.startswith(smooth_prefixes):
                continue
            field = curvature_field(mesh)
            ii_sq, _ = second_form_quantities(field)
            hbar_sq = np.einsum("ij,ij->i", field.hbar, field.hbar)
            slack = np.maximum(1e-8, 0.03) * np.maximum(hbar_sq, 1.0)
            assert (ii_sq >= hbar_sq / 2.0 - slack).all(), name

    def test_umbilic_inequality_strict_away_from_umbilics(self):
        # on a cylinder barrel the margin is |Hbar|^2 / 2, far above eps_num
        cyl = meshgen.capped_cylinder(radius=1.0, height=6.0, segments_around=48,
                                      segments_along=36)
        field = curvature_field(cyl)
        z = cyl.vertices[:, 2]
        barrel = (z > 2.0) & (z < 4.0)
        ii_sq, _ = second_form_quantities(field)
        hbar_sq = np.einsum("ij,ij->i", field.hbar, field.hbar)
        eps = 1e-8 * np.maximum(hbar_sq, 1.0)
        assert (ii_sq[barrel] >= hbar_sq[barrel] / 2.0 - eps[barrel]).all()

    def test_inconsistent_field_raises(self, icosphere2):
        field = curvature_field(icosphere2)
        broken = type(field)(
            hbar=field.hbar * 0.0,  # |Hbar|^2 = 0 while K stays ~1
            h=field.h,
            k=field.k,
            area=field.area,
            normal=field.normal,
        )
        with pytest.raises(DomainError, match="vertex"):
            second_form_quantities(broken)


def test_export_csv(tmp_path, icosphere2):
    path = tmp_path / "curv.csv"
    export_csv(curvature_field(icosphere2), str(path))
    rows = path.read_text().strip().splitlines()
    assert rows[0] == "vertex,H,K,II_sq,area"
    assert len(rows) == icosphere2.vertex_count + 1
