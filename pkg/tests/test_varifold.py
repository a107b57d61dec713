import math

import numpy as np
import pytest

from helfrichflow import (
    DomainError,
    HelfrichParams,
    Isometry,
    MeshTopologyError,
    MeshVarifold,
    ParticleVarifold,
    TransportConfig,
    enclosed_volume,
    mass,
    meshgen,
    pushforward,
    sample_particles,
    symmetry_defect,
    transform_mesh,
    wasserstein,
    with_multiplicity,
)
from oracles import mesh_signed_volume, triangle_area_sum


def two_atom_varifold():
    pos = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    nrm = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
    return ParticleVarifold(pos, nrm, np.array([1.5, 2.5]))


class TestHelfrichParams:
    def test_validation(self):
        with pytest.raises(DomainError):
            HelfrichParams(beta=0.0)
        with pytest.raises(DomainError):
            HelfrichParams(beta=1.0, m0=-1.0)

    def test_isoperimetric_compatibility(self):
        m0 = 4.0 * math.pi
        ball = 4.0 * math.pi / 3.0  # exactly saturates 36*pi*v0^2 = m0^3
        HelfrichParams(beta=1.0, m0=m0, v0=ball)
        with pytest.raises(DomainError):
            HelfrichParams(beta=1.0, m0=m0, v0=1.01 * ball)

    def test_convexity_flag(self):
        assert HelfrichParams(beta=1.0, gamma=-0.5).convexity_flag
        assert not HelfrichParams(beta=1.0, gamma=0.0).convexity_flag
        assert not HelfrichParams(beta=1.0, gamma=-1.3).convexity_flag


class TestMass:
    def test_icosphere_area(self, icosphere4):
        assert mass(icosphere4) == pytest.approx(4.0 * math.pi, rel=5e-3)
        # independent oracle: plain sum of triangle areas
        assert mass(icosphere4) == pytest.approx(
            triangle_area_sum(icosphere4.vertices, icosphere4.faces), rel=1e-14
        )

    def test_multiplicity_linearity(self, icosphere4):
        k3 = with_multiplicity(icosphere4, 3)
        assert mass(k3) == pytest.approx(3.0 * mass(icosphere4), rel=1e-14)

    def test_particle_sum(self):
        assert mass(two_atom_varifold()) == pytest.approx(4.0, abs=0.0)

    def test_unsupported_type(self):
        with pytest.raises(DomainError):
            mass(np.zeros(3))


class TestEnclosedVolume:
    def test_unit_sphere(self, icosphere4):
        assert enclosed_volume(icosphere4) == pytest.approx(4.0 * math.pi / 3.0, rel=5e-3)
        # divergence-theorem oracle over origin tetrahedra
        ref = mesh_signed_volume(icosphere4.vertices, icosphere4.faces)
        assert enclosed_volume(icosphere4) == pytest.approx(ref, rel=1e-12)

    def test_orientation_flip_negates(self, icosphere3):
        flipped = MeshVarifold(icosphere3.vertices, icosphere3.faces,
                               theta_plus=0, theta_minus=1, genus=0)
        assert enclosed_volume(flipped) == pytest.approx(-enclosed_volume(icosphere3), rel=1e-14)

    def test_translation_invariance(self, icosphere3):
        shifted = transform_mesh(icosphere3, Isometry.translation_by([10.0, 0.0, 0.0]))
        v0 = enclosed_volume(icosphere3)
        assert enclosed_volume(shifted) == pytest.approx(v0, rel=1e-9)

    def test_particle_form_matches_mesh(self, icosphere2):
        particles = sample_particles(icosphere2)
        assert enclosed_volume(particles) == pytest.approx(enclosed_volume(icosphere2), rel=1e-12)


class TestMeshValidation:
    def test_open_mesh_rejected(self, icosphere2):
        with pytest.raises(MeshTopologyError, match="not closed"):
            MeshVarifold(icosphere2.vertices, icosphere2.faces[:-1])

    def test_inconsistent_winding_rejected(self, icosphere2):
        faces = icosphere2.faces.copy()
        faces[0] = faces[0][::-1]
        with pytest.raises(MeshTopologyError):
            MeshVarifold(icosphere2.vertices, faces)

    def test_genus_checked(self, icosphere2, torus_mesh):
        assert icosphere2.genus == 0
        assert torus_mesh.genus == 1
        with pytest.raises(MeshTopologyError, match="genus"):
            MeshVarifold(torus_mesh.vertices, torus_mesh.faces, genus=0)

    def test_degenerate_face_rejected(self, icosphere2):
        verts = icosphere2.vertices.copy()
        # collapse one face to (numerically) zero area
        f0 = icosphere2.faces[0]
        verts[f0[2]] = 0.5 * (verts[f0[0]] + verts[f0[1]])
        with pytest.raises((DomainError, MeshTopologyError)):
            MeshVarifold(verts, icosphere2.faces)

    def test_multiplicity_validation(self, icosphere2):
        with pytest.raises(DomainError):
            MeshVarifold(icosphere2.vertices, icosphere2.faces, theta_plus=0, theta_minus=0)
        with pytest.raises(DomainError):
            MeshVarifold(icosphere2.vertices, icosphere2.faces, theta_plus=-1, theta_minus=2)

    def test_immutability(self, icosphere2):
        with pytest.raises(ValueError):
            icosphere2.vertices[0, 0] = 99.0


class TestParticleValidation:
    def test_non_unit_normal_rejected(self):
        with pytest.raises(DomainError, match="unit length"):
            ParticleVarifold(np.zeros((1, 3)), np.array([[0.0, 0.0, 1.1]]), np.array([1.0]))

    def test_empty_rejected(self):
        with pytest.raises(DomainError, match="empty"):
            ParticleVarifold(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))

    def test_nonpositive_weight_rejected(self):
        with pytest.raises(DomainError):
            ParticleVarifold(np.zeros((1, 3)), np.array([[0.0, 0.0, 1.0]]), np.array([0.0]))


class TestIsometry:
    def test_non_orthogonal_rejected(self):
        with pytest.raises(DomainError, match="orthogonal"):
            Isometry(np.diag([1.0, 1.0, 1.1]), np.zeros(3))

    def test_identity_pushforward(self):
        v = two_atom_varifold()
        w = pushforward(v, Isometry.identity())
        assert np.array_equal(w.positions, v.positions)
        assert np.array_equal(w.normals, v.normals)
        assert np.array_equal(w.weights, v.weights)

    def test_mass_preserved_exactly(self, rng):
        v = two_atom_varifold()
        g = Isometry.rotation(rng.normal(size=3), 0.7)
        assert mass(pushforward(v, g)) == mass(v)

    def test_reflection_of_symmetric_pair_is_null_move(self):
        # atoms mirror-symmetric across x = 0, normals symmetric too
        pos = np.array([[-1.0, 0.2, 0.0], [1.0, 0.2, 0.0]])
        nrm = np.array([[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        v = ParticleVarifold(pos, nrm, np.array([0.7, 0.7]))
        g = Isometry.reflection([1.0, 0.0, 0.0])
        d, _ = wasserstein(pushforward(v, g), v, TransportConfig(p=2.0, solver="exact"))
        assert d <= 1e-12


class TestSymmetryDefect:
    def test_symmetric_configuration(self):
        pos = np.array([[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        nrm = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
        v = ParticleVarifold(pos, nrm, np.array([1.0, 1.0]))
        assert symmetry_defect(v, Isometry.reflection([1, 0, 0]), p=2.0) <= 1e-12

    @pytest.mark.parametrize("p", [1.0, 2.0])
    def test_single_offset_atom_closed_form(self, p):
        delta, m = 0.35, 1.7
        nu = np.array([math.sqrt(0.5), 0.0, math.sqrt(0.5)])
        v = ParticleVarifold(np.array([[delta, 0.1, -0.4]]), nu[None, :], np.array([m]))
        g = Isometry.reflection([1, 0, 0])
        expected = m ** (1.0 / p) * (2.0 * delta + np.linalg.norm(nu - g.apply_vectors(nu)))
        assert symmetry_defect(v, g, p=p) == pytest.approx(expected, rel=1e-12)

    def test_threefold_rotation(self):
        base = np.array([1.0, 0.0, 0.3])
        rot = Isometry.rotation([0, 0, 1], 2.0 * math.pi / 3.0)
        pts = [base, rot.apply_points(base[None, :])[0]]
        pts.append(rot.apply_points(pts[1][None, :])[0])
        nrm = np.array([p / np.linalg.norm(p) for p in pts])
        v = ParticleVarifold(np.array(pts), nrm, np.ones(3))
        assert symmetry_defect(v, rot, p=2.0) <= 1e-9


class TestSampling:
    def test_icosahedron_atom_count_and_mass(self):
        ico = meshgen.icosphere(0)
        particles = sample_particles(ico)
        assert particles.atom_count == 20
        assert mass(particles) == pytest.approx(mass(ico), rel=1e-14)

    def test_both_multiplicities_give_opposite_pairs(self):
        ico = meshgen.icosphere(0, theta_plus=1, theta_minus=1)
        particles = sample_particles(ico)
        assert particles.atom_count == 40
        plus, minus = particles.normals[:20], particles.normals[20:]
        assert np.allclose(plus, -minus, atol=0.0)
        assert np.array_equal(particles.positions[:20], particles.positions[20:])

    @pytest.mark.parametrize("rule", ["centroid", "order2"])
    def test_mass_exact_on_irregular_mesh(self, rule):
        mesh = meshgen.perturbed_sphere(2, amplitude=0.2, seed=5, theta_plus=2, theta_minus=1)
        particles = sample_particles(mesh, rule)
        assert abs(mass(particles) - mass(mesh)) <= 1e-12 * mass(mesh)

    def test_order2_triples_atoms(self, icosphere2):
        assert sample_particles(icosphere2, "order2").atom_count == 3 * icosphere2.face_count

    def test_unknown_rule(self, icosphere2):
        with pytest.raises(DomainError, match="quadrature"):
            sample_particles(icosphere2, "order99")
