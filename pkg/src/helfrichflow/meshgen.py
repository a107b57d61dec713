"""Programmatic test geometries: spheres, ellipsoids, tori, boxes.

All generators return outward-oriented closed triangle meshes.
"""

from __future__ import annotations

import math

import numpy as np

from .varifold import MeshVarifold


def icosahedron() -> tuple[np.ndarray, np.ndarray]:
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=float,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    return verts, faces


def _subdivide_on_sphere(verts: np.ndarray, faces: np.ndarray):
    cache: dict[tuple[int, int], int] = {}
    out = list(verts)

    def midpoint(i: int, j: int) -> int:
        key = (i, j) if i < j else (j, i)
        idx = cache.get(key)
        if idx is None:
            m = out[i] + out[j]
            m = m / np.linalg.norm(m)
            idx = len(out)
            out.append(m)
            cache[key] = idx
        return idx

    new_faces = []
    for a, b, c in faces:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
    return np.array(out), np.array(new_faces, dtype=np.int64)


def icosphere(subdivisions: int = 3, radius: float = 1.0,
              theta_plus: int = 1, theta_minus: int = 0) -> MeshVarifold:
    """Geodesic sphere from repeated icosahedron subdivision."""
    verts, faces = icosahedron()
    for _ in range(subdivisions):
        verts, faces = _subdivide_on_sphere(verts, faces)
    return MeshVarifold(radius * verts, faces, theta_plus, theta_minus, genus=0)


def ellipsoid(semi_axes=(1.0, 1.0, 2.0), subdivisions: int = 3,
              theta_plus: int = 1, theta_minus: int = 0) -> MeshVarifold:
    sphere = icosphere(subdivisions)
    verts = sphere.vertices * np.asarray(semi_axes, dtype=float)
    return MeshVarifold(verts, sphere.faces, theta_plus, theta_minus, genus=0)


def perturbed_sphere(subdivisions: int = 3, amplitude: float = 0.1, seed: int = 0,
                     radius: float = 1.0, theta_plus: int = 1,
                     theta_minus: int = 0) -> MeshVarifold:
    """Sphere with seeded random radial perturbation of relative size ``amplitude``."""
    sphere = icosphere(subdivisions, radius=radius)
    rng = np.random.default_rng(seed)
    radial = 1.0 + amplitude * rng.uniform(-1.0, 1.0, size=sphere.vertex_count)
    return MeshVarifold(sphere.vertices * radial[:, None], sphere.faces,
                        theta_plus, theta_minus, genus=0)


def smooth_perturbed_sphere(subdivisions: int = 3, amplitude: float = 0.1, seed: int = 0,
                            waves: int = 6, radius: float = 1.0,
                            theta_plus: int = 1, theta_minus: int = 0) -> MeshVarifold:
    """Sphere with a seeded smooth random radial field of the given relative
    amplitude (a superposition of low-frequency plane-wave modes).

    Unlike :func:`perturbed_sphere`, the field is smooth on the mesh scale,
    which keeps the discrete transport metric well conditioned; preferred
    as flow initial data.
    """
    sphere = icosphere(subdivisions, radius=radius)
    rng = np.random.default_rng(seed)
    v = sphere.vertices
    field = np.zeros(sphere.vertex_count)
    for _ in range(waves):
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        frequency = rng.integers(1, 4)
        field += rng.normal() * np.cos(frequency * (v @ direction) * np.pi / radius + phase)
    field *= amplitude / np.abs(field).max()
    return MeshVarifold(v * (1.0 + field)[:, None], sphere.faces,
                        theta_plus, theta_minus, genus=0)


def bumpy_sphere(subdivisions: int = 3, amplitude: float = 0.1, frequency: int = 3,
                 theta_plus: int = 1, theta_minus: int = 0) -> MeshVarifold:
    """Sphere with a smooth deterministic radial bump pattern."""
    sphere = icosphere(subdivisions)
    v = sphere.vertices
    bump = 1.0 + amplitude * np.sin(frequency * v[:, 0]) * np.cos(frequency * v[:, 1])
    return MeshVarifold(v * bump[:, None], sphere.faces, theta_plus, theta_minus, genus=0)


def torus(major_radius: float = 1.0, minor_radius: float = 0.4,
          segments_major: int = 48, segments_minor: int = 24,
          theta_plus: int = 1, theta_minus: int = 0) -> MeshVarifold:
    """Genus-1 torus of revolution around the z-axis, outward oriented."""
    nu, nv = segments_major, segments_minor
    us = 2.0 * np.pi * np.arange(nu) / nu
    vs = 2.0 * np.pi * np.arange(nv) / nv
    uu, vv = np.meshgrid(us, vs, indexing="ij")
    ring = major_radius + minor_radius * np.cos(vv)
    verts = np.stack(
        [ring * np.cos(uu), ring * np.sin(uu), minor_radius * np.sin(vv)], axis=-1
    ).reshape(-1, 3)

    faces = []
    for i in range(nu):
        for j in range(nv):
            a = i * nv + j
            b = ((i + 1) % nu) * nv + j
            c = ((i + 1) % nu) * nv + (j + 1) % nv
            d = i * nv + (j + 1) % nv
            faces.append([a, b, c])
            faces.append([a, c, d])
    return MeshVarifold(verts, np.array(faces, dtype=np.int64),
                        theta_plus, theta_minus, genus=1)


def capped_cylinder(radius: float = 1.0, height: float = 4.0,
                    segments_around: int = 48, segments_along: int = 24,
                    theta_plus: int = 1, theta_minus: int = 0) -> MeshVarifold:
    """Cylinder barrel with triangle-fan caps, axis along z, outward oriented.

    Interior barrel vertices approximate H = -1/radius and K = 0.
    """
    na, nl = segments_around, segments_along
    angles = 2.0 * np.pi * np.arange(na) / na
    ring = np.stack([radius * np.cos(angles), radius * np.sin(angles)], axis=1)
    verts = [
        np.array([ring[i, 0], ring[i, 1], height * j / nl])
        for j in range(nl + 1)
        for i in range(na)
    ]
    bottom = len(verts)
    verts.append(np.array([0.0, 0.0, 0.0]))
    top = len(verts)
    verts.append(np.array([0.0, 0.0, height]))

    faces = []
    for j in range(nl):
        for i in range(na):
            a = j * na + i
            b = j * na + (i + 1) % na
            c = (j + 1) * na + (i + 1) % na
            d = (j + 1) * na + i
            faces.append([a, b, c])
            faces.append([a, c, d])
    for i in range(na):  # bottom cap, normal -z
        faces.append([bottom, (i + 1) % na, i])
    for i in range(na):  # top cap, normal +z
        faces.append([top, nl * na + i, nl * na + (i + 1) % na])
    return MeshVarifold(np.array(verts), np.array(faces, dtype=np.int64),
                        theta_plus, theta_minus, genus=0)


def box_grid(divisions: int = 8, size=(2.0, 2.0, 1.0),
             theta_plus: int = 1, theta_minus: int = 0) -> MeshVarifold:
    """Axis-aligned box with every side triangulated as a regular grid.

    Interior vertices of each side are exactly flat, which makes this the
    reference geometry for the H ~ 0 plane check.
    """
    n = divisions
    sx, sy, sz = size
    key_to_index: dict[tuple[int, int, int], int] = {}
    verts: list[np.ndarray] = []

    # integer lattice keys avoid duplicate vertices along shared box edges
    def vid(i: int, j: int, k: int) -> int:
        key = (i, j, k)
        idx = key_to_index.get(key)
        if idx is None:
            idx = len(verts)
            verts.append(np.array([sx * i / n, sy * j / n, sz * k / n]))
            key_to_index[key] = idx
        return idx

    faces: list[list[int]] = []

    def add_side(corner, e1, e2):
        # grid over corner + a*e1 + b*e2, oriented so e1 x e2 points outward
        for a in range(n):
            for b in range(n):
                q00 = vid(*(corner + a * e1 + b * e2))
                q10 = vid(*(corner + (a + 1) * e1 + b * e2))
                q11 = vid(*(corner + (a + 1) * e1 + (b + 1) * e2))
                q01 = vid(*(corner + a * e1 + (b + 1) * e2))
                faces.append([q00, q10, q11])
                faces.append([q00, q11, q01])

    ex, ey, ez = np.array([1, 0, 0]), np.array([0, 1, 0]), np.array([0, 0, 1])
    zero = np.array([0, 0, 0])
    add_side(zero + n * ez, ex, ey)          # top    (+z)
    add_side(zero, ey, ex)                   # bottom (-z)
    add_side(zero, ex, ez)                   # front  (-y)
    add_side(zero + n * ey, ez, ex)          # back   (+y)
    add_side(zero, ez, ey)                   # left   (-x)
    add_side(zero + n * ex, ey, ez)          # right  (+x)

    return MeshVarifold(np.array(verts), np.array(faces, dtype=np.int64),
                        theta_plus, theta_minus, genus=0)
