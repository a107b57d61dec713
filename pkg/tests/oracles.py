"""Independent reference computations used to freeze expected test values.

Everything here is deliberately naive (enumeration, closed forms, direct
quadrature) and shares no code with the solver paths it checks; the
transportation enumeration lives in the package so the CLI validate
command can run it too.
"""

from __future__ import annotations

import math

import numpy as np


from helfrichflow._oracle_transport import brute_force_transport  # noqa: F401


def sphere_area(radius: float) -> float:
    return 4.0 * math.pi * radius**2


def sphere_volume(radius: float) -> float:
    return 4.0 * math.pi * radius**3 / 3.0


def sphere_helfrich_energy(radius: float, mass_value: float, beta: float,
                           gamma: float, h0: float) -> float:
    """Closed-form bending energy of a sphere of the given radius carrying
    total mass mass_value, from H = -2/R and K = 1/R^2."""
    h = -2.0 / radius
    k = 1.0 / radius**2
    return (0.5 * beta * (h - h0) ** 2 + gamma * k) * mass_value


def mesh_signed_volume(vertices, faces) -> float:
    """Divergence-theorem signed volume via tetrahedra against the origin."""
    p0, p1, p2 = vertices[faces[:, 0]], vertices[faces[:, 1]], vertices[faces[:, 2]]
    return float(np.einsum("ij,ij->i", p0, np.cross(p1, p2)).sum() / 6.0)


def triangle_area_sum(vertices, faces) -> float:
    p0, p1, p2 = vertices[faces[:, 0]], vertices[faces[:, 1]], vertices[faces[:, 2]]
    return float(0.5 * np.linalg.norm(np.cross(p1 - p0, p2 - p0), axis=1).sum())


def random_particles(rng, count: int, mass_total: float | None = None):
    """Random particle varifold data (positions, unit normals, weights)."""
    pos = rng.normal(size=(count, 3))
    nrm = rng.normal(size=(count, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    w = rng.uniform(0.5, 2.0, size=count)
    if mass_total is not None:
        w *= mass_total / w.sum()
    return pos, nrm, w
