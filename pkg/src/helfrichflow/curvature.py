"""Discrete curvature of closed triangle meshes.

Mean curvature comes from the cotangent Laplacian of the vertex positions
divided by mixed Voronoi areas (clamped to the barycentric share on obtuse
triangles); Gauss curvature is the angle defect over the same areas.  Both
follow the sign convention in which the unit sphere with outward normal has
H = -2 and K = 1.  The sign matters: a nonzero spontaneous curvature breaks
the H -> -H symmetry of the bending energy.

Scaling behaviour is exact: under x -> s*x the cotangent weights are
unchanged and areas scale by s^2, so H -> H/s and K -> K/s^2.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .varifold import MeshVarifold

SECOND_FORM_EPS_FACTOR = 1e-8


@dataclass(frozen=True)
class CurvatureField:
    """Per-vertex curvature data of a mesh varifold.

    hbar   -- mean curvature vector (1/length)
    h      -- signed scalar mean curvature hbar . normal (1/length)
    k      -- Gauss curvature from angle defects (1/length^2)
    area   -- mixed Voronoi vertex area weights (they partition the total
              mesh area exactly, so angle defects integrate to 4*pi*(1-g))
    normal -- angle-weighted outward unit vertex normals
    """

    hbar: np.ndarray
    h: np.ndarray
    k: np.ndarray
    area: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        for arr in (self.hbar, self.h, self.k, self.area, self.normal):
            np.asarray(arr).setflags(write=False)

    @property
    def vertex_count(self) -> int:
        return len(self.h)


def _corner_quantities(mesh: MeshVarifold):
    """Per-face corner cotangents, corner angles, areas, and unit normals."""
    v, f = mesh.vertices, mesh.faces
    p = [v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]]
    cross = np.cross(p[1] - p[0], p[2] - p[0])
    dbl = np.linalg.norm(cross, axis=1)
    if (dbl <= 0.0).any():
        bad = int(np.flatnonzero(dbl <= 0.0)[0])
        raise DomainError(f"degenerate face {bad} has zero area")
    areas = 0.5 * dbl
    normals = cross / dbl[:, None]

    cots = np.empty((len(f), 3))
    angles = np.empty((len(f), 3))
    for k in range(3):
        i, j = (k + 1) % 3, (k + 2) % 3
        u = p[i] - p[k]
        w = p[j] - p[k]
        dot = np.einsum("ij,ij->i", u, w)
        cots[:, k] = dot / dbl  # |u x w| equals twice the face area at every corner
        angles[:, k] = np.arctan2(dbl, dot)
    return cots, angles, areas, normals


def _scatter(indices: np.ndarray, values: np.ndarray, size: int) -> np.ndarray:
    return np.bincount(indices.ravel(), weights=values.ravel(), minlength=size)


def mixed_vertex_areas(mesh: MeshVarifold) -> np.ndarray:
    """Mixed Voronoi vertex areas, barycentric (A/3 per corner) on obtuse
    triangles so the shares still partition each face exactly."""
    cots, _, areas, _ = _corner_quantities(mesh)
    return _mixed_areas_from(mesh, cots, areas)


def _mixed_areas_from(mesh: MeshVarifold, cots: np.ndarray, areas: np.ndarray) -> np.ndarray:
    f = mesh.faces
    v = mesh.vertices
    lsq = np.empty_like(cots)
    for k in range(3):
        i, j = (k + 1) % 3, (k + 2) % 3
        d = v[f[:, j]] - v[f[:, i]]
        lsq[:, k] = np.einsum("ij,ij->i", d, d)  # squared edge opposite corner k

    corner = np.empty_like(cots)
    for k in range(3):
        i, j = (k + 1) % 3, (k + 2) % 3
        corner[:, k] = (lsq[:, i] * cots[:, i] + lsq[:, j] * cots[:, j]) / 8.0
    obtuse = (cots < 0.0).any(axis=1)
    corner[obtuse] = areas[obtuse, None] / 3.0

    a = _scatter(f, corner, mesh.vertex_count)
    if (a <= 0.0).any():
        bad = int(np.flatnonzero(a <= 0.0)[0])
        raise DomainError(f"vertex {bad} has non-positive mixed area {a[bad]!r}")
    return a


def vertex_normals(mesh: MeshVarifold) -> np.ndarray:
    """Angle-weighted average of incident face normals, unit length."""
    _, angles, _, face_n = _corner_quantities(mesh)
    f = mesh.faces
    acc = np.zeros((mesh.vertex_count, 3))
    for k in range(3):
        w = angles[:, k]
        for c in range(3):
            acc[:, c] += _scatter(f[:, k], w * face_n[:, c], mesh.vertex_count)
    norms = np.linalg.norm(acc, axis=1)
    if (norms <= 0.0).any():
        bad = int(np.flatnonzero(norms <= 0.0)[0])
        raise DomainError(f"vertex {bad} has a degenerate normal fan")
    return acc / norms[:, None]


def curvature_field(mesh: MeshVarifold) -> CurvatureField:
    """Assemble all per-vertex curvature quantities in one pass."""
    cots, angles, areas, face_n = _corner_quantities(mesh)
    f, v = mesh.faces, mesh.vertices
    nv = mesh.vertex_count
    area = _mixed_areas_from(mesh, cots, areas)

    # cotangent Laplacian of the positions: edge (i, j) opposite corner k
    # carries weight cot_k / 2, contributing to both endpoints
    hbar = np.zeros((nv, 3))
    for k in range(3):
        i, j = (k + 1) % 3, (k + 2) % 3
        w = 0.5 * cots[:, k]
        d = v[f[:, j]] - v[f[:, i]]
        for c in range(3):
            hbar[:, c] += _scatter(f[:, i], w * d[:, c], nv)
            hbar[:, c] += _scatter(f[:, j], -w * d[:, c], nv)
    hbar /= area[:, None]

    defect = 2.0 * np.pi - _scatter(f, angles, nv)
    k_gauss = defect / area

    acc = np.zeros((nv, 3))
    for k in range(3):
        w = angles[:, k]
        for c in range(3):
            acc[:, c] += _scatter(f[:, k], w * face_n[:, c], nv)
    normal = acc / np.linalg.norm(acc, axis=1)[:, None]

    h = np.einsum("ij,ij->i", hbar, normal)
    return CurvatureField(hbar=hbar, h=h, k=k_gauss, area=area, normal=normal)


def mean_curvature(mesh: MeshVarifold) -> tuple[np.ndarray, np.ndarray]:
    """Per-vertex mean curvature vector and signed scalar H = hbar . normal."""
    field = curvature_field(mesh)
    return field.hbar, field.h


def gauss_curvature(mesh: MeshVarifold) -> np.ndarray:
    """Per-vertex angle-defect Gauss curvature (2*pi - incident angles) / area."""
    return curvature_field(mesh).k


def second_form_quantities(field: CurvatureField) -> tuple[np.ndarray, np.ndarray]:
    """Squared norms of the second fundamental form.

    |II|^2 = |hbar|^2 - 2K, clamped at zero when within the per-vertex
    consistency slack; |A|^2 = 2 |II|^2.  Raises when the discrete H and K
    are inconsistent beyond the slack.
    """
    hbar_sq = np.einsum("ij,ij->i", field.hbar, field.hbar)
    ii_sq = hbar_sq - 2.0 * field.k
    eps = SECOND_FORM_EPS_FACTOR * np.maximum(hbar_sq, 1.0)
    bad = ii_sq < -eps
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DomainError(
            f"inconsistent discrete curvature at vertex {i}: "
            f"|hbar|^2 - 2K = {ii_sq[i]!r} below -{eps[i]!r}"
        )
    ii_sq = np.maximum(ii_sq, 0.0)
    return ii_sq, 2.0 * ii_sq


def export_csv(field: CurvatureField, path: str) -> None:
    """Write vertex id, H, K, |II|^2, area weight for external plotting."""
    ii_sq, _ = second_form_quantities(field)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["vertex", "H", "K", "II_sq", "area"])
        for i in range(field.vertex_count):
            writer.writerow(
                [
                    i,
                    repr(float(field.h[i])),
                    repr(float(field.k[i])),
                    repr(float(ii_sq[i])),
                    repr(float(field.area[i])),
                ]
            )
