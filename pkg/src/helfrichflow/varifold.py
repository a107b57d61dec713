"""Discrete oriented varifolds on R^3 x S^2.

Two representations are used throughout the package:

* ``MeshVarifold`` -- a closed oriented triangle mesh carrying constant
  integer multiplicities ``theta_plus`` (aligned with the outward normal)
  and ``theta_minus`` (anti-aligned).  This is the regular, multiply
  covered setting: the surface measure is ``(theta_plus + theta_minus)``
  times the area measure.
* ``ParticleVarifold`` -- weighted atoms ``(x_i, nu_i, w_i)``; the
  transport-side representation used by the Wasserstein solvers.

All values are immutable after construction and safe to share across
threads; every operation in this module is a pure function of its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, MeshTopologyError

ORTHOGONALITY_TOL = 1e-12
UNIT_NORMAL_TOL = 1e-12
DEGENERATE_AREA_FACTOR = 1e-14


@dataclass(frozen=True)
class HelfrichParams:
    """Model constants of the bending energy.

    beta   -- bending rigidity (> 0)
    gamma  -- Gauss (saddle-splay) rigidity, typically < 0
    h0     -- spontaneous curvature, units 1/length
    m0     -- prescribed total mass (area units, > 0)
    v0     -- optional prescribed enclosed volume
    """

    beta: float
    gamma: float = 0.0
    h0: float = 0.0
    m0: float = 4.0 * math.pi
    v0: float | None = None

    def __post_init__(self):
        if not (self.beta > 0.0):
            raise DomainError(f"beta must be > 0, got {self.beta}")
        if not (self.m0 > 0.0):
            raise DomainError(f"m0 must be > 0, got {self.m0}")
        if self.v0 is not None:
            if 36.0 * math.pi * self.v0**2 > self.m0**3 * (1.0 + 1e-12):
                raise DomainError(
                    "isoperimetric incompatibility: 36*pi*v0^2 = "
                    f"{36.0 * math.pi * self.v0**2:.6g} exceeds m0^3 = {self.m0**3:.6g}"
                )

    @property
    def convexity_flag(self) -> bool:
        """True iff -(6/5)*beta < gamma < 0, the range where the bending
        integrand is convex; the flow driver warns when False."""
        return -1.2 * self.beta < self.gamma < 0.0


def _as_points(arr, name: str) -> np.ndarray:
    # always copy: the constructors freeze their arrays and must not flip
    # writability on a caller's buffer
    out = np.array(arr, dtype=float, copy=True)
    if out.ndim != 2 or out.shape[1] != 3:
        raise DomainError(f"{name} must have shape (n, 3), got {out.shape}")
    if not np.isfinite(out).all():
        raise DomainError(f"{name} contains non-finite entries")
    return out


@dataclass(frozen=True)
class ParticleVarifold:
    """Weighted atoms (x_i, nu_i, w_i) with unit normals and positive weights."""

    positions: np.ndarray
    normals: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pos = _as_points(self.positions, "positions")
        nrm = _as_points(self.normals, "normals")
        w = np.array(self.weights, dtype=float, copy=True)
        if w.ndim != 1:
            raise DomainError(f"weights must be 1-d, got shape {w.shape}")
        if not (len(pos) == len(nrm) == len(w)):
            raise DomainError("positions, normals and weights must have equal length")
        if len(pos) == 0:
            raise DomainError("empty particle varifold")
        norms = np.linalg.norm(nrm, axis=1)
        worst = np.abs(norms - 1.0).max()
        if worst > UNIT_NORMAL_TOL:
            i = int(np.abs(norms - 1.0).argmax())
            raise DomainError(f"normal {i} is not unit length: |nu| = {norms[i]!r}")
        if not np.isfinite(w).all() or (w <= 0.0).any():
            raise DomainError("weights must be finite and strictly positive")
        for arr in (pos, nrm, w):
            arr.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "normals", nrm)
        object.__setattr__(self, "weights", w)

    @property
    def atom_count(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class MeshVarifold:
    """Closed oriented triangle mesh with constant multiplicities.

    The multiplicities are per-mesh constants (not per-face fields): on a
    connected closed surface the density of the induced current is constant,
    which collapses the variational space and turns multiplicity into a
    discrete search dimension for the flow driver.
    """

    vertices: np.ndarray
    faces: np.ndarray
    theta_plus: int = 1
    theta_minus: int = 0
    genus: int | None = None

    def __post_init__(self):
        verts = _as_points(self.vertices, "vertices")
        faces = np.array(self.faces, dtype=np.int64, copy=True)
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise MeshTopologyError(f"faces must have shape (m, 3), got {faces.shape}")
        if len(faces) == 0:
            raise MeshTopologyError("mesh has no faces")
        if faces.min() < 0 or faces.max() >= len(verts):
            raise MeshTopologyError("face vertex index out of range")
        if (
            (faces[:, 0] == faces[:, 1])
            | (faces[:, 1] == faces[:, 2])
            | (faces[:, 2] == faces[:, 0])
        ).any():
            raise MeshTopologyError("face with repeated vertex")
        tp, tm = int(self.theta_plus), int(self.theta_minus)
        if tp < 0 or tm < 0 or tp + tm < 1:
            raise DomainError(
                f"multiplicities must be non-negative with theta_plus + theta_minus >= 1, "
                f"got ({tp}, {tm})"
            )

        n_edges = _check_closed_oriented(faces)
        chi = len(verts) - n_edges + len(faces)
        if chi % 2 != 0 or chi > 2:
            raise MeshTopologyError(f"Euler characteristic {chi} is not 2 - 2g")
        derived_genus = (2 - chi) // 2
        if self.genus is None:
            object.__setattr__(self, "genus", derived_genus)
        elif int(self.genus) != derived_genus:
            raise MeshTopologyError(
                f"declared genus {self.genus} inconsistent with Euler characteristic "
                f"{chi} (implies genus {derived_genus})"
            )

        areas = face_areas_of(verts, faces)
        mean_area = areas.mean()
        bad = np.flatnonzero(areas < DEGENERATE_AREA_FACTOR * mean_area)
        if bad.size:
            raise DomainError(
                f"degenerate face {int(bad[0])}: area {areas[bad[0]]!r} below "
                f"{DEGENERATE_AREA_FACTOR:g} x mean area {mean_area!r}"
            )

        verts.setflags(write=False)
        faces.setflags(write=False)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "faces", faces)
        object.__setattr__(self, "theta_plus", tp)
        object.__setattr__(self, "theta_minus", tm)

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    @property
    def face_count(self) -> int:
        return len(self.faces)

    @property
    def multiplicity(self) -> int:
        """Total covering number theta_plus + theta_minus."""
        return self.theta_plus + self.theta_minus


def _check_closed_oriented(faces: np.ndarray) -> int:
    """Verify every edge is shared by exactly two faces with opposite
    direction (closed + consistently oriented).  Returns the edge count."""
    u = np.concatenate([faces[:, 0], faces[:, 1], faces[:, 2]])
    v = np.concatenate([faces[:, 1], faces[:, 2], faces[:, 0]])
    directed = set()
    for a, b in zip(u.tolist(), v.tolist()):
        if (a, b) in directed:
            raise MeshTopologyError(
                f"directed edge ({a}, {b}) appears twice: inconsistent winding "
                "or non-manifold edge"
            )
        directed.add((a, b))
    for a, b in directed:
        if (b, a) not in directed:
            raise MeshTopologyError(f"boundary edge ({a}, {b}): mesh is not closed")
    assert len(directed) % 2 == 0
    return len(directed) // 2


@dataclass(frozen=True)
class Isometry:
    """Rigid motion (x, nu) -> (S x + t, S nu) with S orthogonal."""

    linear: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        lin = np.array(self.linear, dtype=float, copy=True)
        tr = np.array(self.translation, dtype=float, copy=True)
        if lin.shape != (3, 3):
            raise DomainError(f"linear part must be 3x3, got {lin.shape}")
        if tr.shape != (3,):
            raise DomainError(f"translation must be a 3-vector, got {tr.shape}")
        defect = np.abs(lin.T @ lin - np.eye(3)).max()
        if defect > ORTHOGONALITY_TOL:
            raise DomainError(f"linear part not orthogonal: |S^T S - I| = {defect!r}")
        lin.setflags(write=False)
        tr.setflags(write=False)
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "translation", tr)

    @staticmethod
    def identity() -> "Isometry":
        return Isometry(np.eye(3), np.zeros(3))

    @staticmethod
    def translation_by(t) -> "Isometry":
        return Isometry(np.eye(3), np.asarray(t, dtype=float))

    @staticmethod
    def reflection(plane_normal) -> "Isometry":
        """Reflection across the plane through the origin with the given normal."""
        n = np.asarray(plane_normal, dtype=float)
        nn = np.linalg.norm(n)
        if nn == 0.0:
            raise DomainError("reflection normal must be nonzero")
        n = n / nn
        return Isometry(np.eye(3) - 2.0 * np.outer(n, n), np.zeros(3))

    @staticmethod
    def rotation(axis, angle: float) -> "Isometry":
        """Rotation about an axis through the origin (Rodrigues formula)."""
        a = np.asarray(axis, dtype=float)
        na = np.linalg.norm(a)
        if na == 0.0:
            raise DomainError("rotation axis must be nonzero")
        a = a / na
        kmat = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
        rot = np.eye(3) + math.sin(angle) * kmat + (1.0 - math.cos(angle)) * (kmat @ kmat)
        # re-orthogonalize to keep the 1e-12 gate under composition round-off
        uu, _, vv = np.linalg.svd(rot)
        return Isometry(uu @ vv, np.zeros(3))

    def apply_points(self, x: np.ndarray) -> np.ndarray:
        return x @ self.linear.T + self.translation

    def apply_vectors(self, v: np.ndarray) -> np.ndarray:
        return v @ self.linear.T


# ---------------------------------------------------------------------------
# face geometry helpers


def face_areas_of(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    p0, p1, p2 = vertices[faces[:, 0]], vertices[faces[:, 1]], vertices[faces[:, 2]]
    cross = np.cross(p1 - p0, p2 - p0)
    return 0.5 * np.linalg.norm(cross, axis=1)


def face_geometry(mesh: MeshVarifold):
    """Areas, unit normals and centroids of every face."""
    v, f = mesh.vertices, mesh.faces
    p0, p1, p2 = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    cross = np.cross(p1 - p0, p2 - p0)
    norms = np.linalg.norm(cross, axis=1)
    areas = 0.5 * norms
    normals = cross / norms[:, None]
    centroids = (p0 + p1 + p2) / 3.0
    return areas, normals, centroids


def total_area(mesh: MeshVarifold) -> float:
    return float(face_areas_of(mesh.vertices, mesh.faces).sum())


def with_vertices(mesh: MeshVarifold, vertices: np.ndarray) -> MeshVarifold:
    """Same connectivity and multiplicities with new vertex positions."""
    return MeshVarifold(
        np.asarray(vertices, dtype=float),
        mesh.faces,
        mesh.theta_plus,
        mesh.theta_minus,
        mesh.genus,
    )


def with_multiplicity(mesh: MeshVarifold, theta_plus: int, theta_minus: int = 0) -> MeshVarifold:
    return MeshVarifold(mesh.vertices, mesh.faces, theta_plus, theta_minus, mesh.genus)


def transform_mesh(mesh: MeshVarifold, g: Isometry) -> MeshVarifold:
    return with_vertices(mesh, g.apply_points(mesh.vertices))


# ---------------------------------------------------------------------------
# functionals


def mass(v) -> float:
    """Total varifold mass: (theta_plus + theta_minus) * area for meshes,
    sum of weights for particle varifolds."""
    if isinstance(v, MeshVarifold):
        return float(v.multiplicity * total_area(v))
    if isinstance(v, ParticleVarifold):
        return float(v.weights.sum())
    raise DomainError(f"unsupported varifold type {type(v).__name__}")


def enclosed_volume(v) -> float:
    """Signed enclosed volume (1/3) integral of x . nu.

    For a closed embedded mesh with outward orientation this equals the
    Lebesgue volume of the bounded region, times (theta_plus - theta_minus).
    """
    if isinstance(v, MeshVarifold):
        areas, normals, centroids = face_geometry(v)
        per_face = np.einsum("ij,ij->i", centroids, normals) * areas
        return float((v.theta_plus - v.theta_minus) * per_face.sum() / 3.0)
    if isinstance(v, ParticleVarifold):
        return float(np.einsum("i,ij,ij->", v.weights, v.positions, v.normals) / 3.0)
    raise DomainError(f"unsupported varifold type {type(v).__name__}")


def pushforward(v: ParticleVarifold, g: Isometry) -> ParticleVarifold:
    """Image of the varifold under the isometry: atoms (S x + t, S nu, w)."""
    return ParticleVarifold(g.apply_points(v.positions), g.apply_vectors(v.normals), v.weights)


def symmetry_defect(v: ParticleVarifold, g: Isometry, p: float = 2.0, config=None) -> float:
    """W_p distance between the pushforward under ``g`` and the varifold
    itself; zero iff the varifold is symmetric as a measure."""
    from . import transport  # local import: transport depends on this module

    cfg = config if config is not None else transport.TransportConfig(p=p, solver="exact")
    dist, _ = transport.wasserstein(pushforward(v, g), v, cfg)
    return dist


_QUADRATURE_NODES = {
    # barycentric node coordinates and area shares; both rules are exact
    # for the constant function, which makes sampling mass-exact
    "centroid": (np.array([[1.0, 1.0, 1.0]]) / 3.0, np.array([1.0])),
    "order2": (
        np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]),
        np.array([1.0, 1.0, 1.0]) / 3.0,
    ),
}


def sample_particles(mesh: MeshVarifold, rule: str = "centroid") -> ParticleVarifold:
    """Quadrature sampling of a mesh varifold into particle form.

    One atom per face quadrature node and orientation sign: the aligned
    block (+nu, weight share * theta_plus) comes first, then the
    anti-aligned block (-nu, weight share * theta_minus) when theta_minus
    is positive.  Total mass matches ``mass(mesh)`` exactly.
    """
    if rule not in _QUADRATURE_NODES:
        raise DomainError(f"unknown quadrature rule {rule!r}; use 'centroid' or 'order2'")
    bary, shares = _QUADRATURE_NODES[rule]
    v, f = mesh.vertices, mesh.faces
    p0, p1, p2 = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    cross = np.cross(p1 - p0, p2 - p0)
    norms = np.linalg.norm(cross, axis=1)
    areas = 0.5 * norms
    bad = np.flatnonzero(areas <= 0.0)
    if bad.size:
        raise DomainError(f"degenerate face {int(bad[0])} has zero area")
    normals = cross / norms[:, None]

    # (faces, nodes, 3) -> flattened with node index fastest
    pts = (
        bary[None, :, 0, None] * p0[:, None, :]
        + bary[None, :, 1, None] * p1[:, None, :]
        + bary[None, :, 2, None] * p2[:, None, :]
    ).reshape(-1, 3)
    nrm = np.repeat(normals, len(shares), axis=0)
    w_share = (areas[:, None] * shares[None, :]).reshape(-1)

    blocks_p, blocks_n, blocks_w = [], [], []
    if mesh.theta_plus > 0:
        blocks_p.append(pts)
        blocks_n.append(nrm)
        blocks_w.append(w_share * mesh.theta_plus)
    if mesh.theta_minus > 0:
        blocks_p.append(pts)
        blocks_n.append(-nrm)
        blocks_w.append(w_share * mesh.theta_minus)
    return ParticleVarifold(
        np.concatenate(blocks_p), np.concatenate(blocks_n), np.concatenate(blocks_w)
    )
