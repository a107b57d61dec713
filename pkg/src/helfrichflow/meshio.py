"""Mesh and particle-varifold file I/O.

Mesh input is OFF or OBJ, triangles only (quads and higher polygons are
rejected).  Multiplicities and genus come from the run configuration, not
the mesh file.  Particle varifolds serialize as CSV with columns
x,y,z,nx,ny,nz,w.
"""

from __future__ import annotations

import csv
import os

import numpy as np

from .errors import DomainError, MeshTopologyError
from .varifold import MeshVarifold, ParticleVarifold, enclosed_volume


def _read_off(path: str) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "r", encoding="utf-8") as fh:
        tokens: list[str] = []
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                tokens.extend(line.split())
    if not tokens or tokens[0] != "OFF":
        raise MeshTopologyError(f"{path}: missing OFF header")
    pos = 1
    n_v, n_f = int(tokens[pos]), int(tokens[pos + 1])
    pos += 3  # skip edge count
    verts = np.array(tokens[pos : pos + 3 * n_v], dtype=float).reshape(n_v, 3)
    pos += 3 * n_v
    faces = []
    for _ in range(n_f):
        k = int(tokens[pos])
        if k != 3:
            raise MeshTopologyError(f"{path}: only triangle faces supported, found {k}-gon")
        faces.append([int(tokens[pos + 1]), int(tokens[pos + 2]), int(tokens[pos + 3])])
        pos += 4
    return verts, np.array(faces, dtype=np.int64)


def _read_obj(path: str) -> tuple[np.ndarray, np.ndarray]:
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/", 1)[0]) for p in parts[1:]]
                if len(idx) != 3:
                    raise MeshTopologyError(
                        f"{path}:{lineno}: only triangle faces supported, found {len(idx)}-gon"
                    )
                faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
    return np.array(verts, dtype=float), np.array(faces, dtype=np.int64)


def load_mesh(path: str, theta_plus: int = 1, theta_minus: int = 0,
              genus: int | None = None, fix_orientation: bool = True) -> MeshVarifold:
    """Load an OFF/OBJ triangle mesh as a mesh varifold.

    When ``fix_orientation`` is set and the signed enclosed volume comes out
    negative with theta_plus >= theta_minus, the face winding is flipped so
    the outward convention (counterclockwise seen from outside) holds.
    """
    if not os.path.exists(path):
        raise DomainError(f"mesh file not found: {path}")
    ext = os.path.splitext(path)[1].lower()
    if ext == ".off":
        verts, faces = _read_off(path)
    elif ext == ".obj":
        verts, faces = _read_obj(path)
    else:
        raise DomainError(f"unsupported mesh format {ext!r} (use .off or .obj)")
    mesh = MeshVarifold(verts, faces, theta_plus, theta_minus, genus)
    if fix_orientation and theta_plus >= theta_minus and enclosed_volume(mesh) < 0.0:
        mesh = MeshVarifold(verts, faces[:, ::-1].copy(), theta_plus, theta_minus, genus)
    return mesh


def write_off(mesh: MeshVarifold, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.vertex_count} {mesh.face_count} 0\n")
        for x, y, z in mesh.vertices:
            fh.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")
        for a, b, c in mesh.faces:
            fh.write(f"3 {a} {b} {c}\n")


PARTICLE_COLUMNS = ("x", "y", "z", "nx", "ny", "nz", "w")


def write_particles_csv(particles: ParticleVarifold, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PARTICLE_COLUMNS)
        for p, n, w in zip(particles.positions, particles.normals, particles.weights):
            writer.writerow([repr(float(v)) for v in (*p, *n, w)])


def read_particles_csv(path: str) -> ParticleVarifold:
    """Read atoms from CSV; normals are renormalized if within 1e-6 of unit."""
    if not os.path.exists(path):
        raise DomainError(f"particle file not found: {path}")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != list(PARTICLE_COLUMNS):
            raise DomainError(
                f"{path}: expected header {','.join(PARTICLE_COLUMNS)}, got {header}"
            )
        rows = [[float(x) for x in row] for row in reader if row]
    if not rows:
        raise DomainError(f"{path}: no atoms")
    data = np.array(rows, dtype=float)
    pos, nrm, w = data[:, 0:3], data[:, 3:6], data[:, 6]
    lengths = np.linalg.norm(nrm, axis=1)
    if np.abs(lengths - 1.0).max() > 1e-6:
        i = int(np.abs(lengths - 1.0).argmax())
        raise DomainError(f"{path}: normal in row {i + 2} is not unit length ({lengths[i]!r})")
    nrm = nrm / lengths[:, None]
    return ParticleVarifold(pos, nrm, w)
