import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helfrichflow import HelfrichParams, meshgen


@pytest.fixture(scope="session")
def icosphere4():
    return meshgen.icosphere(4)


@pytest.fixture(scope="session")
def icosphere3():
    return meshgen.icosphere(3)


@pytest.fixture(scope="session")
def icosphere2():
    return meshgen.icosphere(2)


@pytest.fixture(scope="session")
def torus_mesh():
    return meshgen.torus()


@pytest.fixture(scope="session")
def unit_sphere_params():
    return HelfrichParams(beta=1.0, gamma=0.0, h0=0.0, m0=4.0 * math.pi)


@pytest.fixture(scope="session")
def mesh_corpus():
    """The closed-mesh zoo used by the property suites: spheres, ellipsoids,
    tori, perturbed spheres, a box, with coverings k in {1, 2, 3}."""
    meshes = [
        ("icosphere2_k1", meshgen.icosphere(2)),
        ("icosphere3_k1", meshgen.icosphere(3)),
        ("icosphere3_k2", meshgen.icosphere(3, theta_plus=2)),
        ("icosphere2_k3", meshgen.icosphere(2, theta_plus=3)),
        ("ellipsoid_112_k1", meshgen.ellipsoid((1.0, 1.0, 2.0), 3)),
        ("ellipsoid_123_k2", meshgen.ellipsoid((1.0, 2.0, 3.0), 3, theta_plus=2)),
        ("torus_k1", meshgen.torus()),
        ("torus_fine_k2", meshgen.torus(segments_major=64, segments_minor=32, theta_plus=2)),
        ("perturbed_seed0_k1", meshgen.perturbed_sphere(3, amplitude=0.1, seed=0)),
        ("perturbed_seed1_k3", meshgen.perturbed_sphere(3, amplitude=0.05, seed=1, theta_plus=3)),
        ("bumpy_k1", meshgen.bumpy_sphere(3, amplitude=0.08)),
        ("box_k1", meshgen.box_grid(6)),
    ]
    return meshes


@pytest.fixture()
def rng():
    return np.random.default_rng(20260810)
