import numpy as np
import pytest

from spherefm.mesh import Mesh
from spherefm.model import SphereFaceModel, orthonormalize
from spherefm.synth import SynthConfig, generate


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_model(rng, n=20, d=4, faces=None):
    """Orthonormal model with a random mean."""
    basis = orthonormalize(rng.standard_normal((3 * n, d)))
    return SphereFaceModel(rng.standard_normal(3 * n), basis, faces)


@pytest.fixture
def small_model(rng):
    return random_model(rng)


@pytest.fixture(scope="session")
def small_synth():
    """A tiny labeled corpus: 36 vertices, 4 identities x 5 samples."""
    cfg = SynthConfig(vertex_count=36, d_true=4, n_identities=4, samples_per_identity=5,
                      within_identity_angle=0.1, scale_mean=5.0, scale_std=0.5, vertex_noise=0.05, seed=11)
    return generate(cfg)


@pytest.fixture
def triangle():
    return Mesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]), np.array([[0, 1, 2]]))
