"""Shared fixtures: the two-domain worked example and random model factories."""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mdcr.distributions import default_error_specs
from mdcr.graph import MDomainGraph, MdcrModel
from mdcr.synthesis import GenConfig, make_rng, sample_model

settings.register_profile("mdcr", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("mdcr")

# Two shared latents (0 -> 1), I_1 = {2, 3} with 2 -> 3, I_2 = {4}; d = (4, 5).
EXAMPLE_LATENT_EDGES = [(0, 1), (2, 3)]
EXAMPLE_OBS_PARENTS = {
    0: (0, 1, 2),
    1: (0, 2),
    2: (1, 2, 3),
    3: (0, 1, 2, 3),
    4: (0, 4),
    5: (0, 1, 4),
    6: (1,),
    7: (0, 1, 4),
    8: (0, 1),
}


def example_graph() -> MDomainGraph:
    obs = [(k, v) for v, pa in EXAMPLE_OBS_PARENTS.items() for k in pa]
    return MDomainGraph(2, 2, (2, 1), (4, 5), EXAMPLE_LATENT_EDGES, obs)


def example_model(seed: int = 0) -> MdcrModel:
    g = example_graph()
    rng = np.random.default_rng(seed)
    A = np.zeros((5, 5))
    for a, b in g.latent_edges:
        A[b, a] = rng.uniform(0.25, 1) * rng.choice([-1, 1])
    G = np.zeros((9, 5))
    for k, v in g.obs_edges:
        G[v, k] = rng.uniform(0.25, 1) * rng.choice([-1, 1])
    return MdcrModel(g, A, G, default_error_specs(5))


def random_config(rng: np.random.Generator, max_ell: int = 4, max_private: int = 3) -> GenConfig:
    m = int(rng.integers(2, 4))
    ell = int(rng.integers(1, max_ell + 1))
    sizes = tuple(int(x) for x in rng.integers(0, max_private + 1, size=m))
    d_e = max(ell + max(sizes), 2 * ell) + 2
    return GenConfig(m=m, ell=ell, domain_latent_sizes=sizes, d=d_e * m, n=1000)


def random_model(seed: int, max_ell: int = 4, max_private: int = 3) -> MdcrModel:
    rng = make_rng(seed, 99)
    cfg = random_config(rng, max_ell, max_private)
    return sample_model(cfg, rng)


@pytest.fixture
def two_domain_graph():
    return example_graph()


@pytest.fixture
def two_domain_model():
    return example_model()
