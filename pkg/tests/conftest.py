"""Shared fixtures: tiny tabular models and a cached zero-tilt benchmark run."""

import numpy as np
import pytest

from ddsmc.core import Vocab
from ddsmc.dataset import GmmComponent, GmmSpec, build_gmm_table, default_gmm_spec
from ddsmc.diffusion import TabularModel
from ddsmc.reward import linear_reward


@pytest.fixture
def masked_1d():
    """L=1, four data categories plus mask, fixed skewed distribution."""
    p0 = np.array([0.15, 0.2, 0.3, 0.35])
    return TabularModel(Vocab(5, 4), 1, p0)


@pytest.fixture
def masked_2d():
    """L=2 over a 4x4 data grid with mask index 4."""
    rng = np.random.default_rng(42)
    tab = rng.random((4, 4)) + 0.1
    tab /= tab.sum()
    return TabularModel(Vocab(5, 4), 2, tab)


@pytest.fixture
def udlm_1d():
    p0 = np.array([0.15, 0.2, 0.3, 0.35])
    return TabularModel(Vocab(4, None), 1, p0)


@pytest.fixture
def tiny_reward():
    """Linear reward on the masked_1d vocabulary, zero at the mask column."""
    coeffs = np.zeros((1, 5))
    coeffs[0, :4] = np.array([1.0, -0.5, 0.25, 2.0])
    return linear_reward(coeffs)


@pytest.fixture
def tiny_reward2():
    """Two-position variant for the masked_2d model."""
    coeffs = np.zeros((2, 5))
    coeffs[0, :4] = np.array([1.0, -0.5, 0.25, 2.0])
    coeffs[1, :4] = np.array([-1.0, 0.75, 1.5, 0.0])
    return linear_reward(coeffs)


@pytest.fixture
def small_gmm():
    """16x16 grid, two well-separated components."""
    spec = GmmSpec(
        (
            GmmComponent((4.0, 4.0), ((2.0, 0.0), (0.0, 2.0)), 0.5),
            GmmComponent((11.0, 11.0), ((2.0, 0.0), (0.0, 2.0)), 0.5),
        ),
        16,
    )
    return build_gmm_table(spec)


@pytest.fixture(scope="session")
def benchmark_model():
    return build_gmm_table(default_gmm_spec(64))


@pytest.fixture(scope="session")
def zero_tilt_run(benchmark_model):
    """One untilted reverse-proposal run at N=1e5, shared by the sanity tests.

    Weights stay uniform under a zero tilt, so the states are plain ancestral
    samples from the reverse chain.
    """
    from ddsmc.core import TemperSchedule
    from ddsmc.smc import SmcSampler

    reward = linear_reward(np.zeros((2, benchmark_model.vocab.size_total)))
    sampler = SmcSampler(
        benchmark_model,
        reward,
        family="masked",
        proposal="reverse",
        particles=100000,
        steps=100,
        alpha=1.0,
        temper=TemperSchedule("zero"),
    )
    return sampler.run(seed=0)
