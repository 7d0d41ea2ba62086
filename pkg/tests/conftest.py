import numpy as np
import pytest

from funczidm.basis import build_basis
from funczidm.data import LongitudinalDataset
from funczidm.model import Hyperparameters, make_design
from funczidm.sampler import SamplerConfig, initialize


def make_toy(J=4, N=6, P=2, seed=0, visits=(2, 4), depth=(5, 30), functional=None,
             zero_pairs=True):
    """Small random dataset; with ``zero_pairs`` a few (i, j) pairs are all zero."""
    rng = np.random.default_rng(seed)
    n_obs = rng.integers(visits[0], visits[1] + 1, N)
    individual = np.repeat(np.arange(N), n_obs)
    times = np.concatenate([np.sort(rng.choice(np.arange(0, 20) / 2, k, replace=False))
                            for k in n_obs])
    X = rng.standard_normal((individual.size, P))
    Z = rng.integers(0, 6, size=(individual.size, J))
    Z[:, 0] += rng.integers(*depth, individual.size)
    if zero_pairs:
        for i in range(N):
            if rng.random() < 0.5:
                Z[individual == i, 1 + rng.integers(J - 1)] = 0
    return LongitudinalDataset(ids=list(range(N)), individual=individual, times=times, X=X, Z=Z,
                               functional=functional)


@pytest.fixture
def toy():
    data = make_toy()
    basis = build_basis(data.times, 4)
    return data, basis, make_design(data, basis)


@pytest.fixture
def toy_state(toy):
    data, basis, design = toy
    rng = np.random.default_rng(5)
    state = initialize(design, Hyperparameters(), SamplerConfig(), rng)
    return data, basis, design, state


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
