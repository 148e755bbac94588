import numpy as np
import pytest

from hmsq.hmm import HmmModel, sample
from hmsq.tracking import train_system


@pytest.fixture(scope="session")
def model():
    return HmmModel.two_state(0.1)


@pytest.fixture(scope="session")
def data(model):
    _, train = sample(model, 30_000, 101)
    _, test = sample(model, 30_000, 202)
    return train, test


@pytest.fixture(scope="session")
def system3(model, data):
    return train_system(model, 3, n_classes=5, em_rounds=4, seed=0, obs=data[0])


@pytest.fixture(scope="session")
def slow_source():
    m = HmmModel.two_state(0.01)
    _, train = sample(m, 30_000, 303)
    _, test = sample(m, 20_000, 404)
    return m, train, test


def brute_belief(model, cells, upto):
    """P(q_upto | cells[0..upto-1]) by enumerating every state path."""
    import itertools
    from scipy.stats import norm

    N = model.n_states
    probs = np.zeros(N)
    for path in itertools.product(range(N), repeat=upto + 1):
        p = model.initial[path[0]]
        for t in range(1, upto + 1):
            p *= model.transition[path[t - 1], path[t]]
        for t in range(upto):
            lo, hi = cells[t]
            j = path[t]
            p *= norm.cdf(hi, model.means[j], model.sds[j]) - norm.cdf(lo, model.means[j], model.sds[j])
        probs[path[-1]] += p
    return probs / probs.sum()
