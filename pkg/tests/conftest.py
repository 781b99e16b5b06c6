import numpy as np
import pytest

from symcor import synth


@pytest.fixture(scope="session")
def diag_net():
    """2-in / 2-hidden / 2-logit net: logits = (0.5, relu(x1) + relu(x2))."""
    return synth.diag_reference_net()


@pytest.fixture(scope="session")
def deep_net():
    """Two hidden layers, the first an identity, so layer-2 pre-activations
    genuinely depend on layer-1 pattern bits."""
    return synth.stacked_reference_net()


@pytest.fixture(scope="session")
def small_random_nets():
    """A handful of seeded random nets used by invariant loops."""
    nets = []
    for seed, dim, hidden in [
        (0, 2, (4,)),
        (1, 3, (5,)),
        (2, 4, (6, 4)),
        (3, 2, (3, 3)),
        (4, 5, (8,)),
    ]:
        spec = synth.TaskSpec(input_dim=dim, hidden_sizes=hidden, seed=seed)
        nets.append(synth.gen_network(spec))
    return nets


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
