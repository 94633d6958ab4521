import numpy as np
import pytest

from maxent_pomdp.pomdp_core import TabularPomdp


def make_model(transition, emission, horizon, initial=None):
    transition = np.asarray(transition, dtype=float)
    emission = np.asarray(emission, dtype=float)
    s, a, _ = transition.shape
    if initial is None:
        initial = np.full(s, 1.0 / s)
    return TabularPomdp(s, a, emission.shape[1], transition, emission, horizon, initial)


@pytest.fixture
def two_state_model():
    """Action 0 keeps the state w.p. 0.7; action 1 swaps it w.p. 0.7."""
    stay = [[0.7, 0.3], [0.3, 0.7]]
    swap = [[0.3, 0.7], [0.7, 0.3]]
    transition = np.stack([np.array(stay), np.array(swap)], axis=1)
    return make_model(transition, [[0.9, 0.1], [0.2, 0.8]], horizon=3)


@pytest.fixture
def one_state_model():
    return make_model(np.ones((1, 1, 1)), np.ones((1, 1)), horizon=4)


def identity_chain(num_states=3, horizon=4):
    """Deterministic cycle s -> s+1 (action 0) or stay (action 1); identity emission."""
    transition = np.zeros((num_states, 2, num_states))
    for s in range(num_states):
        transition[s, 0, (s + 1) % num_states] = 1.0
        transition[s, 1, s] = 1.0
    initial = np.zeros(num_states)
    initial[0] = 1.0
    return make_model(transition, np.eye(num_states), horizon, initial)


@pytest.fixture
def chain_model():
    return identity_chain()


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
