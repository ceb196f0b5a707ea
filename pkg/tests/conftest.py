import numpy as np
import pytest

from ct_gmdp.model import GmdpProblem, GraphTopology


def single_agent(rates, rewards, gamma=0.9, initial_state=0, goal_state=None):
    """1-agent problem from ``rates[a][x][y]`` and ``rewards[a][x]``."""
    w = np.asarray(rates, dtype=float)[None]
    r = np.asarray(rewards, dtype=float)[None]
    na, nx = w.shape[1], w.shape[2]
    return GmdpProblem(GraphTopology(1, frozenset()), (nx,), (na,), (w,), (r,), gamma,
                       (initial_state,), None if goal_state is None else (goal_state,))


def generator(offdiag):
    w = np.array(offdiag, dtype=float)
    idx = np.arange(w.shape[-1])
    w[..., idx, idx] = 0.0
    w[..., idx, idx] = -w.sum(axis=-1)
    return w


def random_problem(rng, num_agents=2, edges=((0, 1),), nx=2, na=2, gamma=0.9, shift=True):
    topo = GraphTopology.from_edges(num_agents, edges)
    rates, rewards = [], []
    for n in range(num_agents):
        nu = nx ** len(topo.parents(n))
        rates.append(generator(rng.uniform(0.0, 2.0, size=(nu, na, nx, nx))))
        r = rng.uniform(-1.0, 0.0 if shift else 1.0, size=(nu, na, nx))
        rewards.append(r)
    return GmdpProblem(topo, (nx,) * num_agents, (na,) * num_agents, tuple(rates), tuple(rewards),
                       gamma, (0,) * num_agents)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def sync_agent():
    """Binary agent: action 1 drives -1 -> +1 at 0.9, action 0 at 0.1; reward favors +1."""
    w = generator([[[0, 0.1], [0.9, 0]], [[0, 0.9], [0.1, 0]]])
    r = [[-1.0, 0.0], [-1.0, 0.0]]
    return single_agent(w, r)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
