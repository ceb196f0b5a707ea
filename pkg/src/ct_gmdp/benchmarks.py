"""Builders for the disease, forest, voter, synchronization and policy-family problems."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (GmdpProblem, GraphTopology, Policy, parent_config_digits,
                    shift_rewards)

RNG_NAME = f"numpy.random.PCG64 (numpy {np.__version__})"

# Ising-type problems use spin -1 for state index 0 and +1 for index 1.
SPIN = np.array([-1.0, 1.0])


@dataclass(frozen=True)
class GridSpec:
    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"degenerate grid {self.rows}x{self.cols}")

    @property
    def num_agents(self) -> int:
        return self.rows * self.cols

    def topology(self) -> GraphTopology:
        edges = set()
        for r in range(self.rows):
            for c in range(self.cols):
                n = r * self.cols + c
                if c + 1 < self.cols:
                    edges |= {(n, n + 1), (n + 1, n)}
                if r + 1 < self.rows:
                    edges |= {(n, n + self.cols), (n + self.cols, n)}
        return GraphTopology(self.num_agents, frozenset(edges))


@dataclass(frozen=True)
class IsingCoupling:
    field: tuple
    pair: dict
    seed: int | None = None
    rng: str = RNG_NAME


def disease_alpha(mu: float, n_infected) -> np.ndarray:
    return 1.0 + 0.5 * (1.0 - (1.0 - mu) ** np.asarray(n_infected, dtype=float))


def forest_alpha(mu: float, n_grown, clamp: bool = True, positive_exponent: bool = False) -> np.ndarray:
    k = np.asarray(n_grown, dtype=float)
    expo = k if positive_exponent else -k
    alpha = 1.0 + 0.5 * (1.0 - (1.0 - mu) ** expo)
    return np.maximum(alpha, 0.0) if clamp else alpha


def voter_alpha(spin_sum) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(np.asarray(spin_sum, dtype=float)))


def voter_beta(spin_sum) -> np.ndarray:
    return 0.5 * (1.0 - np.tanh(np.asarray(spin_sum, dtype=float)))


def _count_parents_in(topo: GraphTopology, sizes: tuple, n: int, state: int) -> np.ndarray:
    digits = _digits(topo, sizes, n)
    return (digits == state).sum(axis=1)


def _digits(topo: GraphTopology, sizes: tuple, n: int) -> np.ndarray:
    pa = topo.parents(n)
    if not pa:
        return np.zeros((1, 0), dtype=int)
    return np.indices(tuple(sizes[m] for m in pa)).reshape(len(pa), -1).T


def _finish(topo, nx, na, rates, rewards, gamma, initial_state, shift, metadata):
    problem = GmdpProblem(
        topology=topo,
        state_sizes=(nx,) * topo.num_agents,
        action_sizes=(na,) * topo.num_agents,
        rates=tuple(rates),
        rewards=tuple(rewards),
        gamma=gamma,
        initial_state=tuple(initial_state),
        metadata=metadata,
    )
    if shift:
        problem, _ = shift_rewards(problem)
    return problem


def _with_diagonal(w: np.ndarray) -> np.ndarray:
    nx = w.shape[-1]
    idx = np.arange(nx)
    w[..., idx, idx] = 0.0
    w[..., idx, idx] = -w.sum(axis=-1)
    return w


def build_disease(grid: GridSpec, mu: float, nu: float, r: float = 1.0, gamma: float = 0.9,
                  initial_state=None, shift: bool = True) -> GmdpProblem:
    """Crop disease control. States: 0 susceptible, 1 infected. Actions: 0 harvest, 1 fallow/treat."""
    if not 0.0 < mu < 1.0 or nu <= 0.0:
        raise ValueError("disease control needs mu in (0, 1) and nu > 0")
    topo = grid.topology()
    sizes = (2,) * topo.num_agents
    rates, rewards = [], []
    for n in range(topo.num_agents):
        k = _count_parents_in(topo, sizes, n, 1)
        w = np.zeros((len(k), 2, 2, 2))
        w[:, 0, 0, 1] = disease_alpha(mu, k)
        w[:, 1, 1, 0] = nu
        rates.append(_with_diagonal(w))
        rew = np.zeros((len(k), 2, 2))
        rew[:, 1, 0] = r
        rew[:, 1, 1] = r / 2.0
        rewards.append(rew)
    if initial_state is None:
        initial_state = (1,) * topo.num_agents
    meta = {"builder": "disease", "rows": grid.rows, "cols": grid.cols, "mu": mu, "nu": nu, "r": r}
    return _finish(topo, 2, 2, rates, rewards, gamma, initial_state, shift, meta)


def build_forest(grid: GridSpec, mu: float, nu: float, r: float = 1.0, gamma: float = 0.9,
                 initial_state=None, shift: bool = True, positive_exponent: bool = False) -> GmdpProblem:
    """Forest management. States: 0 not grown, 1 grown, 2 damaged. Actions: 0 leave, 1 harvest.

    The wind-damage rate is clamped at zero where the closed form goes negative;
    ``positive_exponent`` switches to the disease-style ``(1 - mu)**|u|`` variant.
    """
    if not 0.0 < mu < 1.0 or nu <= 0.0:
        raise ValueError("forest management needs mu in (0, 1) and nu > 0")
    topo = grid.topology()
    sizes = (3,) * topo.num_agents
    rates, rewards = [], []
    for n in range(topo.num_agents):
        k = _count_parents_in(topo, sizes, n, 1)
        w = np.zeros((len(k), 2, 3, 3))
        w[:, 0, 0, 1] = nu
        w[:, 0, 1, 2] = forest_alpha(mu, k, positive_exponent=positive_exponent)
        w[:, 1, 1, 0] = 1.0
        w[:, 1, 2, 0] = 1.0
        rates.append(_with_diagonal(w))
        rew = np.zeros((len(k), 2, 3))
        rew[:, 1, 1] = r - k
        rew[:, 1, 2] = (r - k) / 2.0
        rewards.append(rew)
    if initial_state is None:
        initial_state = (0,) * topo.num_agents
    meta = {"builder": "forest", "rows": grid.rows, "cols": grid.cols, "mu": mu, "nu": nu, "r": r,
            "positive_exponent": positive_exponent}
    return _finish(topo, 3, 2, rates, rewards, gamma, initial_state, shift, meta)


def ising_reward_tables(topo: GraphTopology, coupling: IsingCoupling) -> list:
    """Action-independent tables ``[u, a, x]`` of ``x_n (J_n + sum_k J_{n,k} x_k)``, 2 actions."""
    sizes = (2,) * topo.num_agents
    tables = []
    for n in range(topo.num_agents):
        pa = topo.parents(n)
        spins = SPIN[_digits(topo, sizes, n)]
        j_pair = np.array([coupling.pair[(k, n)] for k in pa])
        local = coupling.field[n] + (spins @ j_pair if pa else np.zeros(1))
        rew = local[:, None] * SPIN[None, :]
        tables.append(np.repeat(rew[:, None, :], 2, axis=1))
    return tables


def draw_ising_coupling(topo: GraphTopology, field_scale: float, pair_scale: float,
                        seed: int) -> IsingCoupling:
    """Gaussian couplings; the scales are standard deviations."""
    rng = np.random.Generator(np.random.PCG64(seed))
    field = rng.normal(0.0, 1.0, size=topo.num_agents) * field_scale
    edges = sorted((k, n) for k, n in topo.edges)
    draws = rng.normal(0.0, 1.0, size=len(edges)) * pair_scale
    return IsingCoupling(tuple(float(f) for f in field),
                         {e: float(d) for e, d in zip(edges, draws)}, seed)


def build_voter(grid: GridSpec, mu: float, nu: float, seed: int, gamma: float = 0.9,
                initial_state=None, shift: bool = True) -> tuple:
    """Opinion dynamics with a random Ising reward. Returns ``(problem, coupling)``."""
    if mu < 0 or nu < 0:
        raise ValueError("voter scales must be nonnegative")
    topo = grid.topology()
    sizes = (2,) * topo.num_agents
    coupling = draw_ising_coupling(topo, mu, nu, seed)
    rates = []
    for n in range(topo.num_agents):
        s = SPIN[_digits(topo, sizes, n)].sum(axis=1)
        al, be = voter_alpha(s), voter_beta(s)
        w = np.zeros((len(s), 2, 2, 2))
        w[:, 0, 0, 1] = al
        w[:, 0, 1, 0] = be
        w[:, 1, 0, 1] = be
        w[:, 1, 1, 0] = al
        rates.append(_with_diagonal(w))
    if initial_state is None:
        initial_state = (0,) * topo.num_agents
    meta = {"builder": "voter", "rows": grid.rows, "cols": grid.cols, "mu": mu, "nu": nu,
            "seed": seed, "rng": coupling.rng}
    problem = _finish(topo, 2, 2, rates, ising_reward_tables(topo, coupling), gamma,
                      initial_state, shift, meta)
    return problem, coupling


def build_sync(grid: GridSpec, gamma: float = 0.9, initial_state=None, shift: bool = True) -> GmdpProblem:
    """Synchronization task: local rates, reward ``-sum_k x_n x_k`` favouring anti-aligned neighbours."""
    topo = grid.topology()
    coupling = IsingCoupling((0.0,) * topo.num_agents, {e: -1.0 for e in topo.edges})
    rates = []
    for n in range(topo.num_agents):
        nu = max(1, 2 ** len(topo.parents(n)))
        w = np.zeros((nu, 2, 2, 2))
        w[:, 0, 0, 1] = 0.9
        w[:, 0, 1, 0] = 0.1
        w[:, 1, 0, 1] = 0.1
        w[:, 1, 1, 0] = 0.9
        rates.append(_with_diagonal(w))
    if initial_state is None:
        initial_state = (0,) * topo.num_agents
    meta = {"builder": "sync", "rows": grid.rows, "cols": grid.cols}
    return _finish(topo, 2, 2, rates, ising_reward_tables(topo, coupling), gamma,
                   initial_state, shift, meta)


def order_parameter(state, topology: GraphTopology) -> int:
    """Number of directed parent pairs whose states differ."""
    s = np.asarray(state)
    if not topology.edges:
        return 0
    e = np.array(topology.sorted_edges())
    return int(np.count_nonzero(s[e[:, 0]] != s[e[:, 1]]))


# --- policy family used for approximation-accuracy experiments -------------

def tree_topology() -> GraphTopology:
    """Rooted tree on 6 nodes: 0 -> 1, 2; 1 -> 3, 4; 2 -> 5."""
    return GraphTopology.from_edges(6, [(0, 1), (0, 2), (1, 3), (1, 4), (2, 5)])


def ring_topology(n: int = 6) -> GraphTopology:
    """Bi-directional chain with periodic boundary."""
    edges = set()
    for i in range(n):
        j = (i + 1) % n
        edges |= {(i, j), (j, i)}
    return GraphTopology(n, frozenset(edges))


def build_policy_family_problem(topology: GraphTopology, seed: int, field_scale: float = 0.2,
                                pair_scale: float = 0.2, gamma: float = 0.9,
                                initial_state=None, shift: bool = True) -> GmdpProblem:
    """Binary agents where action 0 drives the spin to +1 and action 1 to -1, both at unit rate."""
    coupling = draw_ising_coupling(topology, field_scale, pair_scale, seed)
    rates = []
    for n in range(topology.num_agents):
        nu = max(1, 2 ** len(topology.parents(n)))
        w = np.zeros((nu, 2, 2, 2))
        w[:, 0, 0, 1] = 1.0
        w[:, 1, 1, 0] = 1.0
        rates.append(_with_diagonal(w))
    if initial_state is None:
        initial_state = (0,) * topology.num_agents
    meta = {"builder": "policy_family", "seed": seed, "rng": coupling.rng,
            "field_scale": field_scale, "pair_scale": pair_scale}
    return _finish(topology, 2, 2, rates, ising_reward_tables(topology, coupling), gamma,
                   initial_state, shift, meta)


def tanh_policy(beta: float, problem: GmdpProblem, p_floor: float = 1e-6) -> Policy:
    """Policy ``1/2 + tanh(beta * x * sum_j u_j)`` for action 0, complement for action 1.

    Entries are clamped to ``[p_floor, 1 - p_floor]`` and renormalized.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if any(s != 2 for s in problem.state_sizes) or any(a != 2 for a in problem.action_sizes):
        raise NotImplementedError("the tanh policy family needs binary states and actions")
    tables = []
    for n in range(problem.num_agents):
        u = SPIN[parent_config_digits(problem, n)].sum(axis=1)
        p0 = 0.5 + np.tanh(beta * SPIN[None, :] * u[:, None])
        pi = np.stack([p0, 1.0 - p0], axis=-1)
        pi = np.clip(pi, p_floor, 1.0 - p_floor)
        tables.append(pi / pi.sum(axis=-1, keepdims=True))
    return Policy(tuple(tables))


__all__ = [
    "GridSpec", "IsingCoupling", "build_disease", "build_forest", "build_voter", "build_sync",
    "order_parameter", "tanh_policy", "tree_topology", "ring_topology",
    "build_policy_family_problem", "disease_alpha", "forest_alpha", "voter_alpha", "voter_beta",
    "draw_ising_coupling", "ising_reward_tables", "RNG_NAME", "SPIN",
]
