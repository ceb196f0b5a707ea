"""Domain types for continuous-time multi-agent MDPs on graphs.

Every agent ``n`` carries dense tables indexed by its parent configuration
``u`` (mixed-radix over the parents' state sizes, first parent most
significant, parents sorted ascending):

* rates    ``[u, a, x, y]``  transition rate from ``x`` to ``y`` under ``a``
* rewards  ``[u, a, x]``     reward rate
* policy   ``[u, x, a]``     action probabilities

Arrays are stored read-only so problems and policies can be shared freely.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

STOCHASTIC_TOL = 1e-12


def _frozen(arr, dtype=float) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class GraphTopology:
    num_agents: int
    edges: frozenset

    def __post_init__(self):
        if self.num_agents < 1:
            raise ValueError("num_agents must be positive")
        edges = frozenset((int(m), int(n)) for m, n in self.edges)
        for m, n in edges:
            if not (0 <= m < self.num_agents and 0 <= n < self.num_agents):
                raise ValueError(f"edge {(m, n)} has an agent index outside [0, {self.num_agents})")
            if m == n:
                raise ValueError(f"self-edge ({m}, {n}) is not allowed")
        object.__setattr__(self, "edges", edges)
        parents = tuple(tuple(sorted(m for m, k in edges if k == n)) for n in range(self.num_agents))
        children = tuple(tuple(sorted(k for m, k in edges if m == n)) for n in range(self.num_agents))
        object.__setattr__(self, "_parents", parents)
        object.__setattr__(self, "_children", children)

    @classmethod
    def from_edges(cls, num_agents: int, edges) -> "GraphTopology":
        return cls(num_agents, frozenset(tuple(e) for e in edges))

    @property
    def parent_sets(self) -> tuple:
        return self._parents

    @property
    def child_sets(self) -> tuple:
        return self._children

    def parents(self, n: int) -> tuple:
        return self._parents[n]

    def children(self, n: int) -> tuple:
        return self._children[n]

    def sorted_edges(self) -> list:
        return sorted(self.edges)


@dataclass(frozen=True)
class Policy:
    """Per-agent stochastic policy tables indexed ``[u, x, a]``."""

    tables: tuple

    def __post_init__(self):
        object.__setattr__(self, "tables", tuple(_frozen(t) for t in self.tables))

    def __len__(self):
        return len(self.tables)

    def __getitem__(self, n):
        return self.tables[n]

    @classmethod
    def uniform(cls, problem: "GmdpProblem") -> "Policy":
        return cls(tuple(
            np.full((problem.num_parent_configs(n), problem.state_sizes[n], problem.action_sizes[n]),
                    1.0 / problem.action_sizes[n])
            for n in range(problem.num_agents)))

    @classmethod
    def random(cls, problem: "GmdpProblem", seed: int) -> "Policy":
        """Rows drawn uniformly from the probability simplex (Dirichlet(1))."""
        rng = np.random.Generator(np.random.PCG64(seed))
        tables = []
        for n in range(problem.num_agents):
            shape = (problem.num_parent_configs(n), problem.state_sizes[n])
            tables.append(rng.dirichlet(np.ones(problem.action_sizes[n]), size=shape))
        return cls(tuple(tables))

    @classmethod
    def deterministic(cls, problem: "GmdpProblem", actions) -> "Policy":
        """Build from per-agent integer arrays ``[u, x]`` of chosen actions."""
        tables = []
        for n, act in enumerate(actions):
            act = np.asarray(act, dtype=int)
            tab = np.zeros(act.shape + (problem.action_sizes[n],))
            np.put_along_axis(tab, act[..., None], 1.0, axis=-1)
            tables.append(tab)
        return cls(tuple(tables))

    def to_json(self) -> dict:
        return {str(n): t.tolist() for n, t in enumerate(self.tables)}

    @classmethod
    def from_json(cls, data: dict) -> "Policy":
        keys = sorted(data, key=int)
        if [int(k) for k in keys] != list(range(len(keys))):
            raise ValueError("policy agents must be numbered 0..N-1")
        return cls(tuple(np.array(data[k], dtype=float) for k in keys))


@dataclass(frozen=True)
class GmdpProblem:
    topology: GraphTopology
    state_sizes: tuple
    action_sizes: tuple
    rates: tuple
    rewards: tuple
    gamma: float
    initial_state: tuple
    goal_state: tuple | None = None
    reward_shift: float = 0.0
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "state_sizes", tuple(int(s) for s in self.state_sizes))
        object.__setattr__(self, "action_sizes", tuple(int(s) for s in self.action_sizes))
        object.__setattr__(self, "rates", tuple(_frozen(r) for r in self.rates))
        object.__setattr__(self, "rewards", tuple(_frozen(r) for r in self.rewards))
        object.__setattr__(self, "initial_state", tuple(int(s) for s in self.initial_state))
        if self.goal_state is not None:
            object.__setattr__(self, "goal_state", tuple(int(s) for s in self.goal_state))
        n = self.topology.num_agents
        for name in ("state_sizes", "action_sizes", "rates", "rewards", "initial_state"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} must have one entry per agent ({n})")

    @property
    def num_agents(self) -> int:
        return self.topology.num_agents

    def parents(self, n: int) -> tuple:
        return self.topology.parents(n)

    def children(self, n: int) -> tuple:
        return self.topology.children(n)

    def parent_sizes(self, n: int) -> tuple:
        return tuple(self.state_sizes[m] for m in self.parents(n))

    def num_parent_configs(self, n: int) -> int:
        return int(math.prod(self.parent_sizes(n)))

    def __eq__(self, other):
        if not isinstance(other, GmdpProblem):
            return NotImplemented
        same = (self.topology == other.topology and self.state_sizes == other.state_sizes
                and self.action_sizes == other.action_sizes and self.gamma == other.gamma
                and self.initial_state == other.initial_state and self.goal_state == other.goal_state
                and self.reward_shift == other.reward_shift)
        return same and all(
            a.shape == b.shape and np.array_equal(a, b)
            for a, b in zip(self.rates + self.rewards, other.rates + other.rewards))

    __hash__ = None


def encode_mixed_radix(digits: Sequence[int], radices: Sequence[int]) -> int:
    if len(digits) != len(radices):
        raise ValueError(f"expected {len(radices)} digits, got {len(digits)}")
    index = 0
    for d, r in zip(digits, radices):
        if not 0 <= d < r:
            raise ValueError(f"digit {d} outside range [0, {r})")
        index = index * r + int(d)
    return index


def decode_mixed_radix(index: int, radices: Sequence[int]) -> tuple:
    total = math.prod(radices)
    if not 0 <= index < total:
        raise ValueError(f"index {index} outside range [0, {total})")
    digits = []
    for r in reversed(radices):
        index, d = divmod(index, r)
        digits.append(d)
    return tuple(reversed(digits))


def encode_parent_config(problem: GmdpProblem, agent: int, parent_states: Sequence[int]) -> int:
    return encode_mixed_radix(parent_states, problem.parent_sizes(agent))


def decode_parent_config(problem: GmdpProblem, agent: int, index: int) -> tuple:
    return decode_mixed_radix(index, problem.parent_sizes(agent))


def parent_config_digits(problem: GmdpProblem, agent: int) -> np.ndarray:
    """Array ``[u, k]`` giving the state of the k-th parent in configuration u."""
    sizes = problem.parent_sizes(agent)
    if not sizes:
        return np.zeros((1, 0), dtype=int)
    grids = np.indices(sizes).reshape(len(sizes), -1)
    return grids.T.copy()


@dataclass(frozen=True)
class Violation:
    agent: int | None
    where: tuple
    message: str

    def __str__(self):
        prefix = "" if self.agent is None else f"agent {self.agent} "
        loc = f"at {self.where} " if self.where else ""
        return f"{prefix}{loc}{self.message}"


def validate_policy(policy: Policy, problem: GmdpProblem | None = None) -> list:
    report = []
    for n, tab in enumerate(policy.tables):
        if problem is not None:
            if n >= problem.num_agents:
                report.append(Violation(n, (), "policy has more agents than the problem"))
                continue
            want = (problem.num_parent_configs(n), problem.state_sizes[n], problem.action_sizes[n])
            if tab.shape != want:
                report.append(Violation(n, (), f"policy shape {tab.shape} != {want}"))
                continue
        if tab.ndim != 3:
            report.append(Violation(n, (), f"policy table must be 3-d [u][x][a], got {tab.ndim}-d"))
            continue
        for idx in zip(*np.nonzero((tab < 0) | (tab > 1))):
            report.append(Violation(n, tuple(int(i) for i in idx),
                                    f"policy entry {tab[idx]!r} outside [0, 1]"))
        sums = tab.sum(axis=-1)
        for idx in zip(*np.nonzero(np.abs(sums - 1.0) > STOCHASTIC_TOL)):
            report.append(Violation(n, tuple(int(i) for i in idx),
                                    f"policy row sum {sums[idx]:.12g} ≠ 1"))
    if problem is not None and len(policy.tables) < problem.num_agents:
        report.append(Violation(None, (), "policy has fewer agents than the problem"))
    return report


def validate_problem(problem: GmdpProblem, policy: Policy | None = None) -> list:
    """Return every invariant violation; an empty list means the problem is valid."""
    report = []
    if not 0.0 < problem.gamma < 1.0:
        report.append(Violation(None, (), f"gamma {problem.gamma} not in (0, 1)"))
    for n in range(problem.num_agents):
        nu = problem.num_parent_configs(n)
        nx, na = problem.state_sizes[n], problem.action_sizes[n]
        if nx < 1 or na < 1:
            report.append(Violation(n, (), "state and action sizes must be positive"))
            continue
        w, r = problem.rates[n], problem.rewards[n]
        if w.shape != (nu, na, nx, nx):
            report.append(Violation(n, (), f"rate table shape {w.shape} != {(nu, na, nx, nx)}"))
        else:
            off = ~np.eye(nx, dtype=bool)
            for idx in zip(*np.nonzero((w < 0) & off)):
                report.append(Violation(n, tuple(int(i) for i in idx),
                                        f"negative off-diagonal rate {w[idx]!r}"))
            sums = w.sum(axis=-1)
            for idx in zip(*np.nonzero(np.abs(sums) > STOCHASTIC_TOL)):
                report.append(Violation(n, tuple(int(i) for i in idx),
                                        f"generator row sum {sums[idx]:.6g} ≠ 0"))
        if r.shape != (nu, na, nx):
            report.append(Violation(n, (), f"reward table shape {r.shape} != {(nu, na, nx)}"))
        elif not np.all(np.isfinite(r)):
            report.append(Violation(n, (), "reward table has non-finite entries"))
        if not 0 <= problem.initial_state[n] < nx:
            report.append(Violation(n, (), f"initial state {problem.initial_state[n]} outside [0, {nx})"))
        if problem.goal_state is not None and not 0 <= problem.goal_state[n] < nx:
            report.append(Violation(n, (), f"goal state {problem.goal_state[n]} outside [0, {nx})"))
    if problem.goal_state is not None and len(problem.goal_state) != problem.num_agents:
        report.append(Violation(None, (), "goal_state must have one entry per agent"))
    if problem.reward_shift and any(np.any(r > 0) for r in problem.rewards):
        report.append(Violation(None, (), "shifted reward table has positive entries"))
    if policy is not None:
        report.extend(validate_policy(policy, problem))
    return report


def shift_rewards(problem: GmdpProblem) -> tuple:
    """Subtract the largest raw reward from every table so all entries are <= 0.

    Returns ``(shifted_problem, c)``. Every agent's table is shifted by the
    same ``c``, so any policy's value drops by ``N * c / -ln(gamma)``.
    """
    c = max(float(np.max(r)) for r in problem.rewards)
    if c <= 0.0:
        return problem, 0.0
    shifted = tuple(r - c for r in problem.rewards)
    return replace(problem, rewards=shifted, reward_shift=problem.reward_shift + c), c


def value_offset(problem: GmdpProblem) -> float:
    """Amount by which the recorded shift lowered every policy's value."""
    return problem.num_agents * problem.reward_shift / -math.log(problem.gamma)


def policy_average(problem: GmdpProblem, policy: Policy, n: int) -> tuple:
    """Policy-averaged local generator ``[u, x, y]`` and reward rate ``[u, x]``."""
    pi = policy[n]
    rates = np.einsum("uxa,uaxy->uxy", pi, problem.rates[n])
    reward = np.einsum("uxa,uax->ux", pi, problem.rewards[n])
    return rates, reward


# --- serialization ---------------------------------------------------------

def problem_to_json(problem: GmdpProblem) -> dict:
    out = {
        "num_agents": problem.num_agents,
        "edges": [list(e) for e in problem.topology.sorted_edges()],
        "state_sizes": list(problem.state_sizes),
        "action_sizes": list(problem.action_sizes),
        "rates": {str(n): w.tolist() for n, w in enumerate(problem.rates)},
        "rewards": {str(n): r.tolist() for n, r in enumerate(problem.rewards)},
        "gamma": problem.gamma,
        "initial_state": list(problem.initial_state),
        "goal_state": None if problem.goal_state is None else list(problem.goal_state),
        "reward_shift": problem.reward_shift,
    }
    if problem.metadata:
        out["metadata"] = problem.metadata
    return out


def problem_from_json(data: dict) -> GmdpProblem:
    n = int(data["num_agents"])
    topo = GraphTopology.from_edges(n, data.get("edges", []))

    def per_agent(key):
        tabs = data[key]
        if isinstance(tabs, dict):
            return tuple(np.array(tabs[str(k)], dtype=float) for k in range(n))
        return tuple(np.array(t, dtype=float) for t in tabs)

    goal = data.get("goal_state")
    return GmdpProblem(
        topology=topo,
        state_sizes=tuple(data["state_sizes"]),
        action_sizes=tuple(data["action_sizes"]),
        rates=per_agent("rates"),
        rewards=per_agent("rewards"),
        gamma=float(data["gamma"]),
        initial_state=tuple(data["initial_state"]),
        goal_state=None if goal is None else tuple(goal),
        reward_shift=float(data.get("reward_shift", 0.0)),
        metadata=dict(data.get("metadata", {})),
    )


def save_problem(problem: GmdpProblem, path) -> None:
    from .metrics import atomic_write_text
    atomic_write_text(path, json.dumps(problem_to_json(problem)))


def load_problem(path) -> GmdpProblem:
    return problem_from_json(json.loads(Path(path).read_text()))


def save_policy(policy: Policy, path) -> None:
    from .metrics import atomic_write_text
    atomic_write_text(path, json.dumps(policy.to_json()))


def load_policy(path) -> Policy:
    return Policy.from_json(json.loads(Path(path).read_text()))
