"""Exact oracles on the global product space.

Global states and joint actions are mixed-radix encoded with agent 0 as the
most significant digit.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import GmdpProblem, Policy, encode_mixed_radix, policy_average

DEFAULT_MAX_STATES = 2 ** 20


class CapacityError(RuntimeError):
    pass


class ConvergenceError(RuntimeError):
    pass


def max_states_cap(cap: int | None = None) -> int:
    if cap is not None:
        return int(cap)
    return int(os.environ.get("CT_GMDP_MAX_STATES", DEFAULT_MAX_STATES))


@dataclass(frozen=True)
class GlobalMdp:
    problem: GmdpProblem
    num_states: int
    num_actions: int
    local_states: np.ndarray   # [n, s]
    parent_index: np.ndarray   # [n, s]
    strides: np.ndarray        # [n]
    reward: np.ndarray         # [s, a]

    @property
    def num_agents(self) -> int:
        return self.problem.num_agents

    def state_index(self, state) -> int:
        return encode_mixed_radix(state, self.problem.state_sizes)

    def joint_action_digits(self) -> np.ndarray:
        """Array ``[a, n]`` of per-agent actions for every joint action."""
        sizes = self.problem.action_sizes
        return np.indices(sizes).reshape(len(sizes), -1).T

    def _local_generator(self, n: int, rates_uxy: np.ndarray):
        """Global sparse generator contribution of agent n given per-state local rows ``[s, y]``."""
        nx = self.problem.state_sizes[n]
        s = np.arange(self.num_states)
        x = self.local_states[n]
        rows, cols, vals = [], [], []
        for y in range(nx):
            rate = rates_uxy[:, y]
            mask = (x != y) & (rate != 0.0)
            rows.append(s[mask])
            cols.append(s[mask] + (y - x[mask]) * self.strides[n])
            vals.append(rate[mask])
        return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)

    def _assemble(self, per_agent_rows) -> sp.csr_matrix:
        rows, cols, vals = [], [], []
        for n, local in enumerate(per_agent_rows):
            r, c, v = self._local_generator(n, local)
            rows.append(r)
            cols.append(c)
            vals.append(v)
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        out = np.bincount(rows, weights=vals, minlength=self.num_states)
        diag = np.arange(self.num_states)
        w = sp.coo_matrix((np.concatenate([vals, -out]), (np.concatenate([rows, diag]),
                                                           np.concatenate([cols, diag]))),
                          shape=(self.num_states, self.num_states))
        return w.tocsr()

    def generator(self, action: int) -> sp.csr_matrix:
        """Generator ``W(s'|s, a)`` for one joint action."""
        digits = self.joint_action_digits()[action]
        per_agent = []
        for n in range(self.num_agents):
            w = self.problem.rates[n]
            per_agent.append(w[self.parent_index[n], digits[n], self.local_states[n], :])
        return self._assemble(per_agent)

    def policy_generator(self, policy: Policy) -> tuple:
        """Policy-averaged generator and reward-rate vector for a factored policy."""
        per_agent = []
        reward = np.zeros(self.num_states)
        for n in range(self.num_agents):
            rates, rew = policy_average(self.problem, policy, n)
            u, x = self.parent_index[n], self.local_states[n]
            per_agent.append(rates[u, x, :])
            reward += rew[u, x]
        return self._assemble(per_agent), reward

    def global_policy_generator(self, global_policy: np.ndarray) -> tuple:
        """Generator and reward for a global policy (``[s]`` joint actions or ``[s, a]`` probabilities)."""
        gp = np.asarray(global_policy)
        if gp.ndim == 1:
            probs = np.zeros((self.num_states, self.num_actions))
            probs[np.arange(self.num_states), gp.astype(int)] = 1.0
        else:
            probs = gp
        digits = self.joint_action_digits()
        per_agent = []
        for n in range(self.num_agents):
            na = self.problem.action_sizes[n]
            marg = np.zeros((self.num_states, na))
            for a_n in range(na):
                marg[:, a_n] = probs[:, digits[:, n] == a_n].sum(axis=1)
            w = self.problem.rates[n][self.parent_index[n], :, self.local_states[n], :]
            per_agent.append(np.einsum("sa,say->sy", marg, w))
        reward = np.einsum("sa,sa->s", probs, self.reward)
        return self._assemble(per_agent), reward


def _local_indices(problem: GmdpProblem) -> tuple:
    sizes = problem.state_sizes
    num_states = math.prod(sizes)
    strides = np.array([math.prod(sizes[n + 1:]) for n in range(len(sizes))], dtype=np.int64)
    s = np.arange(num_states, dtype=np.int64)
    local = np.stack([(s // strides[n]) % sizes[n] for n in range(len(sizes))])
    parent = np.zeros_like(local)
    for n in range(len(sizes)):
        idx = np.zeros(num_states, dtype=np.int64)
        for m in problem.parents(n):
            idx = idx * sizes[m] + local[m]
        parent[n] = idx
    return local, parent, strides


def build_global_mdp(problem: GmdpProblem, max_states: int | None = None) -> GlobalMdp:
    cap = max_states_cap(max_states)
    num_states = math.prod(problem.state_sizes)
    if num_states > cap:
        raise CapacityError(
            f"global state space has {num_states} states, above the cap of {cap}; "
            f"raise --max-states / CT_GMDP_MAX_STATES to at least {num_states}")
    local, parent, strides = _local_indices(problem)
    num_actions = math.prod(problem.action_sizes)
    digits = np.indices(problem.action_sizes).reshape(problem.num_agents, -1)
    reward = np.zeros((num_states, num_actions))
    for n in range(problem.num_agents):
        r = problem.rewards[n]
        reward += r[parent[n][:, None], digits[n][None, :], local[n][:, None]]
    return GlobalMdp(problem, num_states, num_actions, local, parent, strides, reward)


def _solve_value(generator: sp.csr_matrix, reward: np.ndarray, gamma: float) -> np.ndarray:
    n = generator.shape[0]
    system = (sp.identity(n, format="csc") * -math.log(gamma) - generator).tocsc()
    try:
        values = spla.splu(system).solve(reward)
    except RuntimeError as exc:
        raise np.linalg.LinAlgError(f"singular value system: {exc}") from exc
    if not np.all(np.isfinite(values)):
        raise np.linalg.LinAlgError("value system produced non-finite values")
    return values


def policy_values(mdp: GlobalMdp, policy, gamma: float | None = None) -> np.ndarray:
    """Values of every global state, solving ``(-ln gamma I - W_pi) V = r_pi``."""
    gamma = mdp.problem.gamma if gamma is None else gamma
    if isinstance(policy, Policy):
        gen, rew = mdp.policy_generator(policy)
    else:
        gen, rew = mdp.global_policy_generator(policy)
    return _solve_value(gen, rew, gamma)


def exact_policy_value(mdp: GlobalMdp, policy, gamma: float | None = None, s0=None) -> float:
    s0 = mdp.problem.initial_state if s0 is None else s0
    values = policy_values(mdp, policy, gamma)
    return float(values[mdp.state_index(s0)])


# --- uniformization ---------------------------------------------------------

@dataclass(frozen=True)
class UniformizedMdp:
    """Per-agent discrete kernels ``delta + w / kappa`` and their global lift.

    The lifted chain picks one agent uniformly per step, so it is the global
    CTMC uniformized at rate ``N * kappa``. ``reward`` is scaled so that the
    discrete discounted value equals the continuous-time value; the
    reward-rate ratio printed alongside the published benchmark conversion
    is kept in ``conversion_reward`` for reference only.
    """

    kappa: float
    transition: tuple          # per agent [u, a, x, y]
    reward: tuple              # per agent [u, a, x]
    conversion_reward: tuple   # per agent [u, a, x]
    discount_discrete: float
    global_rate: float
    gamma: float


def required_kappa(problem: GmdpProblem) -> float:
    return max(float(np.max(-np.diagonal(w, axis1=-2, axis2=-1))) for w in problem.rates)


def conversion_reward_ratio(exit_diag, gamma: float, kappa: float):
    """``(w(x|x,a) - ln gamma) / (kappa - ln gamma)``."""
    lg = math.log(gamma)
    return (np.asarray(exit_diag) - lg) / (kappa - lg)


def uniformize(problem: GmdpProblem, kappa: float | None = None) -> UniformizedMdp:
    need = required_kappa(problem)
    if kappa is None:
        kappa = 1.1 * need if need > 0 else 1.0
    if kappa < need or kappa <= 0:
        raise ValueError(f"kappa={kappa} is below the largest exit rate {need}")
    lg = math.log(problem.gamma)
    big = problem.num_agents * kappa
    kernels, rewards, converted = [], [], []
    for w, r in zip(problem.rates, problem.rewards):
        nx = w.shape[-1]
        kernels.append(np.eye(nx) + w / kappa)
        rewards.append(r / (big - lg))
        diag = np.diagonal(w, axis1=-2, axis2=-1)
        converted.append(conversion_reward_ratio(diag, problem.gamma, kappa) * r)
    return UniformizedMdp(float(kappa), tuple(kernels), tuple(rewards), tuple(converted),
                          big / (big - lg), big, problem.gamma)


def _neighbour_values(mdp: GlobalMdp, values: np.ndarray, n: int) -> np.ndarray:
    """``[s, y]``: value of the state reached by setting agent n to y."""
    nx = mdp.problem.state_sizes[n]
    s = np.arange(mdp.num_states)
    x = mdp.local_states[n]
    idx = s[:, None] + (np.arange(nx)[None, :] - x[:, None]) * mdp.strides[n]
    return values[idx]


def _agent_q_terms(mdp: GlobalMdp, umdp: UniformizedMdp):
    """Per agent: rewards ``[s, a]`` and kernel rows ``[s, a, y]`` in global-state order."""
    out = []
    for n in range(mdp.num_agents):
        u, x = mdp.parent_index[n], mdp.local_states[n]
        kern = umdp.transition[n][u, :, x, :]
        rew = umdp.reward[n][u, :, x]
        out.append((rew, kern))
    return out


def discrete_policy_values(mdp: GlobalMdp, umdp: UniformizedMdp, policy: Policy) -> np.ndarray:
    """Discounted value of the lifted uniformized chain under a factored policy."""
    big_n = mdp.num_agents
    rows, cols, vals = [], [], []
    reward = np.zeros(mdp.num_states)
    s = np.arange(mdp.num_states)
    for n, (rew, kern) in enumerate(_agent_q_terms(mdp, umdp)):
        pi = policy[n][mdp.parent_index[n], mdp.local_states[n], :]
        reward += np.einsum("sa,sa->s", pi, rew)
        row = np.einsum("sa,say->sy", pi, kern) / big_n
        x = mdp.local_states[n]
        for y in range(row.shape[1]):
            rows.append(s)
            cols.append(s + (y - x) * mdp.strides[n])
            vals.append(row[:, y])
    p = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(mdp.num_states, mdp.num_states)).tocsc()
    system = sp.identity(mdp.num_states, format="csc") - umdp.discount_discrete * p
    return spla.splu(system.tocsc()).solve(reward)


def solve_discrete_mdp(mdp: GlobalMdp, umdp: UniformizedMdp | None = None, tol: float = 1e-9,
                       max_iters: int = 1_000_000) -> tuple:
    """Value iteration on the lifted uniformized chain.

    Returns ``(actions, values)`` with ``actions[s]`` the optimal joint action
    index (ties go to the lowest index per agent) and ``values`` the optimal
    values, which equal continuous-time values. The optimum is over policies
    that observe the whole global state.
    """
    if umdp is None:
        umdp = uniformize(mdp.problem)
    terms = _agent_q_terms(mdp, umdp)
    scale = umdp.discount_discrete / mdp.num_agents
    values = np.zeros(mdp.num_states)
    residual = np.inf
    for it in range(max_iters):
        new = np.zeros(mdp.num_states)
        for n, (rew, kern) in enumerate(terms):
            q = rew + scale * np.einsum("say,sy->sa", kern, _neighbour_values(mdp, values, n))
            new += q.max(axis=1)
        residual = float(np.max(np.abs(new - values)))
        values = new
        if residual < tol:
            break
    else:
        raise ConvergenceError(f"value iteration did not reach tol={tol}; residual {residual:.3e}")
    digits = np.zeros((mdp.num_agents, mdp.num_states), dtype=int)
    for n, (rew, kern) in enumerate(terms):
        q = rew + scale * np.einsum("say,sy->sa", kern, _neighbour_values(mdp, values, n))
        best = q.max(axis=1, keepdims=True)
        slack = 1e-12 * max(1.0, float(np.max(np.abs(best))))
        digits[n] = np.argmax(q >= best - slack, axis=1)
    actions = np.zeros(mdp.num_states, dtype=np.int64)
    for n in range(mdp.num_agents):
        actions = actions * mdp.problem.action_sizes[n] + digits[n]
    return actions, values


def optimal_value(problem: GmdpProblem, tol: float = 1e-9, max_states: int | None = None) -> tuple:
    """``(V*(s0), actions, mdp)`` with V* from an exact linear solve of the VI policy."""
    mdp = build_global_mdp(problem, max_states)
    actions, _ = solve_discrete_mdp(mdp, tol=tol)
    return exact_policy_value(mdp, actions), actions, mdp


def relative_deviation(v_opt: float, v_pi: float) -> float:
    """Percentage ``100 (v_opt - v_pi) / |v_opt|``; nonnegative whenever v_pi <= v_opt."""
    if v_opt == 0:
        raise ZeroDivisionError("optimal value is 0; report the absolute deviation v_opt - v_pi instead")
    return 100.0 * (v_opt - v_pi) / abs(v_opt)
