"""Variational perturbation planner for continuous-time GMDPs.

The E-step alternates, agent by agent, a backward sweep for the log
multiplier ``g_n = ln rho_n`` and a forward sweep for the marginal ``q_n``.
The M-step is a coordinate ascent on the same bound: with the marginals and
the variational fluxes held fixed, each agent maximizes

    J_n(pi) = sum_{u,x,a} A[u,x,a] ln pi(a|x,u) - B[u,x,a] pi(a|x,u)

over its simplex, where ``A`` integrates the discounted posterior flux out of
``(x, u)`` under action ``a`` and ``B`` the discounted prior flux minus the
reward. ``J_n`` is concave; it is maximized with exponentiated-gradient steps.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .model import GmdpProblem, Policy, policy_average, shift_rewards

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-12


class StepSizeError(RuntimeError):
    pass


# --- grid and discounting ---------------------------------------------------

def auto_horizon(gamma: float, tail_tol: float, step: float = 0.05) -> float:
    """Smallest T with ``gamma**T <= tail_tol``, but never below two grid steps."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if not 0.0 < tail_tol <= 1.0:
        raise ValueError("tail_tol must lie in (0, 1]")
    return max(math.log(tail_tol) / math.log(gamma), 2.0 * step)


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    step: float
    num_steps: int

    @classmethod
    def make(cls, horizon: float, step: float) -> "TimeGrid":
        if horizon <= 0 or step <= 0:
            raise ValueError("horizon and step must be positive")
        k = max(2, int(math.ceil(horizon / step - 1e-9)))
        return cls(float(horizon), horizon / k, k)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.num_steps + 1)

    def halved(self) -> "TimeGrid":
        return TimeGrid(self.horizon, self.step / 2, self.num_steps * 2)


@dataclass(frozen=True)
class DiscountSpec:
    gamma: float
    values: np.ndarray     # d(t) on the grid
    lograte: np.ndarray    # d'(t) / d(t) on the grid

    @classmethod
    def exponential(cls, gamma: float, grid: TimeGrid) -> "DiscountSpec":
        t = grid.times
        return cls(gamma, gamma ** t, np.full(t.shape, math.log(gamma)))

    @classmethod
    def from_values(cls, gamma: float, grid: TimeGrid, values) -> "DiscountSpec":
        """Arbitrary nonincreasing discount curve with ``d(0) = 1``."""
        values = np.asarray(values, dtype=float)
        if values[0] != 1.0 or np.any(np.diff(values) > 0):
            raise ValueError("discount must start at 1 and be nonincreasing")
        lograte = np.gradient(np.log(np.maximum(values, 1e-300)), grid.times)
        return cls(gamma, values, lograte)


@dataclass(frozen=True)
class PlannerSettings:
    em_max_iters: int = 60
    estep_max_sweeps: int = 100
    estep_tol: float = 1e-6
    em_tol: float = 1e-7
    m_step_tol: float = 1e-10
    m_step_max_iters: int = 500
    damping: float = 0.3
    prob_floor: float = 1e-6
    horizon_tail_tol: float = 1e-4
    step: float = 0.05
    goal_smoothing: float = 1e-6
    backtracks: int = 4
    extrapolate: bool = True

    def __post_init__(self):
        for name in ("estep_tol", "em_tol", "m_step_tol", "horizon_tail_tol", "step", "prob_floor"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.prob_floor > 1e-6:
            raise ValueError("prob_floor must be at most 1e-6")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")

    def grid(self, gamma: float) -> TimeGrid:
        return TimeGrid.make(auto_horizon(gamma, self.horizon_tail_tol, self.step), self.step)


@dataclass
class MarginalTrajectories:
    q: list            # per agent [t, x]
    log_rho: list      # per agent [t, x]
    converged: bool = True
    sweeps: int = 0
    history: list = field(default_factory=list)

    @property
    def rho(self) -> list:
        return [np.exp(g) for g in self.log_rho]

    def copy(self) -> "MarginalTrajectories":
        return MarginalTrajectories([q.copy() for q in self.q], [g.copy() for g in self.log_rho],
                                    self.converged, self.sweeps, list(self.history))


def _trapz_weights(grid: TimeGrid, discount: DiscountSpec) -> np.ndarray:
    w = np.full(grid.num_steps + 1, grid.step)
    w[0] = w[-1] = grid.step / 2
    return w * discount.values


# --- mean-field helpers -----------------------------------------------------

def parent_weights(problem: GmdpProblem, n: int, q: list) -> np.ndarray:
    """``q_n^u(t)``: product of parent marginals, shape ``[t, u]``."""
    kp1 = q[n].shape[0]
    w = np.ones((kp1, 1))
    for m in problem.parents(n):
        w = (w[:, :, None] * q[m][:, None, :]).reshape(kp1, -1)
    return w


def marginal_rates(problem: GmdpProblem, agent: int, q_agent, parent_marginals, rho_agent,
                   policy: Policy) -> np.ndarray:
    """Variational fluxes ``tau[u, a, x, y]`` at a single time.

    ``q_n(x) q_n^u w(y|x,a) pi(a|x) rho(y)/rho(x)`` off the diagonal; the
    diagonal holds the negated row sums.
    """
    rho = np.asarray(rho_agent, dtype=float)
    if np.any(rho <= 0) or not np.all(np.isfinite(rho)):
        raise FloatingPointError("rho must be strictly positive and finite")
    qu = np.ones(1)
    for marg in parent_marginals:
        qu = np.outer(qu, np.asarray(marg, dtype=float)).ravel()
    w = problem.rates[agent]
    pi = policy[agent]
    ratio = rho[None, :] / rho[:, None]
    tau = (np.asarray(q_agent)[None, None, :, None] * qu[:, None, None, None]
           * w * np.transpose(pi, (0, 2, 1))[:, :, :, None] * ratio[None, None])
    nx = w.shape[-1]
    idx = np.arange(nx)
    tau[..., idx, idx] = 0.0
    tau[..., idx, idx] = -tau.sum(axis=-1)
    return tau


class _Averaged:
    """Policy-averaged local tables for every agent."""

    def __init__(self, problem: GmdpProblem, policy: Policy):
        self.rates = []
        self.reward = []
        for n in range(problem.num_agents):
            r, rew = policy_average(problem, policy, n)
            self.rates.append(r)
            self.reward.append(rew)


def _ratio(g: np.ndarray) -> np.ndarray:
    """``rho(y)/rho(x)`` as ``[t, x, y]``."""
    return np.exp(np.clip(g[:, None, :] - g[:, :, None], -300, 300))


def _contract_parents(problem: GmdpProblem, j: int, keep: int, tensor: np.ndarray, q: list) -> np.ndarray:
    """Sum ``tensor[t, u]`` over all parents of j except ``keep``, weighting by their marginals."""
    pa = problem.parents(j)
    kp1 = tensor.shape[0]
    t = tensor.reshape((kp1,) + problem.parent_sizes(j))
    for pos in range(len(pa) - 1, -1, -1):
        m = pa[pos]
        if m == keep:
            continue
        shape = [kp1] + [1] * (t.ndim - 1)
        shape[pos + 1] = problem.state_sizes[m]
        t = (t * q[m].reshape(shape)).sum(axis=pos + 1)
    return t


def child_coupling(problem: GmdpProblem, n: int, traj: MarginalTrajectories, avg: _Averaged) -> np.ndarray:
    """Coupling term ``psi_n[t, x]`` collecting the children's flux and reward dependence on x_n."""
    kp1 = traj.q[n].shape[0]
    psi = np.zeros((kp1, problem.state_sizes[n]))
    for j in problem.children(n):
        q = traj.q[j]
        nx = q.shape[1]
        flux = (q[:, :, None] * _ratio(traj.log_rho[j])).reshape(kp1, nx * nx)
        tens = flux @ avg.rates[j].reshape(-1, nx * nx).T + q @ avg.reward[j].T
        psi += _contract_parents(problem, j, n, tens, traj.q)
    return psi


def _agent_coefficients(problem, n, traj, avg):
    qu = parent_weights(problem, n, traj.q)
    nx = problem.state_sizes[n]
    wbar = (qu @ avg.rates[n].reshape(-1, nx * nx)).reshape(-1, nx, nx)
    rbar = qu @ avg.reward[n]
    return qu, wbar, rbar


def _terminal(problem: GmdpProblem, n: int, settings: PlannerSettings) -> np.ndarray:
    nx = problem.state_sizes[n]
    if problem.goal_state is None:
        return np.zeros(nx)
    g = np.full(nx, math.log(settings.goal_smoothing))
    g[problem.goal_state[n]] = 0.0
    return g


def _initial(problem: GmdpProblem, n: int) -> np.ndarray:
    q0 = np.zeros(problem.state_sizes[n])
    q0[problem.initial_state[n]] = 1.0
    return q0


def backward_sweep(problem: GmdpProblem, n: int, grid: TimeGrid, traj: MarginalTrajectories,
                   policy: Policy, discount: DiscountSpec, settings: PlannerSettings | None = None,
                   avg: _Averaged | None = None) -> np.ndarray:
    """Log multiplier trajectory ``ln rho_n`` ``[t, x]`` integrated from the terminal condition."""
    settings = settings or PlannerSettings()
    avg = avg or _Averaged(problem, policy)
    _, wbar, rbar = _agent_coefficients(problem, n, traj, avg)
    c = rbar + child_coupling(problem, n, traj, avg)
    g = _kernels.backward_log_sweep(wbar, c, discount.lograte, _terminal(problem, n, settings), grid.step)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError(f"backward sweep of agent {n} produced non-finite values")
    return g


def forward_sweep(problem: GmdpProblem, n: int, grid: TimeGrid, traj: MarginalTrajectories,
                  policy: Policy, avg: _Averaged | None = None, log_rho=None) -> np.ndarray:
    """Marginal ``q_n`` ``[t, x]`` from the initial state under the tilted rates."""
    avg = avg or _Averaged(problem, policy)
    _, wbar, _ = _agent_coefficients(problem, n, traj, avg)
    g = traj.log_rho[n] if log_rho is None else log_rho
    q, worst = _kernels.forward_sweep_kernel(wbar, g, _initial(problem, n), grid.step)
    if worst < -1e-8:
        raise StepSizeError(f"forward sweep of agent {n} produced probability {worst:.3g}; "
                            "use a finer time grid")
    return q


def prior_trajectories(problem: GmdpProblem, policy: Policy, grid: TimeGrid,
                       damping: float = 0.0, tol: float = 1e-10, max_sweeps: int = 500) -> MarginalTrajectories:
    """Mean-field prior dynamics (rho = 1) by Gauss-Seidel forward sweeps."""
    kp1 = grid.num_steps + 1
    q = [np.tile(_initial(problem, n), (kp1, 1)) for n in range(problem.num_agents)]
    zeros = [np.zeros((kp1, nx)) for nx in problem.state_sizes]
    traj = MarginalTrajectories(q, zeros, converged=False)
    avg = _Averaged(problem, policy)
    coupled = bool(problem.topology.edges)
    for sweep in range(1, max_sweeps + 1):
        change = 0.0
        for n in range(problem.num_agents):
            new = forward_sweep(problem, n, grid, traj, policy, avg)
            if coupled and damping > 0 and sweep > 1:
                new = (1 - damping) * new + damping * traj.q[n]
            change = max(change, float(np.max(np.abs(new - traj.q[n]))))
            traj.q[n] = new
        traj.sweeps = sweep
        if not coupled or change < tol:
            traj.converged = True
            break
    return traj


# --- bound ------------------------------------------------------------------

@dataclass(frozen=True)
class BoundTerms:
    per_agent: np.ndarray       # F_n
    total: float                # sum_n F_n
    value_term: float           # discounted expected reward under q
    per_agent_value: np.ndarray

    @property
    def objective(self) -> float:
        return self.total + self.value_term


def _phi(r):
    return r * np.log(np.maximum(r, LOG_FLOOR)) - r + 1.0


def lower_bound(traj: MarginalTrajectories, policy: Policy, problem: GmdpProblem, grid: TimeGrid,
                discount: DiscountSpec, flux_policy: Policy | None = None) -> BoundTerms:
    """Agent-wise bound terms integrated with the trapezoidal rule.

    Fluxes follow the stationarity relation with ``flux_policy`` (default:
    ``policy``); the prior rates use ``policy``. The KL part per agent is
    ``-int d(t) sum [tau ln(tau/tau0) - tau + tau0]``.
    """
    wts = _trapz_weights(grid, discount)
    avg = _Averaged(problem, policy)
    f_n = np.zeros(problem.num_agents)
    v_n = np.zeros(problem.num_agents)
    for n in range(problem.num_agents):
        qu, wbar, rbar = _agent_coefficients(problem, n, traj, avg)
        q = traj.q[n]
        r = _ratio(traj.log_rho[n])
        nx = q.shape[1]
        off = ~np.eye(nx, dtype=bool)
        if flux_policy is None:
            integrand = -np.einsum("tx,txy->t", q, np.where(off, wbar * _phi(r), 0.0))
        else:
            w = np.where(off, problem.rates[n], 0.0)
            pi = np.transpose(policy[n], (0, 2, 1))[:, :, :, None]        # [u, a, x, 1]
            pf = np.transpose(flux_policy[n], (0, 2, 1))[:, :, :, None]
            ratio_pf = np.maximum(pf, LOG_FLOOR) / np.maximum(pi, LOG_FLOOR)
            # c w [pf r ln(pf r / pi) - pf r + pi]
            rr = r[:, None, None]                                          # [t, 1, 1, x, y]
            term = pf * rr * np.log(np.maximum(ratio_pf * rr, LOG_FLOOR)) - pf * rr + pi
            term = np.einsum("uaxy,tuaxy->tux", w, term)
            integrand = -np.einsum("tx,tu,tux->t", q, qu, term)
        f_n[n] = float(wts @ integrand)
        v_n[n] = float(wts @ np.einsum("tx,tx->t", q, rbar))
    return BoundTerms(f_n, float(f_n.sum()), float(v_n.sum()), v_n)


# --- E-step -----------------------------------------------------------------

@dataclass
class _Planning:
    problem: GmdpProblem
    settings: PlannerSettings
    grid: TimeGrid
    discount: DiscountSpec


def _context(problem, settings, grid=None, discount=None):
    settings = settings or PlannerSettings()
    grid = grid or settings.grid(problem.gamma)
    discount = discount or DiscountSpec.exponential(problem.gamma, grid)
    return _Planning(problem, settings, grid, discount)


def estep_fixed_point(problem: GmdpProblem, policy: Policy, settings: PlannerSettings | None = None,
                      init: MarginalTrajectories | None = None, grid: TimeGrid | None = None,
                      discount: DiscountSpec | None = None) -> MarginalTrajectories:
    """Gauss-Seidel forward/backward sweeps until the bound stops changing.

    ``history`` holds the bound after every sweep. Without edges the agents
    decouple and one sweep is exact.
    """
    ctx = _context(problem, settings, grid, discount)
    s = ctx.settings
    if init is None:
        traj = prior_trajectories(problem, policy, ctx.grid, damping=s.damping)
    else:
        traj = init.copy()
    traj.history = []
    traj.converged = False
    avg = _Averaged(problem, policy)
    coupled = bool(problem.topology.edges)
    prev = lower_bound(traj, policy, problem, ctx.grid, ctx.discount).objective
    for sweep in range(1, s.estep_max_sweeps + 1):
        for n in range(problem.num_agents):
            g = backward_sweep(problem, n, ctx.grid, traj, policy, ctx.discount, s, avg)
            q = forward_sweep(problem, n, ctx.grid, traj, policy, avg, log_rho=g)
            has_neighbours = bool(problem.parents(n) or problem.children(n))
            if coupled and has_neighbours and s.damping > 0:
                q = (1 - s.damping) * q + s.damping * traj.q[n]
            traj.q[n] = q
            traj.log_rho[n] = g
        cur = lower_bound(traj, policy, problem, ctx.grid, ctx.discount).objective
        traj.history.append(cur)
        traj.sweeps = sweep
        if not coupled or abs(cur - prev) <= s.estep_tol * max(1.0, abs(cur)):
            traj.converged = True
            return traj
        prev = cur
    log.warning("E-step stopped after %d sweeps without converging", s.estep_max_sweeps)
    return traj


# --- M-step -----------------------------------------------------------------

@dataclass(frozen=True)
class MStepCoefficients:
    flux: np.ndarray      # A[u, x, a]
    cost: np.ndarray      # B[u, x, a]


def m_step_coefficients(problem: GmdpProblem, n: int, traj: MarginalTrajectories, policy: Policy,
                        grid: TimeGrid, discount: DiscountSpec) -> MStepCoefficients:
    wts = _trapz_weights(grid, discount)
    qu = parent_weights(problem, n, traj.q)
    weight = wts[:, None, None] * qu[:, :, None] * traj.q[n][:, None, :]     # [t, u, x]
    w = problem.rates[n]
    nx = w.shape[-1]
    off = np.where(~np.eye(nx, dtype=bool), w, 0.0)
    r = _ratio(traj.log_rho[n])
    tilted_w = np.stack([weight[:, :, x].T @ r[:, x, :] for x in range(nx)], axis=1)   # [u, x, y]
    tilted = np.einsum("uaxy,uxy->uxa", off, tilted_w)
    exit_rate = np.transpose(off.sum(axis=-1), (0, 2, 1))                   # [u, x, a]
    reward = np.transpose(problem.rewards[n], (0, 2, 1))
    mass = weight.sum(axis=0)                                               # [u, x]
    flux = policy[n] * tilted
    cost = mass[:, :, None] * (exit_rate - reward)
    return MStepCoefficients(flux, cost)


def m_step_objective(pi: np.ndarray, coef: MStepCoefficients) -> np.ndarray:
    """Per-row value of ``sum_a A ln pi - B pi``, shape ``[u, x]``."""
    return (coef.flux * np.log(np.maximum(pi, LOG_FLOOR)) - coef.cost * pi).sum(axis=-1)


def _floor(pi: np.ndarray, floor: float) -> np.ndarray:
    pi = np.maximum(pi, floor)
    return pi / pi.sum(axis=-1, keepdims=True)


def maximize_rows(pi0: np.ndarray, coef: MStepCoefficients, floor: float, tol: float,
                  max_iters: int = 500) -> np.ndarray:
    """Exponentiated-gradient ascent with per-row backtracking on the floored simplex."""
    scale = (coef.flux.sum(axis=-1) + np.abs(coef.cost).sum(axis=-1))[..., None]
    live = scale[..., 0] > 0
    scale = np.where(scale > 0, scale, 1.0)
    norm = MStepCoefficients(coef.flux / scale, coef.cost / scale)
    pi = _floor(pi0, floor)
    obj = m_step_objective(pi, norm)
    # a floored start may sit below the input; never return something worse than pi0
    base = m_step_objective(pi0, norm)
    eta = np.ones(pi.shape[:-1])
    stalls = 0
    for _ in range(max_iters):
        grad = norm.flux / np.maximum(pi, LOG_FLOOR) - norm.cost
        grad = grad - grad.max(axis=-1, keepdims=True)
        step = pi * np.exp(np.maximum(eta[..., None] * grad, -700))
        cand = _floor(step / step.sum(axis=-1, keepdims=True), floor)
        cand_obj = m_step_objective(cand, norm)
        ok = (cand_obj >= obj) & live
        total_before = float(obj.sum())
        pi = np.where(ok[..., None], cand, pi)
        obj = np.where(ok, cand_obj, obj)
        eta = np.where(ok, np.minimum(eta * 1.5, 1e6), eta * 0.5)
        gain = float(obj.sum()) - total_before
        if gain <= tol * max(1.0, abs(total_before)):
            stalls += 1
            if stalls >= 5:
                break
        else:
            stalls = 0
    keep = obj < base
    return np.where(keep[..., None], pi0, pi)


def m_step(agent: int, traj: MarginalTrajectories, problem: GmdpProblem, policy: Policy,
           settings: PlannerSettings | None = None, grid: TimeGrid | None = None,
           discount: DiscountSpec | None = None) -> np.ndarray:
    """Updated policy table ``[u, x, a]`` for one agent; other agents are untouched."""
    ctx = _context(problem, settings, grid, discount)
    coef = m_step_coefficients(problem, agent, traj, policy, ctx.grid, ctx.discount)
    return maximize_rows(policy[agent], coef, ctx.settings.prob_floor, ctx.settings.m_step_tol,
                         ctx.settings.m_step_max_iters)


# --- EM ---------------------------------------------------------------------

@dataclass
class PlanResult:
    policy: Policy
    log: list                 # rows (iteration, sweeps, F_vpt_total, value_term, bound)
    converged: bool
    trajectories: MarginalTrajectories
    reward_shift: float
    horizon: float
    tail_bound: float

    @property
    def bounds(self) -> list:
        return [row[4] for row in self.log]


def _mix(a: Policy, b: Policy, weight: float) -> Policy:
    return Policy(tuple((1 - weight) * x + weight * y for x, y in zip(a.tables, b.tables)))


def _extrapolate(problem, ctx, old: Policy, accepted, boost: float):
    """Try ``pi_old * (pi_new / pi_old) ** boost``; keep it only if the bound rises further."""
    new, _, new_terms = accepted
    floor = ctx.settings.prob_floor
    tables = []
    for a, b in zip(old.tables, new.tables):
        logp = np.log(a) + boost * (np.log(b) - np.log(a))
        p = np.exp(logp - logp.max(axis=-1, keepdims=True))
        tables.append(_floor(p / p.sum(axis=-1, keepdims=True), floor))
    trial = _evaluate(problem, ctx, Policy(tuple(tables)), accepted[1])
    if trial is not None and trial[2].objective > new_terms.objective:
        return trial, min(boost * 2.0, 32.0)
    return accepted, 2.0


def _evaluate(problem, ctx, policy: Policy, init):
    """E-step plus bound for a candidate; ``None`` if the sweeps break down numerically."""
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            traj = estep_fixed_point(problem, policy, ctx.settings, init=init, grid=ctx.grid,
                                     discount=ctx.discount)
            terms = lower_bound(traj, policy, problem, ctx.grid, ctx.discount)
    except (FloatingPointError, StepSizeError) as err:
        log.info("rejected candidate policy: %s", err)
        return None
    if not math.isfinite(terms.objective):
        return None
    return policy, traj, terms


def em_plan(problem: GmdpProblem, settings: PlannerSettings | None = None,
            initial_policy: Policy | None = None) -> PlanResult:
    """Alternate the E-step and per-agent M-steps until the bound stops improving.

    A proposal that lowers the bound is pulled back toward the previous policy
    a few times; if none improves the bound the iteration stops, so the
    logged bound never decreases.
    """
    settings = settings or PlannerSettings()
    shift = 0.0
    if any(np.any(r > 0) for r in problem.rewards):
        problem, shift = shift_rewards(problem)
    ctx = _context(problem, settings)
    policy = initial_policy or Policy.uniform(problem)
    policy = Policy(tuple(_floor(t, settings.prob_floor) for t in policy.tables))
    traj = estep_fixed_point(problem, policy, settings, grid=ctx.grid, discount=ctx.discount)
    terms = lower_bound(traj, policy, problem, ctx.grid, ctx.discount)
    history = [(0, traj.sweeps, terms.total, terms.value_term, terms.objective)]
    converged = False
    boost = 2.0
    for it in range(1, settings.em_max_iters + 1):
        proposal = Policy(tuple(
            maximize_rows(policy[n], m_step_coefficients(problem, n, traj, policy, ctx.grid, ctx.discount),
                          settings.prob_floor, settings.m_step_tol, settings.m_step_max_iters)
            for n in range(problem.num_agents)))
        accepted = None
        weight = 1.0
        for _ in range(settings.backtracks + 1):
            cand = proposal if weight == 1.0 else _mix(policy, proposal, weight)
            trial = _evaluate(problem, ctx, cand, traj)
            if trial is not None and trial[2].objective >= terms.objective:
                accepted = trial
                break
            weight *= 0.5
        if accepted is None:
            converged = True
            break
        if settings.extrapolate and weight == 1.0:
            accepted, boost = _extrapolate(problem, ctx, policy, accepted, boost)
        gain = accepted[2].objective - terms.objective
        policy, traj, terms = accepted
        history.append((it, traj.sweeps, terms.total, terms.value_term, terms.objective))
        if gain <= settings.em_tol * max(1.0, abs(terms.objective)):
            converged = True
            break
    r_max = max(float(np.max(np.abs(r))) for r in problem.rewards) * problem.num_agents
    tail = r_max * problem.gamma ** ctx.grid.horizon / -math.log(problem.gamma)
    return PlanResult(policy, history, converged, traj, shift, ctx.grid.horizon, tail)


def em_plan_multistart(problem: GmdpProblem, settings: PlannerSettings | None = None,
                       restarts: int = 1, seed: int = 0) -> PlanResult:
    """Run EM from the uniform policy and ``restarts - 1`` seeded random policies; keep the highest bound.

    Ties keep the earliest start, so the uniform start wins unless beaten.
    """
    best = None
    for k in range(max(1, restarts)):
        init = None if k == 0 else Policy.random(problem, seed + k)
        res = em_plan(problem, settings, initial_policy=init)
        if best is None or res.bounds[-1] > best.bounds[-1]:
            best = res
    return best


def map_policy(policy: Policy) -> Policy:
    """Deterministic policy on the most probable action; ties go to the lowest index."""
    tables = []
    for t in policy.tables:
        best = np.argmax(t, axis=-1)
        out = np.zeros_like(t)
        np.put_along_axis(out, best[..., None], 1.0, axis=-1)
        tables.append(out)
    return Policy(tuple(tables))


def approximate_value(problem: GmdpProblem, policy: Policy, grid: TimeGrid | None = None,
                      discount: DiscountSpec | None = None, settings: PlannerSettings | None = None) -> float:
    """Discounted reward of the mean-field prior dynamics under ``policy``."""
    ctx = _context(problem, settings, grid, discount)
    traj = prior_trajectories(problem, policy, ctx.grid, damping=ctx.settings.damping)
    return lower_bound(traj, policy, problem, ctx.grid, ctx.discount).value_term
