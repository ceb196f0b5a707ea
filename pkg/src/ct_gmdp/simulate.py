"""Gillespie sampling of the policy-averaged joint chain.

Each trace draws its uniforms from its own Philox stream, spawned from one
``SeedSequence``; results do not depend on how traces are batched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .benchmarks import order_parameter
from .model import GmdpProblem, Policy, policy_average

RNG_NAME = "philox4x64"
_CHUNK = 4096


class UnsupportedProblemError(ValueError):
    pass


@dataclass(frozen=True)
class SimTrace:
    initial_state: np.ndarray
    jump_times: np.ndarray      # [events]
    states: np.ndarray          # [events, agents], state after each jump
    seed: int
    horizon: float
    absorbed: bool = False

    def state_at(self, times) -> np.ndarray:
        """States held at the given times, ``[len(times), agents]``."""
        idx = np.searchsorted(self.jump_times, np.asarray(times, dtype=float), side="right")
        full = np.vstack([self.initial_state[None, :], self.states])
        return full[idx]


class _Packed:
    """Policy-averaged tables padded into dense arrays for the compiled kernel."""

    def __init__(self, problem: GmdpProblem, policy: Policy):
        n = problem.num_agents
        mu = max(problem.num_parent_configs(i) for i in range(n))
        mx = max(problem.state_sizes)
        mp = max(1, max(len(problem.parents(i)) for i in range(n)))
        self.rates = np.zeros((n, mu, mx, mx))
        self.reward = np.zeros((n, mu, mx))
        self.parents = np.zeros((n, mp), dtype=np.int64)
        self.n_parents = np.zeros(n, dtype=np.int64)
        for i in range(n):
            r, rew = policy_average(problem, policy, i)
            u, x = rew.shape
            self.rates[i, :u, :x, :x] = r
            self.reward[i, :u, :x] = rew
            pa = problem.parents(i)
            self.parents[i, :len(pa)] = pa
            self.n_parents[i] = len(pa)
        self.radix = np.asarray(problem.state_sizes, dtype=np.int64)


def _stream(seed_seq: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed_seq))


def _run(packed: _Packed, s0, horizon: float, log_gamma: float, rng: np.random.Generator, record: bool):
    state = np.array(s0, dtype=np.int64)
    t = 0.0
    total = 0.0
    times, states = [], []
    while True:
        uniforms = rng.random(_CHUNK)
        rt = np.empty(_CHUNK // 2 if record else 1)
        rs = np.empty((_CHUNK // 2 if record else 1, state.size), dtype=np.int64)
        used, events, t, acc, status = _kernels.gillespie_chunk(
            state, t, horizon, uniforms, packed.rates, packed.reward, packed.parents,
            packed.n_parents, packed.radix, log_gamma, rt, rs, record)
        total += acc
        if record and events:
            times.append(rt[:events].copy())
            states.append(rs[:events].copy())
        if status != 0:
            break
    if record:
        jt = np.concatenate(times) if times else np.zeros(0)
        js = np.vstack(states) if states else np.zeros((0, state.size), dtype=np.int64)
        return total, jt, js, status == 2
    return total, None, None, status == 2


def _check(problem, policy, s0, horizon):
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if len(policy) != problem.num_agents:
        raise ValueError("policy does not match the problem")
    s0 = np.asarray(problem.initial_state if s0 is None else s0, dtype=np.int64)
    if s0.shape != (problem.num_agents,) or np.any(s0 < 0) or np.any(s0 >= np.asarray(problem.state_sizes)):
        raise ValueError("initial state out of range")
    return s0


def gillespie_run(problem: GmdpProblem, policy: Policy, s0=None, horizon: float = 60.0, seed: int = 0) -> SimTrace:
    s0 = _check(problem, policy, s0, horizon)
    packed = _Packed(problem, policy)
    rng = _stream(np.random.SeedSequence(seed))
    _, jt, js, absorbed = _run(packed, s0, horizon, math.log(problem.gamma), rng, True)
    return SimTrace(s0.copy(), jt, js, seed, float(horizon), absorbed)


def trace_streams(seed: int, num_traces: int) -> list:
    return [_stream(s) for s in np.random.SeedSequence(seed).spawn(num_traces)]


def estimate_value(problem: GmdpProblem, policy: Policy, s0=None, gamma: float | None = None,
                   num_traces: int = 10_000, horizon: float = 90.0, seed: int = 0) -> tuple:
    """Monte Carlo discounted value: ``(mean, standard error)`` over independent traces."""
    if num_traces < 2:
        raise ValueError("the standard error needs at least 2 traces")
    s0 = _check(problem, policy, s0, horizon)
    gamma = problem.gamma if gamma is None else gamma
    packed = _Packed(problem, policy)
    lg = math.log(gamma)
    values = np.array([_run(packed, s0, horizon, lg, rng, False)[0]
                       for rng in trace_streams(seed, num_traces)])
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(num_traces))


@dataclass(frozen=True)
class OrderTrace:
    times: np.ndarray
    mean: np.ndarray
    p05: np.ndarray
    p95: np.ndarray
    samples: np.ndarray     # [traces, times]


def order_param_trace(problem: GmdpProblem, policy: Policy, s0, sample_times, num_traces: int,
                      seed: int = 0) -> OrderTrace:
    """Order parameter sampled along independent traces, with 5th/95th percentile bands."""
    if any(s != 2 for s in problem.state_sizes):
        raise UnsupportedProblemError("order parameter traces need binary agents")
    times = np.asarray(sample_times, dtype=float)
    if times.ndim != 1 or times.size == 0 or np.any(np.diff(times) <= 0):
        raise ValueError("sample_times must be strictly increasing")
    horizon = float(times[-1]) if times[-1] > 0 else 1.0
    s0 = _check(problem, policy, s0, horizon)
    packed = _Packed(problem, policy)
    lg = math.log(problem.gamma)
    edges = np.array(problem.topology.sorted_edges()).reshape(-1, 2)
    out = np.zeros((num_traces, times.size))
    for k, rng in enumerate(trace_streams(seed, num_traces)):
        _, jt, js, _ = _run(packed, s0, horizon, lg, rng, True)
        held = SimTrace(s0, jt, js, seed, horizon).state_at(times)
        if edges.size:
            out[k] = np.count_nonzero(held[:, edges[:, 0]] != held[:, edges[:, 1]], axis=1)
    p05, p95 = np.percentile(out, [5, 95], axis=0)
    return OrderTrace(times, out.mean(axis=0), p05, p95, out)


def trace_order_parameter(trace: SimTrace, problem: GmdpProblem, times) -> np.ndarray:
    return np.array([order_parameter(s, problem.topology) for s in trace.state_at(times)])
