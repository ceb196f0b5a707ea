"""Compiled inner loops: ODE sweeps on a uniform grid and Gillespie chunks.

Time-dependent coefficients are given on the grid and interpolated linearly
inside a step. Each grid step is split into RK4 substeps so that
``substep * stiffness <= 0.5``.
"""

import math

import numpy as np
from numba import njit

_STIFF = 0.5


@njit(cache=True)
def _lerp(a, b, theta):
    return a + theta * (b - a)


@njit(cache=True)
def _backward_rhs(g, wbar, c, lograte, out):
    nx = g.shape[0]
    for x in range(nx):
        acc = wbar[x, x]
        for y in range(nx):
            if y != x and wbar[x, y] != 0.0:
                acc += wbar[x, y] * math.exp(g[y] - g[x])
        out[x] = -(acc + c[x] + lograte * g[x])


@njit(cache=True)
def _backward_stiffness(g, wbar, lograte):
    nx = g.shape[0]
    lam = 0.0
    for x in range(nx):
        s = 0.0
        for y in range(nx):
            if y != x and wbar[x, y] != 0.0:
                s += wbar[x, y] * math.exp(g[y] - g[x])
        if 2.0 * s > lam:
            lam = 2.0 * s
    return lam + abs(lograte)


@njit(cache=True)
def backward_log_sweep(wbar, c, lograte, g_final, h):
    """Integrate ``dg/dt = -[sum_y W(x,y) e^{g(y)-g(x)} + c(x) + lograte g(x)]`` from T to 0.

    ``g`` is the log of the backward multiplier.
    """
    kp1, nx = c.shape
    g = np.empty((kp1, nx))
    g[kp1 - 1] = g_final
    cur = g_final.copy()
    w_t = np.empty((nx, nx))
    c_t = np.empty(nx)
    k1 = np.empty(nx)
    k2 = np.empty(nx)
    k3 = np.empty(nx)
    k4 = np.empty(nx)
    tmp = np.empty(nx)
    for k in range(kp1 - 1, 0, -1):
        lam = max(_backward_stiffness(cur, wbar[k], lograte[k]),
                  _backward_stiffness(cur, wbar[k - 1], lograte[k - 1]))
        m = max(1, int(math.ceil(h * lam / _STIFF)))
        dt = h / m
        for j in range(m):
            # theta measures progress from grid point k (theta=0) toward k-1 (theta=1)
            th0 = j / m
            for stage in range(4):
                if stage == 0:
                    th = th0
                    for x in range(nx):
                        tmp[x] = cur[x]
                elif stage == 1:
                    th = th0 + 0.5 / m
                    for x in range(nx):
                        tmp[x] = cur[x] - 0.5 * dt * k1[x]
                elif stage == 2:
                    th = th0 + 0.5 / m
                    for x in range(nx):
                        tmp[x] = cur[x] - 0.5 * dt * k2[x]
                else:
                    th = th0 + 1.0 / m
                    for x in range(nx):
                        tmp[x] = cur[x] - dt * k3[x]
                for x in range(nx):
                    c_t[x] = _lerp(c[k, x], c[k - 1, x], th)
                    for y in range(nx):
                        w_t[x, y] = _lerp(wbar[k, x, y], wbar[k - 1, x, y], th)
                lr = _lerp(lograte[k], lograte[k - 1], th)
                if stage == 0:
                    _backward_rhs(tmp, w_t, c_t, lr, k1)
                elif stage == 1:
                    _backward_rhs(tmp, w_t, c_t, lr, k2)
                elif stage == 2:
                    _backward_rhs(tmp, w_t, c_t, lr, k3)
                else:
                    _backward_rhs(tmp, w_t, c_t, lr, k4)
            for x in range(nx):
                cur[x] = cur[x] - dt * (k1[x] + 2.0 * k2[x] + 2.0 * k3[x] + k4[x]) / 6.0
        g[k - 1] = cur
    return g


@njit(cache=True)
def _forward_rhs(q, wbar, g, out):
    nx = q.shape[0]
    for x in range(nx):
        out[x] = 0.0
    for x in range(nx):
        for y in range(nx):
            if y != x and wbar[x, y] != 0.0:
                flux = q[x] * wbar[x, y] * math.exp(g[y] - g[x])
                out[x] -= flux
                out[y] += flux


@njit(cache=True)
def _forward_stiffness(wbar, g):
    nx = g.shape[0]
    lam = 0.0
    for x in range(nx):
        s = 0.0
        for y in range(nx):
            if y != x and wbar[x, y] != 0.0:
                s += wbar[x, y] * math.exp(g[y] - g[x])
        if 2.0 * s > lam:
            lam = 2.0 * s
    return lam


@njit(cache=True)
def forward_sweep_kernel(wbar, g, q0, h):
    """Integrate ``dq/dt = q Omega`` with ``Omega(x,y) = W(x,y) e^{g(y)-g(x)}`` from 0 to T.

    Returns ``(q, min_before_clip)``; each grid value is renormalized.
    """
    kp1, nx = g.shape
    q = np.empty((kp1, nx))
    q[0] = q0
    cur = q0.copy()
    w_t = np.empty((nx, nx))
    g_t = np.empty(nx)
    k1 = np.empty(nx)
    k2 = np.empty(nx)
    k3 = np.empty(nx)
    k4 = np.empty(nx)
    tmp = np.empty(nx)
    worst = 0.0
    for k in range(kp1 - 1):
        lam = max(_forward_stiffness(wbar[k], g[k]), _forward_stiffness(wbar[k + 1], g[k + 1]))
        m = max(1, int(math.ceil(h * lam / _STIFF)))
        dt = h / m
        for j in range(m):
            th0 = j / m
            for stage in range(4):
                if stage == 0:
                    th = th0
                    for x in range(nx):
                        tmp[x] = cur[x]
                elif stage == 1:
                    th = th0 + 0.5 / m
                    for x in range(nx):
                        tmp[x] = cur[x] + 0.5 * dt * k1[x]
                elif stage == 2:
                    th = th0 + 0.5 / m
                    for x in range(nx):
                        tmp[x] = cur[x] + 0.5 * dt * k2[x]
                else:
                    th = th0 + 1.0 / m
                    for x in range(nx):
                        tmp[x] = cur[x] + dt * k3[x]
                for x in range(nx):
                    g_t[x] = _lerp(g[k, x], g[k + 1, x], th)
                    for y in range(nx):
                        w_t[x, y] = _lerp(wbar[k, x, y], wbar[k + 1, x, y], th)
                if stage == 0:
                    _forward_rhs(tmp, w_t, g_t, k1)
                elif stage == 1:
                    _forward_rhs(tmp, w_t, g_t, k2)
                elif stage == 2:
                    _forward_rhs(tmp, w_t, g_t, k3)
                else:
                    _forward_rhs(tmp, w_t, g_t, k4)
            for x in range(nx):
                cur[x] = cur[x] + dt * (k1[x] + 2.0 * k2[x] + 2.0 * k3[x] + k4[x]) / 6.0
        total = 0.0
        for x in range(nx):
            if cur[x] < worst:
                worst = cur[x]
            if cur[x] < 0.0:
                cur[x] = 0.0
            total += cur[x]
        for x in range(nx):
            cur[x] /= total
        q[k + 1] = cur
    return q, worst


# --- Gillespie --------------------------------------------------------------

@njit(cache=True)
def _parent_config(state, parents, n_parents, radix, n):
    idx = 0
    for k in range(n_parents[n]):
        m = parents[n, k]
        idx = idx * radix[m] + state[m]
    return idx


@njit(cache=True)
def gillespie_chunk(state, t, horizon, uniforms, rates, reward, parents, n_parents, radix,
                    log_gamma, record_times, record_states, record):
    """Advance one trajectory using the supplied uniforms.

    ``rates[n, u, x, y]`` and ``reward[n, u, x]`` are policy-averaged and padded.
    Returns ``(used, n_events, t, accumulated, status)`` with status 0 = out
    of uniforms, 1 = horizon reached, 2 = absorbed. ``state`` is updated in
    place. The discounted reward of every holding interval is integrated in
    closed form; after the horizon or absorption the current reward rate is
    held to infinity.
    """
    n_agents = state.shape[0]
    used = 0
    events = 0
    acc = 0.0
    inv = 1.0 / -log_gamma
    exit_rates = np.empty(n_agents)
    cfg = np.empty(n_agents, dtype=np.int64)
    while used + 2 <= uniforms.shape[0]:
        total = 0.0
        r_now = 0.0
        for n in range(n_agents):
            u = _parent_config(state, parents, n_parents, radix, n)
            cfg[n] = u
            e = -rates[n, u, state[n], state[n]]
            exit_rates[n] = e
            total += e
            r_now += reward[n, u, state[n]]
        disc_t = math.exp(log_gamma * t)
        if total <= 0.0:
            acc += r_now * disc_t * inv
            return used, events, t, acc, 2
        u1 = uniforms[used]
        u2 = uniforms[used + 1]
        used += 2
        t_next = t - math.log(1.0 - u1) / total
        if t_next >= horizon:
            acc += r_now * disc_t * inv
            return used, events, horizon, acc, 1
        acc += r_now * (disc_t - math.exp(log_gamma * t_next)) * inv
        target = u2 * total
        chosen = n_agents - 1
        run = 0.0
        for n in range(n_agents):
            run += exit_rates[n]
            if target < run:
                chosen = n
                break
        n = chosen
        x = state[n]
        u = cfg[n]
        # locate the destination within agent n's outflow
        lo = run - exit_rates[n]
        pick = target - lo
        nx = radix[n]
        dest = -1
        run2 = 0.0
        last = -1
        for y in range(nx):
            if y != x and rates[n, u, x, y] > 0.0:
                last = y
                run2 += rates[n, u, x, y]
                if pick < run2 and dest < 0:
                    dest = y
        if dest < 0:
            dest = last
        state[n] = dest
        t = t_next
        if record:
            record_times[events] = t
            record_states[events] = state
        events += 1
    return used, events, t, acc, 0
