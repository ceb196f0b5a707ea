"""End-to-end acceptance criteria; each test prints one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s``. The lines are also
collected in the terminal summary.
"""

import json
from dataclasses import replace

import numpy as np

from ct_gmdp.benchmarks import (GridSpec, build_disease, build_forest, build_policy_family_problem,
                                build_sync, build_voter, ring_topology, tree_topology)
from ct_gmdp.exact import (build_global_mdp, discrete_policy_values, exact_policy_value,
                           optimal_value, policy_values, uniformize)
from ct_gmdp.model import Policy, problem_from_json, problem_to_json, validate_problem
from ct_gmdp.recipes import PUBLISHED, TABLE_SETTINGS, VOTER_POINTS, run_recipe
from ct_gmdp.simulate import estimate_value
from ct_gmdp.vpt import (DiscountSpec, PlannerSettings, approximate_value, backward_sweep,
                         em_plan, estep_fixed_point, map_policy, prior_trajectories)

from conftest import ACCEPTANCE, random_problem

_CACHE = {}


def recipe(name):
    if name not in _CACHE:
        _CACHE[name] = run_recipe(name)
    return _CACHE[name]


def report(capsys, label, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
    ACCEPTANCE.append(line)
    with capsys.disabled():
        print("\n" + line)
    return ok


def test_disease_control(capsys):
    out = recipe("table1")
    secs = out.table.metadata["seconds"]
    vpt = [r["VPT"] for r in out.summary]
    rnd = [r["RND"] for r in out.summary]
    ok = len(out.summary) == 9 and max(vpt) <= 2.0 and min(rnd) >= 50.0 and secs < 300
    detail = (f"max d_r(VPT)={max(vpt):.3f}% (<=2), min d_r(RND)={min(rnd):.1f}% (>=50), "
              f"{secs:.0f}s (<300)")
    assert report(capsys, "disease control, 9 points", ok, detail), detail


def test_forest_management(capsys):
    out = recipe("table2")
    secs = out.table.metadata["seconds"]
    limits = [v + 5.0 for v in PUBLISHED["table2"]["VPT"]]
    cells = [(r["mu"], r["nu"], r["VPT"], lim, r["RND"]) for r, lim in zip(out.summary, limits)]
    over = [(mu, nu, round(v, 3), lim) for mu, nu, v, lim, _ in cells if v > lim]
    beaten = all(v < rnd for _, _, v, _, rnd in cells)
    ok = not over and beaten and secs < 600
    detail = (f"d_r(VPT) per cell {[round(c[2], 2) for c in cells]} vs limits {limits}; "
              f"cells over limit {over}; VPT beats RND everywhere={beaten}; {secs:.0f}s (<600)")
    assert report(capsys, "forest management, 9 points", ok, detail), detail


def test_voter_ensemble(capsys):
    out = recipe("table3")
    secs = out.table.metadata["seconds"]
    bad = []
    for row, cited in zip(out.summary, PUBLISHED["table3"]["VPT"]):
        if row["VPT_mean"] > row["RND_mean"] or row["VPT_high"] > cited + 3.0:
            bad.append((row["mu"], row["nu"], round(row["VPT_mean"], 3), round(row["RND_mean"], 3),
                        round(row["VPT_high"], 3), cited + 3.0))
    ok = len(out.summary) == len(VOTER_POINTS) and not bad and secs < 1200
    highs = [round(r["VPT_high"], 2) for r in out.summary]
    detail = (f"VPT 95% upper ends {highs}; failing points (mu, nu, VPT mean, RND mean, upper, limit) "
              f"{bad}; {secs:.0f}s (<1200)")
    assert report(capsys, "voter ensemble, 8 points x 20 seeds", ok, detail), detail


def test_synchronization(capsys):
    out = recipe("fig2")
    secs = out.table.metadata["seconds"]
    steady = {r["policy"]: r for r in out.summary}
    traces = out.table.metadata["traces"]
    ok = (out.checks["ratio"] >= 1.5 and out.checks["separated"] and traces >= 200 and secs < 600)
    v, u = steady["VPT"], steady["uniform"]
    detail = (f"steady mean VPT={v['steady_mean']:.1f} [{v['p05']:.1f}, {v['p95']:.1f}] vs uniform="
              f"{u['steady_mean']:.1f} [{u['p05']:.1f}, {u['p95']:.1f}], ratio={out.checks['ratio']:.2f} "
              f"(>=1.5), {traces} traces, {secs:.0f}s (<600)")
    assert report(capsys, "synchronization 5x5", ok, detail), detail


def test_oracle_consistency(capsys):
    # (a) continuous linear solve vs uniformized discrete evaluation
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        two = seed % 2 == 0
        prob = random_problem(rng, num_agents=2 if two else 1, edges=((0, 1), (1, 0)) if two else ())
        mdp = build_global_mdp(prob)
        pol = Policy.random(prob, seed)
        cont = policy_values(mdp, pol)
        disc = discrete_policy_values(mdp, uniformize(prob), pol)
        worst = max(worst, float(np.max(np.abs(disc - cont) / np.abs(cont))))
    ok_a = worst <= 1e-6

    # (b) Gillespie vs exact on the 2x3 disease instance
    prob = build_disease(GridSpec(2, 3), 0.6, 0.6)
    pol = Policy.random(prob, 0)
    exact = exact_policy_value(build_global_mdp(prob), pol)
    mean, se = estimate_value(prob, pol, num_traces=10_000, seed=11)
    ok_b = abs(mean - exact) <= 3 * se

    # (c) single-agent and edgeless planning
    settings = PlannerSettings(step=0.1)
    rel, map_ok = [], True
    cases = [random_problem(np.random.default_rng(s), num_agents=1, edges=(), nx=3) for s in range(4)]
    cases += [random_problem(np.random.default_rng(10 + s), num_agents=3, edges=()) for s in range(2)]
    for prob in cases:
        v_star, actions, mdp = optimal_value(prob)
        res = em_plan(prob, settings)
        rel.append(abs(approximate_value(prob, res.policy, settings=settings)
                       - exact_policy_value(mdp, res.policy)) / abs(v_star))
        rel.append(abs(exact_policy_value(mdp, res.policy) - v_star) / abs(v_star))
        det = map_policy(res.policy)
        digits = np.array([np.argmax(det[n][0], axis=-1) for n in range(prob.num_agents)])
        # global action of the MAP policy in every joint state
        joint = np.zeros(mdp.num_states, dtype=np.int64)
        for n in range(prob.num_agents):
            joint = joint * prob.action_sizes[n] + digits[n][mdp.local_states[n]]
        map_ok &= bool(np.array_equal(joint, actions))
    ok_c = max(rel) <= 1e-2 and map_ok
    ok = ok_a and ok_b and ok_c
    detail = (f"(a) max rel gap {worst:.1e} (<=1e-6); (b) |MC-exact|={abs(mean - exact):.4f} vs "
              f"3SE={3 * se:.4f}; (c) max rel err {max(rel):.1e} (<=1e-2), MAP equals optimum={map_ok}")
    assert report(capsys, "oracle consistency", ok, detail), detail


def _monotone(bounds):
    b = np.asarray(bounds)
    return bool(np.all(np.diff(b) >= -1e-8 * np.abs(b[1:])))


def test_structural_suites(capsys):
    g = GridSpec(2, 3)
    instances = {
        "disease": build_disease(g, 0.6, 0.6),
        "forest": build_forest(g, 0.3, 0.3),
        "voter": build_voter(g, 0.2, 0.2, 0)[0],
        "sync": build_sync(GridSpec(5, 5)),
    }
    mono, norm = {}, 0.0
    for name, prob in instances.items():
        res = em_plan(prob, TABLE_SETTINGS)
        mono[name] = _monotone(res.bounds)
        norm = max(norm, max(float(np.max(np.abs(q.sum(axis=1) - 1))) for q in res.trajectories.q))

    zero = random_problem(np.random.default_rng(5), num_agents=4, edges=((0, 1), (1, 2), (2, 3), (3, 0)),
                          nx=3)
    zero = replace(zero, rewards=tuple(np.zeros_like(r) for r in zero.rewards))
    pol = Policy.random(zero, 2)
    grid = TABLE_SETTINGS.grid(zero.gamma)
    disc = DiscountSpec.exponential(zero.gamma, grid)
    traj = prior_trajectories(zero, pol, grid)
    rho_err = max(float(np.max(np.abs(backward_sweep(zero, n, grid, traj, pol, disc))))
                  for n in range(zero.num_agents))
    traj = estep_fixed_point(zero, pol, TABLE_SETTINGS)
    rho_err = max(rho_err, max(float(np.max(np.abs(lg))) for lg in traj.log_rho))

    builders = [build_disease(g, 0.9, 0.3), build_forest(g, 0.9, 0.9), build_voter(g, 0.1, 0.2, 3)[0],
                build_sync(GridSpec(5, 5)), build_policy_family_problem(tree_topology(), 0),
                build_policy_family_problem(ring_topology(), 0)] + list(instances.values())
    valid = all(validate_problem(p) == [] for p in builders)
    round_trip = True
    for p in builders:
        back = problem_from_json(json.loads(json.dumps(problem_to_json(p))))
        round_trip &= back == p and all(a.tobytes() == b.tobytes() for a, b in zip(p.rates, back.rates))
        round_trip &= all(a.tobytes() == b.tobytes() for a, b in zip(p.rewards, back.rewards))
        pol = Policy.random(p, 1)
        pol_back = Policy.from_json(json.loads(json.dumps(pol.to_json())))
        round_trip &= all(a.tobytes() == b.tobytes() for a, b in zip(pol.tables, pol_back.tables))

    ok = all(mono.values()) and norm <= 1e-9 and rho_err <= 1e-9 and valid and round_trip
    detail = (f"monotone bound log {mono}; q normalization {norm:.1e} (<=1e-9); zero-reward |ln rho| "
              f"{rho_err:.1e} (<=1e-9); builders valid={valid}; bit-exact round trips={round_trip}")
    assert report(capsys, "structural suites", ok, detail), detail


def test_policy_family_bound_trend(capsys):
    out = recipe("appendixF")
    secs = out.table.metadata["seconds"]
    tree, ring = out.checks["spearman_tree"], out.checks["spearman_ring"]
    medians = {t: [round(float(r["median"]), 4) for r in out.summary if r["topology"] == t] for t in ("tree", "ring")}
    zero_beta = max(r["median"] for r in out.summary if r["beta"] == 0.0)
    ok = tree >= 0.8 and ring >= 0.8 and secs < 600
    detail = (f"Spearman tree={tree:.3f}, ring={ring:.3f} (>=0.8); median |d_r| per beta {medians}; "
              f"beta=0 median {zero_beta:.1e}; {secs:.0f}s (<600)")
    assert report(capsys, "bound accuracy vs policy coupling", ok, detail), detail
