import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ct_gmdp.exact import build_global_mdp, exact_policy_value
from ct_gmdp.model import (GmdpProblem, GraphTopology, Policy, decode_mixed_radix,
                           decode_parent_config, encode_mixed_radix, encode_parent_config,
                           load_policy, load_problem, problem_from_json, problem_to_json,
                           save_policy, save_problem, shift_rewards, validate_policy,
                           validate_problem, value_offset)

from conftest import generator, random_problem, single_agent


def two_binary_parents():
    topo = GraphTopology.from_edges(3, [(0, 2), (1, 2)])
    rates = tuple(generator(np.ones((4 if n == 2 else 1, 1, 2, 2))) for n in range(3))
    rewards = tuple(np.zeros((4 if n == 2 else 1, 1, 2)) for n in range(3))
    return GmdpProblem(topo, (2, 2, 2), (1, 1, 1), rates, rewards, 0.9, (0, 0, 0))


def test_topology_parent_and_child_sets():
    topo = GraphTopology.from_edges(4, [(2, 0), (1, 0), (0, 3)])
    assert topo.parents(0) == (1, 2)
    assert topo.children(0) == (3,)
    assert topo.parents(3) == (0,)


@pytest.mark.parametrize("edges", [[(0, 0)], [(0, 5)], [(-1, 0)]])
def test_topology_rejects_bad_edges(edges):
    with pytest.raises(ValueError):
        GraphTopology.from_edges(3, edges)


def test_parent_config_examples():
    prob = two_binary_parents()
    assert encode_parent_config(prob, 0, ()) == 0
    assert encode_parent_config(prob, 2, (1, 0)) == 2
    assert encode_parent_config(prob, 2, (1, 1)) == 3
    assert decode_parent_config(prob, 2, 2) == (1, 0)


def test_parent_config_out_of_range():
    prob = two_binary_parents()
    with pytest.raises(ValueError):
        encode_parent_config(prob, 2, (2, 0))
    with pytest.raises(ValueError):
        encode_parent_config(prob, 2, (1,))


@given(st.lists(st.integers(1, 3), min_size=0, max_size=4), st.data())
def test_mixed_radix_bijection(radices, data):
    total = math.prod(radices)
    i = data.draw(st.integers(0, total - 1))
    digits = decode_mixed_radix(i, radices)
    assert len(digits) == len(radices)
    assert encode_mixed_radix(digits, radices) == i


def test_valid_single_agent_has_empty_report():
    prob = single_agent(generator([[[0, 1], [1, 0]]]), [[-1, 0]])
    assert validate_problem(prob) == []


def test_negative_offdiagonal_rate_reported():
    w = generator([[[0, 1], [1, 0]]])
    w[0, 0, 1] = -0.5
    prob = single_agent(w, [[-1, 0]])
    msgs = [str(v) for v in validate_problem(prob)]
    assert any("negative off-diagonal rate" in m for m in msgs)


def test_policy_row_sum_reported():
    prob = single_agent(generator([[[0, 1], [1, 0]], [[0, 1], [1, 0]]]), [[-1, 0], [0, 0]])
    bad = Policy((np.array([[[0.6, 0.6], [0.5, 0.5]]]),))
    msgs = [str(v) for v in validate_policy(bad, prob)]
    assert any("policy row sum 1.2 ≠ 1" in m for m in msgs)


def test_shift_rewards_examples():
    prob = single_agent(generator([[[0, 1], [1, 0]]]), [[2.0, -1.0]])
    shifted, c = shift_rewards(prob)
    assert c == 2.0
    assert shifted.rewards[0].tolist() == [[[0.0, -3.0]]]
    assert shifted.reward_shift == 2.0
    same, c0 = shift_rewards(shifted)
    assert c0 == 0.0 and same is shifted


def test_shift_offset_matches_two_solves():
    prob = single_agent(generator([[[0, 1], [1, 0]]]), [[1.0, 1.0]])
    shifted, c = shift_rewards(prob)
    pol = Policy.uniform(prob)
    raw = exact_policy_value(build_global_mdp(prob), pol)
    low = exact_policy_value(build_global_mdp(shifted), pol)
    assert abs(low + c / -math.log(0.9) - raw) < 1e-9
    assert abs(value_offset(shifted) - c / -math.log(0.9)) < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_shift_preserves_policy_ranking(seed):
    rng = np.random.default_rng(seed)
    prob = random_problem(rng, shift=False)
    shifted, _ = shift_rewards(prob)
    p1, p2 = Policy.random(prob, seed), Policy.random(prob, seed + 1)
    raw = [exact_policy_value(build_global_mdp(prob), p) for p in (p1, p2)]
    low = [exact_policy_value(build_global_mdp(shifted), p) for p in (p1, p2)]
    assert np.sign(round(raw[0] - raw[1], 9)) == np.sign(round(low[0] - low[1], 9))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_random_generators_have_zero_row_sums(seed):
    prob = random_problem(np.random.default_rng(seed), num_agents=3, edges=((0, 1), (1, 2), (2, 0)), nx=3)
    for w in prob.rates:
        assert np.max(np.abs(w.sum(axis=-1))) <= 1e-12
    assert validate_problem(prob) == []


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_problem_json_round_trip_bit_exact(seed):
    prob = random_problem(np.random.default_rng(seed))
    back = problem_from_json(json.loads(json.dumps(problem_to_json(prob))))
    assert back == prob
    for a, b in zip(prob.rates, back.rates):
        assert a.tobytes() == b.tobytes()


def test_file_round_trips(tmp_path, rng):
    prob = random_problem(rng)
    pol = Policy.random(prob, 3)
    save_problem(prob, tmp_path / "p.json")
    save_policy(pol, tmp_path / "pi.json")
    assert load_problem(tmp_path / "p.json") == prob
    back = load_policy(tmp_path / "pi.json")
    assert all(a.tobytes() == b.tobytes() for a, b in zip(pol.tables, back.tables))


def test_random_policy_is_valid_and_seeded(rng):
    prob = random_problem(rng)
    a, b = Policy.random(prob, 5), Policy.random(prob, 5)
    assert validate_policy(a, prob) == []
    assert all(np.array_equal(x, y) for x, y in zip(a.tables, b.tables))
