import math

import pytest
from hypothesis import given, settings, strategies as st

from ct_gmdp.exact import relative_deviation
from ct_gmdp.metrics import (OPTIMAL, ResultsParseError, ResultTable, ensemble_interval,
                             read_results, sidecar_path, write_results)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def test_interval_examples():
    assert ensemble_interval(range(101), 0.95) == pytest.approx((2.5, 97.5), abs=1e-12)
    assert ensemble_interval([3.25] * 7) == (3.25, 3.25)
    with pytest.raises(ValueError):
        ensemble_interval([1.0])


@given(st.lists(finite, min_size=2, max_size=40), st.randoms())
def test_interval_permutation_invariant(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    assert ensemble_interval(values) == ensemble_interval(shuffled)
    lo, hi = ensemble_interval(values)
    assert min(values) <= lo <= hi <= max(values)


def disease_like_table():
    t = ResultTable(("mu", "nu"), metadata={"seeds": [0, 1], "estep_tol": 1e-6})
    for mu in (0.3, 0.6, 0.9):
        for nu in (0.3, 0.6, 0.9):
            v_opt = -7.4 * nu
            t.add((mu, nu), OPTIMAL, v_opt, 0.0)
            t.add((mu, nu), "VPT", v_opt * 1.01, relative_deviation(v_opt, v_opt * 1.01), seed=3)
    return t


def test_round_trip_and_sidecar(tmp_path):
    t = disease_like_table()
    path = tmp_path / "out.csv"
    write_results(t, path)
    back = read_results(path)
    assert back == t
    assert back.metadata == t.metadata
    assert back.rows[1].metadata == {"seed": 3}
    assert sidecar_path(path).exists()
    assert t.consistency_errors() == []


def test_nine_point_table_layout(tmp_path):
    t = ResultTable(("mu", "nu"))
    for k in range(9):
        t.add((0.3 * (k // 3 + 1), 0.3 * (k % 3 + 1)), "VPT", -1.0 - k, 0.0)
    path = tmp_path / "t1.csv"
    write_results(t, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "mu,nu,method,value,d_r"
    assert len(lines) == 10


def test_empty_table_is_header_only(tmp_path):
    path = tmp_path / "e.csv"
    write_results(ResultTable(("mu", "nu")), path)
    assert path.read_text() == "mu,nu,method,value,d_r\n"
    assert read_results(path) == ResultTable(("mu", "nu"))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(finite, finite, st.sampled_from(["VPT", "RND", "x,y"])), max_size=12))
def test_float_round_trip_bit_exact(tmp_path_factory, rows):
    t = ResultTable(("p",))
    for p, v, m in rows:
        t.add((p,), m, v, v / 3)
    path = tmp_path_factory.mktemp("rt") / "r.csv"
    write_results(t, path)
    back = read_results(path)
    assert back == t
    for a, b in zip(t.rows, back.rows):
        assert math.copysign(1, a.value) == math.copysign(1, b.value)


def test_nan_rows_survive(tmp_path):
    t = ResultTable(("mu",))
    t.add((0.3,), "ALP (published)", float("nan"), 61.0)
    write_results(t, tmp_path / "n.csv")
    assert read_results(tmp_path / "n.csv") == t


def test_parse_error_reports_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("mu,method,value,d_r\n0.3,VPT,-1.0,0.0\n0.6,VPT,oops,0.0\n")
    with pytest.raises(ResultsParseError, match=":3"):
        read_results(path)
    path.write_text("mu,value\n")
    with pytest.raises(ResultsParseError, match=":1"):
        read_results(path)


def test_inconsistent_row_detected():
    t = ResultTable(("mu",))
    t.add((0.3,), OPTIMAL, -10.0, 0.0)
    t.add((0.3,), "VPT", -30.0, 150.0)
    assert len(t.consistency_errors()) == 1
    assert t.wide() == [{"mu": 0.3, OPTIMAL: 0.0, "VPT": 150.0}]


def test_wrong_parameter_count():
    with pytest.raises(ValueError):
        ResultTable(("mu", "nu")).add((0.3,), "VPT", -1.0, 0.0)
