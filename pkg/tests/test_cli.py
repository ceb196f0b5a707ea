import csv
import json

import numpy as np
import pytest

from ct_gmdp.cli import main
from ct_gmdp.metrics import read_results, sidecar_path
from ct_gmdp.model import Policy, load_policy, load_problem, save_policy


@pytest.fixture
def disease(tmp_path):
    path = tmp_path / "p.json"
    assert main(["build", "disease", "--rows", "1", "--cols", "3", "--mu", "0.6", "--nu", "0.6",
                 "--out", str(path)]) == 0
    return path


def test_validate_good_and_bad(tmp_path, disease, capsys):
    assert main(["validate", str(disease)]) == 0
    prob = load_problem(disease)
    good = tmp_path / "good.json"
    save_policy(Policy.uniform(prob), good)
    assert main(["validate", str(good), "--problem", str(disease)]) == 0
    tables = [t.copy() for t in Policy.uniform(prob).tables]
    tables[1][0, 0] = [0.6, 0.6]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({str(n): t.tolist() for n, t in enumerate(tables)}))
    capsys.readouterr()
    assert main(["validate", str(bad)]) == 1
    assert "policy row sum 1.2 ≠ 1" in capsys.readouterr().out


def test_usage_errors(tmp_path):
    assert main(["frobnicate"]) == 2
    assert main([]) == 2
    assert main(["validate", str(tmp_path / "missing.json")]) == 2


def test_plan_solve_evaluate_simulate(tmp_path, disease, capsys):
    pol, log = tmp_path / "pi.json", tmp_path / "f_log.csv"
    assert main(["plan", "vpt", "--problem", str(disease), "--gamma", "0.9", "--tail-tol", "1e-4",
                 "--h", "0.1", "--damping", "0.3", "--out", str(pol), "--log", str(log)]) == 0
    rows = list(csv.reader(log.open()))
    assert rows[0] == ["iteration", "sweep", "F_vpt_total", "value_term", "bound"]
    bounds = np.array([float(r[4]) for r in rows[1:]])
    assert np.all(np.diff(bounds) >= -1e-8 * np.abs(bounds[1:]))
    assert len(load_policy(pol)) == 3

    capsys.readouterr()
    out = tmp_path / "opt.json"
    assert main(["solve", "exact", "--problem", str(disease), "--out", str(out)]) == 0
    v_star = json.loads(out.read_text())["value"]

    assert main(["evaluate", "--problem", str(disease), "--policy", str(pol), "--method", "exact",
                 "--out", str(tmp_path / "ev.json")]) == 0
    v_pi = json.loads((tmp_path / "ev.json").read_text())["value"]
    assert v_pi <= v_star + 1e-9
    assert abs(v_pi - v_star) <= 0.02 * abs(v_star)

    assert main(["evaluate", "--problem", str(disease), "--policy", str(pol), "--method", "approx"]) == 0
    order = tmp_path / "order.csv"
    assert main(["simulate", "--problem", str(disease), "--policy", str(pol), "--traces", "200",
                 "--horizon", "20", "--seed", "7", "--trace-out", str(order)]) == 0
    header = order.read_text().splitlines()[0]
    assert header == "t,mean,p05,p95"


def test_solve_capacity_error(disease):
    assert main(["solve", "exact", "--problem", str(disease), "--max-states", "4"]) == 1


def test_reproduce_table1(tmp_path):
    out = tmp_path / "t1.csv"
    assert main(["reproduce", "table1", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 10
    assert lines[0].startswith("mu,nu,")
    long = read_results(tmp_path / "t1.long.csv")
    assert long.consistency_errors() == []
    meta = json.loads(sidecar_path(out).read_text())
    assert "rnd_seeds" in json.dumps(meta)
