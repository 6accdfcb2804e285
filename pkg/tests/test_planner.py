from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_force_makespan
from sparse2d.data import FeatureSpec
from sparse2d.planner import (TableLoadProfile, classify_imbalance, expected_rank_lookups, imbalance_ratio,
                              per_rank_loads, plan_greedy, profiles_from_specs, read_profiles_csv)


def profiles(loads, rows=100):
    return [TableLoadProfile(i, 1000.0, float(x), rows) for i, x in enumerate(loads)]




def test_single_rank_holds_everything():
    plan = plan_greedy(profiles([3, 2, 1]), 1)
    assert {e.local_rank for e in plan.entries} == {0}
    assert imbalance_ratio(per_rank_loads(plan, profiles([3, 2, 1]))) == 1.0


def test_lpt_hand_example():
    p = profiles([7, 5, 4, 3, 1])
    plan = plan_greedy(p, 2)
    assert per_rank_loads(plan, p) == [10.0, 10.0]
    owner = {e.table_id: e.local_rank for e in plan.entries}
    assert owner == {0: 0, 1: 1, 2: 1, 3: 0, 4: 1}


def test_row_wise_uniform_is_balanced():
    specs = [FeatureSpec(t, 1000, 0.0, 2) for t in range(3)]
    plan = plan_greedy(profiles_from_specs(specs, 64, 8), 4, "row-wise")
    loads = expected_rank_lookups(plan, specs, 64)
    assert np.allclose(loads, loads[0])
    plan.validate({s.table_id: s.num_ids for s in specs})


def test_ties_break_by_table_then_rank():
    plan = plan_greedy(profiles([2, 2, 2, 2]), 2)
    assert [(e.table_id, e.local_rank) for e in plan.entries] == [(0, 0), (1, 1), (2, 0), (3, 1)]


@given(st.lists(st.integers(0, 50), min_size=1, max_size=7), st.integers(1, 3))
def test_lpt_within_bound_of_brute_force(loads, N):
    if sum(loads) == 0:
        return
    p = profiles(loads)
    lpt = max(per_rank_loads(plan_greedy(p, N), p))
    opt = brute_force_makespan(loads, N)
    assert lpt <= opt * (4 / 3 - 1 / (3 * N)) + 1e-9


@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=20))
def test_imbalance_at_least_one(vals):
    if sum(vals) <= 0:
        with pytest.raises(ValueError):
            imbalance_ratio(vals)
        return
    r = imbalance_ratio(vals)
    assert r >= 1 - 1e-12
    assert (abs(r - 1) < 1e-12) == (max(vals) - min(vals) <= 1e-12 * max(vals))


def test_imbalance_examples():
    assert imbalance_ratio([10, 10, 10, 50]) == 2.5
    assert imbalance_ratio([4, 4]) == 1.0
    with pytest.raises(ValueError):
        imbalance_ratio([0, 0])
    with pytest.raises(ValueError):
        imbalance_ratio([])


def test_severe_straggler_label():
    assert classify_imbalance(5.70) == "severe straggler"
    assert classify_imbalance(2.0) == "balanced"


def test_plan_is_deterministic_and_validated():
    p = profiles([5, 9, 1, 9, 3], rows=40)
    a, b = plan_greedy(p, 3), plan_greedy(p, 3)
    assert a.to_csv() == b.to_csv()
    a.validate({i: 40 for i in range(5)})
    rw = plan_greedy(p, 3, "row-wise")
    rw.validate({i: 40 for i in range(5)})
    assert {e.row_hi - e.row_lo for e in rw.entries} <= {13, 14}


def test_bad_inputs():
    with pytest.raises(ValueError):
        plan_greedy([], 2)
    with pytest.raises(ValueError):
        plan_greedy(profiles([1]), 0)
    with pytest.raises(ValueError):
        plan_greedy(profiles([1]), 2, "column-wise")
    with pytest.raises(ValueError):
        TableLoadProfile(0, -1.0, 1.0)


def test_read_profiles_csv():
    text = (Path(__file__).parent / "fixtures" / "profiles.csv").read_text()
    p = read_profiles_csv(text)
    assert [x.expected_lookups_per_batch for x in p] == [7, 5, 4, 3, 1]
    assert per_rank_loads(plan_greedy(p, 2), p) == [10.0, 10.0]
