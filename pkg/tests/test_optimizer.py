import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sparse2d.optimizer import (OptimizerConfig, adagrad_row_step, adagrad_rows_step, aggregate_group_gradient,
                                effective_lr, scatter_row_grads, sgd_row_step)

vec = st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=3)


def test_config_validation():
    for bad in (dict(eta=0), dict(eps=0), dict(c=0), dict(c=-1), dict(variant="adam")):
        with pytest.raises(ValueError):
            OptimizerConfig(**bad)


def test_aggregate_examples():
    out = aggregate_group_gradient([{5: np.array([1.0, 0.0])}, {5: np.array([3.0, 0.0])}], 4)
    assert list(out) == [5] and out[5].vector.tolist() == [1.0, 0.0] and out[5].sample_count == 2
    single = aggregate_group_gradient([{2: np.array([4.0, 8.0])}], 8)
    assert single[2].vector.tolist() == [0.5, 1.0]
    assert 3 not in single
    with pytest.raises(ValueError):
        aggregate_group_gradient([{}], 0)


def test_scatter_matches_dict_aggregation():
    rng = np.random.default_rng(1)
    ids = rng.integers(0, 6, size=(10, 3))
    g = rng.normal(size=(10, 4))
    rows, mean, counts = scatter_row_grads(ids, g, 10)
    per_rank = [{}, {}]
    for s in range(10):
        d = per_rank[s // 5]
        for r in ids[s]:
            d[int(r)] = d.get(int(r), 0) + g[s]
    ref = aggregate_group_gradient(per_rank, 10)
    assert rows.tolist() == sorted(ref)
    assert np.allclose(mean, [ref[r].vector for r in rows])
    assert counts.sum() == 30


def test_scatter_respects_row_range():
    ids = np.array([[0, 5], [9, 5]])
    rows, _, counts = scatter_row_grads(ids, np.ones((2, 2)), 2, lo=4, hi=9)
    assert rows.tolist() == [5] and counts.tolist() == [2]


def test_zero_gradient_changes_nothing():
    w = np.array([0.5, -1.0, 2.0], np.float32)
    w2, v2 = adagrad_row_step(w, 3.0, np.zeros(3), OptimizerConfig())
    assert np.array_equal(w2, w) and v2 == 3.0


def test_moment_scaled_step_hand_values():
    cfg4 = OptimizerConfig(eta=0.1, eps=1e-8, c=4.0)
    cfg1 = OptimizerConfig(eta=0.1, eps=1e-8, c=1.0)
    w = np.zeros(2, np.float32)
    w4, v4 = adagrad_row_step(w, 0.0, np.array([2.0, 0.0]), cfg4)
    w1, v1 = adagrad_row_step(w, 0.0, np.array([2.0, 0.0]), cfg1)
    assert v4 == v1 == 4.0
    assert w4[0] == np.float32(-0.2 / (1 + 1e-8))
    assert w1[0] == np.float32(-0.2 / (2 + 1e-8))
    assert float(w4[0]) / float(w1[0]) == pytest.approx(2.0, rel=1e-6)


def test_effective_lr_values():
    cfg = OptimizerConfig(eta=0.1, eps=1e-8, c=4.0)
    assert effective_lr(4.0, cfg) == pytest.approx(0.1)
    assert effective_lr(0.0, cfg) == 0.1 / 1e-8


@given(st.floats(1e-6, 1e6), st.floats(0.1, 10), st.floats(1.01, 3))
def test_effective_lr_increases_with_c(v, c, k):
    assert effective_lr(v, OptimizerConfig(c=c * k)) > effective_lr(v, OptimizerConfig(c=c))


def test_nonfinite_gradient_rejected():
    with pytest.raises(ValueError):
        adagrad_row_step(np.zeros(2), 0.0, np.array([np.nan, 0.0]), OptimizerConfig())
    with pytest.raises(ValueError):
        adagrad_row_step(np.zeros(2), -1.0, np.zeros(2), OptimizerConfig())


def test_sgd_examples():
    cfg = OptimizerConfig(eta=1.0, variant="sgd")
    assert sgd_row_step(np.array([1.0, 1.0]), np.array([1.0, 0.0]), cfg).tolist() == [0.0, 1.0]
    assert sgd_row_step(np.array([1.0, 1.0]), np.zeros(2), cfg).tolist() == [1.0, 1.0]


@given(st.lists(vec, min_size=1, max_size=20), st.floats(0.5, 8))
def test_moment_never_decreases_and_matches_formula(grads, c):
    cfg = OptimizerConfig(eta=0.05, c=c)
    w, v = np.zeros(3, np.float32), 0.0
    for g in grads:
        g = np.asarray(g)
        w_new, v_new = adagrad_row_step(w, v, g, cfg)
        assert v_new >= v
        assert v_new == np.float32(v + float(g @ g)) or math.isclose(v_new, v + float(g @ g), rel_tol=1e-6)
        lr = 0.05 / (math.sqrt(float(np.float32(v_new)) / c) + 1e-8)
        assert np.allclose(w_new, w - lr * g, rtol=1e-5, atol=1e-6)
        w, v = w_new, v_new


def test_rows_step_touches_only_listed_rows():
    W = np.ones((5, 2), np.float32)
    V = np.zeros(5, np.float32)
    adagrad_rows_step(W, V, np.array([1, 3]), np.ones((2, 2)), OptimizerConfig())
    assert np.array_equal(W[[0, 2, 4]], np.ones((3, 2))) and np.all(V[[0, 2, 4]] == 0)
    assert np.all(V[[1, 3]] == 2)


def test_c_one_matches_plain_adagrad_reference():
    # independent loop: the textbook row-wise AdaGrad rule
    rng = np.random.default_rng(3)
    cfg = OptimizerConfig(eta=0.07, c=1.0)
    w, v = np.zeros(4, np.float32), 0.0
    w_ref, v_ref = np.zeros(4), 0.0
    for _ in range(50):
        g = rng.normal(size=4)
        w, v = adagrad_row_step(w, v, g, cfg)
        v_ref += float(np.sum(g * g))
        w_ref = w_ref - 0.07 / (math.sqrt(v_ref) + 1e-8) * g
    assert np.allclose(w, w_ref, atol=1e-5)
    assert v == pytest.approx(v_ref, rel=1e-5)
