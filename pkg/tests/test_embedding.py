import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sparse2d.embedding import (EmbeddingTable, apply_row_update, init_table, load_table, lookup_and_pool,
                                save_table, table_from_bytes, table_to_bytes)
from sparse2d.optimizer import OptimizerConfig, effective_lr


def test_init_is_deterministic_and_bounded():
    a = init_table(3, 100, 16, seed=5)
    b = init_table(3, 100, 16, seed=5)
    assert table_to_bytes(a) == table_to_bytes(b)
    assert np.all(a.moments == 0)
    assert np.all(np.abs(a.weights) <= 0.25)
    assert a.weights.dtype == np.float32
    assert table_to_bytes(init_table(4, 100, 16, seed=5)) != table_to_bytes(a)


def test_init_rejects_empty():
    with pytest.raises(ValueError):
        init_table(0, 0, 4, 1)


def _two_rows():
    w = np.array([[1, 0], [0, 2]], dtype=np.float32)
    return EmbeddingTable(0, w, np.zeros(2, np.float32))


def test_pool_hand_examples():
    t = _two_rows()
    shards = [t.full_shard()]
    out = lookup_and_pool(shards, [[0, 1], [1], [1, 1], []])
    assert np.array_equal(out, [[1, 2], [0, 2], [0, 4], [0, 0]])


def test_pool_across_shards():
    t = init_table(0, 10, 4, 1)
    out = lookup_and_pool([t.shard(0, 5), t.shard(5, 10)], [[2, 7]])
    assert np.allclose(out[0], t.weights[2].astype(float) + t.weights[7])


def test_pool_out_of_range_names_table_and_id():
    t = init_table(7, 10, 4, 1)
    with pytest.raises(KeyError, match=r"7.*12|12.*7"):
        lookup_and_pool([t.shard(0, 10)], [[12]])


@given(st.floats(-4, 4, allow_nan=False), st.lists(st.integers(0, 9), max_size=6))
def test_pool_is_linear_in_weights(alpha, ids):
    t = init_table(0, 10, 4, 2)
    scaled = EmbeddingTable(0, t.weights.astype(np.float64) * alpha, t.moments)
    base = lookup_and_pool([t.full_shard()], [ids])
    assert np.allclose(lookup_and_pool([scaled.full_shard()], [ids]), alpha * base, atol=1e-9)


def test_row_update_is_sparse():
    t = init_table(0, 8, 4, 3)
    before = t.weights.copy()
    apply_row_update(t.full_shard(), 3, np.ones(4, np.float32), 2.0)
    changed = np.any(t.weights != before, axis=1)
    assert changed.tolist() == [r == 3 for r in range(8)]
    assert t.moments[3] == 2.0


def test_row_update_noop():
    t = init_table(0, 8, 4, 3)
    before = table_to_bytes(t)
    apply_row_update(t.full_shard(), 2, np.zeros(4, np.float32), float(t.moments[2]))
    assert table_to_bytes(t) == before


def test_row_update_applies_adagrad_step():
    t = EmbeddingTable(0, np.zeros((4, 3), np.float32), np.ones(4, np.float32))
    cfg = OptimizerConfig(eta=0.1, eps=0.0 + 1e-300, c=1.0)
    g = np.array([1.0, 0.0, 0.0])
    delta = -effective_lr(1.0, cfg) * g
    apply_row_update(t.shard(0, 4), 1, delta, 1.0)
    assert t.weights[1, 0] == np.float32(-0.1)


def test_row_update_errors():
    t = init_table(0, 8, 4, 3)
    with pytest.raises(ValueError):
        apply_row_update(t.full_shard(), 1, np.zeros(4), -1.0)
    with pytest.raises(KeyError):
        apply_row_update(t.shard(0, 4), 6, np.zeros(4), 0.0)


def test_checkpoint_roundtrip(tmp_path):
    t = init_table(9, 33, 5, 4)
    t.moments[:] = np.linspace(0, 1, 33, dtype=np.float32)
    save_table(t, tmp_path / "t.bin")
    back = load_table(tmp_path / "t.bin")
    assert back.table_id == 9 and np.array_equal(back.weights, t.weights) and np.array_equal(back.moments, t.moments)
    blob = table_to_bytes(t)
    assert blob[:4] == b"EMBT"
    assert len(blob) == 20 + 33 * 5 * 4 + 33 * 4


def test_checkpoint_rejects_garbage():
    with pytest.raises(ValueError):
        table_from_bytes(b"XXXX" + bytes(32))
