"""Counter-based random bits.

Every draw is a pure function of ``(seed, lane, step, rank, slot, draw)``, so
results do not depend on execution order or on how work is split across
threads. The scalar part of the key is mixed once; the per-element part is
packed into one 64-bit counter (rank: 16 bits, slot: 28 bits, draw: 20 bits).
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = (np.uint64(s) for s in (30, 27, 31, 11))
_MASK = (1 << 64) - 1

RANK_BITS, SLOT_BITS, DRAW_BITS = 16, 28, 20


def _mix(z):
    # splitmix64 finalizer
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _mix_int(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def stream_key(seed: int, lane: int, step: int) -> np.uint64:
    h = _mix_int(int(seed) + 0x9E3779B97F4A7C15)
    h = _mix_int(h ^ _mix_int(int(lane) * 0x9E3779B97F4A7C15 + 1))
    h = _mix_int(h ^ _mix_int(int(step) * 0x9E3779B97F4A7C15 + 2))
    return np.uint64(h)


def pack(rank, slot, draw):
    """Pack (rank, slot, draw) counters into one uint64 array."""
    rank, slot, draw = (np.asarray(x, dtype=np.int64) for x in (rank, slot, draw))
    if (rank.size and rank.max(initial=0) >= 1 << RANK_BITS) or \
            (slot.size and slot.max(initial=0) >= 1 << SLOT_BITS) or \
            (draw.size and draw.max(initial=0) >= 1 << DRAW_BITS):
        raise ValueError("random counter out of range")
    return ((rank.astype(np.uint64) << np.uint64(SLOT_BITS + DRAW_BITS))
            | (slot.astype(np.uint64) << np.uint64(DRAW_BITS)) | draw.astype(np.uint64))


def bits(key: np.uint64, counter) -> np.ndarray:
    with np.errstate(over="ignore"):
        return _mix(key ^ _mix(np.asarray(counter, dtype=np.uint64) * _GOLDEN + _GOLDEN))


def uniform_from(key: np.uint64, counter) -> np.ndarray:
    """Uniform floats in [0, 1) with 53 random bits."""
    return (bits(key, counter) >> _S11).astype(np.float64) * (2.0 ** -53)


def normal_from(key: np.uint64, counter) -> np.ndarray:
    """Standard normals via Box-Muller on counters 2c and 2c + 1."""
    c = np.asarray(counter, dtype=np.uint64) << np.uint64(1)
    u1 = uniform_from(key, c)
    u2 = uniform_from(key, c | np.uint64(1))
    return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)


def uniform(seed, lane, step, rank, slot, draw=0):
    return uniform_from(stream_key(seed, lane, step), pack(rank, slot, draw))


def normal(seed, lane, step, rank, slot, draw=0):
    return normal_from(stream_key(seed, lane, step), pack(rank, slot, draw))
