"""Dense parts of the toy DLRM and its forward/backward pass.

dense features -> [Linear, ReLU, Linear] -> dense embedding (D)
concat(pooled embeddings, dense embedding) -> [Linear, ReLU, Linear] -> logit

Dense parameters are float64 and replicated on every rank.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

PARAM_NAMES = ("W1", "b1", "W2", "b2", "U1", "c1", "u2", "c2")
_DENSE_MAGIC = b"DNS1"


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 16
    dense_hidden: int = 32
    over_hidden: int = 64
    init_seed: int = 1

    def __post_init__(self):
        if min(self.dim, self.dense_hidden, self.over_hidden) < 1:
            raise ValueError("model dimensions must be >= 1")


def init_dense(cfg: ModelConfig, num_features: int, dense_dim: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.init_seed, 0xD3E5]))
    D, h1, h2 = cfg.dim, cfg.dense_hidden, cfg.over_hidden
    z_in = (num_features + 1) * D

    def he(fan_in, shape):
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

    return {
        "W1": he(max(dense_dim, 1), (dense_dim, h1)), "b1": np.zeros(h1),
        "W2": he(h1, (h1, D)) * 0.5, "b2": np.zeros(D),
        "U1": he(z_in, (z_in, h2)), "c1": np.zeros(h2),
        "u2": he(h2, (h2,)) * 0.5, "c2": np.zeros(()),
    }


def forward(params, pooled, dense):
    """Logits for a batch. ``pooled`` is a list of (B, D) float64 arrays, one per feature."""
    x = np.asarray(dense, dtype=np.float64)
    a1 = x @ params["W1"] + params["b1"]
    h1 = np.maximum(a1, 0.0)
    de = h1 @ params["W2"] + params["b2"]
    z = np.concatenate([*pooled, de], axis=1)
    a2 = z @ params["U1"] + params["c1"]
    h2 = np.maximum(a2, 0.0)
    logits = h2 @ params["u2"] + params["c2"]
    return logits, (x, a1, h1, z, a2, h2)


def backward(params, cache, dlogit, num_features: int, dim: int):
    """Gradients of sum(dlogit * logit): dense parameter sums and per-feature d(pooled)."""
    x, a1, h1, z, a2, h2 = cache
    grads = {"u2": h2.T @ dlogit, "c2": np.asarray(dlogit.sum())}
    dh2 = np.outer(dlogit, params["u2"])
    da2 = dh2 * (a2 > 0)
    grads["U1"] = z.T @ da2
    grads["c1"] = da2.sum(axis=0)
    dz = da2 @ params["U1"].T
    d_pooled = [dz[:, f * dim:(f + 1) * dim] for f in range(num_features)]
    dde = dz[:, num_features * dim:]
    grads["W2"] = h1.T @ dde
    grads["b2"] = dde.sum(axis=0)
    da1 = (dde @ params["W2"].T) * (a1 > 0)
    grads["W1"] = x.T @ da1
    grads["b1"] = da1.sum(axis=0)
    return grads, d_pooled


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def log_loss_from_logits(logits, labels) -> np.ndarray:
    """Per-sample -[y log p + (1 - y) log(1 - p)] computed stably from logits."""
    y = np.asarray(labels, dtype=np.float64)
    return np.logaddexp(0.0, logits) - y * logits


def dense_to_bytes(params) -> bytes:
    parts = [_DENSE_MAGIC, struct.pack("<I", len(PARAM_NAMES))]
    for name in PARAM_NAMES:
        a = np.asarray(params[name], dtype="<f8")  # keeps 0-d arrays 0-d
        parts.append(struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.tobytes())
    return b"".join(parts)


def dense_from_bytes(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != _DENSE_MAGIC:
        raise ValueError("not a dense-parameter checkpoint")
    (count,), off = struct.unpack_from("<I", blob, 4), 8
    out = {}
    for name in PARAM_NAMES[:count]:
        (ndim,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
        off += 8 * n
    return out
