"""Monte Carlo and closed-form checks of second-moment growth under group-level gradients.

Model: per-sample gradients are i.i.d. N(mu, sigma^2 I). A group averages b
samples; the single-replica baseline averages M * b. Group means are drawn
directly as mu + sigma / sqrt(b) * z, which has the same distribution as
averaging b Gaussian samples.

``recommend_c`` turns the expected increment ratio into a moment scaling
factor. That formula is our own instantiation: it is clamped to (0, M], grows
with the noise-to-signal ratio, and is 1 for noise-free gradients.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

BLOCK = 10_000


@dataclass(frozen=True, eq=False)
class GradientNoiseModel:
    mu: np.ndarray
    sigma: float
    b: int

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.b < 1:
            raise ValueError("per-group batch must be >= 1")

    @classmethod
    def isotropic(cls, mu_norm: float, sigma: float, dim: int, b: int) -> "GradientNoiseModel":
        mu = np.full(dim, mu_norm / math.sqrt(dim)) if dim else np.zeros(0)
        return cls(mu, float(sigma), int(b))

    @property
    def dim(self) -> int:
        return int(np.asarray(self.mu).shape[0])

    @property
    def signal(self) -> float:
        return float(np.dot(self.mu, self.mu))

    @property
    def noise(self) -> float:
        """Expected squared norm of one group's noise: dim * sigma^2 / b."""
        return self.dim * self.sigma ** 2 / self.b


@dataclass(frozen=True)
class IncrementReport:
    ratio_estimate: float
    std_error: float
    trials: int
    M: int

    def csv_header(self) -> str:
        return "ratio_estimate,std_error,trials,groups"

    def csv_row(self) -> str:
        return f"{self.ratio_estimate:.9g},{self.std_error:.9g},{self.trials},{self.M}"


def _block_noise(model, M, seed, block, n):
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(M), int(block)]))
    return rng.standard_normal((n, M, model.dim)) * (model.sigma / math.sqrt(model.b))


def _block_stats(model, M, seed, block, n):
    e = _block_noise(model, M, seed, block, n)
    mu = np.asarray(model.mu, dtype=np.float64)
    g_group = mu + e[:, 0, :]
    g_full = mu + e.sum(axis=1) / M
    a = np.einsum("ij,ij->i", g_group, g_group)
    f = np.einsum("ij,ij->i", g_full, g_full)
    return np.array([a.sum(), f.sum(), (a * a).sum(), (f * f).sum(), (a * f).sum()])


def _blocks(trials):
    out, start = [], 0
    while start < trials:
        out.append(min(BLOCK, trials - start))
        start += BLOCK
    return out


def estimate_increment_ratio(model: GradientNoiseModel, M: int, trials: int, seed: int = 0,
                             workers: int = 1) -> IncrementReport:
    """Monte Carlo E||g_group||^2 / E||g_full||^2 with a delta-method standard error.

    Trials are generated in fixed blocks keyed by (seed, M, block), so the result
    does not depend on ``workers``.
    """
    if M < 1 or trials < 1:
        raise ValueError("need M >= 1 and trials >= 1")
    sizes = _blocks(trials)
    jobs = [(model, M, seed, i, n) for i, n in enumerate(sizes)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(lambda j: _block_stats(*j), jobs))
    else:
        parts = [_block_stats(*j) for j in jobs]
    total = np.zeros(5)
    for p in parts:
        total += p
    n = float(trials)
    A, B = total[0] / n, total[1] / n
    if B == 0.0:
        return IncrementReport(1.0, 0.0, trials, M)
    ratio = A / B
    var_a = total[2] / n - A * A
    var_f = total[3] / n - B * B
    cov = total[4] / n - A * B
    var_r = max(var_a - 2 * ratio * cov + ratio * ratio * var_f, 0.0) / (n * B * B)
    return IncrementReport(float(ratio), float(math.sqrt(var_r)), trials, M)


def per_group_increments(model: GradientNoiseModel, M: int, trials: int, seed: int = 0) -> np.ndarray:
    """(trials, M) matrix of ||g_m||^2 for i.i.d. group batches."""
    rows = []
    for i, n in enumerate(_blocks(trials)):
        g = np.asarray(model.mu, dtype=np.float64) + _block_noise(model, M, seed, i, n)
        rows.append(np.einsum("tmd,tmd->tm", g, g))
    return np.concatenate(rows, axis=0)


def closed_form_ratio(model: GradientNoiseModel, M: int) -> float:
    """(|mu|^2 + s) / (|mu|^2 + s / M) with s = dim * sigma^2 / b; lies in [1, M]."""
    signal, noise = model.signal, model.noise
    if noise == 0.0 or M == 1:
        return 1.0
    if signal == 0.0:
        return float(M)
    return (signal + noise) / (signal + noise / M)


def recommend_c(model: GradientNoiseModel, M: int) -> float:
    """Moment scaling factor matching the expected moment growth, clamped to (0, M]."""
    r = closed_form_ratio(model, M)
    return float(min(max(r, np.nextafter(0.0, 1.0)), M))
