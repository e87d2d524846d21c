"""Monte-Carlo driver and the report it produces.

Samples are generated in fixed-size chunks; chunk ``i`` always draws from
the Philox stream ``(seed, i)``, so the sample set does not depend on how
many workers process the chunks. Per-chunk (count, mean, M2) triples are
merged by a pairwise tree in chunk order, which keeps estimates
bit-identical for a given seed regardless of worker count.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateRateError, InvalidInputError, InvalidLossError
from .mixture import MixtureModel, forward
from .sampling import make_rng, sample_ancestral

CHUNK_SIZE = 4096
MAX_DEGENERATE_RATE = 1e-4
_MAX_REDRAW_ROUNDS = 64


@dataclass
class EstimatorReport:
    """Mean, unbiased per-sample variance and standard error of a gradient estimate."""

    labels: list[str]
    mean: np.ndarray
    variance: np.ndarray
    stderr: np.ndarray
    n: int
    seed: int
    estimator: str = "pathwise"
    workers: int = 1
    n_degenerate: int = 0
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)

    def __getitem__(self, label: str) -> float:
        return float(self.mean[self.labels.index(label)])

    def select(self, labels: Sequence[str]) -> "EstimatorReport":
        idx = [self.labels.index(lab) for lab in labels]
        return EstimatorReport(
            labels=list(labels), mean=self.mean[idx], variance=self.variance[idx], stderr=self.stderr[idx],
            n=self.n, seed=self.seed, estimator=self.estimator, workers=self.workers,
            n_degenerate=self.n_degenerate, wall_time=self.wall_time,
        )

    def to_dict(self, include_wall_time: bool = True) -> dict:
        doc = {
            "estimator": self.estimator,
            "n": self.n,
            "seed": self.seed,
            "workers": self.workers,
            "n_degenerate": self.n_degenerate,
            "labels": list(self.labels),
            "mean": self.mean.tolist(),
            "variance": self.variance.tolist(),
            "stderr": self.stderr.tolist(),
        }
        doc.update(self.extra)
        if include_wall_time:
            doc["wall_time"] = self.wall_time
        return doc


def _merge(a, b):
    na, ma, Ma = a
    nb, mb, Mb = b
    n = na + nb
    delta = mb - ma
    return n, ma + delta * (nb / n), Ma + Mb + delta * delta * (na * nb / n)


def _pairwise(stats):
    while len(stats) > 1:
        merged = [_merge(stats[i], stats[i + 1]) for i in range(0, len(stats) - 1, 2)]
        if len(stats) % 2:
            merged.append(stats[-1])
        stats = merged
    return stats[0]


def chunk_sizes(n: int, chunk_size: int = CHUNK_SIZE) -> list[int]:
    full, rest = divmod(n, chunk_size)
    return [chunk_size] * full + ([rest] if rest else [])


def run_chunks(
    per_chunk: Callable[[np.random.Generator, int], tuple[np.ndarray, int]],
    n: int,
    seed: int,
    labels: Sequence[str],
    *,
    estimator: str,
    workers: int = 1,
    chunk_size: int = CHUNK_SIZE,
    max_degenerate_rate: float = MAX_DEGENERATE_RATE,
) -> EstimatorReport:
    """Evaluate ``per_chunk(rng, m) -> (values (m, P), n_degenerate)`` over n samples."""
    if n < 1:
        raise InvalidInputError("sample count must be >= 1")
    if workers < 1:
        raise InvalidInputError("workers must be >= 1")
    sizes = chunk_sizes(n, chunk_size)
    t0 = time.perf_counter()

    def job(i):
        values, n_bad = per_chunk(make_rng(seed, i), sizes[i])
        m = values.shape[0]
        mean = values.mean(axis=0)
        M2 = ((values - mean) ** 2).sum(axis=0)
        return (m, mean, M2), n_bad

    if workers == 1:
        results = [job(i) for i in range(len(sizes))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, range(len(sizes))))
    n_bad = sum(r[1] for r in results)
    if n_bad > max_degenerate_rate * n:
        raise DegenerateRateError(n_bad, n, max_degenerate_rate)
    total, mean, M2 = _pairwise([r[0] for r in results])
    variance = M2 / (total - 1) if total > 1 else np.zeros_like(M2)
    return EstimatorReport(
        labels=list(labels),
        mean=np.asarray(mean, dtype=float),
        variance=variance,
        stderr=np.sqrt(variance / total),
        n=int(total),
        seed=int(seed),
        estimator=estimator,
        workers=workers,
        n_degenerate=int(n_bad),
        wall_time=time.perf_counter() - t0,
    )


def draw_valid(model: MixtureModel, rng: np.random.Generator, m: int):
    """Ancestral samples whose recursion stays above the density floor.

    Degenerate draws are replaced by fresh draws from the same stream.
    Returns (x, trace, number of draws replaced).
    """
    x = sample_ancestral(model, rng, m)
    n_bad = 0
    for _ in range(_MAX_REDRAW_ROUNDS):
        trace, first_bad = forward(model, x)
        bad = np.flatnonzero((first_bad >= 0) | ~np.all(np.isfinite(x), axis=-1))
        if bad.size == 0:
            return x, trace, n_bad
        n_bad += bad.size
        x = x.copy()
        x[bad] = sample_ancestral(model, rng, bad.size)
    raise DegenerateRateError(n_bad, m, MAX_DEGENERATE_RATE)


def checked_loss_grad(loss, x: np.ndarray) -> np.ndarray:
    g = np.asarray(loss.grad(x), dtype=float)
    if g.shape != x.shape:
        raise InvalidLossError(f"loss gradient has shape {g.shape}, expected {x.shape}")
    if not np.all(np.isfinite(g)):
        raise InvalidLossError("loss gradient returned non-finite values")
    return g


def checked_loss_value(loss, x: np.ndarray) -> np.ndarray:
    v = np.asarray(loss.value(x), dtype=float)
    if v.shape != x.shape[:-1]:
        raise InvalidLossError(f"loss value has shape {v.shape}, expected {x.shape[:-1]}")
    if not np.all(np.isfinite(v)):
        raise InvalidLossError("loss returned non-finite values")
    return v
