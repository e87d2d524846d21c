"""Exact samplers for diagonal mixtures.

Two routes draw from the same law: ancestral sampling (pick a component,
then sample each dimension from it) and the multivariate quantile transform,
which inverts the conditional CDFs F_d(. | x_<d) one dimension at a time so
that the sample is a deterministic function of a uniform vector u. The
second route is what makes common-random-number finite differences possible.

Randomness comes from Philox, a counter-based generator; independent streams
are derived from one 64-bit seed through ``SeedSequence`` spawn keys.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidInputError, LowAcceptanceError, NumericFailureError
from .mixture import MixtureModel

BISECTION_WIDTH = 1e-6
INVERSION_TOL = 1e-12
MAX_NEWTON_ITERS = 60
DEFAULT_MAX_ATTEMPTS = 10**6


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator for the given seed and spawn-key path."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


def open_uniform(rng: np.random.Generator, size) -> np.ndarray:
    """Uniforms in the open interval (0, 1) from the top 53 bits of raw 64-bit draws."""
    n = int(np.prod(size))
    raw = rng.bit_generator.random_raw(n)
    return (((raw >> np.uint64(11)).astype(float) + 0.5) * 2.0**-53).reshape(size)


@dataclass(frozen=True)
class UniformDraw:
    """A D-vector (or batch of them) of open-interval uniforms and the seed that made it."""

    u: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        if not np.all((u > 0.0) & (u < 1.0)):
            raise InvalidInputError("uniform draws must lie strictly inside (0, 1)")
        object.__setattr__(self, "u", u)

    @classmethod
    def draw(cls, D: int, seed: int, n: int | None = None) -> "UniformDraw":
        shape = (D,) if n is None else (n, D)
        return cls(open_uniform(make_rng(seed), shape), seed)


def _categorical(weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Component indices by inverting the cumulative weights; weights along the last axis."""
    cw = np.cumsum(weights, axis=-1)
    if cw.ndim == 1:
        k = np.searchsorted(cw, u, side="right")
    else:
        k = (u[:, None] >= cw).sum(axis=-1)
    return np.minimum(k, weights.shape[-1] - 1)


def sample_ancestral(model: MixtureModel, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Draw k ~ Categorical(pi), then x_d from component k in every dimension."""
    m = 1 if n is None else int(n)
    u = open_uniform(rng, (m, model.D + 1))
    k = _categorical(model.weights, u[:, 0])
    z_all = model.std_eval("ppf", np.broadcast_to(u[:, 1:, None], (m, model.D, model.K)))
    z = np.take_along_axis(z_all, k[:, None, None], axis=-1)[..., 0]
    x = model.mu[k] + model.sigma[k] * z
    return x[0] if n is None else x


def conditional_cdf(resp_d, model: MixtureModel, d: int, x):
    """F_d(x | x_<d) = sum_k p^k_d F^k_d(x) for responsibilities ``resp_d``."""
    resp_d = np.asarray(resp_d, dtype=float)
    x = np.asarray(x, dtype=float)
    z = (x[..., None] - model.mu[:, d]) / model.sigma[:, d]
    return (resp_d * model.std_eval("cdf", z)).sum(axis=-1)


def conditional_sf(resp_d, model: MixtureModel, d: int, x):
    resp_d = np.asarray(resp_d, dtype=float)
    x = np.asarray(x, dtype=float)
    z = (x[..., None] - model.mu[:, d]) / model.sigma[:, d]
    return (resp_d * model.std_eval("sf", z)).sum(axis=-1)


def inversion_bracket(model: MixtureModel, d: int) -> tuple[float, float]:
    mu_d = model.mu[:, d]
    half = model.bracket_widths.max() * model.sigma[:, d].max()
    return float(mu_d.min() - half), float(mu_d.max() + half)


def _invert_conditional(model: MixtureModel, d: int, resp_d: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Solve F_d(x | x_<d) = u for a batch; ``resp_d`` is (n, K), ``u`` is (n,).

    The upper half is solved on the survival function so that 1 - u keeps
    full relative precision in the right tail.
    """
    mu_d, s_d = model.mu[:, d], model.sigma[:, d]
    upper = u > 0.5
    target = np.where(upper, 1.0 - u, u)

    sign = np.where(upper, -1.0, 1.0)[:, None]

    def residual(x):
        # cdf(-z) is the survival function of a symmetric standardized family
        z = sign * (x[:, None] - mu_d) / s_d
        G = (resp_d * model.std_eval("cdf", z)).sum(axis=-1)
        return sign[:, 0] * (G - target)

    def density(x):
        z = (x[:, None] - mu_d) / s_d
        return (resp_d * np.exp(model.std_eval("logpdf", z)) / s_d).sum(axis=-1)

    lo_b, hi_b = inversion_bracket(model, d)
    lo = np.full(u.shape, lo_b)
    hi = np.full(u.shape, hi_b)
    if np.any(residual(lo) > 0.0) or np.any(residual(hi) < 0.0):
        raise NumericFailureError(f"quantile not bracketed in [{lo_b:.6g}, {hi_b:.6g}] at dimension {d}")

    n_bisect = max(0, math.ceil(math.log2((hi_b - lo_b) / BISECTION_WIDTH)))
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        pos = residual(mid) > 0.0
        hi = np.where(pos, mid, hi)
        lo = np.where(pos, lo, mid)

    x = 0.5 * (lo + hi)
    r = residual(x)
    active = np.ones(u.shape, dtype=bool)
    for _ in range(MAX_NEWTON_ITERS):
        with np.errstate(divide="ignore", invalid="ignore"):
            step = r / density(x)
        x_new = x - step
        outside = ~((x_new >= lo) & (x_new <= hi))
        x_new = np.where(outside, 0.5 * (lo + hi), x_new)
        ulp = 4.0 * np.finfo(float).eps * np.maximum(np.abs(x), 1.0)
        converged = (~outside & (np.abs(step) <= ulp)) | (hi - lo <= ulp) | (r == 0.0)
        active &= ~converged
        if not active.any():
            break
        x = np.where(active, x_new, x)
        r_new = residual(x)
        r = np.where(active, r_new, r)
        hi = np.where(active & (r > 0.0), x, hi)
        lo = np.where(active & (r < 0.0), x, lo)
    if np.any(np.abs(r) > INVERSION_TOL):
        worst = float(np.abs(r).max())
        raise NumericFailureError(f"quantile inversion residual {worst:.3g} at dimension {d}")
    return x


def sample_quantile_transform(model: MixtureModel, u) -> np.ndarray:
    """Map uniforms to a sample by inverting each conditional CDF in turn.

    ``u`` is a UniformDraw or an array of shape (D,) or (n, D). The result
    is deterministic in u and has the same shape.
    """
    if isinstance(u, UniformDraw):
        u = u.u
    u = np.asarray(u, dtype=float)
    single = u.ndim == 1
    u2 = np.atleast_2d(u)
    if u2.shape[1] != model.D:
        raise InvalidInputError(f"u must have trailing dimension D={model.D}")
    if not np.all((u2 > 0.0) & (u2 < 1.0)):
        raise InvalidInputError("uniform draws must lie strictly inside (0, 1)")
    n = u2.shape[0]
    x = np.empty_like(u2)
    lp = np.broadcast_to(np.log(model.weights), (n, model.K))
    for d in range(model.D):
        resp_d = np.exp(lp)
        x[:, d] = _invert_conditional(model, d, resp_d, u2[:, d])
        z = (x[:, d, None] - model.mu[:, d]) / model.sigma[:, d]
        a = lp + model.std_eval("logpdf", z) - np.log(model.sigma[:, d])
        lp = a - logsumexp(a, axis=-1, keepdims=True)
    return x[0] if single else x


@dataclass(frozen=True)
class TruncatedSampleBatch:
    """Accepted draws from f_d(t | x_<d) restricted to t <= upper."""

    d: int
    upper: float
    resp: np.ndarray
    samples: np.ndarray
    attempts: int

    @property
    def acceptance_rate(self) -> float:
        return self.samples.size / self.attempts if self.attempts else 0.0


def _draw_conditional(model: MixtureModel, d: int, resp_d: np.ndarray, rng, m: int) -> np.ndarray:
    u = open_uniform(rng, (m, 2))
    k = _categorical(resp_d, u[:, 0])
    z_all = model.std_eval("ppf", np.broadcast_to(u[:, 1:2], (m, model.K)))
    z = z_all[np.arange(m), k]
    return model.mu[k, d] + model.sigma[k, d] * z


def sample_truncated(
    model: MixtureModel,
    d: int,
    resp_d,
    upper: float,
    rng: np.random.Generator,
    n: int,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
) -> TruncatedSampleBatch:
    """Rejection-sample ``n`` draws of the conditional density truncated to t <= upper.

    ``max_attempts`` is the budget per requested sample. Raises
    LowAcceptanceError when the first ``max_attempts`` draws are all
    rejected, or the whole budget runs out.
    """
    if not math.isfinite(upper):
        raise InvalidInputError("upper bound must be finite")
    if max_attempts < 1 or n < 1:
        raise InvalidInputError("n and max_attempts must be >= 1")
    resp_d = np.asarray(resp_d, dtype=float)
    p_accept = float(conditional_cdf(resp_d, model, d, upper))
    budget = max_attempts * n
    accepted: list[np.ndarray] = []
    n_acc = 0
    attempts = 0
    while n_acc < n:
        if attempts >= budget or (n_acc == 0 and attempts >= max_attempts):
            raise LowAcceptanceError(p_accept, attempts)
        need = n - n_acc
        m = int(min(budget - attempts, 1 << 20, math.ceil(1.1 * need / max(p_accept, 1e-9)) + 16))
        t = _draw_conditional(model, d, resp_d, rng, m)
        ok = np.flatnonzero(t <= upper)
        if ok.size >= need:
            accepted.append(t[ok[:need]])
            attempts += int(ok[need - 1]) + 1
            n_acc = n
        else:
            accepted.append(t[ok])
            attempts += m
            n_acc += ok.size
    return TruncatedSampleBatch(d=d, upper=float(upper), resp=resp_d, samples=np.concatenate(accepted), attempts=attempts)
