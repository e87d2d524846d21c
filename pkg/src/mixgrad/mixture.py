"""Diagonal mixture models, their densities, and the responsibility recursion.

A model holds K components over D dimensions. Component k is a product of
independent location-scale densities f^k_d with location ``mu[k, d]`` and
scale ``sigma[k, d]``. Read autoregressively, the mixture factorizes as

    f(x) = prod_d f_d(x_d | x_<d),   f_d(x_d | x_<d) = sum_k p^k_d f^k_d(x_d)

where p^k_d is the posterior probability of component k after observing
x_<d (``p^k_1 = pi_k``). Indices in this package are zero-based.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateSampleError, InvalidInputError
from .families import get_family

SIGMA_MIN = 1e-8
WEIGHT_MIN = 1e-10
F_MIN = 1e-300
LOG_F_MIN = math.log(F_MIN)


def normalize_weights(logits) -> np.ndarray:
    """Softmax with max-subtraction."""
    logits = np.asarray(logits, dtype=float)
    if logits.ndim != 1 or logits.size == 0:
        raise InvalidInputError("logits must be a non-empty 1-D array")
    if not np.all(np.isfinite(logits)):
        raise InvalidInputError("logits must be finite")
    e = np.exp(logits - logits.max())
    return e / e.sum()


def softmax_backward(logits, grad_pi) -> np.ndarray:
    """Pull a gradient with respect to softmax outputs back to the logits.

    Returns J^T grad_pi with J = diag(pi) - pi pi^T. Accepts a batch of
    gradients along leading axes of ``grad_pi``.
    """
    logits = np.asarray(logits, dtype=float)
    grad_pi = np.asarray(grad_pi, dtype=float)
    if grad_pi.shape[-1:] != logits.shape:
        raise InvalidInputError(
            f"grad_pi has trailing length {grad_pi.shape[-1:]} but logits has shape {logits.shape}"
        )
    if not np.all(np.isfinite(grad_pi)):
        raise InvalidInputError("grad_pi must be finite")
    pi = normalize_weights(logits)
    return pi * (grad_pi - (grad_pi @ pi)[..., None])


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MixtureModel:
    """K diagonal components over D dimensions with simplex weights.

    Prefer :meth:`create`, which accepts either weights or logits and
    broadcasts a single family name to every component.
    """

    weights: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    families: tuple[str, ...]
    logits: np.ndarray | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.asarray(self.mu, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise InvalidInputError("weights must be a non-empty 1-D array")
        K = w.size
        if mu.ndim != 2 or mu.shape[0] != K or mu.shape[1] == 0:
            raise InvalidInputError(f"mu must have shape (K={K}, D), got {mu.shape}")
        if sigma.shape != mu.shape:
            raise InvalidInputError(f"sigma shape {sigma.shape} does not match mu shape {mu.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise InvalidInputError("model parameters must be finite")
        if np.any(w < WEIGHT_MIN):
            raise InvalidInputError(f"all weights must be >= {WEIGHT_MIN:g}")
        if abs(w.sum() - 1.0) > 1e-12:
            raise InvalidInputError(f"weights must sum to 1 (sum is {w.sum()!r})")
        if np.any(sigma < SIGMA_MIN):
            raise InvalidInputError(f"all scales must be >= {SIGMA_MIN:g}")
        if len(self.families) != K:
            raise InvalidInputError(f"expected {K} family tags, got {len(self.families)}")
        for name in self.families:
            try:
                get_family(name)
            except ValueError as exc:
                raise InvalidInputError(str(exc)) from None
        object.__setattr__(self, "weights", _readonly(w))
        object.__setattr__(self, "mu", _readonly(mu))
        object.__setattr__(self, "sigma", _readonly(sigma))
        object.__setattr__(self, "families", tuple(self.families))
        if self.logits is not None:
            logits = _readonly(self.logits)
            if logits.shape != w.shape or not np.array_equal(normalize_weights(logits), w):
                raise InvalidInputError("weights must equal normalize_weights(logits)")
            object.__setattr__(self, "logits", logits)

    @classmethod
    def create(cls, mu, sigma, weights=None, logits=None, family: str | Sequence[str] = "gaussian"):
        mu = np.atleast_2d(np.asarray(mu, dtype=float))
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), mu.shape)
        if (weights is None) == (logits is None):
            raise InvalidInputError("pass exactly one of weights or logits")
        if logits is not None:
            logits = np.asarray(logits, dtype=float)
            weights = normalize_weights(logits)
        families = (family,) * mu.shape[0] if isinstance(family, str) else tuple(family)
        return cls(weights=weights, mu=mu, sigma=sigma, families=families, logits=logits)

    @property
    def K(self) -> int:
        return self.weights.size

    @property
    def D(self) -> int:
        return self.mu.shape[1]

    @property
    def unconstrained_logits(self) -> np.ndarray:
        """Stored logits, or log-weights when the model was built from weights."""
        return self.logits if self.logits is not None else np.log(self.weights)

    def replace(self, *, logits=None, mu=None, sigma=None) -> "MixtureModel":
        """Copy with some parameters swapped; new logits re-derive the weights."""
        if logits is None:
            weights, logits = self.weights, self.logits
        else:
            weights = normalize_weights(logits)
        return MixtureModel(
            weights=weights,
            mu=self.mu if mu is None else mu,
            sigma=self.sigma if sigma is None else sigma,
            families=self.families,
            logits=logits,
        )

    def permuted(self, perm) -> "MixtureModel":
        perm = np.asarray(perm)
        # softmax sums in a different order, so weights are re-derived from permuted logits
        logits = None if self.logits is None else self.logits[perm]
        return MixtureModel(
            weights=self.weights[perm] if logits is None else normalize_weights(logits),
            mu=self.mu[perm],
            sigma=self.sigma[perm],
            families=tuple(self.families[i] for i in perm),
            logits=logits,
        )

    def __eq__(self, other):
        if not isinstance(other, MixtureModel):
            return NotImplemented
        same_logits = (self.logits is None and other.logits is None) or (
            self.logits is not None and other.logits is not None and np.array_equal(self.logits, other.logits)
        )
        return (
            self.families == other.families
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.mu, other.mu)
            and np.array_equal(self.sigma, other.sigma)
            and same_logits
        )

    __hash__ = None

    @cached_property
    def _groups(self):
        names = sorted(set(self.families))
        if len(names) == 1:
            return [(get_family(names[0]), slice(None))]
        fams = np.array(self.families)
        return [(get_family(n), np.flatnonzero(fams == n)) for n in names]

    def std_eval(self, attr: str, z: np.ndarray) -> np.ndarray:
        """Apply a standardized family function along a trailing component axis."""
        groups = self._groups
        if len(groups) == 1:
            return getattr(groups[0][0], attr)(z)
        out = np.empty(np.shape(z))
        for fam, idx in groups:
            out[..., idx] = getattr(fam, attr)(z[..., idx])
        return out

    @cached_property
    def bracket_widths(self) -> np.ndarray:
        return np.array([get_family(n).bracket_width for n in self.families])


def component_eval(model: MixtureModel, k: int, d: int, x: float) -> tuple[float, float, float]:
    """Return (pdf, cdf, d log pdf / dx) of component ``k`` in dimension ``d`` at ``x``."""
    if not (0 <= k < model.K and 0 <= d < model.D):
        raise InvalidInputError(f"component {k} / dimension {d} out of range for K={model.K}, D={model.D}")
    if not math.isfinite(x):
        raise InvalidInputError("x must be finite")
    fam = get_family(model.families[k])
    s = model.sigma[k, d]
    z = (x - model.mu[k, d]) / s
    return float(np.exp(fam.logpdf(z)) / s), float(fam.cdf(z)), float(fam.dlogpdf(z) / s)


@dataclass(frozen=True, eq=False)
class ForwardTrace:
    """Per-dimension quantities at a sample, with optional leading batch axes.

    Shapes below are for a single sample; batches prepend axes.
    ``resp`` (D, K) holds p^k_d, ``cond_density`` (D,) holds f_d(x_d | x_<d),
    ``pdf``/``cdf``/``sf`` (D, K) are component evaluations at x_d and
    ``dlogpdf_dx`` (D, K) their log-density slopes. ``log_posterior`` (K,)
    is the responsibility after all D dimensions.
    """

    x: np.ndarray
    resp: np.ndarray
    log_resp: np.ndarray
    log_cond: np.ndarray
    log_pdf: np.ndarray
    cdf: np.ndarray
    sf: np.ndarray
    z: np.ndarray
    dlogpdf_dx: np.ndarray
    log_posterior: np.ndarray

    @property
    def cond_density(self) -> np.ndarray:
        return np.exp(self.log_cond)

    @property
    def pdf(self) -> np.ndarray:
        return np.exp(self.log_pdf)


def forward(model: MixtureModel, x) -> tuple[ForwardTrace, np.ndarray]:
    """Run the responsibility recursion without raising on degenerate rows.

    Returns the trace and an integer array (batch shape) holding the first
    dimension whose conditional density underflowed, or -1.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (model.D,):
        raise InvalidInputError(f"x must have trailing dimension D={model.D}, got shape {x.shape}")
    sigma_t = model.sigma.T
    z = (x[..., :, None] - model.mu.T) / sigma_t
    log_pdf = model.std_eval("logpdf", z) - np.log(sigma_t)
    dlogpdf = model.std_eval("dlogpdf", z) / sigma_t
    cdf = model.std_eval("cdf", z)
    sf = model.std_eval("sf", z)

    batch = x.shape[:-1]
    log_resp = np.empty(batch + (model.D, model.K))
    log_cond = np.empty(batch + (model.D,))
    lp = np.broadcast_to(np.log(model.weights), batch + (model.K,))
    for d in range(model.D):
        log_resp[..., d, :] = lp
        a = lp + log_pdf[..., d, :]
        lc = logsumexp(a, axis=-1)
        log_cond[..., d] = lc
        lp = a - lc[..., None]

    resp = np.exp(log_resp)
    resp[..., 0, :] = model.weights
    bad = ~(log_cond >= LOG_F_MIN)
    first_bad = np.where(bad.any(axis=-1), bad.argmax(axis=-1), -1)
    trace = ForwardTrace(
        x=x, resp=resp, log_resp=log_resp, log_cond=log_cond, log_pdf=log_pdf,
        cdf=cdf, sf=sf, z=z, dlogpdf_dx=dlogpdf, log_posterior=lp,
    )
    return trace, first_bad


def responsibilities_forward(model: MixtureModel, x) -> ForwardTrace:
    """Responsibilities, conditional densities and component evaluations at ``x``.

    ``x`` may be a single D-vector or a batch. Raises DegenerateSampleError
    if any conditional density is below F_MIN.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("x must be finite")
    trace, first_bad = forward(model, x)
    if np.any(first_bad >= 0):
        raise DegenerateSampleError(int(first_bad[first_bad >= 0].min()))
    return trace


def joint_pdf(model: MixtureModel, x):
    """sum_k pi_k prod_d f^k_d(x_d), evaluated in log space."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("x must be finite")
    return np.exp(log_joint_pdf(model, x))


def log_joint_pdf(model: MixtureModel, x):
    x = np.asarray(x, dtype=float)
    z = (x[..., :, None] - model.mu.T) / model.sigma.T
    log_comp = (model.std_eval("logpdf", z) - np.log(model.sigma.T)).sum(axis=-2)
    return logsumexp(np.log(model.weights) + log_comp, axis=-1)


# ---------------------------------------------------------------------------
# JSON serialization


def model_to_dict(model: MixtureModel) -> dict:
    doc = {"K": model.K, "D": model.D}
    if model.logits is not None:
        doc["logits"] = model.logits.tolist()
    else:
        doc["weights"] = model.weights.tolist()
    doc["components"] = [
        {"family": fam, "mu": model.mu[k].tolist(), "sigma": model.sigma[k].tolist()}
        for k, fam in enumerate(model.families)
    ]
    return doc


def model_from_dict(doc: dict) -> MixtureModel:
    try:
        comps = doc["components"]
        K, D = int(doc["K"]), int(doc["D"])
        if len(comps) != K:
            raise InvalidInputError(f"K={K} but {len(comps)} components given")
        mu = np.array([c["mu"] for c in comps], dtype=float)
        sigma = np.array([c["sigma"] for c in comps], dtype=float)
        if mu.shape != (K, D) or sigma.shape != (K, D):
            raise InvalidInputError(f"component arrays must have length D={D}")
        families = [c.get("family", "gaussian") for c in comps]
        weights, logits = doc.get("weights"), doc.get("logits")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InvalidInputError):
            raise
        raise InvalidInputError(f"malformed model document: {exc}") from None
    return MixtureModel.create(mu, sigma, weights=weights, logits=logits, family=families)


def load_model(path) -> MixtureModel:
    return model_from_dict(json.loads(Path(path).read_text()))


def dump_model(model: MixtureModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n")


def component_quantile(model: MixtureModel, k: int, d: int, u: float, upper_tail: bool = False) -> float:
    """Inverse of component_eval's cdf; with ``upper_tail`` the argument is a survival probability."""
    fam = get_family(model.families[k])
    z = fam.isf(u) if upper_tail else fam.ppf(u)
    return float(model.mu[k, d] + model.sigma[k, d] * z)
