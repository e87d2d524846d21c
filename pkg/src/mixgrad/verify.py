"""Independent oracles for the pathwise estimators.

* ``fd_pathwise``: central finite differences of the quantile transform with
  the uniforms held fixed (common random numbers).
* ``quadrature_expectation`` / ``quadrature_fd_grad``: adaptive cubature of
  E[g] for D <= 2 and finite differences of it.
* ``score_function_grad``: the likelihood-ratio estimator E[g d log f / dtheta].

None of these touch the derivative recursions; they share only density
evaluation and sampling with the code under test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import cubature

from .errors import AccuracyFailureError, InvalidInputError
from .generic_grad import ParameterSelector, expand_params
from .mixture import MixtureModel, joint_pdf
from .reports import EstimatorReport, checked_loss_value, draw_valid, run_chunks
from .sampling import UniformDraw, sample_quantile_transform

FD_EPS = 1e-5
QUAD_ATOL = 1e-9
QUAD_FD_EPS = 1e-3
# integration box half-width in scale units
_QUAD_WIDTH = {"gaussian": 10.0, "logistic": 40.0}


def perturbed_model(model: MixtureModel, theta: ParameterSelector, step: float) -> MixtureModel:
    """Shift ``theta`` by ``step`` in its unconstrained coordinate.

    logit -> logit; weight -> pi_j + step followed by renormalization;
    location -> mu; scale and log_scale -> log(sigma).
    """
    if theta.kind == "logit":
        logits = model.unconstrained_logits.copy()
        logits[theta.k] += step
        return model.replace(logits=logits)
    if theta.kind == "weight":
        w = model.weights.copy()
        w[theta.k] += step
        return model.replace(logits=np.log(w / w.sum()))
    if theta.kind == "location":
        mu = model.mu.copy()
        mu[theta.k, theta.d] += step
        return model.replace(mu=mu)
    if theta.kind in ("scale", "log_scale"):
        log_sigma = np.log(model.sigma)
        log_sigma[theta.k, theta.d] += step
        return model.replace(sigma=np.exp(log_sigma))
    raise InvalidInputError(
        f"{theta.kind} has no finite-difference oracle: raw weight derivatives are not a derivative "
        "along the simplex; use 'weight' or 'logit'"
    )


def _chain_back(model: MixtureModel, theta: ParameterSelector, value):
    if theta.kind == "scale":
        return value / model.sigma[theta.k, theta.d]
    return value


def fd_pathwise(model: MixtureModel, u, theta, eps: float = FD_EPS) -> np.ndarray:
    """(Q_{theta+eps}(u) - Q_{theta-eps}(u)) / (2 eps) with common u."""
    if not 1e-8 <= eps <= 1e-3:
        raise InvalidInputError("eps must lie in [1e-8, 1e-3]")
    theta = expand_params(model, [theta])[0]
    if isinstance(u, UniformDraw):
        u = u.u
    hi = sample_quantile_transform(perturbed_model(model, theta, eps), u)
    lo = sample_quantile_transform(perturbed_model(model, theta, -eps), u)
    return _chain_back(model, theta, (hi - lo) / (2.0 * eps))


def quadrature_box(model: MixtureModel) -> tuple[np.ndarray, np.ndarray]:
    width = max(_QUAD_WIDTH[f] for f in model.families)
    half = width * model.sigma.max(axis=0)
    return model.mu.min(axis=0) - half, model.mu.max(axis=0) + half


def quadrature_expectation_with_error(model: MixtureModel, g, atol: float = QUAD_ATOL, max_subdivisions: int = 20000):
    """Return (estimate, error bound) for integral g(x) f(x) dx over the box."""
    if model.D > 2:
        raise InvalidInputError("quadrature oracle supports D <= 2 only")
    a, b = quadrature_box(model)
    value = g if callable(g) else g.value

    def integrand(x):
        return value(x) * joint_pdf(model, x)

    res = cubature(integrand, a, b, rtol=0.0, atol=atol, max_subdivisions=max_subdivisions)
    if res.status != "converged" or not res.error <= atol:
        raise AccuracyFailureError(float(res.error), atol)
    return float(res.estimate), float(res.error)


def quadrature_expectation(model: MixtureModel, g, atol: float = QUAD_ATOL) -> float:
    """Adaptive cubature of E_f[g] for D <= 2, to absolute tolerance ``atol``."""
    return quadrature_expectation_with_error(model, g, atol)[0]


@dataclass
class OracleValue:
    """Deterministic reference values with an error bound per coordinate."""

    labels: list[str]
    value: np.ndarray
    uncertainty: np.ndarray
    meta: dict = field(default_factory=dict)


def quadrature_fd_grad(
    model: MixtureModel, g, params: Sequence, eps: float = QUAD_FD_EPS, atol: float = QUAD_ATOL
) -> OracleValue:
    """dE[g]/dtheta by Richardson-extrapolated central differences of cubature.

    The reported uncertainty combines the extrapolation correction with the
    propagated cubature error bounds.
    """
    params = expand_params(model, params)
    vals, uncs = [], []
    for theta in params:
        h = {}
        err = 0.0
        for step in (-2, -1, 1, 2):
            h[step], e = quadrature_expectation_with_error(perturbed_model(model, theta, step * eps), g, atol)
            err += e
        d1 = (h[1] - h[-1]) / (2 * eps)
        d2 = (h[2] - h[-2]) / (4 * eps)
        rich = (4 * d1 - d2) / 3
        vals.append(_chain_back(model, theta, rich))
        uncs.append(_chain_back(model, theta, abs(d1 - rich) + 1.5 * err / eps))
    return OracleValue(
        labels=[p.label for p in params], value=np.array(vals), uncertainty=np.abs(np.array(uncs)),
        meta={"oracle": "quadrature-fd", "eps": eps, "atol": atol},
    )


def score_terms(model: MixtureModel, trace, params: Sequence[ParameterSelector]) -> np.ndarray:
    """d log f(x) / dtheta for a batch of traced samples; shape (..., len(params))."""
    r = np.exp(trace.log_posterior)
    cols = []
    for p in params:
        if p.kind == "weight":
            cols.append(r[..., p.k] / model.weights[p.k] - 1.0)
        elif p.kind == "logit":
            cols.append(r[..., p.k] - model.weights[p.k])
        elif p.kind == "raw_weight":
            raise InvalidInputError("score-function oracle is defined for 'weight' and 'logit' coordinates only")
        else:
            s = trace.dlogpdf_dx[..., p.d, p.k]
            if p.kind == "location":
                cols.append(-r[..., p.k] * s)
            else:
                sig = model.sigma[p.k, p.d]
                dlog = -1.0 / sig - trace.z[..., p.d, p.k] * s
                cols.append(r[..., p.k] * (dlog * sig if p.kind == "log_scale" else dlog))
    return np.stack(cols, axis=-1)


def score_function_grad(
    model: MixtureModel,
    loss,
    params: Sequence,
    n: int,
    seed: int,
    baseline: bool = True,
    workers: int = 1,
) -> EstimatorReport:
    """Likelihood-ratio estimate of dE[g]/dtheta.

    With ``baseline`` each sample's g is centred by the mean of the other
    samples in its chunk, which keeps the estimator unbiased.
    """
    params = expand_params(model, params)
    if any(p.kind == "raw_weight" for p in params):
        raise InvalidInputError("score-function oracle is defined for 'weight' and 'logit' coordinates only")

    def per_chunk(rng, m):
        x, trace, n_bad = draw_valid(model, rng, m)
        gv = checked_loss_value(loss, x)
        if baseline and m > 1:
            gv = gv - (gv.sum() - gv) / (m - 1)
        return gv[:, None] * score_terms(model, trace, params), n_bad

    return run_chunks(per_chunk, n, seed, [p.label for p in params], estimator="score", workers=workers)


@dataclass
class ComparisonReport:
    name: str
    labels: list[str]
    mean_a: np.ndarray
    se_a: np.ndarray
    ref_b: np.ndarray
    se_b: np.ndarray
    z: np.ndarray
    z_threshold: float
    n_fail: int
    allowed_failures: int
    passed: bool
    meta: dict = field(default_factory=dict)

    @property
    def max_z(self) -> float:
        return float(self.z.max()) if self.z.size else 0.0

    def failures(self) -> list[str]:
        return [f"{lab}: z={z:.2f}" for lab, z in zip(self.labels, self.z) if not z <= self.z_threshold]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "z_threshold": self.z_threshold,
            "n_fail": self.n_fail,
            "allowed_failures": self.allowed_failures,
            "labels": list(self.labels),
            "mean_a": self.mean_a.tolist(),
            "se_a": self.se_a.tolist(),
            "ref_b": self.ref_b.tolist(),
            "se_b": self.se_b.tolist(),
            "z": [float(v) if math.isfinite(v) else None for v in self.z],
            "meta": self.meta,
        }


def _mean_se(obj):
    if isinstance(obj, EstimatorReport):
        return obj.labels, obj.mean, obj.stderr
    if isinstance(obj, OracleValue):
        return obj.labels, obj.value, obj.uncertainty
    arr = np.asarray(obj, dtype=float)
    return None, arr, np.zeros_like(arr)


def compare(
    a, b, z_threshold: float = 3.0, name: str = "", max_fail_fraction: float = 0.0, meta: dict | None = None
) -> ComparisonReport:
    """Per-coordinate z-scores |a - b| / sqrt(se_a^2 + se_b^2).

    Passes when at most ``floor(max_fail_fraction * n)`` coordinates exceed
    ``z_threshold``. Identical deterministic values give z = 0.
    """
    la, ma, sa = _mean_se(a)
    lb, mb, sb = _mean_se(b)
    if ma.shape != mb.shape:
        raise InvalidInputError(f"shape mismatch: {ma.shape} vs {mb.shape}")
    if la is not None and lb is not None and list(la) != list(lb):
        raise InvalidInputError("label mismatch between compared estimates")
    labels = list(la or lb or [str(i) for i in range(ma.size)])
    diff = np.abs(ma - mb)
    se = np.sqrt(sa * sa + sb * sb)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, diff / se, np.where(diff == 0, 0.0, np.inf))
    n_fail = int(np.count_nonzero(~(z <= z_threshold)))
    allowed = int(math.floor(max_fail_fraction * z.size))
    return ComparisonReport(
        name=name, labels=labels, mean_a=ma, se_a=sa, ref_b=mb, se_b=sb, z=z, z_threshold=z_threshold,
        n_fail=n_fail, allowed_failures=allowed, passed=n_fail <= allowed, meta=dict(meta or {}),
    )
