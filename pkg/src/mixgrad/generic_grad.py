"""Pathwise derivatives for arbitrary model parameters.

Holding the uniforms fixed, the derivative of x_d with respect to any
parameter theta follows from differentiating F_d(x_d | x_<d) = u_d:

    dx_d/dtheta = -(1 / f_d(x_d | x_<d)) * integral_{-inf}^{x_d} df_d(t | x_<d)/dtheta dt

For a location or scale of component m in dimension e, the integral is
closed form: dimensions before e are unaffected, dimension e picks up the
direct term p^m_e dF^m_e/dtheta, and later dimensions feel theta only
through the responsibilities. Those follow the same recursion as the weight
derivatives, started from d log p^k_1/dtheta = 0 with the extra direct term
d log f^m_e(x_e)/dtheta entering at step e -> e+1.

When the integral has no closed form it can be estimated by Monte Carlo
from the truncated conditional (``mc_partial_integral``).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInputError
from .mixture import ForwardTrace, MixtureModel, responsibilities_forward
from .reports import EstimatorReport, checked_loss_grad, draw_valid, run_chunks
from .sampling import conditional_cdf, sample_truncated, DEFAULT_MAX_ATTEMPTS
from .weight_grad import _check_row, centered_cdf_ratio, to_simplex, weight_grad_trace, weight_loss_grad

WEIGHT_KINDS = ("raw_weight", "weight", "logit")
COMPONENT_KINDS = ("location", "scale", "log_scale")
KINDS = WEIGHT_KINDS + COMPONENT_KINDS
_GROUPS = {
    "raw_weights": "raw_weight", "weights": "weight", "logits": "logit",
    "locations": "location", "scales": "scale", "log_scales": "log_scale",
}
_LABEL = re.compile(r"^\s*([a-z_]+)\s*\[\s*(\d+)\s*(?:,\s*(\d+)\s*)?\]\s*$")


@dataclass(frozen=True)
class ParameterSelector:
    """One differentiable coordinate of a model.

    ``weight`` is the simplex-projected weight coordinate, ``raw_weight``
    the free-coordinate form of the weight recursion, ``logit`` the
    softmax input. Component kinds carry a component index ``k`` and a
    dimension ``d``; ``log_scale`` differentiates with respect to log(sigma).
    """

    kind: str
    k: int
    d: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown parameter kind {self.kind!r}")
        if (self.kind in COMPONENT_KINDS) != (self.d is not None):
            raise InvalidInputError(f"{self.kind} selectors need {'a' if self.d is None else 'no'} dimension index")

    @property
    def label(self) -> str:
        return f"{self.kind}[{self.k}]" if self.d is None else f"{self.kind}[{self.k},{self.d}]"

    @property
    def is_weight(self) -> bool:
        return self.kind in WEIGHT_KINDS

    def validate(self, model: MixtureModel) -> "ParameterSelector":
        if not 0 <= self.k < model.K or (self.d is not None and not 0 <= self.d < model.D):
            raise InvalidInputError(f"{self.label} out of range for K={model.K}, D={model.D}")
        return self

    @classmethod
    def parse(cls, text: str) -> "ParameterSelector":
        m = _LABEL.match(text)
        if not m:
            raise InvalidInputError(f"cannot parse parameter {text!r}; expected e.g. 'logit[0]' or 'location[1,0]'")
        kind, k, d = m.group(1), int(m.group(2)), m.group(3)
        return cls(kind, k, None if d is None else int(d))


def expand_params(model: MixtureModel, specs: Iterable[str | ParameterSelector]) -> list[ParameterSelector]:
    """Expand group names ('logits', 'locations', ...) and labels into selectors."""
    out: list[ParameterSelector] = []
    for spec in specs:
        if isinstance(spec, ParameterSelector):
            out.append(spec.validate(model))
        elif spec in _GROUPS:
            kind = _GROUPS[spec]
            if kind in WEIGHT_KINDS:
                out.extend(ParameterSelector(kind, k) for k in range(model.K))
            else:
                out.extend(ParameterSelector(kind, k, d) for d in range(model.D) for k in range(model.K))
        else:
            out.append(ParameterSelector.parse(spec).validate(model))
    if not out:
        raise InvalidInputError("empty parameter set")
    return out


def _component_index(K: int, kind: str, k: int, d: int) -> int:
    """Column of a (location|scale, k, d) parameter; dimension-major so that
    the parameters active at step d form a prefix."""
    return d * 2 * K + (k if kind == "location" else K + k)


def component_recursion(
    model: MixtureModel,
    trace: ForwardTrace,
    loss_grad: np.ndarray | None = None,
    keep_dx: bool = True,
    keep_dlogp: bool = False,
    check: bool = True,
) -> dict:
    """Derivatives of x with respect to every location and scale.

    Returns a dict with ``dx`` (..., D, 2KD), ``dlogp`` (..., D, K, 2KD)
    and ``loss`` (..., 2KD) as requested; columns are laid out by
    ``_component_index``. Scales are differentiated with respect to sigma.
    """
    K, D = model.K, model.D
    batch = trace.x.shape[:-1]
    P = 2 * K * D
    ks = np.arange(K)
    B = np.zeros(batch + (K, P))
    res: dict = {}
    if keep_dx:
        res["dx"] = np.zeros(batch + (D, P))
    if keep_dlogp:
        res["dlogp"] = np.zeros(batch + (D, K, P))
    if loss_grad is not None:
        res["loss"] = np.zeros(batch + (P,))
    for d in range(D):
        if check:
            _check_row(trace, d)
        a = (d + 1) * 2 * K
        lo = d * 2 * K
        if keep_dlogp:
            res["dlogp"][..., d, :, :] = B
        p = trace.resp[..., d, :]
        z = trace.z[..., d, :]
        s = trace.dlogpdf_dx[..., d, :]
        dx = -np.einsum("...k,...kp->...p", centered_cdf_ratio(trace, d), B[..., :a])
        # direct terms: dF/dmu = -pdf, dF/dsigma = -z pdf
        w = p * np.exp(trace.log_pdf[..., d, :] - trace.log_cond[..., d, None])
        dx[..., lo:lo + K] += w
        dx[..., lo + K:a] += w * z
        if keep_dx:
            res["dx"][..., d, :a] = dx
        if loss_grad is not None:
            res["loss"][..., :a] += loss_grad[..., d, None] * dx
        if d + 1 < D:
            C = B[..., :a] + s[..., :, None] * dx[..., None, :]
            # d log f / dmu = -s, d log f / dsigma = -1/sigma - z s
            C[..., ks, lo + ks] -= s
            C[..., ks, lo + K + ks] -= 1.0 / model.sigma[:, d] + z * s
            p_next = trace.resp[..., d + 1, :]
            B[..., :a] = C - np.einsum("...l,...lp->...p", p_next, C)[..., None, :]
    return res


def _weight_columns(raw: np.ndarray, weights: np.ndarray, params: Sequence[ParameterSelector]) -> np.ndarray:
    """Turn raw weight derivatives (trailing axis j) into the selected weight coordinates."""
    simplex = to_simplex(raw, weights)
    cols = []
    for p in params:
        if p.kind == "raw_weight":
            cols.append(raw[..., p.k])
        elif p.kind == "weight":
            cols.append(simplex[..., p.k])
        else:
            cols.append(weights[p.k] * simplex[..., p.k])
    return np.stack(cols, axis=-1)


def _component_columns(values: np.ndarray, model: MixtureModel, params: Sequence[ParameterSelector]) -> np.ndarray:
    cols = []
    for p in params:
        base = "location" if p.kind == "location" else "scale"
        col = values[..., _component_index(model.K, base, p.k, p.d)]
        cols.append(col * model.sigma[p.k, p.d] if p.kind == "log_scale" else col)
    return np.stack(cols, axis=-1)


def _assemble(model, params, weight_vals, comp_vals):
    out = []
    wi = [i for i, p in enumerate(params) if p.is_weight]
    ci = [i for i, p in enumerate(params) if not p.is_weight]
    pieces = {}
    if wi:
        block = _weight_columns(weight_vals, model.weights, [params[i] for i in wi])
        pieces.update({i: block[..., n] for n, i in enumerate(wi)})
    if ci:
        block = _component_columns(comp_vals, model, [params[i] for i in ci])
        pieces.update({i: block[..., n] for n, i in enumerate(ci)})
    out = [pieces[i] for i in range(len(params))]
    return np.stack(out, axis=-1)


def pathwise_jacobian(
    model: MixtureModel, x=None, params: Sequence[ParameterSelector] | Sequence[str] = ("logits",),
    trace: ForwardTrace | None = None,
) -> np.ndarray:
    """dx_d/dtheta for every selected parameter; shape (..., D, len(params))."""
    params = expand_params(model, params)
    if trace is None:
        trace = responsibilities_forward(model, x)
    weight_vals = comp_vals = None
    if any(p.is_weight for p in params):
        weight_vals = weight_grad_trace(model, trace=trace, keep_dlogp=False).dx_dpi
    if any(not p.is_weight for p in params):
        comp_vals = component_recursion(model, trace)["dx"]
    return _assemble(model, params, weight_vals, comp_vals)


def pathwise_dx_dtheta_exact(model: MixtureModel, trace: ForwardTrace, d: int, theta: ParameterSelector) -> float:
    """Closed-form dx_d/dtheta at a single traced sample."""
    if not 0 <= d < model.D:
        raise InvalidInputError(f"dimension {d} out of range")
    theta = expand_params(model, [theta])[0]
    return float(pathwise_jacobian(model, params=[theta], trace=trace)[d, 0])


def reparam_component_grads(model: MixtureModel, x, loss_grad) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample dg/dmu and dg/dsigma, each shaped (..., K, D), with u held fixed."""
    x = np.asarray(x, dtype=float)
    loss_grad = np.asarray(loss_grad, dtype=float)
    if loss_grad.shape != x.shape or not np.all(np.isfinite(loss_grad)):
        raise InvalidInputError("loss_grad must be finite and shaped like x")
    trace = responsibilities_forward(model, x)
    vals = component_recursion(model, trace, loss_grad=loss_grad, keep_dx=False)["loss"]
    K, D = model.K, model.D
    vals = vals.reshape(vals.shape[:-1] + (D, 2, K))
    grad_mu = np.swapaxes(vals[..., 0, :], -1, -2)
    grad_sigma = np.swapaxes(vals[..., 1, :], -1, -2)
    return grad_mu, grad_sigma


def per_sample_loss_grad(model: MixtureModel, trace: ForwardTrace, loss_grad, params, check: bool = True):
    """sum_d (dg/dx_d) dx_d/dtheta for each selected parameter, batched."""
    weight_vals = comp_vals = None
    if any(p.is_weight for p in params):
        weight_vals = weight_loss_grad(model, trace, loss_grad, check=check)
    if any(not p.is_weight for p in params):
        comp_vals = component_recursion(model, trace, loss_grad=loss_grad, keep_dx=False, check=check)["loss"]
    return _assemble(model, params, weight_vals, comp_vals)


def estimate_loss_grad(
    model: MixtureModel,
    loss,
    params: Sequence[ParameterSelector] | Sequence[str],
    n: int,
    seed: int,
    workers: int = 1,
) -> EstimatorReport:
    """Pathwise Monte-Carlo estimate of dE[g]/dtheta for weights, locations and scales in one pass."""
    params = expand_params(model, params)

    def per_chunk(rng, m):
        x, trace, n_bad = draw_valid(model, rng, m)
        lg = checked_loss_grad(loss, x)
        return per_sample_loss_grad(model, trace, lg, params, check=False), n_bad

    return run_chunks(per_chunk, n, seed, [p.label for p in params], estimator="pathwise", workers=workers)


@dataclass(frozen=True)
class PartialIntegralEstimate:
    value: float
    stderr: float
    n_inner: int
    acceptance_rate: float


def _dlogp_columns(model: MixtureModel, trace: ForwardTrace, params: Sequence[ParameterSelector]) -> np.ndarray:
    """d log p^k_d / dtheta at one traced sample, shape (D, K, len(params))."""
    wi = [i for i, p in enumerate(params) if p.is_weight]
    ci = [i for i, p in enumerate(params) if not p.is_weight]
    out = np.empty((model.D, model.K, len(params)))
    if wi:
        dlogp = weight_grad_trace(model, trace=trace).dlogp_dpi
        out[..., wi] = _weight_columns(dlogp, model.weights, [params[i] for i in wi])
    if ci:
        dlogp = component_recursion(model, trace, keep_dx=False, keep_dlogp=True)["dlogp"]
        out[..., ci] = _component_columns(dlogp, model, [params[i] for i in ci])
    return out


def _conditional_scores(model, trace, d, params, cols_d, t) -> np.ndarray:
    """d log f_d(t | x_<d) / dtheta for points t, shape (len(t), len(params)).

    ``cols_d`` (K, P) holds d log p^k_d / dtheta at the traced prefix.
    """
    p = trace.resp[d]
    mu_d, s_d = model.mu[:, d], model.sigma[:, d]
    z = (t[:, None] - mu_d) / s_d
    pdf = np.exp(model.std_eval("logpdf", z)) / s_d
    out = (pdf * p) @ cols_d
    slope = None
    for i, theta in enumerate(params):
        if theta.is_weight or theta.d != d:
            continue
        k = theta.k
        if slope is None:
            slope = model.std_eval("dlogpdf", z) / s_d
        if theta.kind == "location":
            dlog = -slope[:, k]
        else:
            dlog = -1.0 / s_d[k] - z[:, k] * slope[:, k]
            if theta.kind == "log_scale":
                dlog = dlog * s_d[k]
        out[:, i] += p[k] * pdf[:, k] * dlog
    return out / (pdf @ p)[:, None]


def _partial_integrals(model, trace, d, params, cols_d, n_inner, rng, max_attempts):
    upper = float(trace.x[d])
    batch = sample_truncated(model, d, trace.resp[d], upper, rng, n_inner, max_attempts)
    F = float(conditional_cdf(trace.resp[d], model, d, upper))
    vals = _conditional_scores(model, trace, d, params, cols_d, batch.samples)
    se = F * vals.std(axis=0, ddof=1) / np.sqrt(n_inner) if n_inner > 1 else np.zeros(len(params))
    return F * vals.mean(axis=0), se, batch.acceptance_rate


def mc_partial_integral(
    model: MixtureModel,
    trace: ForwardTrace,
    d: int,
    theta: ParameterSelector,
    n_inner: int,
    rng: np.random.Generator,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
) -> PartialIntegralEstimate:
    """Estimate integral_{-inf}^{x_d} df_d(t | x_<d)/dtheta dt by rejection sampling.

    Uses F_d(x_d) * mean(d log f_d(t)/dtheta) over t drawn from the
    conditional truncated to t <= x_d.
    """
    params = expand_params(model, [theta])
    cols = _dlogp_columns(model, trace, params)
    value, se, rate = _partial_integrals(model, trace, d, params, cols[d], n_inner, rng, max_attempts)
    return PartialIntegralEstimate(
        value=float(value[0]), stderr=float(se[0]), n_inner=int(n_inner), acceptance_rate=rate
    )


def nested_sample_grad(model, trace, loss_grad, params, n_inner, rng, max_attempts=DEFAULT_MAX_ATTEMPTS):
    """Per-sample sum_d (dg/dx_d) dx_d/dtheta with every partial integral estimated by Monte Carlo.

    One truncated batch of ``n_inner`` draws per dimension serves all
    parameters. Unbiased because the inner estimate enters linearly.
    """
    cols = _dlogp_columns(model, trace, params)
    f = np.exp(trace.log_cond)
    out = np.zeros(len(params))
    for d in range(model.D):
        value, _, _ = _partial_integrals(model, trace, d, params, cols[d], n_inner, rng, max_attempts)
        out -= loss_grad[d] * value / f[d]
    return out


def estimate_loss_grad_nested(
    model: MixtureModel, loss, params, n: int, n_inner: int, seed: int, workers: int = 1
) -> EstimatorReport:
    """Outer pathwise estimate whose per-sample integrals come from ``n_inner`` inner draws."""
    params = expand_params(model, params)
    if n_inner < 2:
        raise InvalidInputError("n_inner must be >= 2")

    def per_chunk(rng, m):
        x, trace, n_bad = draw_valid(model, rng, m)
        lg = checked_loss_grad(loss, x)
        rows = []
        for i in range(m):
            tr = ForwardTrace(**{k: v[i] for k, v in trace.__dict__.items()})
            rows.append(nested_sample_grad(model, tr, lg[i], params, n_inner, rng))
        return np.array(rows), n_bad

    return run_chunks(
        per_chunk, n, seed, [p.label for p in params], estimator="pathwise-mc", workers=workers, chunk_size=256
    )
