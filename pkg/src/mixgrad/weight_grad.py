"""Pathwise derivatives of mixture samples with respect to the mixture weights.

For a sample x drawn through the conditional quantile transform, the
derivative of x_d with respect to pi_j obeys

    dx_d/dpi_j = -(1 / f_d) sum_k dlogp[d, k, j] p^k_d F^k_d(x_d)

where dlogp[d, k, j] = d log p^k_d / d pi_j follows the joint recursion

    dlogp[1, k, j] = delta_jk / pi_j
    dlogp[d, k, j] = c[k, j] - sum_l p^l_d c[l, j],
    c[k, j]        = dlogp[d-1, k, j] + (d log f^k_{d-1} / dx) dx_{d-1}/dpi_j.

These "raw" derivatives treat the pi_j as free coordinates. Along the
simplex only their differences matter: the simplex-projected gradient
g_j - sum_k pi_k g_k is the derivative of h(pi / sum(pi)), and
``softmax_backward`` maps either form to logit coordinates. The raw
expectation gradient can diverge (e.g. g(x) = x in one dimension gives
E[-F^j(x) / f(x)] = -inf); the projected and logit forms stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSampleError, InvalidInputError
from .mixture import LOG_F_MIN, ForwardTrace, MixtureModel, responsibilities_forward
from .reports import EstimatorReport, checked_loss_grad, draw_valid, run_chunks

WEIGHT_COORDS = ("raw", "simplex", "logit")


@dataclass(frozen=True)
class WeightGradient:
    """Per-sample weight derivatives; leading batch axes allowed.

    ``dx_dpi[d, j]`` is dx_d/dpi_j and ``dlogp_dpi[d, k, j]`` is
    d log p^k_d / d pi_j (None when not kept).
    """

    x: np.ndarray
    dx_dpi: np.ndarray
    dlogp_dpi: np.ndarray | None = None


def _check_row(trace: ForwardTrace, d: int) -> None:
    lc = np.asarray(trace.log_cond)[..., d]
    if np.any(~(lc >= LOG_F_MIN)):
        raise DegenerateSampleError(d)


def centered_cdf_ratio(trace: ForwardTrace, d: int) -> np.ndarray:
    """p^k_d (F^k_d(x_d) - F_d(x_d)) / f_d(x_d | x_<d).

    Only valid against rows whose responsibility-weighted sum vanishes
    (every dlogp row after the first), where it equals p^k_d F^k_d / f_d.
    The upper tail uses survival functions, F^k - F = -(S^k - S), and the
    mean is pivoted on component 0 so identical components give exact zeros.
    """
    p = trace.resp[..., d, :]
    cdf, sf = trace.cdf[..., d, :], trace.sf[..., d, :]
    upper = (p * cdf).sum(axis=-1) > 0.5
    G = np.where(upper[..., None], -sf, cdf)
    G = G - G[..., :1]
    G = G - (p * G).sum(axis=-1, keepdims=True)
    return p * G * np.exp(-trace.log_cond[..., d, None])


def weight_grad_init(model: MixtureModel, trace: ForwardTrace, check: bool = True):
    """First-dimension rows: dlogp[k, j] = delta_jk / pi_j and dx_1/dpi_j = -F^j_1 / f_1."""
    if check:
        _check_row(trace, 0)
    batch = trace.x.shape[:-1]
    dlogp = np.broadcast_to(np.diag(1.0 / model.weights), batch + (model.K, model.K)).copy()
    dx = -trace.cdf[..., 0, :] * np.exp(-trace.log_cond[..., 0, None])
    return dlogp, dx


def weight_grad_step(
    model: MixtureModel, trace: ForwardTrace, d: int, dlogp_prev, dx_prev, check: bool = True
):
    """Advance the joint recursion from dimension d-1 to d (zero-based d >= 1)."""
    if not 1 <= d < model.D:
        raise InvalidInputError(f"step dimension must be in [1, {model.D - 1}], got {d}")
    if check:
        _check_row(trace, d)
    p = trace.resp[..., d, :]
    s = trace.dlogpdf_dx[..., d - 1, :]
    c = dlogp_prev + s[..., :, None] * dx_prev[..., None, :]
    dlogp = c - np.einsum("...l,...lj->...j", p, c)[..., None, :]
    dx = -np.einsum("...k,...kj->...j", centered_cdf_ratio(trace, d), dlogp)
    return dlogp, dx


def weight_grad_trace(
    model: MixtureModel, x=None, trace: ForwardTrace | None = None, keep_dlogp: bool = True, check: bool = True
) -> WeightGradient:
    """Run the full recursion at ``x`` (or at a precomputed trace)."""
    if trace is None:
        trace = responsibilities_forward(model, x)
    dlogp, dx = weight_grad_init(model, trace, check)
    batch = trace.x.shape[:-1]
    dx_all = np.empty(batch + (model.D, model.K))
    dx_all[..., 0, :] = dx
    dlogp_all = None
    if keep_dlogp:
        dlogp_all = np.empty(batch + (model.D, model.K, model.K))
        dlogp_all[..., 0, :, :] = dlogp
    for d in range(1, model.D):
        dlogp, dx = weight_grad_step(model, trace, d, dlogp, dx, check)
        dx_all[..., d, :] = dx
        if keep_dlogp:
            dlogp_all[..., d, :, :] = dlogp
    return WeightGradient(x=trace.x, dx_dpi=dx_all, dlogp_dpi=dlogp_all)


def weight_loss_grad(model: MixtureModel, trace: ForwardTrace, loss_grad: np.ndarray, check: bool = True):
    """sum_d (dg/dx_d) dx_d/dpi_j with rolling O(K^2) storage."""
    dlogp, dx = weight_grad_init(model, trace, check)
    out = loss_grad[..., 0, None] * dx
    for d in range(1, model.D):
        dlogp, dx = weight_grad_step(model, trace, d, dlogp, dx, check)
        out = out + loss_grad[..., d, None] * dx
    return out


def per_sample_weight_grad(model: MixtureModel, x, loss_grad) -> np.ndarray:
    """Raw per-sample gradient sum_d loss_grad[d] dx_d/dpi_j."""
    x = np.asarray(x, dtype=float)
    loss_grad = np.asarray(loss_grad, dtype=float)
    if loss_grad.shape != x.shape:
        raise InvalidInputError(f"loss_grad shape {loss_grad.shape} does not match x shape {x.shape}")
    if not np.all(np.isfinite(loss_grad)):
        raise InvalidInputError("loss_grad must be finite")
    trace = responsibilities_forward(model, x)
    return weight_loss_grad(model, trace, loss_grad)


def to_simplex(grad_raw, weights) -> np.ndarray:
    """Project raw weight gradients onto the simplex tangent: g - (g . pi)."""
    grad_raw = np.asarray(grad_raw, dtype=float)
    return grad_raw - (grad_raw @ weights)[..., None]


def to_logit(grad_raw, weights) -> np.ndarray:
    """Same as softmax_backward, given the weights instead of the logits."""
    return weights * to_simplex(grad_raw, weights)


def weight_labels(K: int, coords=WEIGHT_COORDS) -> list[str]:
    names = {"raw": "raw_weight", "simplex": "weight", "logit": "logit"}
    return [f"{names[c]}[{j}]" for c in coords for j in range(K)]


def estimate_weight_grad(
    model: MixtureModel,
    loss,
    n: int,
    seed: int,
    coords=WEIGHT_COORDS,
    workers: int = 1,
) -> EstimatorReport:
    """Monte-Carlo estimate of dh/dpi_j over ancestral samples.

    ``coords`` selects among raw (the recursion as-is), simplex-projected,
    and logit coordinates; each appears in the report as its own block of
    K labels.
    """
    for c in coords:
        if c not in WEIGHT_COORDS:
            raise InvalidInputError(f"unknown weight coordinate {c!r}")
    w = model.weights

    def per_chunk(rng, m):
        x, trace, n_bad = draw_valid(model, rng, m)
        raw = weight_loss_grad(model, trace, checked_loss_grad(loss, x), check=False)
        blocks = {"raw": raw, "simplex": to_simplex(raw, w), "logit": to_logit(raw, w)}
        return np.concatenate([blocks[c] for c in coords], axis=-1), n_bad

    return run_chunks(
        per_chunk, n, seed, weight_labels(model.K, coords), estimator="pathwise", workers=workers
    )
