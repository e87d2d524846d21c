import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_model
from mixgrad.errors import DegenerateSampleError, InvalidInputError, InvalidLossError
from mixgrad.generic_grad import ParameterSelector
from mixgrad.losses import Linear, Quadratic
from mixgrad.mixture import MixtureModel, responsibilities_forward, softmax_backward
from mixgrad.sampling import UniformDraw, sample_quantile_transform
from mixgrad.verify import fd_pathwise
from mixgrad.weight_grad import (
    estimate_weight_grad,
    per_sample_weight_grad,
    to_logit,
    to_simplex,
    weight_grad_init,
    weight_grad_step,
    weight_grad_trace,
    weight_labels,
)


def phi(x):
    return math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)


def Phi(x):
    return 0.5 * (1 + math.erf(x / math.sqrt(2)))


def identical_model(K=2, D=3, logits=None):
    mu = np.tile([0.2, -0.5, 1.0][:D], (K, 1))
    sig = np.tile([1.0, 0.7, 1.4][:D], (K, 1))
    return MixtureModel.create(mu, sig, logits=np.zeros(K) if logits is None else logits)


# ---------------------------------------------------------------- init row


def test_init_identical_components():
    m = MixtureModel.create([[0.0], [0.0]], 1.0, weights=[0.5, 0.5])
    dlogp, dx = weight_grad_init(m, responsibilities_forward(m, [0.0]))
    assert np.allclose(dx, -0.5 / phi(0), atol=1e-14)
    assert np.allclose(dx, -1.2533, atol=1e-4)
    assert np.array_equal(dlogp, np.diag([2.0, 2.0]))


def test_init_two_bump(two_bump):
    _, dx = weight_grad_init(two_bump, responsibilities_forward(two_bump, [0.0]))
    f = 0.5 * phi(1) + 0.5 * phi(-1)
    assert np.allclose(dx, [-Phi(1) / f, -Phi(-1) / f], rtol=1e-14)
    assert np.allclose(dx, [-3.4770, -0.6557], atol=1e-4)


def test_init_dlogp_uniform_three():
    m = MixtureModel.create([[0.0], [1.0], [2.0]], 1.0, weights=np.full(3, 1 / 3))
    dlogp, _ = weight_grad_init(m, responsibilities_forward(m, [0.3]))
    assert np.allclose(np.diag(dlogp), 3.0, rtol=1e-15)
    assert np.all(dlogp[~np.eye(3, dtype=bool)] == 0.0)


# ---------------------------------------------------------------- step


def test_step_identical_components():
    m = identical_model(K=2, D=2, logits=np.log([0.3, 0.7]))
    x = np.array([0.4, -0.2])
    tr = responsibilities_forward(m, x)
    dlogp0, dx0 = weight_grad_init(m, tr)
    dlogp, dx = weight_grad_step(m, tr, 1, dlogp0, dx0)
    assert np.allclose(dlogp, np.diag(1 / m.weights) - 1.0, atol=1e-13)
    # sum_k (delta_jk / pi_j - 1) p_k = 0, so later rows carry no weight dependence
    assert np.allclose(dx, 0.0, atol=1e-14)
    assert np.allclose(dx0, -Phi((x[0] - 0.2) / 1.0) / phi((x[0] - 0.2) / 1.0), rtol=1e-13)


def test_step_single_component_is_zero(rng):
    m = random_model(rng, 1, 4)
    wg = weight_grad_trace(m, rng.normal(size=4))
    assert np.allclose(wg.dlogp_dpi[1:], 0.0, atol=1e-15)
    assert np.allclose(wg.dx_dpi[1:], 0.0, atol=1e-15)


def test_step_index_validation(two_bump_2d):
    tr = responsibilities_forward(two_bump_2d, [0.0, 0.0])
    dlogp, dx = weight_grad_init(two_bump_2d, tr)
    with pytest.raises(InvalidInputError):
        weight_grad_step(two_bump_2d, tr, 0, dlogp, dx)
    with pytest.raises(InvalidInputError):
        weight_grad_step(two_bump_2d, tr, 2, dlogp, dx)


def _symbolic_two_dim(model, xhat):
    """Raw-weight derivatives of x_2 by implicit differentiation of the explicit D=2 CDFs."""
    K = model.K
    pis = sp.symbols(f"pi0:{K}", positive=True)
    x1, x2 = sp.symbols("x1 x2", real=True)
    N = lambda t: (1 + sp.erf(t / sp.sqrt(2))) / 2  # noqa: E731
    n = lambda t: sp.exp(-t**2 / 2) / sp.sqrt(2 * sp.pi)  # noqa: E731
    mu = [[sp.Float(v, 30) for v in row] for row in model.mu.tolist()]
    sg = [[sp.Float(v, 30) for v in row] for row in model.sigma.tolist()]
    F1 = sum(pis[k] * N((x1 - mu[k][0]) / sg[k][0]) for k in range(K))
    lik = [pis[k] * n((x1 - mu[k][0]) / sg[k][0]) / sg[k][0] for k in range(K)]
    p2 = [lk / sum(lik) for lk in lik]
    F2 = sum(p2[k] * N((x2 - mu[k][1]) / sg[k][1]) for k in range(K))
    subs = {x1: xhat[0], x2: xhat[1], **{pis[k]: model.weights[k] for k in range(K)}}
    ev = lambda e: float(sp.N(e.subs(subs), 25))  # noqa: E731
    f1, dF2_dx1, f2 = ev(sp.diff(F1, x1)), ev(sp.diff(F2, x1)), ev(sp.diff(F2, x2))
    dx1 = np.array([-ev(sp.diff(F1, pis[j])) / f1 for j in range(K)])
    dx2 = np.array([-(ev(sp.diff(F2, pis[j])) + dF2_dx1 * dx1[j]) / f2 for j in range(K)])
    dlogp2 = np.array([[ev(sp.diff(sp.log(p2[k]), pis[j]) + sp.diff(sp.log(p2[k]), x1) * dx1[j])
                        for j in range(K)] for k in range(K)])
    return dx1, dx2, dlogp2


def test_step_matches_symbolic_oracle(two_bump_2d):
    xhat = np.array([1.0, 0.0])
    dx1, dx2, dlogp2 = _symbolic_two_dim(two_bump_2d, xhat)
    wg = weight_grad_trace(two_bump_2d, xhat)
    assert np.allclose(wg.dx_dpi[0], dx1, rtol=1e-12)
    assert np.allclose(wg.dx_dpi[1], dx2, rtol=1e-12)
    assert np.allclose(wg.dlogp_dpi[1], dlogp2, rtol=1e-12)


def test_step_matches_symbolic_oracle_asymmetric():
    m = MixtureModel.create([[-0.7, 1.1], [0.4, -0.3], [1.5, 0.2]], [[0.8, 1.2], [1.1, 0.6], [0.9, 1.0]],
                            weights=[0.2, 0.5, 0.3])
    xhat = np.array([0.25, 0.6])
    dx1, dx2, dlogp2 = _symbolic_two_dim(m, xhat)
    wg = weight_grad_trace(m, xhat)
    assert np.allclose(wg.dx_dpi[0], dx1, rtol=1e-11)
    assert np.allclose(wg.dx_dpi[1], dx2, rtol=1e-11)
    assert np.allclose(wg.dlogp_dpi[1], dlogp2, rtol=1e-11, atol=1e-13)


def test_logit_coordinates_match_finite_differences(two_bump_2d):
    u = UniformDraw.draw(2, seed=99, n=20).u
    x = sample_quantile_transform(two_bump_2d, u)
    wg = weight_grad_trace(two_bump_2d, x)
    analytic = softmax_backward(two_bump_2d.unconstrained_logits, wg.dx_dpi)
    for j in range(2):
        fd = fd_pathwise(two_bump_2d, u, ParameterSelector("logit", j))
        assert np.allclose(analytic[..., j], fd, rtol=1e-4, atol=1e-8)


# ---------------------------------------------------------------- invariants


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.integers(1, 8), st.sampled_from(["gaussian", "logistic"]))
def test_responsibility_weighted_zero(seed, K, D, family):
    rng = np.random.default_rng(seed)
    m = random_model(rng, K, D, family)
    x = sample_quantile_transform(m, rng.uniform(0.02, 0.98, (4, D)))
    wg = weight_grad_trace(m, x)
    tr = responsibilities_forward(m, x)
    # rows d >= 1 are normalized; row 0 is the raw delta_jk / pi_j
    s = np.einsum("ndk,ndkj->ndj", tr.resp[:, 1:], wg.dlogp_dpi[:, 1:])
    assert np.allclose(s, 0.0, atol=1e-8 * max(1.0, np.abs(wg.dlogp_dpi).max()))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 5), st.integers(1, 5))
def test_permutation_equivariance(seed, K, D):
    rng = np.random.default_rng(seed)
    m = random_model(rng, K, D)
    perm = rng.permutation(K)
    x = rng.normal(size=D)
    a = weight_grad_trace(m, x).dx_dpi
    b = weight_grad_trace(m.permuted(perm), x).dx_dpi
    assert np.allclose(a[:, perm], b, rtol=1e-10, atol=1e-12)


@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_identical_components_raw_equal_across_j(seed, D):
    rng = np.random.default_rng(seed)
    m = identical_model(K=3, D=min(D, 3), logits=rng.normal(size=3))
    x = rng.normal(size=m.D)
    dx = weight_grad_trace(m, x).dx_dpi
    assert np.allclose(dx, dx[:, :1], rtol=1e-12)
    assert np.allclose(to_logit(dx, m.weights), 0.0, atol=1e-12)


def test_raw_minus_simplex_is_constant_in_j(rng):
    m = random_model(rng, 4, 3)
    raw = weight_grad_trace(m, rng.normal(size=(6, 3))).dx_dpi
    diff = raw - to_simplex(raw, m.weights)
    assert np.allclose(diff, diff[..., :1], atol=1e-12)


def test_single_component_logit_exactly_zero(rng):
    m = random_model(rng, 1, 3)
    raw = per_sample_weight_grad(m, rng.normal(size=3), np.ones(3))
    assert to_logit(raw, m.weights)[0] == 0.0


# ---------------------------------------------------------------- per-sample and estimator


def test_per_sample_examples(two_bump):
    assert np.array_equal(per_sample_weight_grad(two_bump, [0.0], [0.0]), np.zeros(2))
    _, dx = weight_grad_init(two_bump, responsibilities_forward(two_bump, [0.0]))
    assert np.allclose(per_sample_weight_grad(two_bump, [0.0], [1.0]), dx, rtol=0, atol=0)
    same = identical_model(K=2, D=3)
    g = per_sample_weight_grad(same, [0.1, 0.2, 0.3], [1.0, -2.0, 0.5])
    assert g[0] == pytest.approx(g[1], rel=1e-13)


def test_per_sample_rejects_bad_loss_grad(two_bump):
    with pytest.raises(InvalidInputError):
        per_sample_weight_grad(two_bump, [0.0], [math.nan])
    with pytest.raises(InvalidInputError):
        per_sample_weight_grad(two_bump, [0.0], [1.0, 2.0])


def test_degenerate_sample(two_bump_2d):
    with pytest.raises(DegenerateSampleError):
        weight_grad_trace(two_bump_2d, [0.0, 5e2])


def test_estimate_simplex_two_bump(two_bump):
    rep = estimate_weight_grad(two_bump, Linear((1.0,)), 100_000, seed=1, coords=("simplex", "logit"))
    assert rep.labels == weight_labels(2, ("simplex", "logit"))
    for lab, want in [("weight[0]", -1.0), ("weight[1]", 1.0), ("logit[0]", -0.5), ("logit[1]", 0.5)]:
        i = rep.labels.index(lab)
        assert abs(rep.mean[i] - want) < 3 * rep.stderr[i]


def test_estimate_identical_components_logit_zero():
    m = identical_model(K=3, D=3, logits=[0.2, -0.4, 0.9])
    rep = estimate_weight_grad(m, Quadratic((0.0, 0.0, 0.0)), 50_000, seed=2, coords=("logit",))
    assert np.all(np.abs(rep.mean) <= 3 * rep.stderr + 1e-12)


def test_estimate_raw_differs_from_simplex_by_constant(two_bump_2d):
    rep = estimate_weight_grad(two_bump_2d, Linear((1.0, 1.0)), 20_000, seed=3, coords=("raw", "simplex"))
    raw, simp = rep.mean[:2], rep.mean[2:]
    assert np.allclose(raw - simp, (raw - simp)[0], atol=1e-10)


def test_estimate_invalid_loss(two_bump):
    class Bad:
        def grad(self, x):
            return np.full(np.shape(x), np.nan)

    with pytest.raises(InvalidLossError):
        estimate_weight_grad(two_bump, Bad(), 100, seed=0)


def test_estimate_unknown_coord(two_bump):
    with pytest.raises(InvalidInputError):
        estimate_weight_grad(two_bump, Linear((1.0,)), 10, seed=0, coords=("polar",))
