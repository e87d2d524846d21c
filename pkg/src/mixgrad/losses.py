"""Closed registry of differentiable losses g(x) with exact gradients.

Every loss maps a batch x of shape (..., D) to values (...,) and gradients
(..., D).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class Linear:
    """g(x) = w . x; defaults to the first coordinate."""

    w: tuple[float, ...]
    id: str = "linear"

    def value(self, x):
        return np.asarray(x) @ np.asarray(self.w)

    def grad(self, x):
        return np.broadcast_to(np.asarray(self.w, dtype=float), np.shape(x)).copy()


@dataclass(frozen=True)
class Quadratic:
    """g(x) = sum_d (x_d - c_d)^2."""

    center: tuple[float, ...]
    id: str = "quadratic"

    def value(self, x):
        r = np.asarray(x) - np.asarray(self.center)
        return (r * r).sum(axis=-1)

    def grad(self, x):
        return 2.0 * (np.asarray(x) - np.asarray(self.center))


@dataclass(frozen=True)
class NegLogTarget:
    """Negative log density of a diagonal Gaussian target."""

    mu: tuple[float, ...]
    sigma: tuple[float, ...]
    id: str = "neg-log-target"

    def value(self, x):
        s = np.asarray(self.sigma)
        r = (np.asarray(x) - np.asarray(self.mu)) / s
        return (0.5 * r * r + np.log(s) + 0.5 * math.log(2.0 * math.pi)).sum(axis=-1)

    def grad(self, x):
        s = np.asarray(self.sigma)
        return (np.asarray(x) - np.asarray(self.mu)) / (s * s)


@dataclass(frozen=True)
class Polynomial:
    """g(x) = sum_d sum_i c_i x_d^i with coefficients in increasing degree."""

    coefficients: tuple[float, ...]
    id: str = "polynomial"

    def value(self, x):
        c = np.asarray(self.coefficients[::-1], dtype=float)
        return np.polyval(c, np.asarray(x)).sum(axis=-1)

    def grad(self, x):
        c = np.polyder(np.asarray(self.coefficients[::-1], dtype=float))
        return np.polyval(c, np.asarray(x)) if c.size else np.zeros(np.shape(x))


@dataclass(frozen=True)
class BoundedPolynomial:
    """g(x) = (1 + x_1 - x_1^2 / 2 + x_1 x_D) exp(-|x|^2 / (2 width^2)).

    The x_1 x_D term couples the first and last dimensions; the Gaussian
    envelope keeps g bounded.
    """

    width: float = 5.0
    id: str = "bounded-poly"

    def _parts(self, x):
        x = np.asarray(x, dtype=float)
        x1, xD = x[..., 0], x[..., -1]
        poly = 1.0 + x1 - 0.5 * x1 * x1 + x1 * xD
        env = np.exp(-0.5 * (x * x).sum(axis=-1) / self.width**2)
        return x, poly, env

    def value(self, x):
        _, poly, env = self._parts(x)
        return poly * env

    def grad(self, x):
        x, poly, env = self._parts(x)
        dpoly = np.zeros_like(x)
        dpoly[..., 0] += 1.0 - x[..., 0] + x[..., -1]
        dpoly[..., -1] += x[..., 0]
        return env[..., None] * (dpoly - poly[..., None] * x / self.width**2)


@dataclass(frozen=True)
class Constant:
    c: float = 1.0
    id: str = "constant"

    def value(self, x):
        return np.full(np.shape(x)[:-1], float(self.c))

    def grad(self, x):
        return np.zeros(np.shape(x))


LOSS_IDS = ("linear", "quadratic", "neg-log-target", "polynomial", "bounded-poly", "constant")


def make_loss(spec, D: int):
    """Build a loss from an id string or a dict ``{"id": ..., **params}``."""
    if isinstance(spec, str):
        spec = {"id": spec}
    spec = dict(spec)
    kind = spec.pop("id", None)

    def vec(name, default):
        v = tuple(float(a) for a in spec.get(name, default))
        if len(v) != D:
            raise InvalidInputError(f"loss parameter {name!r} must have length D={D}")
        return v

    if kind == "linear":
        return Linear(vec("w", [1.0] + [0.0] * (D - 1)))
    if kind == "quadratic":
        return Quadratic(vec("center", [0.0] * D))
    if kind == "neg-log-target":
        sigma = vec("sigma", [1.0] * D)
        if min(sigma) <= 0:
            raise InvalidInputError("neg-log-target sigma must be positive")
        return NegLogTarget(vec("mu", [0.0] * D), sigma)
    if kind == "polynomial":
        coeffs = spec.get("coefficients")
        if not coeffs:
            raise InvalidInputError("polynomial loss needs a non-empty 'coefficients' list")
        return Polynomial(tuple(float(c) for c in coeffs))
    if kind == "bounded-poly":
        return BoundedPolynomial(float(spec.get("width", 5.0)))
    if kind == "constant":
        return Constant(float(spec.get("c", 1.0)))
    raise InvalidInputError(f"unknown loss id {kind!r}; expected one of {LOSS_IDS}")
