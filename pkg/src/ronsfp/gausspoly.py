"""Exact algebra of polynomial-times-isotropic-Gaussian functions.

A :class:`GaussPoly` is ``q(x) * exp(-|x - mu|**2 / a)`` with ``q`` a sparse
polynomial in absolute coordinates. Products, partial derivatives and
integrals over R^d stay in closed form, which is what lets the metric tensor
and the right-hand side be assembled without quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb, fsum
from typing import Iterable

import numpy as np

from . import polynomial as P


@dataclass(frozen=True)
class GaussPoly:
    poly: dict
    center: tuple
    width: float

    def __post_init__(self):
        center = tuple(float(c) for c in np.atleast_1d(self.center))
        if not self.width > 0:
            raise ValueError(f"Gaussian width parameter must be positive, got {self.width}")
        poly = P.canonical(self.poly)
        for k in poly:
            if len(k) != len(center) or min(k, default=0) < 0:
                raise ValueError(f"bad exponent {k} for dimension {len(center)}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "poly", poly)
        object.__setattr__(self, "width", float(self.width))

    @property
    def dim(self) -> int:
        return len(self.center)

    def __call__(self, x) -> np.ndarray:
        return evaluate(self, x)


def _check_dims(d1: int, d2: int):
    if d1 != d2:
        raise ValueError(f"dimension mismatch: {d1} vs {d2}")


def evaluate(g: GaussPoly, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if g.dim == 1 and x.shape[1] != 1:
        x = x.reshape(-1, 1)
    _check_dims(x.shape[1], g.dim)
    sq = np.sum((x - np.asarray(g.center)) ** 2, axis=1)
    return P.evaluate(g.poly, x) * np.exp(-sq / g.width)


def _order_key(g: GaussPoly):
    return (g.width, g.center, tuple(sorted(g.poly.items())))


def product(g1: GaussPoly, g2: GaussPoly) -> GaussPoly:
    _check_dims(g1.dim, g2.dim)
    if _order_key(g2) < _order_key(g1):
        g1, g2 = g2, g1
    a1, a2 = g1.width, g2.width
    m1, m2 = np.asarray(g1.center), np.asarray(g2.center)
    width = a1 * a2 / (a1 + a2)
    center = (a2 * m1 + a1 * m2) / (a1 + a2)
    pref = np.exp(-np.sum((m1 - m2) ** 2) / (a1 + a2))
    return GaussPoly(P.scale(P.mul(g1.poly, g2.poly), pref), tuple(center), width)


def _moments_1d(mu: float, a: float, kmax: int) -> np.ndarray:
    """``int x**k exp(-(x - mu)**2 / a) dx`` for k = 0..kmax via binomial shift."""
    var = a / 2
    central = np.zeros(kmax + 1)
    central[0] = 1.0
    for k in range(2, kmax + 1, 2):
        central[k] = central[k - 2] * (k - 1) * var
    raw = np.array([
        sum(comb(k, i) * mu ** (k - i) * central[i] for i in range(0, k + 1, 2))
        for k in range(kmax + 1)
    ])
    return raw * np.sqrt(np.pi * a)


def integral(g: GaussPoly) -> float:
    if not g.poly:
        return 0.0
    kmax = max(max(k) for k in g.poly)
    tables = [_moments_1d(mu, g.width, kmax) for mu in g.center]
    return fsum(v * np.prod([tables[j][e] for j, e in enumerate(k)])
                for k, v in g.poly.items())


def differentiate(g: GaussPoly, axis: int) -> GaussPoly:
    """Partial derivative along ``axis`` (0-based)."""
    if not 0 <= axis < g.dim:
        raise ValueError(f"axis {axis} out of range for dimension {g.dim}")
    # d/dx_l exp(-|x-mu|^2/a) = -2 (x_l - mu_l) / a * exp(...)
    lin = P.add(P.monomial(axis, g.dim, coef=-2 / g.width),
                P.constant(2 * g.center[axis] / g.width, g.dim))
    return GaussPoly(P.add(P.diff(g.poly, axis), P.mul(g.poly, lin)), g.center, g.width)


class GaussPolySum:
    """Finite sum of GaussPoly terms; terms sharing a Gaussian are merged."""

    def __init__(self, terms: Iterable[GaussPoly] = (), dim: int | None = None):
        merged: dict = {}
        for t in terms:
            if dim is None:
                dim = t.dim
            _check_dims(t.dim, dim)
            key = (t.center, t.width)
            merged[key] = P.add(merged[key], t.poly) if key in merged else t.poly
        self.dim = dim
        self.terms = tuple(GaussPoly(p, c, w) for (c, w), p in merged.items() if p)

    def __len__(self) -> int:
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    def __add__(self, other: "GaussPolySum") -> "GaussPolySum":
        return GaussPolySum(self.terms + other.terms, self.dim or other.dim)

    def scale(self, c: float) -> "GaussPolySum":
        return GaussPolySum((GaussPoly(P.scale(t.poly, c), t.center, t.width)
                             for t in self.terms), self.dim)

    def differentiate(self, axis: int) -> "GaussPolySum":
        return GaussPolySum((differentiate(t, axis) for t in self.terms), self.dim)

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.dim == 1 and x.shape[1] != 1:
            x = x.reshape(-1, 1)
        out = np.zeros(x.shape[0])
        for t in self.terms:
            out += evaluate(t, x)
        return out

    def integral(self) -> float:
        return fsum(integral(t) for t in self.terms)


def inner_product_l2(s1: GaussPolySum, s2: GaussPolySum) -> float:
    if s1.dim is not None and s2.dim is not None:
        _check_dims(s1.dim, s2.dim)
    return fsum(integral(product(t1, t2)) for t1 in s1 for t2 in s2)
