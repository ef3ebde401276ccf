"""Sparse multivariate polynomials as ``{exponent tuple: coefficient}`` dicts."""

from __future__ import annotations

from collections import defaultdict
from typing import Mapping

import numpy as np

Poly = dict[tuple[int, ...], float]


def canonical(p: Mapping[tuple[int, ...], float]) -> Poly:
    return {tuple(int(e) for e in k): float(v) for k, v in p.items() if v != 0}


def constant(value: float, dim: int) -> Poly:
    return canonical({(0,) * dim: value})


def monomial(axis: int, dim: int, power: int = 1, coef: float = 1.0) -> Poly:
    e = [0] * dim
    e[axis] = power
    return canonical({tuple(e): coef})


def add(*ps: Mapping) -> Poly:
    out: dict = defaultdict(float)
    for p in ps:
        for k, v in p.items():
            out[k] += v
    return canonical(out)


def scale(p: Mapping, c: float) -> Poly:
    return canonical({k: c * v for k, v in p.items()})


def mul(p: Mapping, q: Mapping) -> Poly:
    out: dict = defaultdict(float)
    for ka, va in p.items():
        for kb, vb in q.items():
            out[tuple(a + b for a, b in zip(ka, kb))] += va * vb
    return canonical(out)


def diff(p: Mapping, axis: int) -> Poly:
    out = {}
    for k, v in p.items():
        if k[axis]:
            e = list(k)
            e[axis] -= 1
            out[tuple(e)] = v * k[axis]
    return canonical(out)


def degree(p: Mapping) -> int:
    return max((sum(k) for k in p), default=0)


def max_axis_degree(p: Mapping) -> int:
    return max((max(k) for k in p if k), default=0)


def shift(p: Mapping, offset) -> Poly:
    """Return ``q`` with ``q(y) = p(y + offset)``."""
    offset = np.asarray(offset, dtype=float)
    dim = len(offset)
    out: Poly = {}
    for k, v in p.items():
        term = constant(v, dim)
        for axis, power in enumerate(k):
            if power:
                base = add(monomial(axis, dim), constant(offset[axis], dim))
                for _ in range(power):
                    term = mul(term, base)
        out = add(out, term)
    return out


def evaluate(p: Mapping, x) -> np.ndarray:
    """Evaluate at an ``(N, d)`` array of points."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    val = np.zeros(x.shape[0])
    powers: dict = {}

    def power(axis, e):
        if (axis, e) not in powers:
            powers[axis, e] = x[:, axis] if e == 1 else power(axis, e - 1) * x[:, axis]
        return powers[axis, e]

    for k, v in p.items():
        term = None
        for axis, e in enumerate(k):
            if e:
                term = power(axis, e) if term is None else term * power(axis, e)
        val += v if term is None else v * term
    return val
