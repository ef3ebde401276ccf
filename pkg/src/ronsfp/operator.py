"""Polynomial drift models and the Fokker-Planck operator on the mixture.

The operator is ``L p = -div(F p) + sum_l nu_l d^2 p / dx_l^2`` with a
polynomial drift ``F`` (coefficients may depend on time) and a constant,
diagonal diffusion ``nu_l = sigma_l**2 / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence, Union

import numpy as np

from . import polynomial as P
from .gausspoly import GaussPoly, GaussPolySum
from .mixture import MixtureState, param_gradient


class UnsupportedModelError(TypeError):
    pass


@dataclass(frozen=True)
class Constant:
    value: float

    def __call__(self, t: float) -> float:
        return self.value


@dataclass(frozen=True)
class Affine:
    """``intercept + slope * t``"""

    intercept: float
    slope: float

    def __call__(self, t: float) -> float:
        return self.intercept + self.slope * t


@dataclass(frozen=True)
class Sinusoidal:
    """``amplitude * (sin(omega * t + phase) + offset)``"""

    amplitude: float
    omega: float
    offset: float = 0.0
    phase: float = 0.0

    def __call__(self, t: float) -> float:
        return self.amplitude * (np.sin(self.omega * t + self.phase) + self.offset)


Coefficient = Union[float, Callable[[float], float]]


class DriftModel:
    """Polynomial drift field plus constant diagonal diffusion.

    ``components[l]`` maps exponent tuples to coefficients; a coefficient is
    either a number or a callable of time (see :class:`Affine`,
    :class:`Sinusoidal`).
    """

    def __init__(self, components: Sequence[Mapping[tuple, Coefficient]],
                 diffusion: Union[float, Sequence[float]]):
        self.dim = len(components)
        if self.dim < 1:
            raise ValueError("drift needs at least one component")
        comps = []
        for l, comp in enumerate(components):
            if not isinstance(comp, Mapping):
                raise UnsupportedModelError(
                    f"drift component {l} is {type(comp).__name__}; only polynomial "
                    "drifts (exponent -> coefficient mappings) are supported")
            clean = {}
            for k, c in comp.items():
                k = tuple(int(e) for e in k)
                if len(k) != self.dim or min(k) < 0:
                    raise ValueError(f"bad exponent {k} in drift component {l}")
                if not (callable(c) or isinstance(c, (int, float, np.integer, np.floating))):
                    raise UnsupportedModelError(f"coefficient {c!r} is neither number nor callable")
                clean[k] = c
            comps.append(clean)
        self.components = comps
        nu = np.broadcast_to(np.asarray(diffusion, dtype=float), (self.dim,)).copy()
        if np.any(nu < 0) or not np.all(np.isfinite(nu)):
            raise ValueError(f"diffusion must be nonnegative and finite: {nu}")
        nu.setflags(write=False)
        self.diffusion = nu
        self.time_dependent = any(callable(c) and not isinstance(c, Constant)
                                  for comp in comps for c in comp.values())
        self._static = None if self.time_dependent else self._polys(0.0)

    @classmethod
    def zero(cls, dim: int, nu: float = 0.0) -> "DriftModel":
        return cls([{} for _ in range(dim)], nu)

    def _polys(self, t: float) -> list:
        return [P.canonical({k: (c(t) if callable(c) else c) for k, c in comp.items()})
                for comp in self.components]

    def polys(self, t: float) -> list:
        """Drift components as plain polynomials at time ``t``."""
        return self._static if self._static is not None else self._polys(t)

    def divergence(self, t: float) -> dict:
        return P.add(*[P.diff(p, l) for l, p in enumerate(self.polys(t))])

    @property
    def degree(self) -> int:
        return max((P.degree(c) for c in self.components), default=0)

    def __call__(self, x, t: float = 0.0) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.stack([P.evaluate(p, x) for p in self.polys(t)], axis=1)

    @property
    def noise(self) -> np.ndarray:
        """Per-axis noise intensity ``sigma_l = sqrt(2 nu_l)``."""
        return np.sqrt(2 * self.diffusion)


def ornstein_uhlenbeck(gamma: float, sigma: float, dim: int = 1) -> DriftModel:
    comps = [P.monomial(l, dim, coef=-gamma) for l in range(dim)]
    return DriftModel(comps, sigma**2 / 2)


def bistable(sigma: float) -> DriftModel:
    """Gradient drift of the double well ``V = x^4/4 - x^2/2``."""
    return DriftModel([{(1,): 1.0, (3,): -1.0}], sigma**2 / 2)


def duffing(a1: float, a2: float, a3: float, sigma: float) -> DriftModel:
    """Stochastic Duffing oscillator; noise enters the velocity only."""
    return DriftModel(
        [{(0, 1): 1.0}, {(1, 0): a1, (0, 1): a2, (3, 0): a3}],
        [0.0, sigma**2 / 2],
    )


def harmonic_trap(dim: int, gamma: float, nu: float, forcing: Coefficient) -> DriftModel:
    """Interacting particles ``F_i = a(t) - x_i + (gamma/d) sum_j (x_j - x_i)``."""
    comps = []
    for i in range(dim):
        comp: dict = {(0,) * dim: forcing}
        for j in range(dim):
            e = [0] * dim
            e[j] = 1
            if j == i:
                comp[tuple(e)] = -1.0 - gamma + gamma / dim
            else:
                comp[tuple(e)] = gamma / dim
        comps.append(comp)
    return DriftModel(comps, nu)


def _check(drift: DriftModel, theta: MixtureState):
    if drift.dim != theta.dim:
        raise ValueError(f"drift dimension {drift.dim} != mixture dimension {theta.dim}")


def apply_fp_operator(drift: DriftModel, theta: MixtureState, t: float) -> GaussPolySum:
    """Exact ``L p_hat`` as a sum of polynomial-times-Gaussian terms."""
    _check(drift, theta)
    d = theta.dim
    F = drift.polys(t)
    out = []
    for A, L, c in zip(theta.amps, theta.widths, theta.centers):
        g = GaussPolySum([GaussPoly(P.constant(A * A, d), tuple(c), L * L)])
        acc = GaussPolySum(dim=d)
        for l in range(d):
            if F[l]:
                flux = GaussPolySum([GaussPoly(P.mul(F[l], t_.poly), t_.center, t_.width)
                                     for t_ in g])
                acc = acc + flux.differentiate(l).scale(-1.0)
            if drift.diffusion[l]:
                acc = acc + g.differentiate(l).differentiate(l).scale(drift.diffusion[l])
        out.extend(acc.terms)
    return GaussPolySum(out, d)


def fp_operator_values(drift: DriftModel, theta: MixtureState, t: float, x) -> np.ndarray:
    """Pointwise ``L p_hat`` at an ``(N, d)`` batch, by the expanded product rule."""
    _check(drift, theta)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if theta.dim == 1 and x.shape[1] != 1:
        x = x.reshape(-1, 1)
    F = drift(x, t)
    divF = P.evaluate(drift.divergence(t), x)
    L2 = theta.widths**2
    diff = x[:, None, :] - theta.centers[None, :, :]
    e = np.exp(-np.einsum("nkd,nkd->nk", diff, diff) / L2)
    # L g / g for g = A^2 exp(-|x-c|^2/L^2)
    q = (-divF[:, None]
         + 2 / L2 * np.einsum("nd,nkd->nk", F, diff)
         + np.einsum("d,nkd->nk", drift.diffusion, 4 * diff**2 / L2[:, None]**2)
         - 2 * drift.diffusion.sum() / L2)
    return (e * q) @ theta.amps**2


def residual(drift: DriftModel, theta: MixtureState, theta_dot, t: float, x) -> np.ndarray:
    """Pointwise residual ``sum_j dp/dtheta_j * theta_dot_j - L p_hat``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if theta.dim == 1 and x.shape[1] != 1:
        x = x.reshape(-1, 1)
    J = param_gradient(theta, x)
    return J @ np.asarray(theta_dot, dtype=float) - fp_operator_values(drift, theta, t, x)
