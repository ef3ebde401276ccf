"""Independent references: Monte Carlo SDE ensembles, analytic densities,
moment ODEs of the harmonic trap, and quadrature error norms."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate as si

from .mixture import MixtureState, evaluate
from .operator import Coefficient, DriftModel

ESCAPE_RADIUS = 1e6
BLOCK_SIZE = 1 << 14


@dataclass
class EnsembleSpec:
    particles: int
    h_sde: float
    seed: int = 0
    scheme: str = "euler-maruyama"
    initial: Optional[MixtureState] = None
    initial_mean: Optional[np.ndarray] = None
    initial_cov: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.particles < 1 or not self.h_sde > 0:
            raise ValueError("need particles >= 1 and h_sde > 0")
        if self.scheme not in ("euler-maruyama", "predictor-corrector"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if (self.initial is None) == (self.initial_mean is None):
            raise ValueError("give exactly one initial sampler: a mixture or a Gaussian")


@dataclass
class Ensemble:
    times: np.ndarray
    snapshots: list
    escaped: int = 0
    wall_seconds: float = 0.0

    def at(self, t: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"no snapshot at t={t}")
        return self.snapshots[i]


def _initial_block(spec: EnsembleSpec, dim: int, size: int, rng) -> np.ndarray:
    if spec.initial is not None:
        return spec.initial.sample(size, rng)
    mean = np.asarray(spec.initial_mean, dtype=float).reshape(dim)
    if spec.initial_cov is None or not np.any(spec.initial_cov):
        return np.tile(mean, (size, 1))
    chol = np.linalg.cholesky(np.asarray(spec.initial_cov, dtype=float))
    return mean + rng.standard_normal((size, dim)) @ chol.T


def _run_block(drift: DriftModel, spec: EnsembleSpec, t0: float, times, size, seed_seq):
    rng = np.random.default_rng(seed_seq)
    d = drift.dim
    X = _initial_block(spec, d, size, rng)
    sigma = drift.noise
    noisy = sigma > 0
    out = []
    t = t0
    for t_snap in times:
        n = int(np.ceil((t_snap - t) / spec.h_sde - 1e-9))
        if n > 0:
            h = (t_snap - t) / n
            sq = np.sqrt(h)
            for _ in range(n):
                dW = np.zeros_like(X)
                dW[:, noisy] = rng.standard_normal((X.shape[0], int(noisy.sum()))) * (sigma[noisy] * sq)
                F0 = drift(X, t)
                if spec.scheme == "euler-maruyama":
                    X = X + F0 * h + dW
                else:
                    Xp = X + F0 * h + dW
                    X = X + 0.5 * (F0 + drift(Xp, t + h)) * h + dW
                t += h
        t = t_snap
        out.append(X.copy())
    return out


def simulate_sde(drift: DriftModel, spec: EnsembleSpec, t_end: float,
                 snapshot_times: Optional[Sequence[float]] = None, t0: float = 0.0,
                 threads: int = 1) -> Ensemble:
    """Simulate ``dX = F dt + sigma dW`` for ``spec.particles`` particles.

    Particles are split into fixed-size blocks, each with its own seed
    substream, so the result does not depend on ``threads``.
    """
    import time as _time

    times = np.asarray([t_end] if snapshot_times is None else snapshot_times, dtype=float)
    if np.any(np.diff(times) <= 0) or times[0] < t0:
        raise ValueError("snapshot times must increase from t0")
    sizes = [BLOCK_SIZE] * (spec.particles // BLOCK_SIZE)
    if spec.particles % BLOCK_SIZE:
        sizes.append(spec.particles % BLOCK_SIZE)
    seeds = np.random.SeedSequence(spec.seed).spawn(len(sizes))
    start = _time.perf_counter()
    jobs = [(drift, spec, t0, times, n, s) for n, s in zip(sizes, seeds)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            blocks = list(pool.map(lambda a: _run_block(*a), jobs))
    else:
        blocks = [_run_block(*a) for a in jobs]
    snaps = [np.concatenate([b[i] for b in blocks]) for i in range(len(times))]
    escaped = 0
    for X in snaps:
        bad = ~np.all(np.isfinite(X) & (np.abs(X) < ESCAPE_RADIUS), axis=1)
        escaped = max(escaped, int(bad.sum()))
    return Ensemble(times, snaps, escaped, _time.perf_counter() - start)


@dataclass
class Moments:
    mean: np.ndarray
    second: np.ndarray
    count: int
    se_mean: np.ndarray = field(default=None)
    se_second: np.ndarray = field(default=None)

    @property
    def covariance(self) -> np.ndarray:
        return self.second - np.outer(self.mean, self.mean)


def empirical_moments(X: np.ndarray) -> Moments:
    """Sample mean, second-moment matrix ``E[X_i X_j]`` and their standard errors."""
    X = np.asarray(X, dtype=float)
    X = X[np.all(np.isfinite(X), axis=1)]
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty ensemble")
    mean = X.mean(axis=0)
    prods = X[:, :, None] * X[:, None, :]
    second = prods.mean(axis=0)
    if n > 1:
        se_mean = X.std(axis=0, ddof=1) / np.sqrt(n)
        se_second = prods.std(axis=0, ddof=1) / np.sqrt(n)
    else:
        se_mean = np.zeros_like(mean)
        se_second = np.zeros_like(second)
    return Moments(mean, second, n, se_mean, se_second)


def mixture_moments(theta: MixtureState) -> Moments:
    mean = theta.mean()
    cov = theta.covariance()
    return Moments(mean, cov + np.outer(mean, mean), 0)


def harmonic_moment_odes(forcing: Coefficient, gamma: float, dim: int, nu: float,
                         mean0, cov0, times: Sequence[float], t0: float = 0.0,
                         rtol: float = 1e-12, atol: float = 1e-14):
    """Mean and covariance of the harmonic-trap SDE from its closed moment system.

    Integrates ``dX_i/dt = a - X_i + (g/d) sum_j (X_j - X_i)`` and the
    correlation ODE for ``S_ij = E[X_i X_j]``; returns ``(means, covs)`` at
    ``times`` with ``cov = S - mean mean^T``.
    """
    d = dim
    a = forcing if callable(forcing) else (lambda t, v=float(forcing): v)
    mean0 = np.asarray(mean0, dtype=float).reshape(d)
    S0 = np.asarray(cov0, dtype=float).reshape(d, d) + np.outer(mean0, mean0)

    def rhs(t, z):
        m = z[:d]
        S = z[d:].reshape(d, d)
        at = a(t)
        dm = at - m + gamma / d * (m.sum() - d * m)
        col = S.sum(axis=0)
        dS = (at * (m[:, None] + m[None, :]) - 2 * (1 + gamma) * S
              + gamma / d * (col[None, :] + col[:, None]) + 2 * nu * np.eye(d))
        return np.concatenate([dm, dS.reshape(-1)])

    times = np.asarray(times, dtype=float)
    sol = si.solve_ivp(rhs, (t0, float(times[-1])), np.concatenate([mean0, S0.reshape(-1)]),
                       method="DOP853", t_eval=times, rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(sol.message)
    means = sol.y[:d].T
    S = sol.y[d:].T.reshape(-1, d, d)
    covs = S - means[:, :, None] * means[:, None, :]
    return means, covs


# ---------------------------------------------------------------------------
# analytic densities


@dataclass
class EquilibriumRef:
    """Normalized reference density built from separable 1D log-factors.

    ``factors[j]`` is a vectorized callable giving the log of the
    (unnormalized) marginal factor along axis ``j``; the normalizing constant is found by
    adaptive quadrature on a box that leaves tail mass below 1e-12.
    """

    kind: str
    params: dict
    factors: list
    constant: float = field(init=False)
    boxes: list = field(init=False)

    def __post_init__(self):
        C = 1.0
        self.boxes = []
        for logf in self.factors:
            B = _tail_box(logf)
            peak = float(np.max(logf(np.linspace(-B, B, 2001))))
            val, _ = si.quad(lambda x: np.exp(logf(x) - peak), -B, B,
                             epsabs=0, epsrel=1e-13, limit=400)
            C /= val * np.exp(peak)
            self.boxes.append((-B, B))
        if not (np.isfinite(C) and C > 0):
            raise ValueError("normalizing constant is not finite and positive")
        self.constant = C

    @property
    def dim(self) -> int:
        return len(self.factors)

    def __call__(self, x) -> np.ndarray:
        return equilibrium_density(self, x)


def _tail_box(logf, start: float = 1.0) -> float:
    grid = np.linspace(-50, 50, 20001)
    vals = np.asarray(logf(grid), dtype=float)
    keep = vals > vals.max() + np.log(1e-16)
    return float(max(np.abs(grid[keep]).max() * 1.2, start))


def equilibrium_density(ref: EquilibriumRef, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if ref.dim == 1 and x.shape[1] != 1:
        x = x.reshape(-1, 1)
    logp = sum(np.asarray(f(x[:, j]), dtype=float) for j, f in enumerate(ref.factors))
    return ref.constant * np.exp(logp)


def ou_density(gamma: float, sigma: float, t: float) -> EquilibriumRef:
    """Exact OU density started from a point mass at the origin."""
    var = sigma**2 * (1 - np.exp(-2 * gamma * t)) / (2 * gamma)
    return EquilibriumRef("ou-exact", {"gamma": gamma, "sigma": sigma, "t": t},
                          [lambda x, v=var: -x * x / (2 * v)])


def bistable_equilibrium(sigma: float) -> EquilibriumRef:
    nu = sigma**2 / 2
    return EquilibriumRef("bistable-eq", {"sigma": sigma},
                          [lambda x: -(x**4 / 4 - x**2 / 2) / nu])


def duffing_equilibrium(a1: float, a2: float, a3: float, sigma: float) -> EquilibriumRef:
    s2 = sigma**2
    return EquilibriumRef(
        "duffing-eq", {"a1": a1, "a2": a2, "a3": a3, "sigma": sigma},
        [lambda x: (-a1 * a2 * x**2 - 0.5 * a2 * a3 * x**4) / s2,
         lambda y: a2 * y**2 / s2])


# ---------------------------------------------------------------------------
# error norms


def _legendre_grid(box, n: int):
    xg, wg = np.polynomial.legendre.leggauss(n)
    axes, weights = [], []
    for lo, hi in box:
        axes.append((hi - lo) / 2 * xg + (hi + lo) / 2)
        weights.append((hi - lo) / 2 * wg)
    mesh = np.meshgrid(*axes, indexing="ij")
    wmesh = np.meshgrid(*weights, indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
    return pts, np.prod([w.reshape(-1) for w in wmesh], axis=0)


def l2_relative_error(theta: MixtureState, ref: Callable, box=None, n: int = 400,
                      method: str = "quadrature", samples: int = 200_000,
                      seed: int = 0) -> float:
    """``|p_hat - ref|_2 / |ref|_2`` over ``box``.

    ``method="quadrature"`` uses a tensor Gauss-Legendre rule (d <= 2);
    ``method="montecarlo"`` importance-samples from ``p_hat`` (any d).
    """
    d = theta.dim
    if method == "montecarlo":
        rng = np.random.default_rng(seed)
        X = theta.sample(samples, rng)
        q = evaluate(theta, X)
        r = np.asarray(ref(X), dtype=float)
        return float(np.sqrt(np.mean((q - r) ** 2 / q) / np.mean(r**2 / q)))
    if d > 2:
        raise ValueError("quadrature error norm supports d <= 2; use method='montecarlo'")
    if box is None:
        box = getattr(ref, "boxes", None) or [(-6.0, 6.0)] * d
    pts, w = _legendre_grid(box, n)
    p = evaluate(theta, pts)
    r = np.asarray(ref(pts), dtype=float)
    return float(np.sqrt(w @ (p - r) ** 2 / (w @ r**2)))
