"""Assembly and constrained solution of the RONS linear system.

Each step solves ``(M + alpha I) theta_dot = f - lambda grad I`` where ``M``
is the Gram matrix of the parameter partials, ``f`` projects the
Fokker-Planck operator onto them, and ``lambda`` keeps the total probability
fixed. Three Hilbert-space realizations are available: exact L2 inner
products (closed form), plain collocation, and collocation weighted by
``1 / p_hat`` (the Fisher metric).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from enum import Enum
from math import fsum
from typing import Optional

import numpy as np
import scipy.linalg as sla

from . import _kernels
from . import polynomial as P
from .gausspoly import GaussPoly, GaussPolySum, inner_product_l2
from .mixture import (MixtureState, evaluate, param_gradient,
                      total_probability_gradient)
from .operator import DriftModel, apply_fp_operator, fp_operator_values

log = logging.getLogger(__name__)

WEIGHT_FLOOR = 1e-14
FLUSH_RATIO = _kernels.FLUSH_RATIO
_potrf = sla.get_lapack_funcs("potrf", dtype=np.float64)


class RegularizationError(np.linalg.LinAlgError):
    """``M + alpha I`` could not be factorized."""


class HilbertMode(str, Enum):
    L2_SYMBOLIC = "L2_symbolic"
    L2_COLLOCATION = "L2_collocation"
    WEIGHTED_COLLOCATION = "weighted_collocation"


@dataclass(frozen=True)
class CollocationGrid:
    points: np.ndarray
    scheme: str = "custom"
    box: Optional[tuple] = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.shape[0] == 0 or not np.all(np.isfinite(pts)):
            raise ValueError("collocation grid must be nonempty and finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def equidistant(cls, lo, hi, n_per_dim: int) -> "CollocationGrid":
        lo, hi = np.atleast_1d(lo).astype(float), np.atleast_1d(hi).astype(float)
        axes = [np.linspace(a, b, n_per_dim) for a, b in zip(lo, hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
        return cls(pts, "equidistant-box", (tuple(lo), tuple(hi)))

    @classmethod
    def uniform_random(cls, lo, hi, n: int, rng: np.random.Generator) -> "CollocationGrid":
        lo, hi = np.atleast_1d(lo).astype(float), np.atleast_1d(hi).astype(float)
        pts = lo + (hi - lo) * rng.random((n, lo.size))
        return cls(pts, "random-uniform-box", (tuple(lo), tuple(hi)))

    @classmethod
    def from_mixture(cls, theta: MixtureState, n: int, rng: np.random.Generator):
        return cls(theta.sample(n, rng), "sampled-from-mixture")

    @property
    def size(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class HilbertChoice:
    mode: HilbertMode = HilbertMode.L2_SYMBOLIC
    collocation: Optional[CollocationGrid] = None

    def __post_init__(self):
        mode = HilbertMode(self.mode)
        object.__setattr__(self, "mode", mode)
        if (mode is HilbertMode.L2_SYMBOLIC) != (self.collocation is None):
            raise ValueError("a collocation grid is required exactly for collocation modes")

    @property
    def weighted(self) -> bool:
        return self.mode is HilbertMode.WEIGHTED_COLLOCATION


@dataclass
class RonsSystem:
    metric: np.ndarray
    rhs: np.ndarray
    constraint_grad: np.ndarray
    alpha: float
    mode: str
    clamped_points: int = 0
    lam: Optional[float] = None
    _factor: Optional[tuple] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.rhs.shape[0]


# ---------------------------------------------------------------------------
# closed-form L2 assembly


def _pair_gaussians(theta: MixtureState):
    """Products of term Gaussians: ``e_k e_m = W_km/(pi a)^{d/2} * N-shaped bump``.

    Returns per-pair weight ``W`` (integral of ``e_k e_m``), per-dimension
    variance ``s = a/2`` of the product and its center ``mu``.
    """
    d = theta.dim
    L2 = theta.widths**2
    c = theta.centers
    S = L2[:, None] + L2[None, :]
    a = L2[:, None] * L2[None, :] / S
    mu = (L2[None, :, None] * c[:, None, :] + L2[:, None, None] * c[None, :, :]) / S[..., None]
    dc = c[:, None, :] - c[None, :, :]
    overlap = np.exp(-np.einsum("kmd,kmd->km", dc, dc) / S)
    overlap[overlap < FLUSH_RATIO] = 0.0
    W = overlap * (np.pi * a) ** (d / 2)
    return W, a / 2, mu


def _partial_scales(theta: MixtureState):
    A, L = theta.amps, theta.widths
    return 2 * A, 2 * A**2 / L**3, 2 * A**2 / L**2


def metric_l2_reference(theta: MixtureState) -> np.ndarray:
    """Exact L2 Gram matrix of the parameter partials (vectorized NumPy).

    Every block is one of six pair kernels (A-A, A-L, A-c, L-L, L-c, c-c),
    each a Gaussian moment of ``|x-c_k|^2`` and ``(x-c_k)_l`` under the
    product Gaussian of the pair.
    """
    r, d = theta.terms, theta.dim
    W, s, mu = _pair_gaussians(theta)
    sA, sL, sc = _partial_scales(theta)
    dk = mu - theta.centers[:, None, :]          # mu_km - c_k
    dm = mu - theta.centers[None, :, :]          # mu_km - c_m
    qk = np.einsum("kmd,kmd->km", dk, dk) + d * s
    qm = np.einsum("kmd,kmd->km", dm, dm) + d * s
    dot = np.einsum("kmd,kmd->km", dk, dm)

    M = np.empty((r, d + 2, r, d + 2))
    M[:, 0, :, 0] = W * np.outer(sA, sA)
    M[:, 0, :, 1] = W * np.outer(sA, sL) * qm
    M[:, 1, :, 0] = W * np.outer(sL, sA) * qk
    M[:, 0, :, 2:] = (W * np.outer(sA, sc))[..., None] * dm
    M[:, 2:, :, 0] = np.moveaxis((W * np.outer(sc, sA))[..., None] * dk, 2, 1)
    M[:, 1, :, 1] = W * np.outer(sL, sL) * (qk * qm + 2 * d * s**2 + 4 * s * dot)
    M[:, 1, :, 2:] = (W * np.outer(sL, sc))[..., None] * (qk[..., None] * dm + 2 * s[..., None] * dk)
    M[:, 2:, :, 1] = np.moveaxis(
        (W * np.outer(sc, sL))[..., None] * (qm[..., None] * dk + 2 * s[..., None] * dm), 2, 1)
    cc = dk[..., :, None] * dm[..., None, :] + s[..., None, None] * np.eye(d)
    M[:, 2:, :, 2:] = np.transpose((W * np.outer(sc, sc))[..., None, None] * cc, (0, 2, 1, 3))
    n = r * (d + 2)
    M = M.reshape(n, n)
    return 0.5 * (M + M.T)


def _monomial_index(polys) -> list:
    keys = set()
    for p in polys:
        keys.update(p.keys())
    return sorted(keys, key=lambda k: (sum(k), tuple(-e for e in k)))


def _raw_moment_table(s, mu, pmax: int) -> np.ndarray:
    """``E[y^p]`` for a normal with mean ``mu`` and variance ``s`` (broadcast)."""
    T = np.empty(mu.shape + (pmax + 1,))
    T[..., 0] = 1.0
    if pmax >= 1:
        T[..., 1] = mu
    for p in range(2, pmax + 1):
        T[..., p] = mu * T[..., p - 1] + (p - 1) * s * T[..., p - 2]
    return T


# reference points for the shifted coordinates are snapped to this grid so
# the polynomial bookkeeping can be reused while the mixture drifts
_SHIFT_GRID = 0.25


@dataclass(frozen=True)
class _RhsPlan:
    basis1: list
    E1: np.ndarray
    E2: np.ndarray
    div: tuple
    flux: tuple
    drift_terms: list
    drift_idx: np.ndarray
    drift_val: np.ndarray
    idx_lin: np.ndarray
    idx_sq: np.ndarray
    idx_one: int


def _sparse(poly, index) -> tuple:
    keys = list(poly)
    return (np.array([index[k] for k in keys], dtype=np.int64),
            np.array([poly[k] for k in keys], dtype=float))


def _rhs_plan(drift: DriftModel, t: float, x0: tuple) -> _RhsPlan:
    cache = drift.__dict__.setdefault("_rhs_plans", {})
    key = (None if not drift.time_dependent else t, x0)
    if key in cache:
        return cache[key]
    d = drift.dim
    F = [P.shift(p, np.array(x0)) for p in drift.polys(t)]
    divF = P.add(*[P.diff(p, l) for l, p in enumerate(F)])
    G = P.add(*[P.mul(P.monomial(l, d), p) for l, p in enumerate(F)])
    one = (0,) * d
    lin = [next(iter(P.monomial(l, d))) for l in range(d)]
    sq = [next(iter(P.monomial(l, d, 2))) for l in range(d)]
    basis1 = [one] + lin + sq
    basis2 = _monomial_index([divF, G, *F, *[{k: 1.0} for k in basis1]])
    idx2 = {k: i for i, k in enumerate(basis2)}
    terms = [_sparse(p, idx2) for p in F]
    width = max([len(i) for i, _ in terms] + [1])
    drift_idx = np.full((d, width), -1, dtype=np.int64)
    drift_val = np.zeros((d, width))
    for l, (i, v) in enumerate(terms):
        drift_idx[l, :len(i)] = i
        drift_val[l, :len(v)] = v
    plan = _RhsPlan(basis1, np.array(basis1, dtype=np.int64), np.array(basis2, dtype=np.int64),
                    _sparse(divF, idx2), _sparse(G, idx2), terms, drift_idx, drift_val,
                    np.array([idx2[k] for k in lin]), np.array([idx2[k] for k in sq]),
                    idx2[one])
    if drift.time_dependent:
        cache.clear()
    elif len(cache) > 256:
        cache.pop(next(iter(cache)))
    cache[key] = plan
    return plan


def _rhs_setup(drift: DriftModel, theta: MixtureState, t: float):
    """Shifted origin, operator polynomials ``Q`` and partial polynomials ``Pc``."""
    r, d = theta.terms, theta.dim
    x0 = np.round(theta.centers.mean(axis=0) / _SHIFT_GRID) * _SHIFT_GRID + 0.0
    plan = _rhs_plan(drift, t, tuple(x0.tolist()))
    b = theta.centers - x0
    L2 = theta.widths**2
    nu = np.asarray(drift.diffusion, dtype=float)

    # L g_m = A_m^2 e_m Q_m(y)
    Q = _kernels.operator_terms_kernel(theta.widths, b, nu, *plan.div, *plan.flux,
                                       plan.drift_idx, plan.drift_val, plan.idx_lin,
                                       plan.idx_sq, plan.idx_one, plan.E2.shape[0])

    # parameter partials as polynomials in y over basis1
    sA, sL, sc = _partial_scales(theta)
    Pc = np.zeros((r, d + 2, plan.E1.shape[0]))
    Pc[:, 0, 0] = sA
    Pc[:, 1, 0] = sL * np.sum(b**2, axis=1)
    for l in range(d):
        Pc[:, 1, 1 + l] = -2 * sL * b[:, l]
        Pc[:, 1, 1 + d + l] = sL
        Pc[:, 2 + l, 0] = -sc * b[:, l]
        Pc[:, 2 + l, 1 + l] = sc
    pmax = int(plan.E1.max(initial=0) + plan.E2.max(initial=0))
    return x0, Q, Pc, plan, pmax


def rhs_l2_reference(drift: DriftModel, theta: MixtureState, t: float) -> np.ndarray:
    """Exact ``f_i = <dp/dtheta_i, L p_hat>`` in L2 (vectorized NumPy).

    Works in coordinates ``y = x - x0`` with ``x0`` near the mixture centroid
    to keep the monomial moments well scaled.
    """
    r, d = theta.terms, theta.dim
    x0, Q, Pc, plan, pmax = _rhs_setup(drift, theta, t)
    E1, E2 = plan.E1, plan.E2
    W, s, mu = _pair_gaussians(theta)
    T = _raw_moment_table(s[..., None], mu - x0, pmax)          # (r, r, d, pmax+1)
    G2 = np.ones((r, r, E1.shape[0], E2.shape[0]))
    for j in range(d):
        G2 *= T[:, :, j, :][:, :, E1[:, j][:, None] + E2[:, j][None, :]]
    H = np.einsum("mq,kmpq->kmp", Q, G2)
    Wt = W * (theta.amps**2)[None, :]
    return np.einsum("km,kap,kmp->ka", Wt, Pc, H).reshape(-1)


def metric_l2(theta: MixtureState) -> np.ndarray:
    """Exact L2 Gram matrix of the parameter partials.

    Every block is one of six pair kernels (A-A, A-L, A-c, L-L, L-c, c-c),
    each a Gaussian moment of ``|x-c_k|^2`` and ``(x-c_k)_l`` under the
    product Gaussian of the pair.
    """
    return _kernels.metric_kernel(theta.amps, theta.widths, theta.centers)


def rhs_l2(drift: DriftModel, theta: MixtureState, t: float) -> np.ndarray:
    """Exact ``f_i = <dp/dtheta_i, L p_hat>`` in L2."""
    x0, Q, Pc, plan, pmax = _rhs_setup(drift, theta, t)
    return _kernels.rhs_kernel(theta.amps, theta.widths, theta.centers, x0, Q, Pc,
                               plan.E1, plan.E2, pmax)


def assemble_srons(drift: DriftModel, theta: MixtureState, t: float,
                   alpha: float = 1e-6) -> RonsSystem:
    return RonsSystem(metric_l2(theta), rhs_l2(drift, theta, t),
                      total_probability_gradient(theta), float(alpha), "L2_symbolic")


def parameter_partials(theta: MixtureState) -> list[GaussPolySum]:
    """Each parameter partial as an exact GaussPolySum (flattening order)."""
    d = theta.dim
    out = []
    for A, L, c in zip(theta.amps, theta.widths, theta.centers):
        center, width = tuple(c), L * L
        sqdist = P.add(*[P.mul(P.add(P.monomial(l, d), P.constant(-c[l], d)),
                               P.add(P.monomial(l, d), P.constant(-c[l], d)))
                         for l in range(d)])
        out.append(GaussPolySum([GaussPoly(P.constant(2 * A, d), center, width)]))
        out.append(GaussPolySum([GaussPoly(P.scale(sqdist, 2 * A * A / L**3), center, width)]))
        for l in range(d):
            lin = P.add(P.monomial(l, d), P.constant(-c[l], d))
            out.append(GaussPolySum([GaussPoly(P.scale(lin, 2 * A * A / L**2), center, width)]))
    return out


def assemble_srons_generic(drift: DriftModel, theta: MixtureState, t: float,
                           alpha: float = 1e-6) -> RonsSystem:
    """Entry-by-entry assembly through the GaussPoly algebra (slow, reference)."""
    parts = parameter_partials(theta)
    Lp = apply_fp_operator(drift, theta, t)
    n = len(parts)
    M = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            M[i, j] = M[j, i] = inner_product_l2(parts[i], parts[j])
    f = np.array([inner_product_l2(p, Lp) for p in parts])
    return RonsSystem(M, f, total_probability_gradient(theta), float(alpha), "L2_symbolic")


# ---------------------------------------------------------------------------
# collocation assembly


def collocation_weights(theta: MixtureState, points: np.ndarray) -> tuple[np.ndarray, int]:
    """Row weights ``p_hat^{-1/2}``, clamped where the density vanishes."""
    p = evaluate(theta, points)
    low = p < WEIGHT_FLOOR
    return 1.0 / np.sqrt(np.where(low, WEIGHT_FLOOR, p)), int(low.sum())


def assemble_crons(drift: DriftModel, theta: MixtureState, t: float, alpha: float,
                   grid: CollocationGrid, weighted: bool = False) -> RonsSystem:
    pts = grid.points
    J = param_gradient(theta, pts)
    Lv = fp_operator_values(drift, theta, t, pts)
    clamped = 0
    if weighted:
        w, clamped = collocation_weights(theta, pts)
        if clamped:
            log.debug("clamped %d collocation weights", clamped)
        J = J * w[:, None]
        Lv = Lv * w
    M = J.T @ J
    M = 0.5 * (M + M.T)
    mode = "weighted_collocation" if weighted else "L2_collocation"
    return RonsSystem(M, J.T @ Lv, total_probability_gradient(theta), float(alpha),
                      mode, clamped_points=clamped)


def assemble_srons_montecarlo(drift: DriftModel, theta: MixtureState, t: float,
                              alpha: float, points: np.ndarray, volume: float) -> RonsSystem:
    """L2 inner products estimated by Monte Carlo: ``(V/N) sum_p g_i(x_p) h(x_p)``."""
    pts = np.asarray(points, dtype=float).reshape(-1, theta.dim)
    N = pts.shape[0]
    J = param_gradient(theta, pts)
    Lv = fp_operator_values(drift, theta, t, pts)
    n = J.shape[1]
    w = volume / N
    M = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            M[i, j] = M[j, i] = w * fsum(J[:, i] * J[:, j])
    f = np.array([w * fsum(J[:, i] * Lv) for i in range(n)])
    return RonsSystem(M, f, total_probability_gradient(theta), float(alpha), "L2_montecarlo")


def assemble(drift: DriftModel, theta: MixtureState, t: float, alpha: float,
             space: HilbertChoice) -> RonsSystem:
    if space.mode is HilbertMode.L2_SYMBOLIC:
        return assemble_srons(drift, theta, t, alpha)
    return assemble_crons(drift, theta, t, alpha, space.collocation, space.weighted)


# ---------------------------------------------------------------------------
# constrained solve


def _factorize(sys: RonsSystem):
    if sys._factor is not None:
        return sys._factor
    A = sys.metric + sys.alpha * np.eye(sys.n)
    if not np.isfinite(A).all():
        raise RegularizationError("metric has non-finite entries")
    if sys.mode != "L2_symbolic":
        # far-apart pairs give entries near underflow; subnormal arithmetic in
        # the factorization is very slow and these entries are below roundoff
        scale = np.sqrt(np.abs(np.diag(A)))
        A[np.abs(A) < FLUSH_RATIO * np.outer(scale, scale)] = 0.0
    c, info = _potrf(A, lower=False, clean=True, overwrite_a=True)
    if info == 0:
        fac = ("chol", (c, False))
    else:
        A = sys.metric + sys.alpha * np.eye(sys.n)
        with warnings.catch_warnings():
            # singularity is reported below as a RegularizationError
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu = sla.lu_factor(A, check_finite=True)
        piv = np.abs(np.diag(lu[0]))
        if not np.all(np.isfinite(piv)) or piv.min() <= np.finfo(float).eps * piv.max():
            raise RegularizationError(
                f"M + alpha*I is numerically singular (alpha={sys.alpha:g}); "
                "increase the regularization parameter") from None
        fac = ("lu", lu)
    sys._factor = fac
    return fac


def _solve(sys: RonsSystem, rhs: np.ndarray) -> np.ndarray:
    kind, fac = _factorize(sys)
    if kind == "chol":
        return sla.cho_solve(fac, rhs, check_finite=False)
    return sla.lu_solve(fac, rhs, check_finite=False)


def conditioning(sys: RonsSystem) -> float:
    """Cheap conditioning proxy from the factor's diagonal."""
    kind, fac = _factorize(sys)
    diag = np.abs(np.diag(fac[0]))
    ratio = diag.max() / diag.min()
    return float(ratio**2 if kind == "chol" else ratio)


def _solve_pair(sys: RonsSystem):
    sol = _solve(sys, np.column_stack([sys.rhs, sys.constraint_grad]))
    return sol[:, 0], sol[:, 1]


def lagrange_multiplier(sys: RonsSystem) -> float:
    u, v = _solve_pair(sys)
    g = sys.constraint_grad
    den = g @ v
    if not den > 0:
        raise RuntimeError(f"constraint gradient has non-positive curvature {den!r}")
    sys.lam = float(g @ u / den)
    return sys.lam


def solve_constrained(sys: RonsSystem) -> np.ndarray:
    u, v = _solve_pair(sys)
    g = sys.constraint_grad
    den = g @ v
    if not den > 0:
        raise RuntimeError(f"constraint gradient has non-positive curvature {den!r}")
    sys.lam = float(g @ u / den)
    return u - sys.lam * v


def solve_unconstrained(sys: RonsSystem) -> np.ndarray:
    return _solve(sys, sys.rhs)


# ---------------------------------------------------------------------------
# Fisher information by quadrature


def _gauss_legendre_box(lo, hi, panels: int, order: int = 16):
    xg, wg = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, panels + 1)
    half = np.diff(edges) / 2
    mids = (edges[:-1] + edges[1:]) / 2
    x = (mids[:, None] + half[:, None] * xg[None, :]).reshape(-1)
    w = (half[:, None] * wg[None, :]).reshape(-1)
    return x, w


def fisher_metric_quadrature(theta: MixtureState, resolution: int = 40,
                             box_widths: float = 10.0) -> np.ndarray:
    """``g_ij = int (d log p/d theta_i)(d log p/d theta_j) p dx`` (d <= 2)."""
    d = theta.dim
    if d > 2:
        raise ValueError("quadrature Fisher metric supports d <= 2")
    lo = (theta.centers - box_widths * theta.widths[:, None]).min(axis=0)
    hi = (theta.centers + box_widths * theta.widths[:, None]).max(axis=0)
    rules = [_gauss_legendre_box(a, b, resolution) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    wmesh = np.meshgrid(*[r[1] for r in rules], indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
    w = np.prod([m.reshape(-1) for m in wmesh], axis=0)
    p = evaluate(theta, pts)
    keep = p > 0
    score = param_gradient(theta, pts[keep]) / p[keep, None]
    g = (score * (w[keep] * p[keep])[:, None]).T @ score
    return 0.5 * (g + g.T)
