"""Isotropic Gaussian mixture ansatz.

The density is ``p(x) = sum_i A_i**2 * exp(-|x - c_i|**2 / L_i**2)``.
Parameters are flattened term by term as ``(A_i, L_i, c_i1, ..., c_id)`` so a
mixture with ``r`` terms in ``d`` dimensions has ``n = r * (d + 2)`` entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

WIDTH_FLOOR = 1e-10


class WidthCollapseError(ValueError):
    """A Gaussian width reached (or fell below) the positivity floor."""

    def __init__(self, term: int, width: float, t: Optional[float] = None):
        self.term = term
        self.width = width
        self.t = t
        where = "" if t is None else f" at t={t:.6g}"
        super().__init__(f"width of term {term} collapsed to {width:.3e}{where}")


class ProjectionError(RuntimeError):
    def __init__(self, message: str, objective: float):
        self.objective = objective
        super().__init__(f"{message} (final objective {objective:.3e})")


@dataclass(frozen=True)
class MixtureState:
    amps: np.ndarray
    widths: np.ndarray
    centers: np.ndarray
    _flat: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        amps = np.array(self.amps, dtype=float).reshape(-1)
        widths = np.array(self.widths, dtype=float).reshape(-1)
        centers = np.array(self.centers, dtype=float)
        if centers.ndim == 1:
            centers = centers.reshape(len(amps), -1) if len(amps) else centers
        r = amps.shape[0]
        if r < 1:
            raise ValueError("mixture needs at least one term")
        if widths.shape != (r,) or centers.ndim != 2 or centers.shape[0] != r:
            raise ValueError(
                f"inconsistent shapes: amps {amps.shape}, widths {widths.shape}, "
                f"centers {centers.shape}"
            )
        if centers.shape[1] < 1:
            raise ValueError("dimension must be >= 1")
        if not (np.all(np.isfinite(amps)) and np.all(np.isfinite(widths))
                and np.all(np.isfinite(centers))):
            raise ValueError("mixture parameters must be finite")
        bad = np.flatnonzero(widths <= WIDTH_FLOOR)
        if bad.size:
            raise WidthCollapseError(int(bad[0]), float(widths[bad[0]]))
        for arr in (amps, widths, centers):
            arr.setflags(write=False)
        object.__setattr__(self, "amps", amps)
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "centers", centers)
        flat = np.concatenate([amps[:, None], widths[:, None], centers], axis=1).reshape(-1)
        flat.setflags(write=False)
        object.__setattr__(self, "_flat", flat)

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @property
    def terms(self) -> int:
        return self.amps.shape[0]

    @property
    def n_params(self) -> int:
        return self.terms * (self.dim + 2)

    def to_vector(self) -> np.ndarray:
        return self._flat.copy()

    @classmethod
    def from_vector(cls, theta, dim: int) -> "MixtureState":
        theta = np.asarray(theta, dtype=float)
        if theta.ndim != 1 or theta.size % (dim + 2):
            raise ValueError(f"vector of length {theta.size} does not fit dim={dim}")
        blocks = theta.reshape(-1, dim + 2)
        return cls(blocks[:, 0], blocks[:, 1], blocks[:, 2:])

    def with_amps(self, amps) -> "MixtureState":
        return MixtureState(amps, self.widths, self.centers)

    def weights(self) -> np.ndarray:
        """Probability mass carried by each term."""
        return self.amps**2 * (np.pi * self.widths**2) ** (self.dim / 2)

    def mean(self) -> np.ndarray:
        w = self.weights()
        return w @ self.centers / w.sum()

    def covariance(self) -> np.ndarray:
        w = self.weights()
        w = w / w.sum()
        mu = w @ self.centers
        second = np.einsum("k,ki,kj->ij", w, self.centers, self.centers)
        second += np.eye(self.dim) * (w @ (self.widths**2 / 2))
        return second - np.outer(mu, mu)

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        """Draw points from the normalized mixture."""
        w = self.weights()
        comp = rng.choice(self.terms, size=size, p=w / w.sum())
        std = self.widths[comp] / np.sqrt(2.0)
        return self.centers[comp] + std[:, None] * rng.standard_normal((size, self.dim))


def _as_points(theta: MixtureState, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    d = theta.dim
    if x.ndim == 0 and d == 1:
        return x.reshape(1, 1), True
    if x.ndim == 1 and x.shape[0] == d:
        return x.reshape(1, d), True
    if x.ndim == 1 and d == 1:
        return x.reshape(-1, 1), False
    if x.ndim == 2 and x.shape[1] == d:
        return x, False
    raise ValueError(f"points of shape {x.shape} do not match mixture dimension {d}")


def _kernels(theta: MixtureState, pts: np.ndarray):
    diff = pts[:, None, :] - theta.centers[None, :, :]
    sq = np.einsum("nkd,nkd->nk", diff, diff)
    return diff, sq, np.exp(-sq / theta.widths**2)


def evaluate(theta: MixtureState, x):
    """Mixture density at one point (returns float) or at an ``(N, d)`` batch."""
    pts, single = _as_points(theta, x)
    _, _, e = _kernels(theta, pts)
    val = e @ theta.amps**2
    return float(val[0]) if single else val


def param_gradient(theta: MixtureState, x) -> np.ndarray:
    """Partials of the density with respect to the flattened parameters.

    Returns shape ``(n,)`` for a single point or ``(N, n)`` for a batch.
    """
    pts, single = _as_points(theta, x)
    diff, sq, e = _kernels(theta, pts)
    A, L = theta.amps, theta.widths
    N, r, d = diff.shape
    out = np.empty((N, r, d + 2))
    out[:, :, 0] = 2 * A * e
    out[:, :, 1] = (2 * A**2 / L**3) * sq * e
    out[:, :, 2:] = ((2 * A**2 / L**2) * e)[:, :, None] * diff
    out = out.reshape(N, r * (d + 2))
    return out[0] if single else out


def total_probability(theta: MixtureState) -> float:
    return float(theta.weights().sum())


def total_probability_gradient(theta: MixtureState) -> np.ndarray:
    d = theta.dim
    A, L = theta.amps, theta.widths
    grad = np.zeros((theta.terms, d + 2))
    grad[:, 0] = 2 * A * (np.pi * L**2) ** (d / 2)
    grad[:, 1] = d * A**2 * np.pi ** (d / 2) * L ** (d - 1)
    return grad.reshape(-1)


def normalize(theta: MixtureState) -> MixtureState:
    """Rescale amplitudes so the total probability is one."""
    return theta.with_amps(theta.amps / np.sqrt(total_probability(theta)))


def _default_projection_points(theta_guess: MixtureState, p0_scale: float = 6.0,
                               n_per_dim: int = 201, n_random: int = 4000,
                               seed: int = 0):
    d = theta_guess.dim
    lo = (theta_guess.centers - p0_scale * theta_guess.widths[:, None]).min(axis=0)
    hi = (theta_guess.centers + p0_scale * theta_guess.widths[:, None]).max(axis=0)
    if d <= 2:
        axes = [np.linspace(a, b, n_per_dim) for a, b in zip(lo, hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
        cell = np.prod([ax[1] - ax[0] for ax in axes])
        return pts, np.full(len(pts), cell)
    rng = np.random.default_rng(seed)
    pts = theta_guess.sample(n_random, rng)
    return pts, np.full(len(pts), 1.0 / n_random)


def project_initial_condition(
    p0: Callable[[np.ndarray], np.ndarray],
    theta_guess: MixtureState,
    points: Optional[np.ndarray] = None,
    weights: Optional[np.ndarray] = None,
    max_iter: int = 200,
    tol: float = 1e-14,
    return_history: bool = False,
):
    """Fit the mixture to ``p0`` by damped Gauss-Newton, then normalize.

    ``p0`` maps an ``(N, d)`` array of points to densities. The objective is
    ``sum_i w_i (p_hat(x_i) - p0(x_i))**2``; with the default grid (box
    quadrature for d <= 2, samples from ``theta_guess`` otherwise) this is a
    discrete L2 distance.
    """
    d = theta_guess.dim
    if points is None:
        points, weights = _default_projection_points(theta_guess)
    points = np.asarray(points, dtype=float).reshape(-1, d)
    weights = np.ones(len(points)) if weights is None else np.asarray(weights, dtype=float)
    sw = np.sqrt(weights)
    target = np.asarray(p0(points), dtype=float).reshape(-1)

    def objective(th: MixtureState) -> float:
        res = sw * (evaluate(th, points) - target)
        return float(res @ res)

    theta = theta_guess
    obj = objective(theta)
    history = [obj]
    mu = 1e-3
    scale0 = float((sw * target) @ (sw * target)) or 1.0
    for _ in range(max_iter):
        if obj <= tol * scale0:
            break
        J = sw[:, None] * param_gradient(theta, points)
        res = sw * (evaluate(theta, points) - target)
        JtJ = J.T @ J
        g = J.T @ res
        diag = np.diag(JtJ).copy()
        diag[diag == 0] = 1.0
        improved = False
        for _ in range(30):
            try:
                step = np.linalg.solve(JtJ + mu * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                mu *= 10
                continue
            try:
                trial = MixtureState.from_vector(theta.to_vector() + step, d)
                trial_obj = objective(trial)
            except (WidthCollapseError, ValueError):
                mu *= 10
                continue
            if trial_obj < obj:
                theta, obj = trial, trial_obj
                mu = max(mu / 3, 1e-12)
                improved = True
                break
            mu *= 10
        history.append(obj)
        if not improved:
            break
        if abs(history[-2] - obj) <= 1e-15 * max(history[-2], 1e-300):
            break
    else:
        if obj > 1e-6 * scale0:
            raise ProjectionError("projection did not converge", obj)

    theta = normalize(theta)
    if return_history:
        return theta, history
    return theta
