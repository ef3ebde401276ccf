"""Adaptive Dormand-Prince time stepping of the RONS parameter ODEs."""

from __future__ import annotations

import logging
import time as _time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .assembler import (HilbertChoice, assemble, conditioning,
                        solve_constrained)
from .mixture import (WIDTH_FLOOR, MixtureState, WidthCollapseError,
                      total_probability)
from .operator import DriftModel

log = logging.getLogger(__name__)

RENORM_TOL = 1e-10
CONSERVATION_LIMIT = 1e-6
MIN_STEP = 1e-14

# Dormand & Prince (1980) 5(4) tableau
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B - _B4


class StiffnessError(RuntimeError):
    pass


class ConservationError(RuntimeError):
    pass


@dataclass
class TimeGrid:
    t0: float
    t_end: float
    h0: float = 1e-3
    rtol: float = 1e-8
    atol: float = 1e-10
    max_steps: int = 1_000_000
    t_eval: Optional[Sequence[float]] = None
    stride: int = 1
    adaptive: bool = True
    h_max: float = np.inf

    def __post_init__(self):
        if not self.t_end > self.t0:
            raise ValueError("t_end must exceed t0")
        if not (self.rtol > 0 and self.atol > 0 and self.h0 > 0):
            raise ValueError("tolerances and initial step must be positive")
        if self.t_eval is not None:
            te = np.asarray(self.t_eval, dtype=float)
            if np.any(np.diff(te) <= 0) or te[0] < self.t0 or te[-1] > self.t_end:
                raise ValueError("t_eval must be increasing inside [t0, t_end]")
            self.t_eval = te


@dataclass
class Trajectory:
    dim: int
    times: list = field(default_factory=list)
    thetas: list = field(default_factory=list)
    probability: list = field(default_factory=list)
    accepted: list = field(default_factory=list)
    conditioning: list = field(default_factory=list)
    rate_times: list = field(default_factory=list)
    rates: list = field(default_factory=list)
    n_steps: int = 0
    n_rejected: int = 0
    n_rhs: int = 0
    renormalizations: int = 0
    clamped_points: int = 0
    assembly_seconds: float = 0.0
    solve_seconds: float = 0.0
    wall_seconds: float = 0.0
    equilibrium_time: Optional[float] = None

    def append(self, t, theta_vec, prob, accepted=True, cond=float("nan")):
        self.times.append(float(t))
        self.thetas.append(np.array(theta_vec))
        self.probability.append(float(prob))
        self.accepted.append(bool(accepted))
        self.conditioning.append(float(cond))

    def state(self, i: int = -1) -> MixtureState:
        return MixtureState.from_vector(self.thetas[i], self.dim)

    @property
    def final(self) -> MixtureState:
        return self.state(-1)

    def theta_array(self) -> np.ndarray:
        return np.array(self.thetas)

    def max_conservation_error(self) -> float:
        return float(np.max(np.abs(np.asarray(self.probability) - 1.0)))


def detect_equilibrium(times, rates, window: float, threshold: float) -> Optional[float]:
    """First time after which ``rates`` stays below ``threshold`` for ``window``.

    ``rates`` are relative parameter speeds ``|theta_dot| / |theta|`` sampled at
    ``times``; returns None when no such stretch exists in the record.
    """
    times = np.asarray(times, dtype=float)
    below = np.asarray(rates, dtype=float) < threshold
    start = None
    for t, ok in zip(times, below):
        if not ok:
            start = None
            continue
        if start is None:
            start = t
        if t - start >= window:
            return float(start)
    if start is not None and window <= 0:
        return float(start)
    return None


class _Rhs:
    def __init__(self, drift, dim, space, alpha, traj):
        self.drift, self.dim, self.space, self.alpha = drift, dim, space, alpha
        self.traj = traj
        self.last_sys = None

    def __call__(self, t, y):
        theta = MixtureState.from_vector(y, self.dim)
        t0 = _time.perf_counter()
        sys = assemble(self.drift, theta, t, self.alpha, self.space)
        t1 = _time.perf_counter()
        ydot = solve_constrained(sys)
        self.last_sys = sys
        t2 = _time.perf_counter()
        self.traj.assembly_seconds += t1 - t0
        self.traj.solve_seconds += t2 - t1
        self.traj.n_rhs += 1
        self.traj.clamped_points += sys.clamped_points
        return ydot


def _error_norm(err, y, ynew, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(y), np.abs(ynew))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def integrate(drift: DriftModel, theta0: MixtureState, space: HilbertChoice,
              alpha: float, grid: TimeGrid, equilibrium_window: Optional[float] = None,
              equilibrium_threshold: float = 1e-6, renormalize: bool = True) -> Trajectory:
    """Integrate the constrained RONS equations from ``grid.t0`` to ``grid.t_end``.

    Stores states at ``grid.t_eval`` (steps are clipped to land on them) or,
    without ``t_eval``, every ``grid.stride``-th accepted step. When
    ``equilibrium_window`` is set the run stops once the relative parameter
    speed stays below ``equilibrium_threshold`` for that long.
    """
    if abs(total_probability(theta0) - 1) > 1e-10:
        raise ValueError(
            f"initial total probability {total_probability(theta0):.12g} != 1; "
            "renormalize the initial state first")
    d = theta0.dim
    traj = Trajectory(dim=d)
    rhs = _Rhs(drift, d, space, alpha, traj)
    wall0 = _time.perf_counter()

    t, y = float(grid.t0), theta0.to_vector()
    t_end = float(grid.t_end)
    targets = list(grid.t_eval) if grid.t_eval is not None else []
    if targets and targets[0] == t:
        targets.pop(0)
    k1 = rhs(t, y)
    traj.append(t, y, total_probability(theta0), True, conditioning(rhs.last_sys))
    traj.rate_times.append(t)
    traj.rates.append(np.linalg.norm(k1) / np.linalg.norm(y))

    h = min(grid.h0, t_end - t, grid.h_max)
    accepted_since_store = 0
    streak = t if traj.rates[0] < equilibrium_threshold else None
    for _ in range(grid.max_steps):
        if t >= t_end:
            break
        stop = targets[0] if targets else t_end
        h_try = min(h, stop - t, grid.h_max)
        hit = h_try >= stop - t
        if hit:
            h_try = stop - t
        try:
            K = [k1]
            for s in range(1, 7):
                ys = y + h_try * sum(a * k for a, k in zip(_A[s], K) if a)
                K.append(rhs(t + _C[s] * h_try, ys))
        except WidthCollapseError as exc:
            traj.n_rejected += 1
            h = h_try / 4
            if h < MIN_STEP:
                raise WidthCollapseError(exc.term, exc.width, t) from None
            continue
        ynew = ys  # last stage is the 5th-order solution (FSAL)
        if grid.adaptive:
            err = _error_norm(h_try * (_E @ np.array(K)), y, ynew, grid.rtol, grid.atol)
            if not np.isfinite(err):
                err = np.inf
            if err > 1.0:
                traj.n_rejected += 1
                h = h_try * max(0.1, 0.9 * err ** -0.2)
                if h < MIN_STEP:
                    raise StiffnessError(
                        f"step size underflow (h={h:.2e}) at t={t:.6g}; "
                        "the system is stiff, increase the regularization alpha")
                continue
            factor = 5.0 if err == 0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
        else:
            factor = 1.0

        t = stop if hit else t + h_try
        y = ynew
        k1 = K[6]
        traj.n_steps += 1
        theta = MixtureState.from_vector(y, d)
        prob = total_probability(theta)
        if abs(prob - 1) > CONSERVATION_LIMIT:
            raise ConservationError(f"total probability drifted to {prob:.12g} at t={t:.6g}")
        if renormalize and abs(prob - 1) > RENORM_TOL:
            theta = theta.with_amps(theta.amps / np.sqrt(prob))
            y = theta.to_vector()
            traj.renormalizations += 1
            log.info("renormalized total probability %.3e at t=%.6g", prob - 1, t)
            k1 = rhs(t, y)
            prob = total_probability(theta)
        if np.min(theta.widths) <= WIDTH_FLOOR:
            bad = int(np.argmin(theta.widths))
            raise WidthCollapseError(bad, float(theta.widths[bad]), t)

        rate = np.linalg.norm(k1) / np.linalg.norm(y)
        traj.rate_times.append(t)
        traj.rates.append(rate)
        accepted_since_store += 1
        store = hit and bool(targets) if grid.t_eval is not None else (
            accepted_since_store >= grid.stride or t >= t_end)
        if grid.t_eval is not None and t >= t_end and targets:
            store = True
        if hit and targets:
            targets.pop(0)
        if store:
            traj.append(t, y, prob, True, conditioning(rhs.last_sys))
            accepted_since_store = 0
        h = h_try * factor if grid.adaptive else grid.h0

        if equilibrium_window is not None:
            # same rule as detect_equilibrium, tracked incrementally
            if rate >= equilibrium_threshold:
                streak = None
            elif streak is None:
                streak = t
            if streak is not None and t - streak >= equilibrium_window:
                traj.equilibrium_time = streak
                if not store:
                    traj.append(t, y, prob, True, float("nan"))
                break
    else:
        raise StiffnessError(f"exceeded max_steps={grid.max_steps} before t_end")

    traj.wall_seconds = _time.perf_counter() - wall0
    return traj
