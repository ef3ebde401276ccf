"""Reference problems: drift models, standard initial mixtures and error reports.

Each builder returns plain objects from the core modules so the same set-ups
drive the CLI, the examples in ``configs/`` and the acceptance tests.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .integrator import Trajectory
from .mixture import MixtureState, normalize
from .operator import (DriftModel, Sinusoidal, bistable, duffing, harmonic_trap,
                       ornstein_uhlenbeck)
from .oracle import (bistable_equilibrium, duffing_equilibrium, harmonic_moment_odes,
                     l2_relative_error, ou_density)

TRAP_FORCING = Sinusoidal(amplitude=1.25, omega=np.pi, offset=1.5)


# ---------------------------------------------------------------------------
# Ornstein-Uhlenbeck from a point mass at the origin


def ou_exact(gamma: float, sigma: float, t) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form ``(A, L)`` of the single-Gaussian OU solution at ``t``.

    Amplitudes are square roots of the peak height, matching the
    ``A**2 exp(-x**2/L**2)`` ansatz; the center stays at 0.
    """
    t = np.asarray(t, dtype=float)
    peak = np.sqrt(gamma / (np.pi * sigma**2 * (1 - np.exp(-2 * gamma * t))))
    return np.sqrt(peak), 1 / (np.sqrt(np.pi) * peak)


def ou_initial(gamma: float = 1.0, sigma: float = 1.0, t0: float = 0.01) -> MixtureState:
    if not t0 > 0:
        raise ValueError("the OU point-mass start needs t0 > 0")
    A, L = ou_exact(gamma, sigma, t0)
    return MixtureState([float(A)], [float(L)], [[0.0]])


def ou_parameter_error(traj: Trajectory, gamma: float, sigma: float) -> float:
    """Max relative parameter error against the closed form over stored times."""
    th = traj.theta_array()
    A, L = ou_exact(gamma, sigma, np.asarray(traj.times))
    errA = np.abs(np.abs(th[:, 0]) - A) / A
    errL = np.abs(np.abs(th[:, 1]) - L) / L
    errc = np.abs(th[:, 2]) / L
    return float(np.max(np.maximum(np.maximum(errA, errL), errc)))


# ---------------------------------------------------------------------------
# double well


def bistable_initial(r: int) -> MixtureState:
    """Equal-width start with half the terms at -1 and half at -2.

    ``r = 2`` gives one term at each location with ``A = 1/2``; for larger
    even ``r`` amplitudes are ``1/sqrt(2r)`` so the total mass is one.
    """
    if r < 2 or r % 2:
        raise ValueError("bistable start needs an even number of terms >= 2")
    L = 2 / np.sqrt(np.pi)
    centers = [[-1.0]] * (r // 2) + [[-2.0]] * (r // 2)
    return normalize(MixtureState([1 / np.sqrt(2 * r)] * r, [L] * r, centers))


# ---------------------------------------------------------------------------
# Duffing oscillator


def duffing_initial(r: int = 30) -> MixtureState:
    """Narrow terms split between ``(-1, -1)`` and ``(1, 1)``."""
    if r < 2 or r % 2:
        raise ValueError("Duffing start needs an even number of terms >= 2")
    L = 1 / np.sqrt(r * np.pi)
    centers = [[-1.0, -1.0]] * (r // 2) + [[1.0, 1.0]] * (r // 2)
    return normalize(MixtureState([1.0] * r, [L] * r, centers))


# ---------------------------------------------------------------------------
# interacting particles in a moving harmonic trap


def trap_initial(r: int, dim: int = 8, var0: float = 0.1,
                 mean0: Optional[Sequence[float]] = None) -> MixtureState:
    """``r`` identical copies of the isotropic Gaussian start, mass split evenly."""
    mean0 = np.arange(dim, dtype=float) if mean0 is None else np.asarray(mean0, float)
    L2 = 2 * var0
    A = (np.pi * L2) ** (-dim / 4) / np.sqrt(r)
    return normalize(MixtureState([A] * r, [np.sqrt(L2)] * r, np.tile(mean0, (r, 1))))


def relative_error(approx, exact) -> float:
    exact = np.asarray(exact, dtype=float)
    return float(np.linalg.norm(np.asarray(approx) - exact) / np.linalg.norm(exact))


def trap_moment_errors(traj: Trajectory, gamma: float, nu: float, forcing=TRAP_FORCING,
                       var0: float = 0.1, mean0=None) -> dict:
    """Mean and covariance relative errors against the moment ODEs at stored times.

    Errors are Euclidean (mean) and Frobenius (covariance) norms relative to
    the reference; the stored initial state is skipped because it is exact.
    """
    d = traj.dim
    mean0 = np.arange(d, dtype=float) if mean0 is None else np.asarray(mean0, float)
    times = np.asarray(traj.times)
    means, covs = harmonic_moment_odes(forcing, gamma, d, nu, mean0, var0 * np.eye(d),
                                       times, t0=times[0])
    em, ec = [], []
    for i in range(1, len(times)):
        th = traj.state(i)
        em.append(relative_error(th.mean(), means[i]))
        ec.append(relative_error(th.covariance(), covs[i]))
    return {"times": times[1:].tolist(), "mean": em, "cov": ec,
            "mean_max": max(em, default=0.0), "cov_max": max(ec, default=0.0),
            "ref_means": means, "ref_covs": covs}


__all__ = [
    "TRAP_FORCING", "bistable", "bistable_equilibrium", "bistable_initial", "duffing",
    "duffing_equilibrium", "duffing_initial", "harmonic_trap", "l2_relative_error",
    "ornstein_uhlenbeck", "ou_density", "ou_exact", "ou_initial", "ou_parameter_error",
    "relative_error", "trap_initial", "trap_moment_errors",
]
