import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ronsfp import polynomial as P
from ronsfp.benchmarks import TRAP_FORCING
from ronsfp.mixture import MixtureState, evaluate
from ronsfp.operator import (Affine, Constant, DriftModel, Sinusoidal, UnsupportedModelError,
                             apply_fp_operator, bistable, duffing, fp_operator_values,
                             harmonic_trap, ornstein_uhlenbeck, residual)


def fd_operator(drift, theta, t, x, h1=1e-3, h2=1e-2):
    """``-div(F p) + sum nu_l p_ll`` by fourth-order central differences."""
    x = np.atleast_2d(x)
    d = x.shape[1]
    out = np.zeros(x.shape[0])

    def flux(y, l):
        return drift(y, t)[:, l] * evaluate(theta, y)

    for l in range(d):
        e = np.zeros(d)
        e[l] = h1
        out -= (-flux(x + 2 * e, l) + 8 * flux(x + e, l) - 8 * flux(x - e, l)
                + flux(x - 2 * e, l)) / (12 * h1)
        if drift.diffusion[l]:
            e[l] = h2
            p = [evaluate(theta, x + k * e) for k in (-2, -1, 0, 1, 2)]
            lap = (-p[0] + 16 * p[1] - 30 * p[2] + 16 * p[3] - p[4]) / (12 * h2**2)
            out += drift.diffusion[l] * lap
    return out


def random_state(rng, r, d, spread=0.7):
    return MixtureState(rng.uniform(0.4, 1.2, r), rng.uniform(0.5, 1.4, r),
                        rng.normal(0, spread, (r, d)))


BENCHMARKS = {
    "ou": ornstein_uhlenbeck(1.0, 1.0),
    "bistable": bistable(1.0),
    "duffing": duffing(1.0, -0.5, -1.0, 1 / np.sqrt(20)),
    "trap": harmonic_trap(3, 0.5, 0.5, TRAP_FORCING),
}


# ---------------------------------------------------------------------------
# apply_fp_operator


def test_ou_at_origin_vanishes():
    drift = ornstein_uhlenbeck(1.0, 1.0)
    th = MixtureState([1.0], [1.0], [[0.0]])
    Lp = apply_fp_operator(drift, th, 0.0)
    # gamma p(0) + nu p''(0) = 1 + 0.5 * (-2)
    assert Lp(np.zeros((1, 1)))[0] == pytest.approx(0.0, abs=1e-15)
    assert fp_operator_values(drift, th, 0.0, [[0.0]])[0] == pytest.approx(0.0, abs=1e-15)


def test_zero_drift_gives_heat_operator():
    rng = np.random.default_rng(0)
    th = random_state(rng, 3, 2)
    nu = 0.7
    Lp = apply_fp_operator(DriftModel.zero(2, nu), th, 0.0)
    x = rng.normal(0, 1, (30, 2))
    # Laplacian of A^2 exp(-|x-c|^2/L^2) = A^2 e (4|x-c|^2/L^4 - 2d/L^2)
    lap = np.zeros(30)
    for A, L, c in zip(th.amps, th.widths, th.centers):
        s = np.sum((x - c) ** 2, axis=1)
        lap += A**2 * np.exp(-s / L**2) * (4 * s / L**4 - 4 / L**2)
    assert np.allclose(Lp(x), nu * lap, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("name", sorted(BENCHMARKS))
def test_matches_finite_differences(name):
    drift = BENCHMARKS[name]
    rng = np.random.default_rng(1)
    th = random_state(rng, 1 if name == "duffing" else 2, drift.dim)
    x = th.centers[0] + rng.normal(0, 0.8, (50, drift.dim))
    t = 0.3
    exact = apply_fp_operator(drift, th, t)(x)
    fd = fd_operator(drift, th, t, x)
    assert np.linalg.norm(exact - fd) <= 1e-6 * np.linalg.norm(exact)
    # the pointwise fast path agrees with the symbolic expansion
    fast = fp_operator_values(drift, th, t, x)
    assert np.allclose(fast, exact, rtol=1e-11, atol=1e-13 * np.abs(exact).max())


def test_term_count_bound():
    rng = np.random.default_rng(2)
    r, d = 3, 2
    drift = BENCHMARKS["duffing"]
    Lp = apply_fp_operator(drift, random_state(rng, r, d), 0.0)
    assert len(Lp) <= r * (1 + d * (drift.degree + 2))


@pytest.mark.parametrize("name", sorted(BENCHMARKS))
def test_mass_neutrality(name):
    drift = BENCHMARKS[name]
    rng = np.random.default_rng(3)
    th = random_state(rng, 3, drift.dim)
    for t in (0.0, 0.7):
        assert abs(apply_fp_operator(drift, th, t).integral()) <= 1e-10


def test_dimension_mismatch():
    th = MixtureState([1.0], [1.0], [[0.0, 0.0]])
    with pytest.raises(ValueError):
        apply_fp_operator(ornstein_uhlenbeck(1.0, 1.0, dim=1), th, 0.0)


def test_non_polynomial_drift_rejected():
    with pytest.raises(UnsupportedModelError):
        DriftModel([np.sin], 0.5)
    with pytest.raises(UnsupportedModelError):
        DriftModel([{(1,): "x"}], 0.5)


def test_invalid_drift_rejected():
    with pytest.raises(ValueError):
        DriftModel([{(1,): 1.0}], -0.1)
    with pytest.raises(ValueError):
        DriftModel([{(1, 0): 1.0}], 0.5)
    with pytest.raises(ValueError):
        DriftModel([], 0.5)


def test_time_dependent_coefficients():
    assert Constant(2.0)(5.0) == 2.0
    assert Affine(1.0, 2.0)(3.0) == 7.0
    assert TRAP_FORCING(0.5) == pytest.approx(1.25 * 2.5)
    assert Sinusoidal(2.0, np.pi)(0.0) == 0.0
    drift = DriftModel([{(0,): Affine(0.0, 1.0), (1,): -1.0}], 0.5)
    assert drift.time_dependent
    assert drift.polys(2.0)[0] == {(0,): 2.0, (1,): -1.0}
    assert not DriftModel([{(0,): Constant(1.0)}], 0.5).time_dependent


def test_duffing_divergence_form():
    # -d_x(y p) - d_y((a1 x + a2 y + a3 x^3) p) has divergence -a2
    drift = BENCHMARKS["duffing"]
    assert drift.divergence(0.0) == P.constant(-0.5, 2)
    assert np.allclose(drift.diffusion, [0.0, 1 / 40])


# ---------------------------------------------------------------------------
# residual


def test_residual_zero_velocity_is_minus_heat_operator():
    rng = np.random.default_rng(4)
    th = random_state(rng, 2, 1)
    nu = 0.3
    x = rng.normal(0, 1, (20, 1))
    R = residual(DriftModel.zero(1, nu), th, np.zeros(th.n_params), 0.0, x)
    heat = apply_fp_operator(DriftModel.zero(1, nu), th, 0.0)(x)
    assert np.allclose(R, -heat, rtol=1e-13, atol=1e-15)


def ou_exact_velocity(A, L, c, gamma, sigma):
    # the peak a = A**2 obeys a' = a (gamma - sigma^2/L^2), hence the factor 1/2 on A
    return np.array([0.5 * A * (gamma - sigma**2 / L**2), sigma**2 / L - gamma * L, -gamma * c])


def test_ou_exact_velocity_has_zero_residual():
    gamma, sigma = 1.3, 0.8
    drift = ornstein_uhlenbeck(gamma, sigma)
    th = MixtureState([0.9], [0.7], [[0.4]])
    v = ou_exact_velocity(0.9, 0.7, 0.4, gamma, sigma)
    x = np.linspace(-4, 4, 101)[:, None]
    assert np.max(np.abs(residual(drift, th, v, 0.0, x))) <= 1e-10


def test_residual_linear_in_perturbation():
    gamma, sigma = 1.0, 1.0
    drift = ornstein_uhlenbeck(gamma, sigma)
    th = MixtureState([1.0], [1.0], [[0.5]])
    v = ou_exact_velocity(1.0, 1.0, 0.5, gamma, sigma)
    x = np.linspace(-4, 4, 81)[:, None]
    direction = np.random.default_rng(5).normal(size=3)
    norms = [np.linalg.norm(residual(drift, th, v + eps * direction, 0.0, x))
             for eps in (1e-3, 1e-2, 1e-1)]
    assert norms[1] / norms[0] == pytest.approx(10, rel=1e-6)
    assert norms[2] / norms[1] == pytest.approx(10, rel=1e-6)


# ---------------------------------------------------------------------------
# properties


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), name=st.sampled_from(sorted(BENCHMARKS)),
       t=st.floats(0, 5))
def test_mass_neutrality_property(seed, name, t):
    drift = BENCHMARKS[name]
    rng = np.random.default_rng(seed)
    th = random_state(rng, 2, drift.dim)
    Lp = apply_fp_operator(drift, th, t)
    scale = sum(abs(v) for g in Lp for v in g.poly.values())
    assert abs(Lp.integral()) <= 1e-10 * max(1.0, scale)
