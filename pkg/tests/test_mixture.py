import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from ronsfp.mixture import (WIDTH_FLOOR, MixtureState, WidthCollapseError, evaluate,
                            normalize, param_gradient, project_initial_condition,
                            total_probability, total_probability_gradient)


def random_state(rng, r, d, spread=1.0):
    return MixtureState(rng.uniform(0.3, 1.2, r), rng.uniform(0.4, 1.5, r),
                        rng.normal(0, spread, (r, d)))


# ---------------------------------------------------------------------------
# evaluate


def test_normalized_peak_value():
    th = MixtureState([np.pi ** -0.25], [1.0], [[0.0]])
    assert evaluate(th, 0.0) == pytest.approx(1 / np.sqrt(np.pi), rel=1e-15)


def test_decay_far_from_center():
    th = MixtureState([1.0], [1.0], [[0.0]])
    assert evaluate(th, 40.0) == 0.0
    assert evaluate(th, -40.0) == 0.0


def test_two_term_value_by_hand():
    th = MixtureState([1.0, 1.0], [1.0, 2.0], [[0.0], [1.0]])
    x = 0.5
    expected = np.exp(-(x - 0) ** 2 / 1.0) + np.exp(-(x - 1) ** 2 / 4.0)
    assert evaluate(th, x) == pytest.approx(expected, rel=1e-15)


def test_dimension_mismatch_rejected():
    th = MixtureState([1.0], [1.0], [[0.0, 0.0]])
    with pytest.raises(ValueError):
        evaluate(th, np.zeros(3))
    with pytest.raises(ValueError):
        evaluate(th, np.zeros((4, 3)))


def test_batch_matches_pointwise():
    rng = np.random.default_rng(1)
    th = random_state(rng, 3, 2)
    X = rng.normal(size=(7, 2))
    batch = evaluate(th, X)
    assert batch.shape == (7,)
    assert np.allclose(batch, [evaluate(th, x) for x in X], rtol=1e-15)


def test_invalid_states_rejected():
    with pytest.raises(ValueError):
        MixtureState([], [], np.zeros((0, 1)))
    with pytest.raises(ValueError):
        MixtureState([1.0, 1.0], [1.0], [[0.0], [1.0]])
    with pytest.raises(ValueError):
        MixtureState([np.nan], [1.0], [[0.0]])
    with pytest.raises(WidthCollapseError):
        MixtureState([1.0], [WIDTH_FLOOR / 2], [[0.0]])
    with pytest.raises(WidthCollapseError):
        MixtureState([1.0], [-1.0], [[0.0]])


def test_state_is_immutable():
    th = MixtureState([1.0], [1.0], [[0.0]])
    with pytest.raises(ValueError):
        th.amps[0] = 2.0


# ---------------------------------------------------------------------------
# gradients


def test_gradient_at_center():
    th = MixtureState([2.0], [1.3], [[0.7]])
    g = param_gradient(th, 0.7)
    assert g[0] == pytest.approx(4.0, rel=1e-15)
    assert g[1] == 0.0 and g[2] == 0.0


def _fd_gradient(th, x, h=1e-6):
    v = th.to_vector()
    out = np.empty_like(v)
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h * max(1.0, abs(v[i]))
        up = evaluate(MixtureState.from_vector(v + e, th.dim), x)
        dn = evaluate(MixtureState.from_vector(v - e, th.dim), x)
        out[i] = (up - dn) / (2 * e[i])
    return out


@pytest.mark.parametrize("d", [1, 2, 3, 8])
def test_gradient_matches_finite_differences(d):
    rng = np.random.default_rng(d)
    for _ in range(25):
        th = random_state(rng, 2, d, spread=0.5)
        x = rng.normal(0, 0.5, d)
        g = param_gradient(th, x)
        fd = _fd_gradient(th, x)
        assert np.linalg.norm(g - fd) <= 1e-6 * np.linalg.norm(g)


# ---------------------------------------------------------------------------
# total probability


def test_total_probability_simple_values():
    assert total_probability(MixtureState([1.0], [1.0], [[0.0, 0.0]])) == pytest.approx(np.pi)
    th = MixtureState([np.pi ** -0.25], [1.0], [[0.0]])
    assert total_probability(th) == pytest.approx(1.0, rel=1e-15)


def test_total_probability_matches_quadrature_in_eight_dimensions():
    rng = np.random.default_rng(3)
    th = random_state(rng, 3, 8)
    # each term is a product of 1D Gaussians, so quadrature runs per axis
    total = 0.0
    for A, L, c in zip(th.amps, th.widths, th.centers):
        term = A**2
        for cj in c:
            term *= integrate.quad(lambda x: np.exp(-(x - cj) ** 2 / L**2), -np.inf, np.inf,
                                   epsabs=0, epsrel=1e-13)[0]
        total += term
    assert total_probability(th) == pytest.approx(total, rel=1e-8)


@pytest.mark.parametrize("d", [1, 2])
def test_total_probability_matches_gauss_hermite(d):
    rng = np.random.default_rng(10 + d)
    th = random_state(rng, 2, d, spread=0.3)
    # Gauss-Hermite nodes for weight exp(-x^2) after centering on the origin
    x, w = np.polynomial.hermite.hermgauss(120)
    scale = 0.9 * th.widths.min()  # keeps exp(u^2) * density smooth and decaying
    grids = np.meshgrid(*([x * scale] * d), indexing="ij")
    pts = np.column_stack([g.ravel() for g in grids])
    W = np.prod(np.meshgrid(*([w] * d), indexing="ij"), axis=0).ravel()
    vals = evaluate(th, pts) * np.exp(np.sum((pts / scale) ** 2, axis=1))
    quad = scale**d * W @ vals
    assert total_probability(th) == pytest.approx(quad, rel=1e-8)


def test_probability_gradient_values():
    g = total_probability_gradient(MixtureState([1.0], [1.0], [[0.0]]))
    assert np.allclose(g, [2 * np.sqrt(np.pi), np.sqrt(np.pi), 0.0], rtol=1e-15)


def test_probability_gradient_centers_are_zero():
    rng = np.random.default_rng(4)
    th = random_state(rng, 4, 3)
    g = total_probability_gradient(th).reshape(4, 5)
    assert np.all(g[:, 2:] == 0.0)


def test_probability_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    th = random_state(rng, 2, 2)
    v = th.to_vector()
    g = total_probability_gradient(th)
    fd = np.empty_like(v)
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = 1e-5
        fd[i] = (total_probability(MixtureState.from_vector(v + e, 2))
                 - total_probability(MixtureState.from_vector(v - e, 2))) / 2e-5
    assert np.linalg.norm(g - fd) <= 1e-8 * np.linalg.norm(g)


# ---------------------------------------------------------------------------
# moments and sampling


def test_mean_and_covariance_match_samples():
    rng = np.random.default_rng(6)
    th = normalize(random_state(rng, 3, 2))
    X = th.sample(200_000, rng)
    assert np.allclose(X.mean(axis=0), th.mean(), atol=0.01)
    assert np.allclose(np.cov(X.T), th.covariance(), atol=0.01)


# ---------------------------------------------------------------------------
# projection


def test_projection_fixed_point():
    th = normalize(MixtureState([1.0, 0.6], [0.8, 0.5], [[-1.0], [1.2]]))
    out, hist = project_initial_condition(lambda x: evaluate(th, x), th, return_history=True)
    assert hist[0] == pytest.approx(0.0, abs=1e-25)
    assert np.allclose(out.to_vector(), th.to_vector(), rtol=1e-12)


def test_projection_recovers_isotropic_gaussian_in_eight_dimensions():
    d, var0 = 8, 0.1
    mu = np.arange(d, dtype=float)

    def p0(x):
        return (2 * np.pi * var0) ** (-d / 2) * np.exp(-np.sum((x - mu) ** 2, axis=1) / (2 * var0))

    guess = normalize(MixtureState([1.0], [0.5], [mu + 0.05]))
    out = project_initial_condition(p0, guess)
    assert out.widths[0] ** 2 == pytest.approx(0.2, rel=1e-6)
    assert np.allclose(out.centers[0], mu, atol=1e-6)
    # squared amplitude is the peak height of the normalized Gaussian
    assert out.amps[0] ** 2 == pytest.approx((2 * np.pi * var0) ** (-d / 2), rel=1e-5)


def test_projection_separates_two_bumps():
    target = normalize(MixtureState([1.0, 1.0], [0.6, 0.6], [[-2.0], [2.0]]))
    guess = normalize(MixtureState([1.0, 1.0], [1.0, 1.0], [[-0.1], [0.1]]))
    out, hist = project_initial_condition(lambda x: evaluate(target, x), guess,
                                          return_history=True)
    assert all(b <= a for a, b in zip(hist, hist[1:]))
    x = np.linspace(-8, 8, 4001)
    err = np.sqrt(np.trapezoid((evaluate(out, x) - evaluate(target, x)) ** 2, x)
                  / np.trapezoid(evaluate(target, x) ** 2, x))
    assert err <= 1e-3
    assert total_probability(out) == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------------------
# properties


@settings(max_examples=60, deadline=None)
@given(r=st.integers(1, 100), d=st.integers(1, 8), seed=st.integers(0, 2**31))
def test_flatten_round_trip(r, d, seed):
    rng = np.random.default_rng(seed)
    th = random_state(rng, r, d)
    v = th.to_vector()
    assert v.size == r * (d + 2)
    back = MixtureState.from_vector(v, d)
    assert np.array_equal(back.to_vector(), v)
    assert np.array_equal(v.reshape(r, d + 2)[:, 0], th.amps)
    assert np.array_equal(v.reshape(r, d + 2)[:, 1], th.widths)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), d=st.integers(1, 4),
       amps=st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=4))
def test_density_is_nonnegative(seed, d, amps):
    rng = np.random.default_rng(seed)
    r = len(amps)
    th = MixtureState(amps, rng.uniform(0.1, 2, r), rng.normal(0, 2, (r, d)))
    assert np.all(evaluate(th, rng.normal(0, 3, (50, d))) >= 0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), d=st.sampled_from([1, 2, 3, 8]))
def test_gradient_consistency_property(seed, d):
    rng = np.random.default_rng(seed)
    th = random_state(rng, 2, d, spread=0.5)
    x = rng.normal(0, 0.5, d)
    g = param_gradient(th, x)
    fd = _fd_gradient(th, x)
    assert np.linalg.norm(g - fd) <= 1e-6 * max(np.linalg.norm(g), 1e-300)
