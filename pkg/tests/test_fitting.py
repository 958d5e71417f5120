import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optimus.errors import InsufficientData
from optimus.nodes.fitting import (
    cosine,
    cosine_guess,
    fit_cosine,
    fit_model,
    fit_scalar,
    noise_threshold,
    shot_noise,
)


def rabi_curve(t, rate_mhz):
    return np.sin(np.pi * rate_mhz * 1e-3 * t) ** 2  # sin^2(Omega t / 2)


def test_nine_noiseless_rabi_points_recover_frequency():
    t = np.linspace(0.0, 40.0, 9)
    y = rabi_curve(t, 25.0)
    fit = fit_cosine(t, y, cosine_guess(t, y))
    # sin^2(pi f t) = 0.5 - 0.5 cos(2 pi f t), so the cosine frequency is f itself
    assert abs(fit["frequency"] - 0.025) / 0.025 <= 1e-6
    assert fit.residual_rms < 1e-9
    assert fit.r_squared == pytest.approx(1.0)


def test_flat_data_has_no_oscillation():
    t = np.linspace(0.0, 40.0, 9)
    y = np.full_like(t, 0.5)
    fit = fit_cosine(t, y, cosine_guess(t, y))
    assert abs(fit["amplitude"]) < 1e-6
    assert fit.r_squared <= 0.0


def test_too_few_points():
    with pytest.raises(InsufficientData):
        fit_cosine([0.0, 1.0], [0.0, 1.0], {"frequency": 1, "amplitude": 1, "offset": 0, "phase": 0})


def test_fit_is_bitwise_deterministic():
    rng = np.random.default_rng(0)
    t = np.arange(4.0, 61.0, 4.0)
    y = rng.binomial(2000, rabi_curve(t, 25.0)) / 2000
    a = fit_cosine(t, y, cosine_guess(t, y), shots=2000)
    b = fit_cosine(t, y, cosine_guess(t, y), shots=2000)
    assert a == b


@settings(max_examples=60, deadline=None)
@given(st.floats(15.0, 35.0), st.floats(0.2, 0.5), st.floats(0.3, 0.7), st.floats(-3.0, 3.0))
def test_cosine_round_trip_on_noiseless_data(rate, amplitude, offset, phase):
    t = np.arange(4.0, 61.0, 4.0)
    f = rate * 1e-3
    y = cosine(t, f, amplitude, offset, phase)
    fit = fit_cosine(t, y, cosine_guess(t, y))
    assert abs(fit["frequency"] - f) / f <= 1e-6
    assert abs(abs(fit["amplitude"]) - amplitude) / amplitude <= 1e-6


@settings(max_examples=60, deadline=None)
@given(st.floats(16.0, 24.0))
def test_scalar_refit_round_trip(length):
    def curve(t, L):
        return np.sin(np.pi * 11 * t / (2 * L)) ** 2

    x = 20.0 * (1 + np.arange(-2, 3) / 22)
    lo, hi = 20 * (1 - 0.4 / 11), 20 * (1 + 0.4 / 11)
    true = min(max(length, lo), hi)
    fit = fit_scalar(curve, x, curve(x, true), lo, hi)
    assert abs(fit["value"] - true) / true <= 1e-6


def test_binomial_standard_errors_match_fisher_oracle():
    # straight line with known Fisher information under binomial noise
    x = np.linspace(0.0, 1.0, 11)
    p = 0.2 + 0.5 * x
    fit = fit_model(lambda x, a, b: a + b * x, x, p, {"a": 0.0, "b": 1.0}, shots=1000)
    w = 1000 / (p * (1 - p))
    info = np.array([[w.sum(), (w * x).sum()], [(w * x).sum(), (w * x * x).sum()]])
    cov = np.linalg.inv(info)
    assert fit.stderr["a"] == pytest.approx(np.sqrt(cov[0, 0]), rel=1e-6)
    assert fit.stderr["b"] == pytest.approx(np.sqrt(cov[1, 1]), rel=1e-6)


def test_noise_threshold_is_five_shot_noise_units():
    values = np.array([0.2, 0.4, 0.6])
    assert shot_noise(values, 10_000) == pytest.approx(np.sqrt(0.4 * 0.6 / 10_000))
    assert noise_threshold(values, 10_000) == pytest.approx(5 * np.sqrt(0.24 / 10_000))
