import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qpdyn.core import US, PhononModelParams, QpdynError, ValidationError
from qpdyn.phonon_model import (
    _adaptive_simpson,
    default_times,
    g_qubit,
    model_curve,
    onset_time,
    qubit_grid,
    source_grid,
    x_qubit,
    x_qubit_ode_oracle,
    x_sfq,
    x_sfq_ode_oracle,
)


def test_x_sfq_zero_at_injection_start(params):
    assert x_sfq(-params.drive_duration_t_sfq, params) == 0.0


def test_x_sfq_continuous_at_drive_end(params):
    left = x_sfq(-1e-15, params)
    right = x_sfq(0.0, params)
    assert right == pytest.approx(left, rel=1e-9)


def test_x_sfq_at_drive_end_is_tanh_of_drive(params):
    g, r, t_sfq = params.generation_rate_g_sfq, params.recombination_rate_r, params.drive_duration_t_sfq
    assert x_sfq(0.0, params) == pytest.approx(math.sqrt(g / r) * math.tanh(math.sqrt(g * r) * t_sfq), rel=1e-12)


def test_x_sfq_saturates_at_sqrt_g_over_r(params):
    p = params.replace(recombination_rate_r=1e12)
    g, r = p.generation_rate_g_sfq, p.recombination_rate_r
    assert x_sfq(-1e-9, p) == pytest.approx(math.sqrt(g / r), rel=1e-9)


def test_x_sfq_tail_is_algebraic(params):
    r, x0 = params.recombination_rate_r, x_sfq(0.0, params)
    t = 30 * US
    assert x_sfq(t, params) == pytest.approx(1 / (r * t + 1 / x0), rel=1e-12)


def test_x_sfq_rejects_times_before_injection(params):
    with pytest.raises(QpdynError, match="before injection start"):
        x_sfq(-30 * US, params)


def test_x_sfq_vectorised(params):
    t = np.array([-10, 0, 10]) * US
    out = x_sfq(t, params)
    assert out.shape == (3,)
    assert out[1] == pytest.approx(x_sfq(0.0, params))


def test_g_qubit_zero_before_onset_and_delayed(params):
    assert g_qubit(onset_time(params) - 1e-9, params) == 0.0
    t = 3 * US
    expected = params.transfer_fraction_alpha * params.recombination_rate_r * x_sfq(t - params.propagation_delay_t_p, params) ** 2
    assert g_qubit(t, params) == pytest.approx(expected)


def test_g_qubit_at_drive_end(params):
    # alpha * r * x0^2 with x0 short of saturation: about 2.01 1/s
    t = params.propagation_delay_t_p
    assert g_qubit(t, params) == pytest.approx(
        params.transfer_fraction_alpha * params.recombination_rate_r * x_sfq(0.0, params) ** 2, rel=1e-12
    )
    assert g_qubit(t, params) == pytest.approx(2.01, abs=0.01)


def test_g_qubit_saturated_plateau(params):
    p = params.replace(recombination_rate_r=1e12)
    assert g_qubit(p.propagation_delay_t_p - 1e-9, p) == pytest.approx(
        p.transfer_fraction_alpha * p.generation_rate_g_sfq, rel=1e-9
    )


def test_adaptive_simpson_polynomial_and_exponential():
    f = lambda t, end: t**3
    assert _adaptive_simpson(f, np.array([0.0]), np.array([2.0]), np.array([2.0]))[0] == pytest.approx(4.0, rel=1e-12)
    g = lambda t, end: np.exp(-t)
    assert _adaptive_simpson(g, np.array([0.0]), np.array([5.0]), np.array([5.0]))[0] == pytest.approx(
        1 - math.exp(-5), rel=1e-8
    )


def test_x_qubit_zero_at_onset(params):
    assert x_qubit(onset_time(params), params) == 0.0


def test_x_qubit_rejects_times_before_onset(params):
    with pytest.raises(QpdynError):
        x_qubit(onset_time(params) - 1 * US, params)


def test_x_qubit_matches_closed_form_during_plateau(params):
    # While g_qubit is the constant alpha*g, x = alpha*g/s (1 - exp(-s (t - t0))).
    p = params.replace(recombination_rate_r=1e16)  # saturates within ~1 ns
    t0 = onset_time(p)
    t = t0 + 10 * US
    s = p.trapping_rate_s_qubit
    plateau = p.transfer_fraction_alpha * p.generation_rate_g_sfq / s
    assert x_qubit(t, p) == pytest.approx(plateau * (1 - math.exp(-s * 10 * US)), rel=1e-4)


def test_x_qubit_scalar_and_unsorted_array(params):
    t = np.array([50, 10, 30]) * US
    out = x_qubit(t, params)
    for ti, oi in zip(t, out):
        assert oi == pytest.approx(x_qubit(float(ti), params), rel=1e-9)


def test_model_curve_default_grid(params):
    curve = model_curve(params)
    assert curve.times[0] == pytest.approx(-25 * US)
    assert curve.times[-1] == pytest.approx(160 * US)
    assert np.all(curve.values[curve.times < onset_time(params)] == 0)
    assert np.all(curve.values >= 0)


def test_model_curve_rejects_bad_grids(params):
    with pytest.raises(ValidationError):
        model_curve(params, [1e-6, 0.5e-6])
    with pytest.raises(ValidationError):
        model_curve(params, [])


def test_zero_alpha_gives_zero_curve(params):
    curve = model_curve(params.replace(transfer_fraction_alpha=0.0))
    assert np.all(curve.values == 0)


def test_sfq_oracle_matches_closed_form(params):
    grid = source_grid(params)
    oracle = x_sfq_ode_oracle(params, grid)
    exact = x_sfq(grid, params)
    mask = exact > 0
    rel = np.max(np.abs(oracle.values[mask] - exact[mask]) / exact[mask])
    assert rel < 1e-8


def test_qubit_oracle_matches_quadrature(params):
    grid = qubit_grid(params)
    oracle = x_qubit_ode_oracle(params, grid)
    exact = model_curve(params, grid).values
    mask = exact > 1e-3 * exact.max()
    rel = np.max(np.abs(oracle.values[mask] - exact[mask]) / exact[mask])
    assert rel < 1e-6


def test_oracle_rejects_coarse_or_misaligned_grids(params):
    with pytest.raises(QpdynError, match="step too coarse"):
        x_sfq_ode_oracle(params, np.linspace(-25 * US, 160 * US, 50))
    grid = source_grid(params)[:-1] + 0.3 * (source_grid(params)[1] - source_grid(params)[0])
    with pytest.raises(ValidationError):
        x_sfq_ode_oracle(params, grid)


def test_default_times_spacing(params):
    t = default_times(params)
    assert np.allclose(np.diff(t), 0.1 * US)


@settings(max_examples=25, deadline=None)
@given(
    s_us=st.floats(2.0, 50.0),
    t_p_us=st.floats(1.0, 20.0),
    alpha=st.floats(1e-4, 0.5),
    t_sfq_us=st.floats(5.0, 40.0),
)
def test_curve_nonnegative_and_bounded_by_plateau(s_us, t_p_us, alpha, t_sfq_us):
    p = PhononModelParams(
        trapping_rate_s_qubit=1 / (s_us * US),
        propagation_delay_t_p=t_p_us * US,
        transfer_fraction_alpha=alpha,
        drive_duration_t_sfq=t_sfq_us * US,
    )
    values = model_curve(p, np.linspace(-t_sfq_us * US, 100 * US, 400)).values
    bound = alpha * p.generation_rate_g_sfq / p.trapping_rate_s_qubit
    assert np.all(values >= 0)
    assert values.max() <= bound * (1 + 1e-9)


@settings(max_examples=20, deadline=None)
@given(scale=st.floats(0.1, 10.0))
def test_curve_linear_in_alpha(scale):
    p = PhononModelParams(transfer_fraction_alpha=0.01)
    t = np.linspace(0, 60 * US, 61)
    base = model_curve(p, t).values
    scaled = model_curve(p.replace(transfer_fraction_alpha=min(0.01 * scale, 1.0)), t).values
    assert np.allclose(scaled, base * min(0.01 * scale, 1.0) / 0.01, rtol=1e-7, atol=0)


def test_fast_trapping_is_quasi_static(params):
    fast = params.replace(trapping_rate_s_qubit=100 * params.trapping_rate_s_qubit)
    t = np.array([0.0, 5 * US, 20 * US])
    assert np.allclose(model_curve(fast, t).values, g_qubit(t, fast) / fast.trapping_rate_s_qubit, rtol=0.05)


def test_doubling_alpha_doubles_generation(params):
    t = np.linspace(-10 * US, 60 * US, 50)
    double = params.replace(transfer_fraction_alpha=2 * params.transfer_fraction_alpha)
    assert np.allclose(g_qubit(t, double), 2 * g_qubit(t, params), rtol=1e-12, atol=0)
