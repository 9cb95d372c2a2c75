"""Acceptance suite: one test per criterion, each at its stated tolerance.

Every test records a one-line PASS/FAIL verdict with the measured numbers;
the lines are printed in the pytest terminal summary and when this file is
run as a script (``python3 tests/test_acceptance.py``).
"""

from __future__ import annotations

import functools
import math
import time

import numpy as np
import pytest

from qpdyn.calibrate import FREE_ORDER, FitProblem, fit_phonon_model, objective, perturbed, synthesize_data
from qpdyn.core import PHONON_FIELDS, US, GeometryParams, PhononModelParams, PhysicalConstants
from qpdyn.diffusion import DiffusionScenario, Rect, SolverState, evolve, run, stable_dt, step, total_xqp, DensityField
from qpdyn.observables import (
    Mechanism,
    Weighting,
    baseline_rate,
    estimate_timescale,
    expected_sfq_voltage,
    fit_voltage_slope,
    gamma_to_xqp,
    operating_region_check,
    window_average,
)
from qpdyn.phonon_model import model_curve, qubit_grid, source_grid, x_qubit_ode_oracle, x_sfq, x_sfq_ode_oracle

RESULTS: dict[str, tuple[bool, str]] = {}
REFERENCE = PhononModelParams()
FREE = tuple(n for n in FREE_ORDER if n != "r")


def record(key: str, ok: bool, detail: str):
    RESULTS[key] = (bool(ok), detail)
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {key}: {detail}")
    return ok


def summary_lines() -> list[str]:
    return [f"[{'PASS' if ok else 'FAIL'}] criterion {k}: {d}" for k, (ok, d) in sorted(RESULTS.items())]


def _unimodal(values: np.ndarray) -> bool:
    k = int(np.argmax(values))
    return bool(np.all(np.diff(values[: k + 1]) >= 0) and np.all(np.diff(values[k:]) <= 0))


@functools.lru_cache(maxsize=None)
def _diffusion(nx: int = 500, ny: int = 250, s: float = 1 / (10 * US)):
    return run(DiffusionScenario(grid_nx=nx, grid_ny=ny, trapping_rate_s=s))


# --- 1 ---------------------------------------------------------------------


def test_criterion_1_density_extraction():
    t0 = time.perf_counter()
    consts = PhysicalConstants.from_lab_units(delta_gap_mev=0.18, qubit_freq_ghz=4.462)
    x = gamma_to_xqp(1.23e-6, baseline_rate(6.0e-6), consts)
    elapsed = time.perf_counter() - t0
    ok = 1.5e-5 <= x <= 1.8e-5 and elapsed < 1.0
    assert record("1", ok, f"x_qp = {x:.5g} (band [1.5e-5, 1.8e-5]), {elapsed * 1e3:.1f} ms")


# --- 2 ---------------------------------------------------------------------


def test_criterion_2_model_vs_rk4_oracles():
    grid = source_grid(REFERENCE)
    oracle = x_sfq_ode_oracle(REFERENCE, grid).values
    exact = x_sfq(grid, REFERENCE)
    nz = exact > 0
    err_src = float(np.max(np.abs(oracle[nz] - exact[nz]) / exact[nz]))

    qgrid = qubit_grid(REFERENCE)
    q_oracle = x_qubit_ode_oracle(REFERENCE, qgrid).values
    q_exact = model_curve(REFERENCE, qgrid).values
    nz = q_exact > 0
    err_q = float(np.max(np.abs(q_oracle[nz] - q_exact[nz]) / q_exact[nz]))
    ok = err_src <= 1e-8 and err_q <= 1e-6
    assert record("2", ok, f"source max rel err {err_src:.2e} (<= 1e-8), qubit max rel err {err_q:.2e} (<= 1e-6)")


# --- 3 ---------------------------------------------------------------------


def late_time_rate(params: PhononModelParams, start: float = 120 * US, end: float = 160 * US) -> float:
    """Log-linear least-squares decay rate of the model over ``[start, end]``."""
    t = np.linspace(start, end, 401)
    x = model_curve(params, t).values
    slope = np.polyfit(t, np.log(x), 1)[0]
    return -float(slope)


def test_criterion_3_curve_shape():
    t = np.linspace(0, 160 * US, 1601)
    curve = model_curve(REFERENCE, t)
    unimodal = _unimodal(curve.values)
    peak_t, peak_x = curve.peak_time, curve.peak_value
    rate = late_time_rate(REFERENCE)
    s = REFERENCE.trapping_rate_s_qubit
    rate_ok = abs(rate - s) <= 0.2 * s
    ok = unimodal and 5 * US <= peak_t <= 14 * US and 5e-6 <= peak_x <= 5e-5 and rate_ok
    assert record(
        "3",
        ok,
        f"unimodal={unimodal}, peak {peak_x:.3g} at {peak_t / US:.1f} us, "
        f"late-time rate (120-160 us) {rate:.3g}/s = {rate / s:.2f} s_qubit (need 0.80-1.20)",
    )


# --- 4 ---------------------------------------------------------------------

FIT_TIMES = np.linspace(0, 160 * US, 20)


def _rel_errors(result) -> dict:
    return {n: abs(getattr(result.params, PHONON_FIELDS[n]) / getattr(REFERENCE, PHONON_FIELDS[n]) - 1) for n in FREE}


def test_criterion_4_calibration_round_trip():
    t0 = time.perf_counter()
    clean = synthesize_data(REFERENCE, FIT_TIMES)
    worst_clean = 0.0
    for k in range(10):
        start = perturbed(REFERENCE, FREE, 0.3, np.random.default_rng(100 + k))
        errs = _rel_errors(fit_phonon_model(FitProblem(clean, start), seed=k))
        worst_clean = max(worst_clean, max(errs.values()))

    worst_noisy, failing, below_truth = 0.0, 0, 0
    per_param = {n: 0.0 for n in FREE}
    for seed in range(10):
        noisy = synthesize_data(REFERENCE, FIT_TIMES, noise_sigma=1e-6, seed=seed)
        start = perturbed(REFERENCE, FREE, 0.3, np.random.default_rng(200 + seed))
        problem = FitProblem(noisy, start)
        result = fit_phonon_model(problem, seed=seed)
        # the optimizer did its job if it beats the generating parameters
        below_truth += result.residual_norm <= objective(problem, REFERENCE)
        errs = _rel_errors(result)
        for n, e in errs.items():
            per_param[n] = max(per_param[n], e)
        worst_noisy = max(worst_noisy, max(errs.values()))
        failing += max(errs.values()) > 0.15
    elapsed = time.perf_counter() - t0
    ok = worst_clean <= 0.05 and worst_noisy <= 0.15 and elapsed < 60
    worst = ", ".join(f"{n} {e:.0%}" for n, e in per_param.items())
    assert record(
        "4",
        ok,
        f"noiseless worst {worst_clean:.1e} (<= 5%); noisy worst {worst_noisy:.0%} (<= 15%), "
        f"{failing}/10 seeds out of band [per-param worst: {worst}]; fit chi2 <= truth chi2 in "
        f"{below_truth}/10; {elapsed:.0f} s",
    )


# --- 5 ---------------------------------------------------------------------


def test_criterion_5a_mass_conservation():
    sc = DiffusionScenario(
        grid_nx=100, grid_ny=50, recombination_rate_r=0.0, trapping_rate_s=0.0, injection_rate_g=0.0,
        injection_region=Rect(0.0, 0.0, 2e-4, 2e-4), snapshot_times=(), simulation_end=1.0,
    )
    rng = np.random.default_rng(0)
    state = SolverState.initial(sc, rng.random(sc.shape))
    m0 = total_xqp(DensityField(state.t, state.values, sc.h))
    dt = stable_dt(sc)
    for _ in range(10_000):
        state = step(state, dt)
    m1 = total_xqp(DensityField(state.t, state.values, sc.h))
    rel = abs(m1 - m0) / m0
    assert record("5a", rel <= 1e-10, f"relative mass drift {rel:.2e} over 1e4 steps (<= 1e-10)")


def test_criterion_5b_gaussian_kernel():
    geometry = GeometryParams(domain_length_x=2e-3, domain_length_y=2e-3, sfq_qubit_distance=1e-3)
    sc = DiffusionScenario(
        geometry=geometry, grid_nx=200, grid_ny=200, trapping_rate_s=0.0, injection_rate_g=0.0,
        injection_region=Rect(0.0, 0.0, 1e-4, 1e-4), probe_points=((1e-3, 1e-3),), snapshot_times=(),
    )
    h, D = sc.h, sc.diffusivity
    init = np.zeros(sc.shape)
    i, j = sc.cell_index(1e-3 + 0.5 * h, 1e-3 + 0.5 * h)
    mass = 1.0
    init[i, j] = mass / (h * h)
    state = evolve(SolverState.initial(sc, init), -sc.t_sfq + 10 * US)
    t = 10 * US
    analytic = mass / (4 * math.pi * D * t)
    rel = abs(state.values[i, j] - analytic) / analytic
    assert record("5b", rel < 0.02, f"centre value vs 2D Gaussian kernel at 10 us: rel err {rel:.2%} (< 2%)")


def grid_halving_changes():
    """Per-probe max |coarse - fine| over the series, relative to the probe's peak."""
    _, coarse = _diffusion(500, 250)
    _, fine = _diffusion(1000, 500)
    out = []
    for a, b in zip(coarse, fine):
        assert np.allclose(a.times, b.times)
        out.append(float(np.max(np.abs(a.values - b.values)) / np.max(a.values)))
    return out


def test_criterion_5c_grid_halving():
    changes = grid_halving_changes()
    ok = all(c < 0.01 for c in changes)
    detail = ", ".join(f"d={d:g} mm {c:.2%}" for d, c in zip((0, 0.1, 0.5, 1.0), changes))
    assert record("5c", ok, f"500x250 -> 1000x500 max change / peak: {detail} (each < 1%)")


# --- 6 ---------------------------------------------------------------------


def test_criterion_6_diffusion_locality():
    fields10, probes10 = _diffusion(500, 250, 1 / (10 * US))
    fields100, probes100 = _diffusion(500, 250, 1 / (100 * US))
    peaks_t = [p.peak_time for p in probes10]
    increasing = all(b > a for a, b in zip(peaks_t, peaks_t[1:]))
    ratio = probes10[0].peak_value / probes10[-1].peak_value
    dominates = all(np.all(b.values >= a.values) for a, b in zip(probes10, probes100)) and all(
        np.all(b.values >= a.values) for a, b in zip(fields10, fields100)
    )
    ok = increasing and ratio >= 1e3 and dominates
    times = ", ".join(f"{t / US:.1f}" for t in peaks_t)
    assert record(
        "6",
        ok,
        f"peak times [{times}] us strictly increasing={increasing}; source/1 mm peak ratio {ratio:.2e} (>= 1e3); "
        f"s=1/100us dominates pointwise={dominates}",
    )


# --- 7 ---------------------------------------------------------------------


def test_criterion_7_timescale_ordering():
    photon = estimate_timescale(Mechanism.PHOTON).transit_time
    phonon = estimate_timescale(Mechanism.PHONON_MEDIATED).transit_time
    direct = estimate_timescale(Mechanism.DIRECT_DIFFUSION).transit_time
    close = lambda a, b: abs(a / b - 1) <= 0.05
    measured_lag = 10 * US
    within_2 = 0.5 <= phonon / measured_lag <= 2 and 0.5 <= phonon / REFERENCE.propagation_delay_t_p <= 2
    ok = close(photon, 25e-12) and close(phonon, 10 * US) and close(direct, 52e-3) and within_2
    ok = ok and photon < phonon < direct
    assert record(
        "7",
        ok,
        f"photon {photon * 1e12:.1f} ps, phonon {phonon / US:.2f} us, direct {direct * 1e3:.1f} ms; "
        f"phonon/lag = {phonon / measured_lag:.2f}, phonon/t_p(fit) = {phonon / REFERENCE.propagation_delay_t_p:.2f}",
    )


# --- 8 ---------------------------------------------------------------------

WINDOWS = (0.0, 3 * US, 6 * US, 12 * US, 18 * US)


def averaged_peaks(weighting: Weighting):
    step_ = 0.05 * US
    t = np.arange(0, int(round(180 * US / step_)) + 1) * step_
    curve = model_curve(REFERENCE, t)
    out_t = t[t <= 160 * US + 1e-12]
    peaks = []
    for w in WINDOWS:
        _, avg = window_average((curve.times, curve.values), w, weighting, out_times=out_t)
        k = int(np.argmax(avg))
        peaks.append((float(out_t[k]), float(avg[k])))
    identity = np.allclose(window_average((curve.times, curve.values), 0.0, weighting, out_times=out_t)[1],
                           curve.values[: out_t.size], rtol=0, atol=0)
    return peaks, identity


@pytest.mark.parametrize("weighting", list(Weighting))
def test_criterion_8_measurement_window(weighting):
    peaks, identity = averaged_peaks(weighting)
    times = [p[0] for p in peaks]
    values = [p[1] for p in peaks]
    values_ok = all(b <= a for a, b in zip(values, values[1:]))
    times_ok = all(b >= a for a, b in zip(times, times[1:]))
    band_ok = all(4 * US <= t <= 25 * US for t in times)
    ok = identity and values_ok and times_ok and band_ok
    listing = ", ".join(f"{w / US:g}us: {t / US:.2f}" for w, t in zip(WINDOWS, times))
    assert record(
        f"8-{weighting.value}",
        ok,
        f"identity={identity}, peak value non-increasing={values_ok}, peak time non-decreasing={times_ok}, "
        f"in [4, 25] us={band_ok}; peak times {listing}",
    )


# --- 9 ---------------------------------------------------------------------


def test_criterion_9_sfq_voltage():
    consts = PhysicalConstants()
    f = np.linspace(0.2e9, 6.5e9, 64)
    v = expected_sfq_voltage(f, consts)
    all_pass = all(operating_region_check(vi, fi, 0.036, consts) for vi, fi in zip(v, f))
    slope = fit_voltage_slope(f, v) * 1e15  # uV/GHz
    ok = all_pass and abs(slope - 2.0678) <= 5e-5 and abs(slope - 2.065) <= 0.003
    assert record("9", ok, f"all {f.size} points within 3.6%={all_pass}; slope {slope:.5f} uV/GHz "
                           f"(published 2.065 +- 0.003)")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
