"""Phonon-mediated QP propagation from the SFQ circuit to the qubit.

Near the SFQ circuit the density obeys ``dx/dt = g(t) - r x^2`` with a
rectangular drive ``g = g_sfq`` on ``[-t_sfq, 0)``; its closed form is
:func:`x_sfq`. Recombination phonons regenerate QPs at the qubit after a delay
``t_p`` with efficiency ``alpha`` (:func:`g_qubit`), where they are removed by
trapping at rate ``s_qubit`` (:func:`x_qubit`).

Two RK4 integrators act as independent oracles for the closed form and the
quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import US, ConvergenceError, PhononModelParams, QpdynError, ValidationError

QUAD_RTOL = 1e-8
_MAX_DEPTH = 50


@dataclass(frozen=True)
class ModelCurve:
    times: np.ndarray
    values: np.ndarray
    params: PhononModelParams = field(default_factory=PhononModelParams)

    def __post_init__(self):
        self._validate()

    def _validate(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.shape != v.shape or t.ndim != 1:
            raise ValidationError("values", "times and values must be 1-D arrays of equal length")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValidationError("times", "must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValidationError("values", "must be finite")
        if np.any(v < 0):
            raise ValidationError("values", f"must be >= 0, min is {v.min()!r}")

    @property
    def peak_index(self) -> int:
        return int(np.argmax(self.values))

    @property
    def peak_time(self) -> float:
        return float(self.times[self.peak_index])

    @property
    def peak_value(self) -> float:
        return float(self.values[self.peak_index])


def _scalar_or_array(t, out):
    return float(out) if np.ndim(t) == 0 else out


def _saturation(params: PhononModelParams) -> float:
    """Density at the end of the drive, sqrt(g/r) * tanh(sqrt(g r) t_sfq)."""
    g, r = params.generation_rate_g_sfq, params.recombination_rate_r
    return math.sqrt(g / r) * math.tanh(math.sqrt(g * r) * params.drive_duration_t_sfq)


def _x_sfq(t, params: PhononModelParams):
    # Unchecked vectorised closed form; callers guarantee t >= -t_sfq.
    g, r, t_sfq = params.generation_rate_g_sfq, params.recombination_rate_r, params.drive_duration_t_sfq
    t = np.asarray(t, dtype=float)
    x0 = _saturation(params)
    during = math.sqrt(g / r) * np.tanh(np.sqrt(g * r) * (np.minimum(t, 0.0) + t_sfq))
    if x0 == 0.0:
        return np.where(t < 0, during, 0.0)
    after = x0 / (1.0 + r * x0 * np.maximum(t, 0.0))
    return np.where(t < 0, during, after)


def x_sfq(t_r, params: PhononModelParams):
    """Normalized QP density next to the SFQ circuit.

    ``sqrt(g/r) tanh(sqrt(g r)(t_r + t_sfq))`` while driven, then the
    recombination tail ``1 / (r t_r + 1/x(0))``. Accepts scalars or arrays.

    Raises:
        QpdynError: if any ``t_r < -t_sfq`` ("before injection start").
    """
    t = np.asarray(t_r, dtype=float)
    if np.any(t < -params.drive_duration_t_sfq):
        raise QpdynError(f"before injection start: t_r < -t_sfq = {-params.drive_duration_t_sfq!r}")
    return _scalar_or_array(t_r, _x_sfq(t, params))


def g_qubit(t_r, params: PhononModelParams):
    """Phonon-induced generation rate at the qubit, alpha * r * x_sfq(t_r - t_p)^2.

    Zero before the first phonons arrive at ``t_r = t_p - t_sfq``.
    """
    t = np.asarray(t_r, dtype=float)
    shifted = t - params.propagation_delay_t_p
    arrived = shifted >= -params.drive_duration_t_sfq
    x = _x_sfq(np.where(arrived, shifted, -params.drive_duration_t_sfq), params)
    out = np.where(arrived, params.transfer_fraction_alpha * params.recombination_rate_r * x * x, 0.0)
    return _scalar_or_array(t_r, out)


def onset_time(params: PhononModelParams) -> float:
    """Earliest recovery time at which phonon-induced generation is nonzero."""
    return params.propagation_delay_t_p - params.drive_duration_t_sfq


def _breakpoints(params: PhononModelParams) -> list[float]:
    return [0.0, params.propagation_delay_t_p]


def _adaptive_simpson(f, a, b, ends, rtol=QUAD_RTOL):
    """Integrate ``f(t, end)`` over each ``[a_i, b_i]`` simultaneously.

    Intervals are halved until the two-level Simpson estimates agree to
    ``rtol`` relative; accepted pieces get the Richardson correction. ``f``
    must be non-negative so that local relative tolerance bounds the total.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ends = np.asarray(ends, dtype=float)
    result = np.zeros(a.size)
    seg = np.arange(a.size)
    lo, hi, e = a, b, ends
    mid = 0.5 * (lo + hi)
    f_lo, f_mid, f_hi = f(lo, e), f(mid, e), f(hi, e)
    whole = (hi - lo) / 6.0 * (f_lo + 4.0 * f_mid + f_hi)
    worst = 0.0
    for _ in range(_MAX_DEPTH):
        if seg.size == 0:
            return result
        q1, q3 = 0.5 * (lo + mid), 0.5 * (mid + hi)
        f_q1, f_q3 = f(q1, e), f(q3, e)
        left = (mid - lo) / 6.0 * (f_lo + 4.0 * f_q1 + f_mid)
        right = (hi - mid) / 6.0 * (f_mid + 4.0 * f_q3 + f_hi)
        refined = left + right
        err = refined - whole
        ok = np.abs(err) <= 15.0 * rtol * np.abs(refined)
        ok |= np.abs(err) <= 1e-300
        np.add.at(result, seg[ok], refined[ok] + err[ok] / 15.0)
        bad = ~ok
        if np.any(bad):
            worst = float(np.max(np.abs(err[bad]) / np.maximum(np.abs(refined[bad]), 1e-300))) / 15.0
        seg = np.concatenate([seg[bad], seg[bad]])
        e = np.concatenate([e[bad], e[bad]])
        new_lo = np.concatenate([lo[bad], mid[bad]])
        new_hi = np.concatenate([mid[bad], hi[bad]])
        new_f_lo = np.concatenate([f_lo[bad], f_mid[bad]])
        new_f_hi = np.concatenate([f_mid[bad], f_hi[bad]])
        new_f_mid = np.concatenate([f_q1[bad], f_q3[bad]])
        whole = np.concatenate([left[bad], right[bad]])
        lo, hi, f_lo, f_hi, f_mid = new_lo, new_hi, new_f_lo, new_f_hi, new_f_mid
        mid = 0.5 * (lo + hi)
    if seg.size:
        raise ConvergenceError(
            f"quadrature did not reach rtol={rtol:g} after {_MAX_DEPTH} halvings; "
            f"achieved local relative error {worst:.3g}"
        )
    return result


def _weighted_generation(params: PhononModelParams):
    s = params.trapping_rate_s_qubit

    def integrand(t, end):
        return np.exp(-s * (end - t)) * g_qubit(t, params)

    return integrand


def _qubit_on_grid(times: np.ndarray, params: PhononModelParams, rtol: float) -> np.ndarray:
    """x_qubit at sorted ``times`` via the step recurrence
    ``x(b) = exp(-s (b - a)) x(a) + int_a^b exp(-s (b - t)) g_qubit(t) dt``."""
    start = onset_time(params)
    knots = np.unique(np.concatenate([[start], times[times > start],
                                      [k for k in _breakpoints(params) if start < k < times[-1]]]))
    values_at_knots = np.zeros(knots.size)
    if knots.size > 1:
        a, b = knots[:-1], knots[1:]
        pieces = _adaptive_simpson(_weighted_generation(params), a, b, b, rtol=rtol)
        decay = np.exp(-params.trapping_rate_s_qubit * (b - a))
        acc = 0.0
        for i in range(pieces.size):
            acc = decay[i] * acc + pieces[i]
            values_at_knots[i + 1] = acc
    out = np.zeros(times.size)
    inside = times >= start
    out[inside] = values_at_knots[np.searchsorted(knots, times[inside])]
    return out


def x_qubit(t_r, params: PhononModelParams, rtol: float = QUAD_RTOL):
    """QP density near the qubit, by quadrature of the integrating-factor solution

    ``x(t_r) = int_{t_p - t_sfq}^{t_r} exp(-s_qubit (t_r - t)) g_qubit(t) dt``.

    The integral is split at ``t = 0`` and ``t = t_p`` so each piece is smooth.

    Raises:
        QpdynError: if ``t_r`` precedes the phonon onset ``t_p - t_sfq``.
        ConvergenceError: if the adaptive quadrature cannot reach ``rtol``.
    """
    t = np.atleast_1d(np.asarray(t_r, dtype=float))
    start = onset_time(params)
    if np.any(t < start):
        raise QpdynError(f"t_r precedes phonon onset t_p - t_sfq = {start!r}")
    order = np.argsort(t, kind="stable")
    out = np.empty(t.size)
    out[order] = _qubit_on_grid(t[order], params, rtol)
    return float(out[0]) if np.ndim(t_r) == 0 else out


def default_times(params: PhononModelParams, end: float = 160 * US, step: float = 0.1 * US) -> np.ndarray:
    n = int(round((end + params.drive_duration_t_sfq) / step))
    return np.linspace(-params.drive_duration_t_sfq, end, n + 1)


def model_curve(params: PhononModelParams, times=None) -> ModelCurve:
    """Qubit-side density evaluated over a time grid (default ``[-t_sfq, 160 us]``
    at 0.1 us). Times before the phonon onset evaluate to zero."""
    t = default_times(params) if times is None else np.asarray(times, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ValidationError("times", "need a non-empty 1-D grid")
    if t.size > 1 and np.any(np.diff(t) <= 0):
        raise ValidationError("times", "must be strictly increasing")
    return ModelCurve(t, _qubit_on_grid(t, params, QUAD_RTOL), params)


# --- RK4 oracles -------------------------------------------------------------


def _check_grid(grid, max_dt: float, must_contain=(), label="grid") -> tuple[np.ndarray, float]:
    t = np.asarray(grid, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise ValidationError(label, "need at least two time points")
    steps = np.diff(t)
    dt = float(steps.mean())
    if np.any(steps <= 0) or np.max(np.abs(steps - dt)) > 1e-6 * dt:
        raise ValidationError(label, "oracle grids must be uniform and increasing")
    if dt > max_dt * (1 + 1e-12):
        raise QpdynError(f"step too coarse: dt={dt:.3g} s exceeds {max_dt:.3g} s")
    for point in must_contain:
        if t[0] < point < t[-1] and np.min(np.abs(t - point)) > 1e-6 * dt:
            raise ValidationError(label, f"grid must contain the breakpoint t={point!r}")
    return t, dt


def _rk4(rhs, t: np.ndarray) -> np.ndarray:
    x = np.zeros(t.size)
    xn = 0.0
    for n in range(t.size - 1):
        tn, h = t[n], t[n + 1] - t[n]
        k1 = rhs(tn, xn, tn + 0.5 * h)
        k2 = rhs(tn + 0.5 * h, xn + 0.5 * h * k1, tn + 0.5 * h)
        k3 = rhs(tn + 0.5 * h, xn + 0.5 * h * k2, tn + 0.5 * h)
        k4 = rhs(tn + h, xn + h * k3, tn + 0.5 * h)
        xn = xn + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        x[n + 1] = xn
    return x


def source_grid(params: PhononModelParams, end: float = 160 * US, steps_per_drive: int = 5000) -> np.ndarray:
    """Uniform grid from ``-t_sfq`` to ``end`` that contains ``t = 0``."""
    dt = params.drive_duration_t_sfq / steps_per_drive
    n = int(math.ceil(end / dt))
    return -params.drive_duration_t_sfq + dt * np.arange(steps_per_drive + n + 1)


def qubit_grid(params: PhononModelParams, end: float = 160 * US, steps_per_drive: int = 2000) -> np.ndarray:
    """Uniform grid from the phonon onset to ``end`` that contains ``t = t_p``."""
    dt = params.drive_duration_t_sfq / steps_per_drive
    n = int(math.ceil((end - params.propagation_delay_t_p) / dt))
    return onset_time(params) + dt * np.arange(steps_per_drive + n + 1)


def x_sfq_ode_oracle(params: PhononModelParams, time_grid) -> ModelCurve:
    """RK4 solution of ``dx/dt = g(t) - r x^2`` from ``x(-t_sfq) = 0``.

    The grid must be uniform, start at ``-t_sfq``, contain ``t = 0`` (where the
    drive switches off) and have ``dt <= 1 / (100 sqrt(g r))``.
    """
    g, r, t_sfq = params.generation_rate_g_sfq, params.recombination_rate_r, params.drive_duration_t_sfq
    max_dt = math.inf if g == 0 else 1.0 / (100.0 * math.sqrt(g * r))
    t, _ = _check_grid(time_grid, max_dt, must_contain=(0.0,))
    if abs(t[0] + t_sfq) > 1e-9 * t_sfq:
        raise ValidationError("time_grid", "must start at -t_sfq")

    def rhs(tt, x, step_mid):
        # Drive is piecewise constant; decide it once per step.
        return (g if step_mid < 0 else 0.0) - r * x * x

    return ModelCurve(t, _rk4(rhs, t), params)


def x_qubit_ode_oracle(params: PhononModelParams, time_grid) -> ModelCurve:
    """RK4 solution of ``dx/dt = g_qubit(t) - s_qubit x`` from the phonon onset.

    The grid must be uniform, start at ``t_p - t_sfq``, contain ``t_p`` and
    satisfy ``dt <= min(t_p, 1/s_qubit) / 100``.
    """
    s, t_p = params.trapping_rate_s_qubit, params.propagation_delay_t_p
    limit = min(t_p, 1.0 / s) if t_p > 0 else 1.0 / s
    t, _ = _check_grid(time_grid, limit / 100.0, must_contain=(t_p,))
    start = onset_time(params)
    if abs(t[0] - start) > 1e-9 * params.drive_duration_t_sfq:
        raise ValidationError("time_grid", "must start at the phonon onset t_p - t_sfq")
    alpha_r = params.transfer_fraction_alpha * params.recombination_rate_r

    def rhs(tt, x, step_mid):
        xs = _x_sfq(max(tt - t_p, -params.drive_duration_t_sfq), params)
        return alpha_r * float(xs) ** 2 - s * x

    return ModelCurve(t, _rk4(rhs, t), params)
