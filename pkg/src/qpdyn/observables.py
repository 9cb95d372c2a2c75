"""The qubit as a QP sensor.

T1 extraction from |1> population decays, the relaxation-rate/density
conversion ``x_qp = (1/T1 - Gamma0) / C``, measurement-window averaging of a
density trajectory, propagation timescale estimates and the AC-Josephson
voltage check of the SFQ driver.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, optimize

from .core import (
    ConvergenceError,
    DataError,
    GeometryParams,
    PhysicalConstants,
    QpdynError,
    US,
    ValidationError,
)

DEFAULT_BASELINE_T1 = 6.0 * US
OPERATING_TOLERANCE = 0.036


@dataclass(frozen=True)
class PopulationDecayCurve:
    delay_times: np.ndarray
    p1_values: np.ndarray
    sigma: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "delay_times", np.asarray(self.delay_times, dtype=float))
        object.__setattr__(self, "p1_values", np.asarray(self.p1_values, dtype=float))
        if self.sigma is not None:
            object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=float))
        self._validate()

    def _validate(self):
        t, p = self.delay_times, self.p1_values
        if t.ndim != 1 or t.shape != p.shape:
            raise ValidationError("p1_values", "delay_times and p1_values must have equal length")
        if t.size < 4:
            raise ValidationError("delay_times", f"need at least 4 points, got {t.size}")
        if np.any(np.diff(t) <= 0):
            raise ValidationError("delay_times", "must be strictly increasing")
        if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p > 1.05):
            raise ValidationError("p1_values", "populations must lie in [0, 1.05]")
        if self.sigma is not None and (self.sigma.shape != t.shape or np.any(self.sigma <= 0)):
            raise ValidationError("sigma", "must be positive and match delay_times")


@dataclass(frozen=True)
class RelaxationSample:
    recovery_time_t_r: float
    t1: float
    t1_uncertainty: float = 0.0

    def __post_init__(self):
        if not self.t1 > 0:
            raise ValidationError("t1", f"must be > 0, got {self.t1!r}")
        if not self.t1_uncertainty >= 0:
            raise ValidationError("t1_uncertainty", f"must be >= 0, got {self.t1_uncertainty!r}")


@dataclass(frozen=True)
class QpDensityPoint:
    recovery_time_t_r: float
    x_qp: float
    uncertainty: float = 0.0

    def __post_init__(self):
        # Slightly negative values are legitimate noise and are kept.
        if not abs(self.x_qp) < 1:
            raise ValidationError("x_qp", f"|x_qp| must be < 1, got {self.x_qp!r}")
        if not self.uncertainty >= 0:
            raise ValidationError("uncertainty", f"must be >= 0, got {self.uncertainty!r}")


@dataclass(frozen=True)
class T1Fit:
    t1: float
    uncertainty: float
    amplitude: float
    offset: float


def _exp_decay(t, amplitude, t1, offset):
    return amplitude * np.exp(-t / t1) + offset


def fit_t1(curve: PopulationDecayCurve, max_evals: int = 2000) -> T1Fit:
    """Fit ``P1(t) = A exp(-t/T1) + B`` and return T1 with its 1-sigma error.

    Initial guess: B from the mean of the last 10 % of points, A from the first
    point, T1 from where ``P1 - B`` crosses ``A/e``.

    Raises:
        DataError: "decay not observed" for flat or rising curves.
        ConvergenceError: if the least-squares iteration cap is hit.
    """
    t, p = curve.delay_times, curve.p1_values
    if np.ptp(p) <= 1e-12:
        raise DataError("decay not observed: population is constant")
    tail = max(1, int(math.ceil(0.1 * t.size)))
    offset0 = float(np.mean(p[-tail:]))
    amp0 = float(p[0] - offset0)
    if amp0 <= 0:
        raise DataError("decay not observed: first point is not above the tail")
    excess = p - offset0
    below = np.nonzero(excess <= amp0 / math.e)[0]
    if below.size and below[0] > 0:
        k = below[0]
        # linear interpolation between the bracketing samples
        frac = (excess[k - 1] - amp0 / math.e) / (excess[k - 1] - excess[k])
        t1_0 = float(t[k - 1] + frac * (t[k] - t[k - 1]) - t[0])
    else:
        t1_0 = float(t[-1] - t[0]) / 3
    t1_0 = max(t1_0, 1e-3 * float(t[-1] - t[0]))

    try:
        popt, pcov = optimize.curve_fit(
            _exp_decay,
            t,
            p,
            p0=(amp0, t1_0, offset0),
            sigma=curve.sigma,
            absolute_sigma=curve.sigma is not None,
            maxfev=max_evals,
        )
    except RuntimeError as exc:
        raise ConvergenceError(f"T1 fit did not converge: {exc}") from exc
    amplitude, t1, offset = (float(v) for v in popt)
    if t1 <= 0 or amplitude <= 0:
        raise DataError(f"decay not observed: fitted T1={t1:.3g} s, A={amplitude:.3g}")
    var = float(pcov[1, 1]) if np.all(np.isfinite(pcov)) else float("nan")
    return T1Fit(t1=t1, uncertainty=math.sqrt(max(var, 0.0)), amplitude=amplitude, offset=offset)


def compute_c(consts: PhysicalConstants = PhysicalConstants()) -> float:
    """Proportionality C = sqrt(2 w_q Delta / (pi^2 hbar)) between excess
    relaxation rate and normalized QP density, in 1/s."""
    return math.sqrt(2 * consts.qubit_angular_freq * consts.delta_gap / (math.pi**2 * consts.hbar))


def baseline_rate(baseline_t1: float = DEFAULT_BASELINE_T1) -> float:
    if not baseline_t1 > 0:
        raise ValidationError("baseline_t1", "must be > 0")
    return 1.0 / baseline_t1


def gamma_to_xqp(t1, gamma0: float, consts: PhysicalConstants = PhysicalConstants()):
    """Excess QP density from a measured T1. Negative results mean the
    measurement is noise dominated and are returned as is."""
    t1 = np.asarray(t1, dtype=float)
    if np.any(t1 <= 0):
        raise ValidationError("t1", "must be > 0")
    if gamma0 < 0:
        raise ValidationError("gamma0", "must be >= 0")
    out = (1.0 / t1 - gamma0) / compute_c(consts)
    return float(out) if out.ndim == 0 else out


def xqp_to_gamma(x_qp, gamma0: float, consts: PhysicalConstants = PhysicalConstants()):
    """Relaxation rate produced by a QP density (inverse of :func:`gamma_to_xqp`)."""
    x = np.asarray(x_qp, dtype=float)
    if np.any(x < 0):
        raise ValidationError("x_qp", "must be >= 0")
    out = gamma0 + compute_c(consts) * x
    return float(out) if out.ndim == 0 else out


def extract_density(
    samples: Sequence[RelaxationSample],
    baseline_t1: float = DEFAULT_BASELINE_T1,
    consts: PhysicalConstants = PhysicalConstants(),
) -> list[QpDensityPoint]:
    """Convert (t_R, T1 +- dT1) samples to density points.

    The density error is propagated linearly: ``dx = dT1 / (C T1^2)``.
    """
    c = compute_c(consts)
    gamma0 = baseline_rate(baseline_t1)
    return [
        QpDensityPoint(
            s.recovery_time_t_r,
            gamma_to_xqp(s.t1, gamma0, consts),
            s.t1_uncertainty / (c * s.t1**2),
        )
        for s in samples
    ]


class Weighting(str, enum.Enum):
    UNIFORM = "uniform"
    EXPONENTIAL = "exponential"


def _window_weights(offsets, t_avg, weighting):
    if weighting is Weighting.UNIFORM:
        return np.ones_like(offsets)
    return np.exp(-offsets / t_avg)


def window_average(
    trajectory,
    t_avg: float,
    weighting: Weighting | str = Weighting.UNIFORM,
    times=None,
    out_times=None,
):
    """Average a density trajectory over the measurement window ``[t_R, t_R + t_avg]``.

    ``trajectory`` is either a callable ``x(t)`` (then ``out_times`` is
    required) or a sampled series given as ``(times, values)`` / ``values``
    with ``times``. Sampled series are treated as piecewise linear.

    With exponential weighting each sample in the window is weighted by
    ``exp(-(t - t_R)/t_avg)`` and the weights are normalized.

    Returns:
        ``(out_times, averaged_values)``. For sampled input without explicit
        ``out_times`` every input time whose window fits inside the data is used.

    Raises:
        DataError: if a requested window runs past the end of the trajectory.
    """
    weighting = Weighting(weighting)
    if t_avg < 0:
        raise ValidationError("t_avg", "must be >= 0")

    if callable(trajectory):
        if out_times is None:
            raise ValidationError("out_times", "required for callable trajectories")
        out_t = np.asarray(out_times, dtype=float)
        if t_avg == 0:
            return out_t, np.array([float(trajectory(t)) for t in out_t])
        vals = []
        for t0 in out_t:
            num, _ = integrate.quad(
                lambda t: float(trajectory(t)) * float(_window_weights(np.array(t - t0), t_avg, weighting)),
                t0, t0 + t_avg, limit=200, epsabs=0.0, epsrel=1e-10,
            )
            if weighting is Weighting.UNIFORM:
                norm = t_avg
            else:
                norm = t_avg * (1 - math.exp(-1.0))
            vals.append(num / norm)
        return out_t, np.array(vals)

    if times is None:
        times, values = trajectory
    else:
        values = trajectory
    t = np.asarray(times, dtype=float)
    x = np.asarray(values, dtype=float)
    if t.ndim != 1 or t.shape != x.shape or t.size < 2 or np.any(np.diff(t) <= 0):
        raise ValidationError("times", "need strictly increasing times matching values")

    if out_times is None:
        out_t = t[t + t_avg <= t[-1] * (1 + 1e-12) + 1e-18] if t_avg > 0 else t.copy()
    else:
        out_t = np.asarray(out_times, dtype=float)
    if np.any(out_t < t[0]) or np.any(out_t + t_avg > t[-1] + 1e-9 * max(t_avg, t[-1] - t[0])):
        raise DataError("averaging window extends beyond trajectory support")
    if t_avg == 0:
        return out_t, np.interp(out_t, t, x)

    out = np.empty(out_t.size)
    for i, t0 in enumerate(out_t):
        t1 = min(t0 + t_avg, t[-1])
        inner = t[(t > t0) & (t < t1)]
        nodes = np.concatenate([[t0], inner, [t1]])
        vals = np.interp(nodes, t, x)
        w = _window_weights(nodes - t0, t_avg, weighting)
        out[i] = integrate.trapezoid(w * vals, nodes) / integrate.trapezoid(w, nodes)
    return out_t, out


class Mechanism(str, enum.Enum):
    PHOTON = "photon"
    DIRECT_DIFFUSION = "direct_diffusion"
    PHONON_MEDIATED = "phonon_mediated"


@dataclass(frozen=True)
class TimescaleEstimate:
    mechanism: Mechanism
    transit_time: float
    effective_diffusivity: Optional[float] = None


def estimate_timescale(mechanism: Mechanism | str, geometry: GeometryParams = GeometryParams()) -> TimescaleEstimate:
    """Order-of-magnitude transit time from the SFQ circuit to the qubit.

    Photons travel ballistically (L / c); QPs diffuse in the film (L^2 / D_QP);
    phonons diffuse through the substrate with D = v_s * d (L^2 / (v_s d)).
    """
    mechanism = Mechanism(mechanism)
    L = geometry.sfq_qubit_distance
    if mechanism is Mechanism.PHOTON:
        return TimescaleEstimate(mechanism, L / geometry.photon_speed)
    if mechanism is Mechanism.DIRECT_DIFFUSION:
        D = geometry.qp_diffusivity
    else:
        D = geometry.phonon_diffusivity
    return TimescaleEstimate(mechanism, L * L / D, D)


def expected_sfq_voltage(drive_freq, consts: PhysicalConstants = PhysicalConstants()):
    """Average DC/SFQ output voltage Phi0 * f for drive frequency ``f`` in Hz."""
    f = np.asarray(drive_freq, dtype=float)
    if np.any(f <= 0):
        raise ValidationError("drive_freq", "must be > 0")
    out = consts.flux_quantum * f
    return float(out) if out.ndim == 0 else out


def operating_region_check(
    measured_voltage: float,
    drive_freq: float,
    tolerance_fraction: float = OPERATING_TOLERANCE,
    consts: PhysicalConstants = PhysicalConstants(),
) -> bool:
    expected = expected_sfq_voltage(drive_freq, consts)
    return abs(measured_voltage - expected) / expected <= tolerance_fraction


def fit_voltage_slope(drive_freqs, voltages) -> float:
    """Least-squares slope (V/Hz) of V_avg against drive frequency, through the origin."""
    f = np.asarray(drive_freqs, dtype=float)
    v = np.asarray(voltages, dtype=float)
    if f.size == 0:
        raise DataError("no data rows")
    return float(np.dot(f, v) / np.dot(f, f))
