"""Least-squares calibration of the phonon model against extracted densities."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from .core import PHONON_FIELDS, DataError, PhononModelParams, ValidationError
from .observables import QpDensityPoint, Weighting, window_average
from .phonon_model import _x_sfq, model_curve, onset_time

FREE_ORDER = ("r", "s_qubit", "t_p", "alpha", "g_sfq", "t_sfq")
MAX_ITER = 2000
XATOL = 1e-6
MAX_RESTARTS = 3
FINE_STEP = 0.05e-6


@dataclass(frozen=True)
class Averaging:
    t_avg: float
    weighting: Weighting = Weighting.UNIFORM


@dataclass
class FitProblem:
    data: Sequence[QpDensityPoint]
    initial_params: PhononModelParams = field(default_factory=PhononModelParams)
    bounds: dict = field(default_factory=dict)
    fixed: frozenset = frozenset({"r"})
    averaging: Optional[Averaging] = None

    def __post_init__(self):
        self.fixed = frozenset(self.fixed)
        unknown = set(self.fixed) - set(FREE_ORDER)
        if unknown:
            raise ValidationError("fixed", f"unknown parameters {sorted(unknown)}")
        defaults = default_bounds(self.initial_params)
        defaults.update(self.bounds)
        self.bounds = defaults
        self._validate()

    @property
    def free(self) -> tuple[str, ...]:
        return tuple(n for n in FREE_ORDER if n not in self.fixed)

    def _validate(self):
        n_free = len(self.free)
        if len(self.data) < max(n_free + 1, 2):
            raise DataError(f"insufficient data: {len(self.data)} points for {n_free} free parameters")
        t = np.array([d.recovery_time_t_r for d in self.data])
        if np.ptp(t) == 0:
            raise DataError("degenerate data: all recovery times are equal")
        for name in self.free:
            lo, hi = self.bounds[name]
            value = getattr(self.initial_params, PHONON_FIELDS[name])
            if not (0 < lo <= value <= hi):
                raise ValidationError(name, f"initial value {value!r} outside bounds ({lo!r}, {hi!r})")


@dataclass
class FitResult:
    params: PhononModelParams
    residual_norm: float
    iterations: int
    converged: bool
    uncertainties: Optional[dict] = None
    restarts: int = 0
    history: list = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        out = {name: getattr(self.params, PHONON_FIELDS[name]) for name in FREE_ORDER}
        out.update(
            residual_norm=self.residual_norm,
            iterations=self.iterations,
            converged=self.converged,
            restarts=self.restarts,
        )
        if self.uncertainties:
            out.update({f"sigma_{k}": v for k, v in self.uncertainties.items()})
        return out


def default_bounds(params: PhononModelParams) -> dict:
    out = {}
    for name in FREE_ORDER:
        v = getattr(params, PHONON_FIELDS[name])
        v = v if v > 0 else 1.0
        out[name] = (v / 100.0, v * 100.0)
    lo, hi = out["alpha"]
    out["alpha"] = (lo, min(hi, 1.0))
    return out


def _integral_g_qubit(a, b, params: PhononModelParams):
    """Exact integral of g_qubit over [a, b] from the source balance
    ``r x_sfq^2 = g(t) - dx_sfq/dt``."""
    t_p, t_sfq, g = params.propagation_delay_t_p, params.drive_duration_t_sfq, params.generation_rate_g_sfq
    ua = np.maximum(np.asarray(a) - t_p, -t_sfq)
    ub = np.maximum(np.asarray(b) - t_p, -t_sfq)
    driven = np.clip(ub, -t_sfq, 0.0) - np.clip(ua, -t_sfq, 0.0)
    return params.transfer_fraction_alpha * (g * driven - (_x_sfq(ub, params) - _x_sfq(ua, params)))


def averaged_model(params: PhononModelParams, times, averaging: Optional[Averaging]) -> np.ndarray:
    """Model evaluated at ``times``, optionally through the measurement window.

    Uniform windows use the exact identity
    ``int_a^b x dt = (int_a^b g_qubit dt - x(b) + x(a)) / s_qubit``;
    exponential windows average a fine model grid numerically.
    """
    t = np.asarray(times, dtype=float)
    uniq, inverse = np.unique(t, return_inverse=True)
    if averaging is None or averaging.t_avg == 0:
        return model_curve(params, uniq).values[inverse]
    w = averaging.t_avg
    if Weighting(averaging.weighting) is Weighting.UNIFORM:
        both = np.unique(np.concatenate([uniq, uniq + w]))
        xs = model_curve(params, both).values
        xa = xs[np.searchsorted(both, uniq)]
        xb = xs[np.searchsorted(both, uniq + w)]
        start = onset_time(params)
        a = np.maximum(uniq, start)
        b = np.maximum(uniq + w, start)
        integral = (_integral_g_qubit(a, b, params) - xb + xa) / params.trapping_rate_s_qubit
        return (integral / w)[inverse]
    n = int(math.ceil((uniq[-1] + w - uniq[0]) / FINE_STEP))
    fine = np.linspace(uniq[0], uniq[-1] + w, n + 1)
    curve = model_curve(params, fine)
    _, avg = window_average((curve.times, curve.values), w, averaging.weighting, out_times=uniq)
    return avg[inverse]


def _weights(data) -> np.ndarray:
    sig = np.array([d.uncertainty for d in data], dtype=float)
    return np.where(sig > 0, 1.0 / np.where(sig > 0, sig, 1.0) ** 2, 1.0)


def _params_from(problem: FitProblem, logs) -> PhononModelParams:
    changes = {PHONON_FIELDS[n]: math.exp(v) for n, v in zip(problem.free, logs)}
    return problem.initial_params.replace(**changes)


def objective(problem: FitProblem, params: PhononModelParams) -> float:
    """Weighted sum of squared residuals ``sum w_i (model_i - x_i)^2``."""
    t = np.array([d.recovery_time_t_r for d in problem.data])
    x = np.array([d.x_qp for d in problem.data])
    model = averaged_model(params, t, problem.averaging)
    return float(np.sum(_weights(problem.data) * (model - x) ** 2))


def _log_bounds(problem: FitProblem):
    lo = np.array([math.log(problem.bounds[n][0]) for n in problem.free])
    hi = np.array([math.log(problem.bounds[n][1]) for n in problem.free])
    return lo, hi


def _uncertainties(problem: FitProblem, best: PhononModelParams, residual_norm: float) -> Optional[dict]:
    """1-sigma errors from the Gauss-Newton normal matrix in log-parameter space.

    Without per-point sigmas the covariance is scaled by the reduced chi-square.
    Returns None when the normal matrix is ill-conditioned.
    """
    free = problem.free
    if not free:
        return {}
    t = np.array([d.recovery_time_t_r for d in problem.data])
    w = _weights(problem.data)
    logs = np.array([math.log(getattr(best, PHONON_FIELDS[n])) for n in free])
    base = averaged_model(best, t, problem.averaging)
    jac = np.empty((t.size, logs.size))
    for k in range(logs.size):
        step = 1e-6
        shifted = logs.copy()
        shifted[k] += step
        try:
            jac[:, k] = (averaged_model(_params_from(problem, shifted), t, problem.averaging) - base) / step
        except ValidationError:
            shifted[k] -= 2 * step
            jac[:, k] = (base - averaged_model(_params_from(problem, shifted), t, problem.averaging)) / step
    normal = jac.T @ (w[:, None] * jac)
    if not np.all(np.isfinite(normal)) or np.linalg.cond(normal) > 1e12:
        return None
    cov = np.linalg.inv(normal)
    if np.all([d.uncertainty <= 0 for d in problem.data]):
        dof = max(t.size - logs.size, 1)
        cov *= residual_norm / dof
    return {n: float(math.exp(v) * math.sqrt(max(cov[k, k], 0.0))) for k, (n, v) in enumerate(zip(free, logs))}


def fit_phonon_model(problem: FitProblem, seed: int = 0) -> FitResult:
    """Nelder-Mead minimisation of the weighted residuals over log-parameters.

    A run converges when every simplex vertex lies within 1e-6 (log units) of
    the best one. Up to three restarts are made: from the current best point
    while the objective keeps improving, and from a randomly perturbed initial
    guess when a run fails to converge. Non-convergence is reported in the
    result rather than raised.
    """
    rng = np.random.default_rng(seed)
    lo, hi = _log_bounds(problem)
    free = problem.free
    if not free:
        value = objective(problem, problem.initial_params)
        return FitResult(problem.initial_params, value, 0, True, {}, 0, [value])

    def f(logs):
        if np.any(logs < lo) or np.any(logs > hi):
            return math.inf
        try:
            return objective(problem, _params_from(problem, logs))
        except ValidationError:
            return math.inf

    history: list[float] = []

    def track(intermediate_result):
        history.append(float(intermediate_result.fun))

    start = np.array([math.log(getattr(problem.initial_params, PHONON_FIELDS[n])) for n in free])
    best_x, best_f = start, f(start)
    total_iter, restarts, converged = 0, 0, False
    x0 = start
    for attempt in range(MAX_RESTARTS + 1):
        res = optimize.minimize(
            f,
            x0,
            method="Nelder-Mead",
            callback=track,
            options={"xatol": XATOL, "fatol": math.inf, "maxiter": MAX_ITER, "adaptive": len(free) > 3},
        )
        total_iter += int(res.nit)
        improved = res.fun < best_f * (1 - 1e-9) or (best_f == 0 and res.fun < best_f)
        if res.fun <= best_f:
            best_x, best_f = res.x, float(res.fun)
        converged = res.status == 0
        if attempt == MAX_RESTARTS or (converged and not improved and attempt > 0):
            break
        restarts += 1
        if converged:
            x0 = best_x
        else:
            x0 = np.clip(start + rng.uniform(-0.3, 0.3, start.size), lo, hi)
    best = _params_from(problem, best_x)
    return FitResult(
        params=best,
        residual_norm=best_f,
        iterations=total_iter,
        converged=converged,
        uncertainties=_uncertainties(problem, best, best_f),
        restarts=restarts,
        history=history,
    )


def synthesize_data(
    params: PhononModelParams,
    times,
    noise_sigma: float = 0.0,
    seed: int = 0,
    averaging: Optional[Averaging] = None,
) -> list[QpDensityPoint]:
    """Model densities at ``times`` plus Gaussian noise of std ``noise_sigma``."""
    if noise_sigma < 0:
        raise ValidationError("noise_sigma", "must be >= 0")
    t = np.asarray(times, dtype=float)
    clean = averaged_model(params, t, averaging)
    rng = np.random.default_rng(seed)
    noisy = clean + (rng.normal(0.0, noise_sigma, t.size) if noise_sigma > 0 else 0.0)
    return [QpDensityPoint(float(ti), float(xi), float(noise_sigma)) for ti, xi in zip(t, noisy)]


def perturbed(params: PhononModelParams, names: Sequence[str], fraction: float, rng) -> PhononModelParams:
    """Multiply each named parameter by an independent factor in [1 - f, 1 + f]."""
    changes = {}
    for n in names:
        v = getattr(params, PHONON_FIELDS[n]) * (1 + rng.uniform(-fraction, fraction))
        if n == "alpha":
            v = min(v, 1.0)
        changes[PHONON_FIELDS[n]] = v
    return params.replace(**changes)
