"""2D QP reaction-diffusion on the chip footprint.

Solves ``dx/dt = D lap(x) - r x^2 - s x + g(x, y, t)`` with a cell-centred
5-point Laplacian, zero-flux edges and forward-Euler time stepping. The source
``g`` is a constant rate inside a rectangle during the injection window
``[-t_sfq, 0)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .core import US, GeometryParams, InstabilityError, ValidationError, validate

SAFETY_FACTOR = 0.4
PROBE_INTERVAL = 0.5 * US
DEFAULT_PROBE_DISTANCES = (0.0, 0.1e-3, 0.5e-3, 1.0e-3)
DEFAULT_SNAPSHOT_TIMES = (-24.99 * US, 52 * US, 120 * US)


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle ``[x0, x1] x [y0, y1]`` in metres."""

    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def center(self) -> tuple[float, float]:
        return 0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1)

    @property
    def short_side(self) -> float:
        return min(self.x1 - self.x0, self.y1 - self.y0)


def default_injection_region(geometry: GeometryParams = GeometryParams(),
                             width: float = 100e-6, height: float = 40e-6) -> Rect:
    """``width x height`` source anchored at the left edge on the horizontal midline."""
    ym = 0.5 * geometry.domain_length_y
    return Rect(0.0, ym - 0.5 * height, width, ym + 0.5 * height)


def probes_along_line(region: Rect, distances: Sequence[float] = DEFAULT_PROBE_DISTANCES):
    """Probe points at the given distances from the source centre, towards +x."""
    cx, cy = region.center
    return tuple((cx + d, cy) for d in distances)


@dataclass(frozen=True)
class DiffusionScenario:
    geometry: GeometryParams = field(default_factory=GeometryParams)
    grid_nx: int = 500
    grid_ny: int = 250
    diffusivity: float = 1.2e-4
    recombination_rate_r: float = 0.0
    trapping_rate_s: float = 1 / (10 * US)
    injection_region: Optional[Rect] = None
    injection_rate_g: float = 4e4
    t_sfq: float = 25 * US
    simulation_end: float = 200 * US
    probe_points: Optional[tuple] = None
    snapshot_times: tuple = DEFAULT_SNAPSHOT_TIMES

    def __post_init__(self):
        if self.injection_region is None:
            object.__setattr__(self, "injection_region", default_injection_region(self.geometry))
        if self.probe_points is None:
            object.__setattr__(self, "probe_points", probes_along_line(self.injection_region))
        object.__setattr__(self, "probe_points", tuple(tuple(map(float, p)) for p in self.probe_points))
        object.__setattr__(self, "snapshot_times", tuple(float(t) for t in self.snapshot_times))
        validate(self)

    @property
    def h(self) -> float:
        return self.geometry.domain_length_x / self.grid_nx

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid_nx, self.grid_ny

    def replace(self, **changes) -> "DiffusionScenario":
        return replace(self, **changes)

    def _validate(self):
        g = self.geometry
        for name in ("grid_nx", "grid_ny"):
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) < 1:
                raise ValidationError(name, "must be a positive integer")
        hx, hy = g.domain_length_x / self.grid_nx, g.domain_length_y / self.grid_ny
        if abs(hx - hy) > 1e-9 * hx:
            raise ValidationError("grid_ny", f"cells must be square: h_x={hx!r}, h_y={hy!r}")
        for name in ("diffusivity", "t_sfq"):
            if not getattr(self, name) > 0:
                raise ValidationError(name, "must be > 0")
        for name in ("recombination_rate_r", "trapping_rate_s", "injection_rate_g"):
            if not getattr(self, name) >= 0:
                raise ValidationError(name, "must be >= 0")
        if not self.simulation_end > -self.t_sfq:
            raise ValidationError("simulation_end", "must be after the injection start")
        reg = self.injection_region
        if not (0 <= reg.x0 < reg.x1 <= g.domain_length_x and 0 <= reg.y0 < reg.y1 <= g.domain_length_y):
            raise ValidationError("injection_region", "must lie inside the domain")
        if reg.short_side < 2 * hx * (1 - 1e-9):
            raise ValidationError(
                "injection_region", f"short side {reg.short_side:.3g} m spans fewer than 2 cells of {hx:.3g} m"
            )
        for px, py in self.probe_points:
            if not (0 <= px <= g.domain_length_x and 0 <= py <= g.domain_length_y):
                raise ValidationError("probe_points", f"({px!r}, {py!r}) lies outside the domain")
        for t in self.snapshot_times:
            if not -self.t_sfq <= t <= self.simulation_end:
                raise ValidationError("snapshot_times", f"{t!r} outside the simulated interval")

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        h = self.h
        return (np.arange(self.grid_nx) + 0.5) * h, (np.arange(self.grid_ny) + 0.5) * h

    def cell_index(self, x: float, y: float) -> tuple[int, int]:
        """Index of the cell containing ``(x, y)``; points on a face go to the upper cell."""
        h = self.h
        i = min(int(math.floor(x / h + 1e-9)), self.grid_nx - 1)
        j = min(int(math.floor(y / h + 1e-9)), self.grid_ny - 1)
        return i, j

    def probe_stencil(self, x: float, y: float) -> tuple[tuple[int, int, int, int], tuple[float, float]]:
        """Bilinear stencil on cell centres around ``(x, y)``, clamped at the edges."""
        h = self.h
        fx = min(max(x / h - 0.5, 0.0), self.grid_nx - 1.0)
        fy = min(max(y / h - 0.5, 0.0), self.grid_ny - 1.0)
        i0, j0 = min(int(fx), self.grid_nx - 2) if self.grid_nx > 1 else 0, min(int(fy), self.grid_ny - 2) if self.grid_ny > 1 else 0
        i1, j1 = min(i0 + 1, self.grid_nx - 1), min(j0 + 1, self.grid_ny - 1)
        return (i0, i1, j0, j1), (fx - i0, fy - j0)

    def injection_mask(self) -> np.ndarray:
        xc, yc = self.cell_centers()
        r = self.injection_region
        in_x = (xc >= r.x0) & (xc <= r.x1)
        in_y = (yc >= r.y0) & (yc <= r.y1)
        return np.outer(in_x, in_y)


@dataclass(frozen=True)
class DensityField:
    time_stamp: float
    values: np.ndarray
    h: float

    def __post_init__(self):
        v = self.values
        if not np.all(np.isfinite(v)):
            raise ValidationError("values", "must be finite")
        if np.any(v < 0):
            raise ValidationError("values", f"must be >= 0, min is {v.min()!r}")

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class ProbeTimeSeries:
    position: tuple[float, float]
    times: np.ndarray
    values: np.ndarray

    @property
    def peak_time(self) -> float:
        return float(self.times[int(np.argmax(self.values))])

    @property
    def peak_value(self) -> float:
        return float(np.max(self.values))


@dataclass
class SolverState:
    """Field and clock of one integration. Owned by a single caller."""

    scenario: DiffusionScenario
    values: np.ndarray
    t: float

    @classmethod
    def initial(cls, scenario: DiffusionScenario, values: Optional[np.ndarray] = None) -> "SolverState":
        if values is None:
            values = np.zeros(scenario.shape)
        values = np.array(values, dtype=float)
        if values.shape != scenario.shape:
            raise ValidationError("values", f"expected shape {scenario.shape}, got {values.shape}")
        return cls(scenario, values, -scenario.t_sfq)


def stable_dt(scenario: DiffusionScenario) -> float:
    """Explicit step ``0.4 * h^2 / (4 D)``."""
    return SAFETY_FACTOR * scenario.h**2 / (4.0 * scenario.diffusivity)


def laplacian(x: np.ndarray, h: float, out: Optional[np.ndarray] = None) -> np.ndarray:
    """5-point Laplacian with mirrored ghost cells (zero normal flux)."""
    lap = np.multiply(x, -4.0, out=out)
    lap[1:, :] += x[:-1, :]
    lap[:-1, :] += x[1:, :]
    lap[0, :] += x[0, :]
    lap[-1, :] += x[-1, :]
    lap[:, 1:] += x[:, :-1]
    lap[:, :-1] += x[:, 1:]
    lap[:, 0] += x[:, 0]
    lap[:, -1] += x[:, -1]
    lap /= h * h
    return lap


class _Stepper:
    """Preallocated forward-Euler update shared by :func:`step` and :func:`run`."""

    def __init__(self, scenario: DiffusionScenario):
        self.sc = scenario
        self.source = scenario.injection_rate_g * scenario.injection_mask().astype(float)
        self.work = np.empty(scenario.shape)

    def rhs_into(self, x: np.ndarray, t: float, out: np.ndarray) -> np.ndarray:
        sc = self.sc
        laplacian(x, sc.h, out=out)
        out *= sc.diffusivity
        if sc.trapping_rate_s:
            out -= sc.trapping_rate_s * x
        if sc.recombination_rate_r:
            out -= sc.recombination_rate_r * x * x
        if -sc.t_sfq <= t < 0 and sc.injection_rate_g:
            out += self.source
        return out

    def advance(self, x: np.ndarray, t: float, dt: float) -> np.ndarray:
        """Return a new field one step ahead; ``x`` is left untouched."""
        rate = self.rhs_into(x, t, self.work)
        return x + dt * rate


def _check_finite(x: np.ndarray, t: float):
    if not np.all(np.isfinite(x)):
        bad = np.argwhere(~np.isfinite(x))[0]
        raise InstabilityError(f"instability detected at cell {tuple(int(i) for i in bad)}, t={t:.6g} s")


def step(state: SolverState, dt: float, check_nonnegative: bool = False) -> SolverState:
    """One explicit update; returns a new state and leaves ``state`` intact.

    Raises:
        ValidationError: if ``dt`` exceeds :func:`stable_dt`.
        InstabilityError: if a non-finite value appears.
    """
    limit = stable_dt(state.scenario)
    if not 0 < dt <= limit * (1 + 1e-12):
        raise ValidationError("dt", f"must be in (0, {limit:.4g}] s, got {dt!r}")
    new = _Stepper(state.scenario).advance(state.values, state.t, dt)
    _check_finite(new, state.t + dt)
    if check_nonnegative and np.any(new < 0):
        raise AssertionError(f"negative density {new.min()!r} at t={state.t + dt!r}")
    return SolverState(state.scenario, new, state.t + dt)


def evolve(state: SolverState, until: float, check_nonnegative: bool = False) -> SolverState:
    """Advance to ``until`` in stable steps, shortening the last one to land exactly."""
    stepper = _Stepper(state.scenario)
    dt = stable_dt(state.scenario)
    x, t = state.values, state.t
    while until - t > 1e-9 * dt:
        h = min(dt, until - t)
        # land on the end of the injection window so the source switches cleanly
        if t < 0 < t + h:
            h = -t
        x = stepper.advance(x, t, h)
        t = until if abs(until - (t + h)) <= 1e-9 * dt else t + h
        if check_nonnegative and np.any(x < 0):
            raise AssertionError(f"negative density {x.min()!r} at t={t!r}")
    _check_finite(x, t)
    return SolverState(state.scenario, x, t)


def output_times(scenario: DiffusionScenario, probe_interval: float = PROBE_INTERVAL) -> np.ndarray:
    start, end = -scenario.t_sfq, scenario.simulation_end
    n = int(math.ceil((end - start) / probe_interval - 1e-9))
    samples = np.linspace(start, end, n + 1)
    return samples


def read_probe(values: np.ndarray, stencil) -> float:
    (i0, i1, j0, j1), (wx, wy) = stencil
    return float(
        (1 - wx) * (1 - wy) * values[i0, j0]
        + wx * (1 - wy) * values[i1, j0]
        + (1 - wx) * wy * values[i0, j1]
        + wx * wy * values[i1, j1]
    )


def run(
    scenario: DiffusionScenario,
    probe_interval: float = PROBE_INTERVAL,
    check_nonnegative: bool = False,
    probe_readout: str = "bilinear",
) -> tuple[list[DensityField], list[ProbeTimeSeries]]:
    """Integrate from ``x = 0`` at ``-t_sfq`` to ``simulation_end``.

    Probe cells are sampled on a uniform grid no coarser than
    ``probe_interval``; snapshots are taken exactly at the requested times.
    """
    sample_times = output_times(scenario, probe_interval)
    targets = np.unique(np.concatenate([sample_times, scenario.snapshot_times, [0.0]]))
    targets = targets[(targets >= -scenario.t_sfq) & (targets <= scenario.simulation_end)]
    if probe_readout == "bilinear":
        stencils = [scenario.probe_stencil(px, py) for px, py in scenario.probe_points]
    elif probe_readout == "cell":
        stencils = [((i, i, j, j), (0.0, 0.0)) for i, j in
                    (scenario.cell_index(px, py) for px, py in scenario.probe_points)]
    else:
        raise ValidationError("probe_readout", f"unknown readout {probe_readout!r}")
    snap_set = {float(t) for t in scenario.snapshot_times}

    state = SolverState.initial(scenario)
    probe_values = np.zeros((len(stencils), targets.size))
    snapshots: dict[float, np.ndarray] = {}
    for k, target in enumerate(targets):
        if target > state.t:
            state = evolve(state, float(target), check_nonnegative)
        for p, stencil in enumerate(stencils):
            probe_values[p, k] = read_probe(state.values, stencil)
        if float(target) in snap_set:
            snapshots[float(target)] = state.values.copy()

    fields = [DensityField(t, snapshots[t], scenario.h) for t in scenario.snapshot_times]
    probes = [
        ProbeTimeSeries(pos, targets.copy(), probe_values[p])
        for p, pos in enumerate(scenario.probe_points)
    ]
    return fields, probes


def total_xqp(field: DensityField) -> float:
    """Domain integral of x_QP (sum of cell values times cell area)."""
    return float(np.sum(field.values) * field.h * field.h)
