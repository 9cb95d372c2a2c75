"""Physical constants, parameter containers and validation.

Everything is stored in SI units (s, m, J, rad/s). Constructors that take
laboratory units (meV, GHz, microseconds) convert at the boundary.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

from scipy import constants as _sc

MEV = 1e-3 * _sc.electron_volt
US = 1e-6
NS = 1e-9
GHZ = 1e9

FLUX_QUANTUM = _sc.physical_constants["mag. flux quantum"][0]


class QpdynError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(QpdynError, ValueError):
    """A parameter container violates one of its invariants."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class ConvergenceError(QpdynError, RuntimeError):
    """An iterative numerical procedure failed to converge."""


class InstabilityError(QpdynError, FloatingPointError):
    """A time-stepper produced a non-finite value."""


class DataError(QpdynError, ValueError):
    """Input data is malformed or insufficient."""


def _require_positive(obj, *names):
    for name in names:
        value = getattr(obj, name)
        if not (math.isfinite(value) and value > 0):
            raise ValidationError(name, f"must be finite and > 0, got {value!r}")


@dataclass(frozen=True)
class PhysicalConstants:
    """Constants entering the relaxation-rate/density conversion.

    ``delta_gap`` is stored in joules; use :meth:`from_lab_units` to build from
    meV and GHz.
    """

    hbar: float = _sc.hbar
    flux_quantum: float = FLUX_QUANTUM
    delta_gap: float = 0.18 * MEV
    qubit_angular_freq: float = 2 * math.pi * 4.462 * GHZ

    def __post_init__(self):
        validate(self)

    @classmethod
    def from_lab_units(cls, delta_gap_mev: float = 0.18, qubit_freq_ghz: float = 4.462, **kwargs):
        return cls(
            delta_gap=delta_gap_mev * MEV,
            qubit_angular_freq=2 * math.pi * qubit_freq_ghz * GHZ,
            **kwargs,
        )

    @property
    def delta_gap_mev(self) -> float:
        return self.delta_gap / MEV


@dataclass(frozen=True)
class GeometryParams:
    """Device footprint and propagation constants used by the timescale estimators
    and the diffusion solver."""

    domain_length_x: float = 5e-3
    domain_length_y: float = 2.5e-3
    sfq_qubit_distance: float = 2.5e-3
    substrate_thickness: float = 0.625e-3
    sound_speed: float = 1e3
    photon_speed: float = 1e8
    qp_diffusivity: float = 1.2e-4

    def __post_init__(self):
        validate(self)

    @property
    def phonon_diffusivity(self) -> float:
        """Boundary-limited phonon diffusivity v_s * d."""
        return self.sound_speed * self.substrate_thickness


@dataclass(frozen=True)
class PhononModelParams:
    """Parameters of the phonon-mediated propagation model.

    Defaults are the fitted values quoted for the 1.42 GHz drive data set.
    """

    recombination_rate_r: float = 1 / (42 * NS)
    trapping_rate_s_qubit: float = 1 / (9.1 * US)
    propagation_delay_t_p: float = 7.9 * US
    transfer_fraction_alpha: float = 1.04e-2
    generation_rate_g_sfq: float = 2.16e2
    drive_duration_t_sfq: float = 25 * US

    def __post_init__(self):
        validate(self)

    def replace(self, **changes) -> "PhononModelParams":
        return dataclasses.replace(self, **changes)


# Short names used by config files, the CLI and the calibrator.
PHONON_FIELDS = {
    "r": "recombination_rate_r",
    "s_qubit": "trapping_rate_s_qubit",
    "t_p": "propagation_delay_t_p",
    "alpha": "transfer_fraction_alpha",
    "g_sfq": "generation_rate_g_sfq",
    "t_sfq": "drive_duration_t_sfq",
}


def _validate_constants(c: PhysicalConstants):
    _require_positive(c, "hbar", "flux_quantum", "delta_gap", "qubit_angular_freq")


def _validate_geometry(g: GeometryParams):
    _require_positive(
        g,
        "domain_length_x",
        "domain_length_y",
        "sfq_qubit_distance",
        "substrate_thickness",
        "sound_speed",
        "photon_speed",
        "qp_diffusivity",
    )
    if g.sfq_qubit_distance > g.domain_length_x:
        raise ValidationError(
            "sfq_qubit_distance",
            f"{g.sfq_qubit_distance!r} exceeds domain_length_x {g.domain_length_x!r}",
        )


def _validate_phonon(p: PhononModelParams):
    _require_positive(p, "recombination_rate_r", "trapping_rate_s_qubit", "drive_duration_t_sfq")
    # g = 0 and alpha = 0 are admitted as the degenerate "no source" cases.
    for name in ("propagation_delay_t_p", "generation_rate_g_sfq"):
        value = getattr(p, name)
        if not (math.isfinite(value) and value >= 0):
            raise ValidationError(name, f"must be finite and >= 0, got {value!r}")
    a = p.transfer_fraction_alpha
    if not (0 <= a <= 1):
        raise ValidationError("transfer_fraction_alpha", f"alpha out of [0,1]: {a!r}")


_VALIDATORS = {
    PhysicalConstants: _validate_constants,
    GeometryParams: _validate_geometry,
    PhononModelParams: _validate_phonon,
}


def validate(params):
    """Check the invariants of a parameter container and return it unchanged.

    Containers defined in other modules register themselves by exposing a
    ``_validate`` method.

    Raises:
        ValidationError: naming the offending field.
    """
    check = _VALIDATORS.get(type(params))
    if check is None:
        check = getattr(params, "_validate", None)
        if check is None:
            raise TypeError(f"no validator for {type(params).__name__}")
        check()
    else:
        check(params)
    return params
