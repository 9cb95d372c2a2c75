"""JSON scenario configuration.

A config document has a required ``schema_version`` and optional sections
``constants``, ``geometry``, ``diffusion``, ``phonon``, ``fit`` and ``io``.
Every field is optional; unknown keys are rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

from .calibrate import Averaging
from .core import MEV, PHONON_FIELDS, GeometryParams, PhononModelParams, PhysicalConstants, US, ValidationError
from .diffusion import DiffusionScenario, PROBE_INTERVAL, Rect, probes_along_line
from .observables import DEFAULT_BASELINE_T1, Weighting

SCHEMA_VERSION = 1

_SECTIONS = ("constants", "geometry", "diffusion", "phonon", "fit", "io")
_CONSTANT_KEYS = {f.name for f in fields(PhysicalConstants)} | {"delta_gap_mev"}
_GEOMETRY_KEYS = {f.name for f in fields(GeometryParams)}
_DIFFUSION_KEYS = {
    "grid_nx", "grid_ny", "diffusivity", "recombination_rate_r", "trapping_rate_s", "injection_region",
    "injection_rate_g", "t_sfq", "simulation_end", "probe_points", "probe_distances", "snapshot_times",
    "probe_interval", "probe_readout",
}
_PHONON_KEYS = set(PHONON_FIELDS) | {"t_start", "t_end", "t_step", "t_avg", "weighting"}
_FIT_KEYS = {"fixed", "bounds", "initial", "t_avg", "weighting"}
_IO_KEYS = {"baseline_t1", "out_dir"}


def _check_keys(section: str, data: dict, allowed: set):
    if not isinstance(data, dict):
        raise ValidationError(section, "section must be a JSON object")
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ValidationError(section, f"unknown key(s): {', '.join(unknown)}")


@dataclass
class ScenarioConfig:
    raw: dict = field(default_factory=lambda: {"schema_version": SCHEMA_VERSION})

    @classmethod
    def load(cls, path: Optional[str | Path]) -> "ScenarioConfig":
        if path is None:
            return cls()
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError("config", f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ValidationError("config", "top level must be a JSON object")
        if "schema_version" not in data:
            raise ValidationError("schema_version", "required")
        if data["schema_version"] != SCHEMA_VERSION:
            raise ValidationError("schema_version", f"unsupported version {data['schema_version']!r}")
        _check_keys("config", data, set(_SECTIONS) | {"schema_version"})
        for name, allowed in zip(
            _SECTIONS, (_CONSTANT_KEYS, _GEOMETRY_KEYS, _DIFFUSION_KEYS, _PHONON_KEYS, _FIT_KEYS, _IO_KEYS)
        ):
            _check_keys(name, data.get(name, {}), allowed)
        cfg = cls(json.loads(json.dumps(data)))
        # build everything once so errors surface at load time
        cfg.constants(), cfg.geometry(), cfg.diffusion(), cfg.phonon_params(), cfg.fit_settings()
        return cfg

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name, {}))

    def set(self, section: str, key: str, value: Any):
        self.raw.setdefault(section, {})[key] = value

    def constants(self) -> PhysicalConstants:
        sec = self.section("constants")
        if "delta_gap_mev" in sec:
            if "delta_gap" in sec:
                raise ValidationError("delta_gap_mev", "give either delta_gap or delta_gap_mev")
            sec["delta_gap"] = sec.pop("delta_gap_mev") * MEV
        return PhysicalConstants(**sec)

    def geometry(self) -> GeometryParams:
        return GeometryParams(**self.section("geometry"))

    def diffusion(self) -> DiffusionScenario:
        sec = self.section("diffusion")
        sec.pop("probe_interval", None)
        sec.pop("probe_readout", None)
        distances = sec.pop("probe_distances", None)
        geometry = self.geometry()
        if "injection_region" in sec:
            sec["injection_region"] = Rect(*sec["injection_region"])
        if "snapshot_times" in sec:
            sec["snapshot_times"] = tuple(sec["snapshot_times"])
        if distances is not None:
            if "probe_points" in sec:
                raise ValidationError("probe_distances", "give either probe_points or probe_distances")
            scenario = DiffusionScenario(geometry=geometry, **sec)
            return scenario.replace(probe_points=probes_along_line(scenario.injection_region, distances))
        if "probe_points" in sec:
            sec["probe_points"] = tuple(tuple(p) for p in sec["probe_points"])
        return DiffusionScenario(geometry=geometry, **sec)

    def probe_interval(self) -> float:
        return float(self.section("diffusion").get("probe_interval", PROBE_INTERVAL))

    def probe_readout(self) -> str:
        return self.section("diffusion").get("probe_readout", "bilinear")

    def phonon_params(self) -> PhononModelParams:
        sec = self.section("phonon")
        return PhononModelParams(**{PHONON_FIELDS[k]: v for k, v in sec.items() if k in PHONON_FIELDS})

    def phonon_grid(self) -> tuple[float, float, float]:
        sec = self.section("phonon")
        params = self.phonon_params()
        return (
            float(sec.get("t_start", -params.drive_duration_t_sfq)),
            float(sec.get("t_end", 160 * US)),
            float(sec.get("t_step", 0.1 * US)),
        )

    def phonon_averaging(self) -> Optional[Averaging]:
        sec = self.section("phonon")
        if not sec.get("t_avg"):
            return None
        return Averaging(float(sec["t_avg"]), Weighting(sec.get("weighting", "uniform")))

    def fit_settings(self) -> dict:
        sec = self.section("fit")
        initial = sec.get("initial", {})
        unknown = set(initial) - set(PHONON_FIELDS)
        if unknown:
            raise ValidationError("fit.initial", f"unknown parameter(s) {sorted(unknown)}")
        bounds = {k: tuple(v) for k, v in sec.get("bounds", {}).items()}
        if set(bounds) - set(PHONON_FIELDS):
            raise ValidationError("fit.bounds", f"unknown parameter(s) {sorted(set(bounds) - set(PHONON_FIELDS))}")
        base = self.phonon_params()
        init = base.replace(**{PHONON_FIELDS[k]: v for k, v in initial.items()})
        averaging = None
        if sec.get("t_avg"):
            averaging = Averaging(float(sec["t_avg"]), Weighting(sec.get("weighting", "uniform")))
        return {
            "initial_params": init,
            "bounds": bounds,
            "fixed": frozenset(sec.get("fixed", ["r"])),
            "averaging": averaging,
        }

    def baseline_t1(self) -> float:
        return float(self.section("io").get("baseline_t1", DEFAULT_BASELINE_T1))

    def out_dir(self) -> Optional[str]:
        return self.section("io").get("out_dir")
