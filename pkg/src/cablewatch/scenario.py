"""Scenario and run configuration files (JSON).

A scenario describes the cable under test, the faults currently on it, the
load schedule, the state mix used when drawing instants, the geometry of the
calibration faults, and the instrument parameters.  Unit-bearing fields carry
their unit as a suffix (``_m``, ``_w``, ``_hz``, ``_ohm``).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

from .channel import CableSpec, CableState, FaultSpec, LoadSpec, ValidationError
from .fusion import PROFILES
from .instruments import MeasurementSetup

FORMAT_VERSION = 1

CABLE_PRESETS = {
    "PIJF-6quad": dict(z0_ohm=110.0, velocity_factor=0.62, attenuation_db_per_m_at_1mhz=0.0025,
                       attenuation_freq_exponent=0.5),
    "PIJF-10TWP": dict(z0_ohm=100.0, velocity_factor=0.60, attenuation_db_per_m_at_1mhz=0.003,
                       attenuation_freq_exponent=0.5),
    "sym-4core": dict(z0_ohm=75.0, velocity_factor=0.66, attenuation_db_per_m_at_1mhz=0.002,
                      attenuation_freq_exponent=0.5),
}

DEFAULT_CAL_EXTENTS_M = {CableState.H: 0.0, CableState.F_s: 0.005, CableState.F_l: 0.03}


class ConfigError(ValueError):
    pass


def cable_from_dict(d: Mapping) -> CableSpec:
    d = dict(d)
    preset = d.pop("preset", None)
    base = {}
    if preset is not None:
        if preset not in CABLE_PRESETS:
            raise ConfigError(f"unknown cable preset {preset!r}; known: {sorted(CABLE_PRESETS)}")
        base = dict(CABLE_PRESETS[preset], label=preset)
    base.update(d)
    try:
        return CableSpec(**base)
    except TypeError as exc:
        raise ConfigError(f"cable: {exc}") from None


def cable_to_dict(c: CableSpec) -> dict:
    return {"length_m": c.length_m, "z0_ohm": c.z0_ohm, "velocity_factor": c.velocity_factor,
            "attenuation_db_per_m_at_1mhz": c.attenuation_db_per_m_at_1mhz,
            "attenuation_freq_exponent": c.attenuation_freq_exponent, "label": c.label}


def _fault_from_dict(d: Mapping) -> FaultSpec:
    try:
        return FaultSpec(float(d["position_m"]), float(d["extent_m"]),
                         None if d.get("z_perturbation_ohm") is None
                         else float(d["z_perturbation_ohm"]))
    except KeyError as exc:
        raise ConfigError(f"fault entry lacks {exc}") from None


def _fault_to_dict(f: FaultSpec) -> dict:
    d = {"position_m": f.position_m, "extent_m": f.extent_m}
    if f.z_perturbation_ohm is not None:
        d["z_perturbation_ohm"] = f.z_perturbation_ohm
    return d


@dataclass(frozen=True)
class RunSettings:
    split: float = 0.6
    counts: tuple = (100, 100, 100)
    profile: str = "detect-first"
    priors: tuple = (0.9, 0.08, 0.02)
    flag_rule: str = "large-only"
    monitor_batch: int = 10

    def __post_init__(self):
        if not 0 < self.split < 1:
            raise ConfigError(f"split must lie in (0, 1), got {self.split}")
        if len(self.counts) != 3 or min(self.counts) < 5:
            raise ConfigError("counts must give three per-method instance counts, each >= 5")
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}")
        if self.monitor_batch < 1:
            raise ConfigError("monitor_batch must be >= 1")


@dataclass(frozen=True)
class CableScenario:
    scenario_id: str
    cable: CableSpec
    faults: tuple = ()
    load: LoadSpec = field(default_factory=LoadSpec)
    load_schedule_w: tuple = (0.0, 200.0, 400.0, 600.0)
    mix: tuple = (1 / 3, 1 / 3, 1 / 3)
    calibration_position_m: float = 35.0
    calibration_extents_m: tuple = (0.0, 0.005, 0.03)
    setup: MeasurementSetup = field(default_factory=MeasurementSetup)
    seed: int = 0
    run: RunSettings = field(default_factory=RunSettings)

    def __post_init__(self):
        if len(self.mix) != 3 or min(self.mix) < 0 or abs(sum(self.mix) - 1) > 1e-9:
            raise ConfigError(f"mix must be three non-negative fractions summing to 1, got {self.mix}")
        if not self.load_schedule_w:
            raise ConfigError("load schedule is empty")
        for w in self.load_schedule_w:
            LoadSpec(w)
        if not 0 <= self.calibration_position_m <= self.cable.length_m:
            raise ConfigError("calibration fault position lies outside the cable")
        for state, ext in zip(CableState, self.calibration_extents_m):
            if ext and FaultSpec(0.0, ext).severity_class != state:
                raise ConfigError(f"calibration extent {ext} m does not fall in class {state.code}")

    def state_faults(self, state: CableState) -> list[FaultSpec]:
        """Fault list used to simulate an instant in ``state``."""
        ext = self.calibration_extents_m[int(state)]
        if state == CableState.H or ext == 0:
            return []
        pos = min(self.calibration_position_m, self.cable.length_m - ext)
        return [FaultSpec(pos, ext)]

    @property
    def present_state(self) -> CableState:
        """Severity of the cable as currently described by ``faults``."""
        return max((f.severity_class for f in self.faults), default=CableState.H)

    def with_overrides(self, **kw) -> "CableScenario":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "scenario_id": self.scenario_id,
            "cable": cable_to_dict(self.cable),
            "faults": [_fault_to_dict(f) for f in self.faults],
            "load": {"power_w": self.load.power_w, "supply_v": self.load.supply_v},
            "load_schedule_w": list(self.load_schedule_w),
            "mix": list(self.mix),
            "calibration": {"position_m": self.calibration_position_m,
                            "extents_m": list(self.calibration_extents_m)},
            "instruments": self.setup.to_dict(),
            "seed": self.seed,
            "run": {"split": self.run.split, "counts": list(self.run.counts),
                    "profile": self.run.profile, "priors": list(self.run.priors),
                    "flag_rule": self.run.flag_rule, "monitor_batch": self.run.monitor_batch},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CableScenario":
        version = d.get("format_version", FORMAT_VERSION)
        if version != FORMAT_VERSION:
            raise ConfigError(f"unsupported scenario format_version {version}")
        if "cable" not in d:
            raise ConfigError("scenario lacks a cable section")
        try:
            cal = d.get("calibration", {})
            run = d.get("run", {})
            return cls(
                scenario_id=str(d.get("scenario_id", "scenario")),
                cable=cable_from_dict(d["cable"]),
                faults=tuple(sorted((_fault_from_dict(f) for f in d.get("faults", [])),
                                    key=lambda f: f.position_m)),
                load=LoadSpec(**d.get("load", {})),
                load_schedule_w=tuple(float(w) for w in d.get("load_schedule_w",
                                                              (0.0, 200.0, 400.0, 600.0))),
                mix=tuple(float(x) for x in d.get("mix", (1 / 3, 1 / 3, 1 / 3))),
                calibration_position_m=float(cal.get("position_m", 35.0)),
                calibration_extents_m=tuple(float(x) for x in
                                            cal.get("extents_m", (0.0, 0.005, 0.03))),
                setup=MeasurementSetup.from_dict(d.get("instruments", {})),
                seed=int(d.get("seed", 0)),
                run=RunSettings(
                    split=float(run.get("split", 0.6)),
                    counts=tuple(int(c) for c in run.get("counts", (100, 100, 100))),
                    profile=str(run.get("profile", "detect-first")),
                    priors=tuple(float(p) for p in run.get("priors", (0.9, 0.08, 0.02))),
                    flag_rule=str(run.get("flag_rule", "large-only")),
                    monitor_batch=int(run.get("monitor_batch", 10))),
            )
        except (ValidationError, TypeError) as exc:
            raise ConfigError(str(exc)) from None

    def config_hash(self) -> str:
        """Digest of everything that must match between calibration and assessment.

        Faults, mix, seed and run settings are left out: they describe what is
        being measured, not how.
        """
        d = self.to_dict()
        for k in ("faults", "mix", "seed", "run", "scenario_id"):
            d.pop(k)
        return hashlib.sha256(canonical_json(d).encode()).hexdigest()[:16]


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def default_scenario() -> CableScenario:
    return CableScenario("default", cable_from_dict({"preset": "PIJF-10TWP", "length_m": 70.0}))


def load_scenario(path) -> CableScenario:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return CableScenario.from_dict(d)


def save_scenario(s: CableScenario, path) -> Path:
    path = Path(path)
    path.write_text(canonical_json(s.to_dict()), encoding="utf-8")
    return path
