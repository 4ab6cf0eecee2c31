"""Simulated bench instruments: OMTDR front end, network analyzer, PLC modem.

Each measurement is the ideal channel response from :mod:`channel` plus
instrument noise.  All randomness flows from ``SeedSequence([seed, instant,
modality])`` so any single measurement can be regenerated in isolation.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .channel import (CableSpec, LoadSpec, ValidationError, build_line_model,
                      cable_sparams, probe_grid, realize, synthesize_echo)
from .reflectometry import (MultitoneConfig, PeakSet, Reflectogram, correlate, detect_peaks,
                            generate_probe)
from .snr import DEFAULT_BAND_HZ, SnrTrace, default_carrier_grid
from .sparam import SParamRecord

MODALITY_CODES = {"sparam": 1, "snr": 2, "omtdr": 3, "baseline": 4, "draw": 5}


def instrument_rng(seed: int, instant: int, modality: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(instant),
                                                         MODALITY_CODES[modality]]))


def instrument_seed(seed: int, instant: int, modality: str) -> int:
    """A 32-bit seed for APIs that take an integer."""
    return int(instrument_rng(seed, instant, modality).integers(2**32))


@dataclass(frozen=True)
class MeasurementSetup:
    """Instrument parameters.  Noise figures are per-measurement standard deviations."""

    omtdr: MultitoneConfig = field(default_factory=MultitoneConfig)
    omtdr_snr_db: float = 20.0
    omtdr_periods: int = 4
    omtdr_coupling: float = 1.0
    omtdr_latency_samples: int = 32
    omtdr_detect_floor: float = 1e-4
    vna_band_hz: tuple = (2e6, 40e6)
    vna_points: int = 401
    vna_noise: float = 1e-2
    vna_gain_jitter: float = 5e-3
    snr_band_hz: tuple = DEFAULT_BAND_HZ
    snr_carriers: int = 917
    snr_tx_over_noise_db: float = 30.0
    snr_carrier_noise_db: float = 1.0
    snr_instant_offset_db: float = 0.05

    def __post_init__(self):
        if self.omtdr_periods < 1:
            raise ValidationError("omtdr_periods must be >= 1")
        if self.vna_points < 2 or self.snr_carriers < 1:
            raise ValidationError("instrument grids need at least two points")
        for name in ("vna_noise", "vna_gain_jitter", "snr_carrier_noise_db",
                     "snr_instant_offset_db"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")

    @property
    def vna_grid_hz(self) -> np.ndarray:
        return np.linspace(self.vna_band_hz[0], self.vna_band_hz[1], self.vna_points)

    @property
    def snr_grid_hz(self) -> np.ndarray:
        return default_carrier_grid(self.snr_carriers, self.snr_band_hz)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["omtdr"] = asdict(self.omtdr)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MeasurementSetup":
        d = dict(d)
        om = dict(d.pop("omtdr", {}))
        if om.get("active_tone_mask") is not None:
            om["active_tone_mask"] = tuple(om["active_tone_mask"])
        for k in ("vna_band_hz", "snr_band_hz"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(omtdr=MultitoneConfig(**om), **d)


# ---------------------------------------------------------------- OMTDR

def capture_echo(setup: MeasurementSetup, cable: CableSpec, faults, load: LoadSpec,
                 seed: int, instant: int, modality: str = "omtdr") -> tuple[np.ndarray, np.ndarray]:
    """(probe, received waveform) for one acquisition."""
    probe = generate_probe(setup.omtdr)
    grid = probe_grid(probe.size, setup.omtdr.effective_rate_hz)
    rz = realize(build_line_model(cable, faults, load), grid)
    echo = synthesize_echo(probe, rz, setup.omtdr_snr_db, instrument_seed(seed, instant, modality),
                           coupling=setup.omtdr_coupling,
                           latency_samples=setup.omtdr_latency_samples,
                           n_periods=setup.omtdr_periods)
    return probe, echo


def reflectogram_of(setup: MeasurementSetup, probe, echo, cable: CableSpec) -> Reflectogram:
    return correlate(probe, echo, setup.omtdr, cable.velocity_factor)


def omtdr_evidence(setup: MeasurementSetup, r: Reflectogram,
                   baseline: Reflectogram) -> tuple[PeakSet, float]:
    """Fault peaks against the healthy baseline and psi3 (largest peak, 0 if none)."""
    peaks = detect_peaks(r, baseline, setup.omtdr_detect_floor)
    return peaks, peaks.max_magnitude


# ---------------------------------------------------------------- VNA

def measure_sparams(setup: MeasurementSetup, cable: CableSpec, faults, seed: int,
                    instant: int, load_w: float | None = None) -> SParamRecord:
    """Two-port S-parameters of the cable in reference impedance z0.

    The analyzer adds complex white noise to each entry and a common
    per-sweep gain error to the transmission terms.
    """
    grid = setup.vna_grid_hz
    s = cable_sparams(build_line_model(cable, faults), grid)
    rng = instrument_rng(seed, instant, "sparam")
    gain = 1.0 + rng.normal(0.0, setup.vna_gain_jitter)
    noise = rng.normal(0.0, setup.vna_noise / np.sqrt(2), (grid.size, 2, 2, 2))
    s = s + noise[..., 0] + 1j * noise[..., 1]
    s[:, 1, 0] *= gain
    s[:, 0, 1] *= gain
    return SParamRecord(grid, s[:, 0, 0].copy(), s[:, 1, 0].copy(), s[:, 0, 1].copy(),
                        s[:, 1, 1].copy(), instant, load_w, cable.z0_ohm)


# ---------------------------------------------------------------- PLC modem

def measure_snr(setup: MeasurementSetup, cable: CableSpec, faults, seed: int, instant: int,
                load_w: float | None = None, ends=("near", "far")) -> list[SnrTrace]:
    """SNR per carrier reported by the modem at each requested end.

    Near-end traces use the forward transmission, far-end traces the reverse
    one; both share the instant's common offset.
    """
    grid = setup.snr_grid_hz
    s = cable_sparams(build_line_model(cable, faults), grid)
    rng = instrument_rng(seed, instant, "snr")
    offset = rng.normal(0.0, setup.snr_instant_offset_db)
    out = []
    for end in ends:
        h = s[:, 1, 0] if end == "near" else s[:, 0, 1]
        ideal = setup.snr_tx_over_noise_db + 20 * np.log10(np.abs(h))
        jitter = rng.normal(0.0, setup.snr_carrier_noise_db, grid.size)
        out.append(SnrTrace(grid, ideal + offset + jitter, end, instant, load_w))
    return out


def ideal_snr(setup: MeasurementSetup, cable: CableSpec, faults, end: str = "near") -> np.ndarray:
    """Noise-free per-carrier SNR (dB)."""
    s = cable_sparams(build_line_model(cable, faults), setup.snr_grid_hz)
    h = s[:, 1, 0] if end == "near" else s[:, 0, 1]
    return setup.snr_tx_over_noise_db + 20 * np.log10(np.abs(h))

