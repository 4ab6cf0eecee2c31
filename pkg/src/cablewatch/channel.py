"""Transmission-line channel simulator.

A cable is a cascade of uniform lossy line sections.  Each insulation fault
splits the cascade at its two edges and inserts a lumped series impedance at
its centre.  From the cascade we derive the input reflection seen from the
injection end (load attached at the far end), the forward transmission of
the bare cable between reference ports, and seeded measurement waveforms.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

C0 = 299_792_458.0
NEPER_PER_DB = np.log(10.0) / 20.0

SMALL_MIN_EXTENT_M = 0.005
LARGE_MIN_EXTENT_M = 0.03

# fraction of z0 used as series perturbation when a fault does not set one
DEFAULT_PERTURBATION = {0: 0.0, 1: 0.05, 2: 0.20}


class ValidationError(ValueError):
    pass


class CableState(enum.IntEnum):
    """Cable condition, ordered by severity."""

    H = 0
    F_s = 1
    F_l = 2

    @property
    def code(self) -> str:
        return self.name

    @classmethod
    def parse(cls, value) -> "CableState":
        if isinstance(value, CableState):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        try:
            return cls[str(value)]
        except KeyError:
            aliases = {"healthy": cls.H, "small": cls.F_s, "large": cls.F_l}
            key = str(value).lower()
            if key in aliases:
                return aliases[key]
            raise ValidationError(f"unknown cable state {value!r}") from None


def severity_for_extent(extent_m: float) -> CableState:
    """Classify damage length: <5 mm healthy, 5 mm up to 3 cm small, 3 cm or more large."""
    if extent_m < SMALL_MIN_EXTENT_M - 1e-12:
        return CableState.H
    if extent_m < LARGE_MIN_EXTENT_M - 1e-12:
        return CableState.F_s
    return CableState.F_l


@dataclass(frozen=True)
class CableSpec:
    length_m: float
    z0_ohm: float = 100.0
    velocity_factor: float = 0.66
    attenuation_db_per_m_at_1mhz: float = 0.002
    attenuation_freq_exponent: float = 0.5
    label: str = "sym-4core"

    def __post_init__(self):
        if not self.length_m >= 0 or not np.isfinite(self.length_m):
            raise ValidationError(f"cable length must be non-negative, got {self.length_m}")
        if not self.z0_ohm > 0:
            raise ValidationError(f"z0_ohm must be positive, got {self.z0_ohm}")
        if not 0 < self.velocity_factor < 1:
            raise ValidationError(f"velocity_factor must be in (0, 1), got {self.velocity_factor}")
        if self.attenuation_db_per_m_at_1mhz < 0:
            raise ValidationError("attenuation must be non-negative")
        if not 0.4 <= self.attenuation_freq_exponent <= 1.0:
            raise ValidationError("attenuation_freq_exponent must lie in [0.4, 1.0]")

    @property
    def velocity_m_s(self) -> float:
        return self.velocity_factor * C0

    def propagation(self, freq_hz: np.ndarray) -> np.ndarray:
        """Complex propagation constant (Np/m + j rad/m)."""
        f = np.asarray(freq_hz, dtype=float)
        alpha_db = self.attenuation_db_per_m_at_1mhz * (f / 1e6) ** self.attenuation_freq_exponent
        beta = 2 * np.pi * f / self.velocity_m_s
        return alpha_db * NEPER_PER_DB + 1j * beta

    def round_trip_delay(self, distance_m: float) -> float:
        return 2.0 * distance_m / self.velocity_m_s


@dataclass(frozen=True)
class FaultSpec:
    position_m: float
    extent_m: float
    z_perturbation_ohm: float | None = None

    def __post_init__(self):
        if self.position_m < 0:
            raise ValidationError(f"fault position must be >= 0, got {self.position_m}")
        if self.extent_m < 0:
            raise ValidationError(f"fault extent must be >= 0, got {self.extent_m}")

    @property
    def severity_class(self) -> CableState:
        return severity_for_extent(self.extent_m)

    @property
    def end_m(self) -> float:
        return self.position_m + self.extent_m

    @property
    def centre_m(self) -> float:
        return self.position_m + self.extent_m / 2

    def perturbation(self, z0_ohm: float) -> float:
        if self.z_perturbation_ohm is not None:
            return float(self.z_perturbation_ohm)
        return DEFAULT_PERTURBATION[int(self.severity_class)] * z0_ohm


@dataclass(frozen=True)
class LoadSpec:
    power_w: float = 200.0
    supply_v: float = 110.0

    def __post_init__(self):
        if not 0 <= self.power_w <= 600:
            raise ValidationError(f"load power must be in [0, 600] W, got {self.power_w}")

    @property
    def is_open(self) -> bool:
        return self.power_w == 0

    @property
    def equivalent_impedance_ohm(self) -> float:
        if self.is_open:
            return float("inf")
        return self.supply_v**2 / self.power_w

    def reflection(self, z0_ohm: float) -> float:
        if self.is_open:
            return 1.0
        z = self.equivalent_impedance_ohm
        return (z - z0_ohm) / (z + z0_ohm)


@dataclass(frozen=True)
class LineSection:
    length_m: float


@dataclass(frozen=True)
class SeriesImpedance:
    z_ohm: float


@dataclass(frozen=True)
class TwoPortModel:
    """Ordered cascade from the injection end towards the load."""

    cable: CableSpec
    elements: tuple
    load: LoadSpec

    @property
    def boundaries_m(self) -> list[float]:
        out, pos = [0.0], 0.0
        for el in self.elements:
            if isinstance(el, LineSection):
                pos += el.length_m
                out.append(pos)
        return out


@dataclass(frozen=True)
class ChannelRealization:
    freq_grid_hz: np.ndarray
    gamma_in: np.ndarray
    h_fwd: np.ndarray
    noise_seed: int = 0


def build_line_model(cable: CableSpec, faults: Sequence[FaultSpec] = (),
                     load: LoadSpec | None = None) -> TwoPortModel:
    load = load if load is not None else LoadSpec()
    faults = sorted(faults, key=lambda f: f.position_m)
    for f in faults:
        if f.end_m > cable.length_m + 1e-12:
            raise ValidationError(
                f"fault at {f.position_m} m (extent {f.extent_m} m) beyond cable end {cable.length_m} m")
    for a, b in zip(faults, faults[1:]):
        if b.position_m < a.end_m - 1e-12:
            raise ValidationError(f"faults at {a.position_m} m and {b.position_m} m overlap")

    if not faults:
        return TwoPortModel(cable, (LineSection(cable.length_m),), load)

    elements: list = []
    pos = 0.0
    for f in faults:
        if f.position_m > pos:
            elements.append(LineSection(f.position_m - pos))
        half = f.extent_m / 2
        if half > 0:
            elements.append(LineSection(half))
        elements.append(SeriesImpedance(f.perturbation(cable.z0_ohm)))
        if half > 0:
            elements.append(LineSection(half))
        pos = f.end_m
    if cable.length_m > pos:
        elements.append(LineSection(cable.length_m - pos))
    return TwoPortModel(cable, tuple(elements), load)


def _check_grid(freq_grid) -> np.ndarray:
    f = np.asarray(freq_grid, dtype=float)
    if f.ndim != 1 or f.size == 0:
        raise ValidationError("frequency grid must be a non-empty 1-D sequence")
    if np.any(f < 0) or np.any(np.diff(f) <= 0):
        raise ValidationError("frequency grid must be non-negative and strictly increasing")
    return f


def input_reflection_response(model: TwoPortModel, freq_grid) -> np.ndarray:
    """Reflection coefficient at the injection end, referenced to the cable z0.

    Folds the load reflection back through the cascade from right to left.
    """
    f = _check_grid(freq_grid)
    cable = model.cable
    gam = cable.propagation(f)
    g = np.full(f.shape, model.load.reflection(cable.z0_ohm), dtype=complex)
    for el in reversed(model.elements):
        if isinstance(el, LineSection):
            g = g * np.exp(-2 * gam * el.length_m)
        else:
            zeta = el.z_ohm / cable.z0_ohm
            g = (zeta * (1 - g) + 2 * g) / (zeta * (1 - g) + 2)
    return g


def abcd_cascade(model: TwoPortModel, freq_grid) -> np.ndarray:
    """Cascade ABCD matrix of the bare cable, shape (n_freq, 2, 2)."""
    f = _check_grid(freq_grid)
    z0 = model.cable.z0_ohm
    gam = model.cable.propagation(f)
    total = np.broadcast_to(np.eye(2, dtype=complex), (f.size, 2, 2)).copy()
    for el in model.elements:
        m = np.zeros((f.size, 2, 2), dtype=complex)
        if isinstance(el, LineSection):
            gl = gam * el.length_m
            ch, sh = np.cosh(gl), np.sinh(gl)
            m[:, 0, 0] = ch
            m[:, 0, 1] = z0 * sh
            m[:, 1, 0] = sh / z0
            m[:, 1, 1] = ch
        else:
            m[:, 0, 0] = 1
            m[:, 0, 1] = el.z_ohm
            m[:, 1, 1] = 1
        total = total @ m
    return total


def sparams_from_abcd(abcd: np.ndarray, z_ref: float) -> np.ndarray:
    """Two-port S matrix (n, 2, 2) for equal real reference impedances."""
    a, b, c, d = abcd[:, 0, 0], abcd[:, 0, 1], abcd[:, 1, 0], abcd[:, 1, 1]
    den = a + b / z_ref + c * z_ref + d
    s = np.empty_like(abcd)
    s[:, 0, 0] = (a + b / z_ref - c * z_ref - d) / den
    s[:, 0, 1] = 2 * (a * d - b * c) / den
    s[:, 1, 0] = 2 / den
    s[:, 1, 1] = (-a + b / z_ref - c * z_ref + d) / den
    return s


def cable_sparams(model: TwoPortModel, freq_grid) -> np.ndarray:
    return sparams_from_abcd(abcd_cascade(model, freq_grid), model.cable.z0_ohm)


def transmission_response(model: TwoPortModel, freq_grid) -> np.ndarray:
    """Forward transmission of the cable between z0-referenced ports."""
    return cable_sparams(model, freq_grid)[:, 1, 0]


def realize(model: TwoPortModel, freq_grid, noise_seed: int = 0) -> ChannelRealization:
    f = _check_grid(freq_grid)
    return ChannelRealization(f, input_reflection_response(model, f),
                              transmission_response(model, f), int(noise_seed))


def probe_grid(n_samples: int, sample_rate_hz: float) -> np.ndarray:
    """Positive rfft bin frequencies for a periodic waveform of ``n_samples``."""
    return np.fft.rfftfreq(n_samples, 1.0 / sample_rate_hz)[1:]


def impulse_response(realization: ChannelRealization, n_samples: int,
                     taper_fraction: float = 0.25) -> np.ndarray:
    """Sampled impulse response of ``gamma_in`` on the rfft grid of ``n_samples``.

    The tail of the response is rolled off with a half-Hann window so that
    energy from long multiple reflections does not wrap around.
    """
    if realization.gamma_in.size != n_samples // 2:
        raise ValidationError(
            f"realization has {realization.gamma_in.size} bins, waveform of {n_samples} "
            f"samples needs {n_samples // 2}")
    spectrum = np.concatenate([[0.0], realization.gamma_in])
    ir = np.fft.irfft(spectrum, n=n_samples)
    n_taper = int(n_samples * taper_fraction)
    if n_taper > 1:
        # The grid has no DC bin; pick the DC level so the response settles to
        # zero in the tail, otherwise the taper would bend that offset in-band.
        ir -= ir[-n_taper:].mean()
        ir[-n_taper:] *= np.hanning(2 * n_taper)[n_taper:]
    return ir


def synthesize_echo(probe: np.ndarray, realization: ChannelRealization, snr_db: float,
                    seed: int | None = None, coupling: float = 0.0,
                    latency_samples: int = 0, n_periods: int = 1) -> np.ndarray:
    """Received waveform for a periodic probe: reflections + direct coupling + AWGN.

    ``snr_db`` is the probe power over the noise power.  ``coupling`` is the
    TX-to-RX leakage amplitude that produces the direct-path peak, and
    ``latency_samples`` delays the whole receive chain.
    """
    if not np.isfinite(snr_db):
        raise ValidationError(f"snr_db must be finite, got {snr_db}")
    probe = np.asarray(probe, dtype=float)
    n = probe.size
    ir = impulse_response(realization, n)
    clean = np.fft.irfft(np.fft.rfft(probe) * np.fft.rfft(ir), n=n)
    if coupling:
        clean = clean + coupling * probe
    if latency_samples:
        clean = np.roll(clean, latency_samples)
    clean = np.tile(clean, n_periods)
    rng = np.random.default_rng(seed if seed is not None else realization.noise_seed)
    noise_power = np.mean(probe**2) / 10 ** (snr_db / 10)
    return clean + rng.normal(0.0, np.sqrt(noise_power), clean.size)


@dataclass(frozen=True)
class SpectralTrace:
    freq_grid_hz: np.ndarray
    values: np.ndarray
    kind: str = "snr_db"
    meta: dict = field(default_factory=dict)


def synthesize_snr_trace(realization: ChannelRealization, tx_psd: float,
                         noise_psd: float) -> SpectralTrace:
    if not (tx_psd > 0 and noise_psd > 0):
        raise ValidationError("PSD values must be positive")
    snr = 10 * np.log10(tx_psd * np.abs(realization.h_fwd) ** 2 / noise_psd)
    return SpectralTrace(realization.freq_grid_hz, snr, "snr_db")
