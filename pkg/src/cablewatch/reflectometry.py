"""Orthogonal multitone reflectometry: probe, reflectogram, peaks, localization."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .channel import C0, CableState, ValidationError
from .thresholds import classify_deviation


class InconsistencyError(ValueError):
    pass


@dataclass(frozen=True)
class MultitoneConfig:
    """Probe definition.

    Tones occupy ``n_tones`` consecutive bins of a ``symbol_length``-sample
    symbol at the effective rate, centred on ``center_freq_hz``.
    """

    center_freq_hz: float = 3.0e7
    sample_rate_hz: float = 5.0e6
    oversampling: int = 32
    n_tones: int = 704
    symbol_length: int = 2048
    active_tone_mask: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_tones < 2:
            raise ValidationError("n_tones must be >= 2")
        if self.active_tone_mask is not None:
            if len(self.active_tone_mask) != self.n_tones:
                raise ValidationError("active_tone_mask length must equal n_tones")
            if not any(self.active_tone_mask):
                raise ValidationError("at least one tone must be active")
        bins = self.tone_bins
        if bins[0] <= 0 or bins[-1] >= self.symbol_length // 2:
            raise ValidationError("occupied band must lie strictly inside (0, Nyquist)")

    @property
    def effective_rate_hz(self) -> float:
        return self.sample_rate_hz * self.oversampling

    @property
    def mask(self) -> np.ndarray:
        if self.active_tone_mask is None:
            return np.ones(self.n_tones, dtype=bool)
        return np.asarray(self.active_tone_mask, dtype=bool)

    @property
    def bin_spacing_hz(self) -> float:
        return self.effective_rate_hz / self.symbol_length

    @property
    def bandwidth_hz(self) -> float:
        return self.n_tones * self.bin_spacing_hz

    @property
    def tone_bins(self) -> np.ndarray:
        centre = int(round(self.center_freq_hz / self.bin_spacing_hz))
        return centre - self.n_tones // 2 + np.arange(self.n_tones)

    @property
    def tone_freqs_hz(self) -> np.ndarray:
        return self.tone_bins * self.bin_spacing_hz

    def meters_per_sample(self, velocity_factor: float) -> float:
        return velocity_factor * C0 / (2 * self.effective_rate_hz)


def tone_components(config: MultitoneConfig) -> np.ndarray:
    """Individual active tone waveforms (n_active, symbol_length), unscaled."""
    rng = np.random.default_rng(config.seed)
    phases = rng.uniform(0, 2 * np.pi, config.n_tones)
    n = np.arange(config.symbol_length)
    bins = config.tone_bins[config.mask]
    ph = phases[config.mask]
    return np.cos(2 * np.pi * np.outer(bins, n) / config.symbol_length + ph[:, None])


def generate_probe(config: MultitoneConfig) -> np.ndarray:
    """One symbol of the multitone probe, unit RMS."""
    x = tone_components(config).sum(axis=0)
    return x / np.sqrt(np.mean(x**2))


@dataclass(frozen=True)
class Reflectogram:
    """Correlation envelope per lag.

    ``analytic`` keeps the complex correlation when it is known so that a
    baseline can be removed coherently.
    """

    values: np.ndarray
    tx_peak_index: int
    meters_per_sample: float
    config: MultitoneConfig = field(default_factory=MultitoneConfig)
    analytic: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if np.any(self.values < 0):
            raise ValidationError("reflectogram values must be non-negative")
        if not self.meters_per_sample > 0:
            raise ValidationError("meters_per_sample must be positive")

    def __len__(self):
        return self.values.size


def local_maxima(x: np.ndarray) -> np.ndarray:
    """Indices of strict-left / non-strict-right local maxima (interior only)."""
    if x.size < 3:
        return np.array([], dtype=int)
    mid = x[1:-1]
    return np.flatnonzero((mid > x[:-2]) & (mid >= x[2:])) + 1


def find_tx_peak(values: np.ndarray, fraction: float = 0.5) -> int:
    """First sample above ``fraction`` of the maximum that is a local maximum."""
    thresh = fraction * values.max()
    ext = np.concatenate([[values[-1]], values, [values[0]]])
    for i in np.flatnonzero(values >= thresh):
        if ext[i + 1] >= ext[i] and ext[i + 1] >= ext[i + 2]:
            return int(i)
    return int(np.argmax(values))


def _spectral_window(config: MultitoneConfig | None, n: int, kind: str | None) -> np.ndarray:
    w = np.zeros(n // 2 + 1)
    if config is None or kind is None:
        w[1:] = 1.0
        return w
    bins = config.tone_bins[config.mask]
    if kind == "hann":
        taper = np.hanning(bins.size + 2)[1:-1]
    elif kind == "rect":
        taper = np.ones(bins.size)
    else:
        raise ValidationError(f"unknown window {kind!r}")
    w[bins] = taper
    return w


def correlate(probe: np.ndarray, echo: np.ndarray, config: MultitoneConfig | None = None,
              velocity_factor: float = 0.66, window: str | None = "hann") -> Reflectogram:
    """Normalized circular cross-correlation envelope of ``echo`` against ``probe``.

    The echo may hold several probe periods; they are averaged first.  The
    cross-spectrum is weighted by ``window`` over the active tones and the
    result normalized so the probe autocorrelation peaks at exactly 1.
    """
    probe = np.asarray(probe, dtype=float)
    echo = np.asarray(echo, dtype=float)
    n = probe.size
    if echo.size < n or echo.size % n:
        raise ValidationError(
            f"echo length {echo.size} must be a positive multiple of probe length {n}")
    echo = echo.reshape(-1, n).mean(axis=0)
    P = np.fft.rfft(probe)
    E = np.fft.rfft(echo)
    w = _spectral_window(config, n, window)
    norm = np.sum(np.abs(P) ** 2 * w)
    if norm == 0:
        raise ValidationError("probe has no energy in the correlation band")
    # analytic (one-sided) correlation gives the envelope directly
    full = np.zeros(n, dtype=complex)
    full[: n // 2 + 1] = np.conj(P) * E * w
    corr = np.fft.ifft(full) * n / norm
    mag = np.abs(corr)
    cfg = config if config is not None else MultitoneConfig()
    return Reflectogram(mag, find_tx_peak(mag), cfg.meters_per_sample(velocity_factor), cfg, corr)


@dataclass(frozen=True)
class Peak:
    sample_index: int
    refined_index: float
    magnitude: float
    distance_m: float


@dataclass(frozen=True)
class PeakSet:
    peaks: tuple = ()
    end_of_line_index: int | None = None

    def __len__(self):
        return len(self.peaks)

    def __iter__(self):
        return iter(self.peaks)

    @property
    def max_magnitude(self) -> float:
        return max((p.magnitude for p in self.peaks), default=0.0)


def parabolic_refine(y: np.ndarray, i: int) -> tuple[float, float]:
    """Vertex of the parabola through samples i-1, i, i+1."""
    if i <= 0 or i >= y.size - 1:
        return float(i), float(y[i])
    a, b, c = y[i - 1], y[i], y[i + 1]
    den = a - 2 * b + c
    if den == 0:
        return float(i), float(b)
    delta = 0.5 * (a - c) / den
    delta = float(np.clip(delta, -1.0, 1.0))
    return i + delta, float(b - 0.25 * (a - c) * delta)


def end_of_line(r: Reflectogram, fraction: float = 0.1) -> int | None:
    """Last dominant peak after the TX peak (above ``fraction`` of TX)."""
    v = r.values
    half = v.size // 2
    idx = [i for i in local_maxima(v[:half]) if i > r.tx_peak_index + 1
           and v[i] >= fraction * v[r.tx_peak_index]]
    return int(idx[-1]) if idx else None


def baseline_difference(r: Reflectogram, baseline: Reflectogram,
                        mode: str = "coherent") -> np.ndarray:
    """Non-negative residual of ``r`` over ``baseline``.

    ``coherent`` subtracts the complex correlations (falls back to magnitude
    when either side lacks them); ``magnitude`` subtracts envelopes and clamps.
    """
    if mode == "coherent" and r.analytic is not None and baseline.analytic is not None:
        return np.abs(r.analytic - baseline.analytic)
    if mode not in ("coherent", "magnitude"):
        raise ValidationError(f"unknown subtraction mode {mode!r}")
    return np.clip(r.values - baseline.values, 0.0, None)


def correlation_kernel(config: MultitoneConfig, n: int, window: str | None = "hann") -> np.ndarray:
    """One-sided spectrum of the normalized probe autocorrelation."""
    P = np.fft.rfft(generate_probe(config)) if n == config.symbol_length else None
    if P is None:
        raise ValidationError("kernel length must equal the symbol length")
    w = _spectral_window(config, n, window)
    spectrum = np.abs(P) ** 2 * w
    return spectrum / spectrum.sum()


def shifted_kernel(kernel_spec: np.ndarray, n: int, shift: float) -> np.ndarray:
    full = np.zeros(n, dtype=complex)
    k = np.arange(kernel_spec.size)
    full[: kernel_spec.size] = kernel_spec * np.exp(-2j * np.pi * k * shift / n)
    return np.fft.ifft(full) * n


def _fit_shift(data: np.ndarray, kernel_spec: np.ndarray, lo: float, hi: float,
               idx: np.ndarray, fixed: list[np.ndarray]) -> float:
    """Shift in [lo, hi] minimizing the least-squares residual of ``data[idx]``
    against one free kernel plus the ``fixed`` kernels (complex amplitudes free)."""
    n = data.size
    y = data[idx]

    def cost(tau):
        cols = [shifted_kernel(kernel_spec, n, tau)[idx]] + [f[idx] for f in fixed]
        A = np.stack(cols, axis=1)
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        return float(np.sum(np.abs(y - A @ coef) ** 2))

    res = minimize_scalar(cost, bounds=(lo, hi), method="bounded", options={"xatol": 1e-4})
    return float(res.x)


def detect_peaks(r: Reflectogram, baseline: Reflectogram | None, magnitude_threshold: float,
                 guard_samples: int = 4, eol_fraction: float = 0.05,
                 mode: str = "coherent", window: str | None = "hann") -> PeakSet:
    """Fault peaks in ``r``, optionally after subtracting a healthy ``baseline``.

    Only the stretch from the injection point to just past the baseline's
    end-of-line peak is searched; nothing on the cable can echo outside it.
    Peaks are refined by parabolic interpolation, except that a fault echo
    overlapping the line-end echo in a coherent residual is refined by a
    joint fit against the (rescaled) line-end response.
    """
    if not magnitude_threshold > 0:
        raise ValidationError("magnitude_threshold must be positive")
    coherent = False
    if baseline is not None:
        if baseline.values.size != r.values.size or baseline.config != r.config:
            raise ValidationError("baseline must share the reflectogram's config and length")
        x = baseline_difference(r, baseline, mode)
        coherent = mode == "coherent" and r.analytic is not None and baseline.analytic is not None
        ref = baseline
    else:
        x = r.values
        ref = r
    eol = end_of_line(ref, eol_fraction)
    tx = r.tx_peak_index
    stop = (eol + guard_samples) if eol is not None else x.size // 2
    stop = min(stop, x.size - 2)

    idx = [int(i) for i in local_maxima(x) if tx <= i <= stop]
    if baseline is None:
        # direct path and line end are not faults
        idx = [i for i in idx if i != tx and i != eol]
    elif x[tx] >= x[tx + 1] and tx not in idx:
        # a fault right at the injection point peaks on the TX sample
        idx.insert(0, tx)
    idx = [i for i in idx if x[i] > magnitude_threshold]

    n = x.size
    kernel = None
    lobe = 2 * r.config.symbol_length / max(int(r.config.mask.sum()), 1)
    if coherent and eol is not None and idx:
        kernel = correlation_kernel(r.config, n, window)
        span = np.arange(max(eol - int(2 * lobe), 0), min(eol + int(2 * lobe) + 1, n))
        eol_ref = _fit_shift(baseline.analytic, kernel, eol - 1.0, eol + 1.0, span, [])
        eol_kernel = shifted_kernel(kernel, n, eol_ref)
        residual = r.analytic - baseline.analytic

    peaks = []
    for i in idx:
        ref_i, mag = parabolic_refine(x, i)
        if kernel is not None and 1.0 <= eol_ref - i <= 2 * lobe:
            span = np.arange(max(i - int(lobe), 0), min(int(eol_ref + lobe) + 1, n))
            ref_i = _fit_shift(residual, kernel, i - 1.0, i + 1.0, span, [eol_kernel])
        ref_i = max(ref_i, float(tx))
        peaks.append(Peak(i, ref_i, mag, (ref_i - tx) * r.meters_per_sample))
    return PeakSet(tuple(peaks), eol)


def localize(peak: Peak, r: Reflectogram) -> float:
    if peak.refined_index < r.tx_peak_index:
        raise InconsistencyError(
            f"peak at {peak.refined_index:.3f} precedes the TX peak at {r.tx_peak_index}")
    return (peak.refined_index - r.tx_peak_index) * r.meters_per_sample


def classify_omtdr(peaks: PeakSet, th_s: float, th_l: float) -> tuple[CableState, float]:
    """Three-band verdict on the largest fault-peak magnitude."""
    psi = peaks.max_magnitude
    return classify_deviation(psi, th_s, th_l), psi

