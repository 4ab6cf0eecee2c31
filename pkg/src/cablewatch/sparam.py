"""S-parameter modality: CFR extraction, averaging, thresholds, verdicts."""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .channel import CableState, ValidationError
from .thresholds import ThresholdPair, derive_thresholds as _derive
from .touchstone import format_touchstone, read_touchstone


@dataclass(frozen=True)
class SParamRecord:
    freq_grid_hz: np.ndarray
    s11: np.ndarray
    s21: np.ndarray
    s12: np.ndarray
    s22: np.ndarray
    instant_id: int = 0
    load_w: float | None = None
    z_ref: float = 50.0

    def __post_init__(self):
        n = np.asarray(self.freq_grid_hz).size
        if n == 0:
            raise ValidationError("empty frequency grid")
        for name in ("s11", "s21", "s12", "s22"):
            if np.asarray(getattr(self, name)).shape != (n,):
                raise ValidationError(f"{name} does not match the frequency grid")

    @property
    def is_passive(self) -> bool:
        return bool(np.all(np.abs(self.s21) <= 1 + 1e-6))

    @property
    def matrix(self) -> np.ndarray:
        s = np.empty((self.freq_grid_hz.size, 2, 2), dtype=complex)
        s[:, 0, 0], s[:, 1, 0], s[:, 0, 1], s[:, 1, 1] = self.s11, self.s21, self.s12, self.s22
        return s


_META = re.compile(r"(\w+)=(\S+)")


def parse_touchstone(source) -> SParamRecord:
    """Read a two-port Touchstone file into a record (instant/load from comments)."""
    d = read_touchstone(source)
    meta = {}
    for c in d["comments"]:
        meta.update(_META.findall(c))
    s = d["s"]
    load = meta.get("load_w")
    return SParamRecord(d["freq_hz"], s[:, 0, 0], s[:, 1, 0], s[:, 0, 1], s[:, 1, 1],
                        int(meta.get("instant_id", 0)),
                        float(load) if load not in (None, "none") else None, d["z_ref"])


def write_touchstone(rec: SParamRecord, path, fmt: str = "RI") -> Path:
    comments = [f"instant_id={rec.instant_id}", f"load_w={rec.load_w!r}" if rec.load_w is not None
                else "load_w=none"]
    text = format_touchstone(rec.freq_grid_hz, rec.matrix, rec.z_ref, fmt, comments)
    path = Path(path)
    path.write_text(text, encoding="utf-8")
    return path


@dataclass(frozen=True)
class CfrTrace:
    freq_grid_hz: np.ndarray
    h: np.ndarray

    @property
    def psi1(self) -> float:
        """Mean CFR magnitude over the grid."""
        return float(np.mean(np.abs(self.h)))


def cfr_from_sparams(rec: SParamRecord) -> CfrTrace:
    return CfrTrace(np.asarray(rec.freq_grid_hz, dtype=float), np.asarray(rec.s21, dtype=complex))


def average_cfr(traces: Sequence[CfrTrace]) -> CfrTrace:
    """Complex mean per frequency, so phase-incoherent responses cancel."""
    if not traces:
        raise ValidationError("need at least one CFR trace")
    grid = traces[0].freq_grid_hz
    for t in traces[1:]:
        if t.freq_grid_hz.shape != grid.shape or not np.array_equal(t.freq_grid_hz, grid):
            raise ValidationError("CFR traces are on different frequency grids")
    return CfrTrace(grid, np.mean([t.h for t in traces], axis=0))


def derive_thresholds(labeled: Mapping, position: float = 0.5) -> ThresholdPair:
    """Thresholds from per-state averaged psi1 values; deviation = healthy mean - psi1."""
    return _derive(labeled, sign=-1, position=position)


def classify_sparam(avg: CfrTrace | float, th: ThresholdPair) -> tuple[CableState, int]:
    """Verdict and binary large-fault indicator."""
    psi = avg.psi1 if isinstance(avg, CfrTrace) else float(avg)
    state = th.classify(psi)
    return state, int(state == CableState.F_l)
