"""Per-carrier SNR modality.

Traces come from a modem utility export (CSV) or from the simulator.  The
scalar summary is the mean SNR over carriers; its drop below the healthy
reference is the deviation score.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .channel import CableState, ValidationError
from .thresholds import ThresholdPair, derive_thresholds

CSV_COLUMNS = ("carrier_hz", "snr_db", "end", "instant", "load_w")
END_TAGS = ("near", "far")
DEFAULT_BAND_HZ = (2e6, 28e6)
DEFAULT_N_CARRIERS = 917


class SnrParseError(ValueError):
    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


def default_carrier_grid(n: int = DEFAULT_N_CARRIERS, band_hz=DEFAULT_BAND_HZ) -> np.ndarray:
    return np.linspace(band_hz[0], band_hz[1], n)


@dataclass(frozen=True)
class SnrTrace:
    carrier_grid_hz: np.ndarray
    snr_db: np.ndarray
    end_tag: str = "near"
    instant_id: int = 0
    load_w: float | None = None

    def __post_init__(self):
        grid = np.asarray(self.carrier_grid_hz, dtype=float)
        snr = np.asarray(self.snr_db, dtype=float)
        if grid.size == 0:
            raise ValidationError("empty carrier grid")
        if grid.shape != snr.shape:
            raise ValidationError("carrier grid and SNR values differ in length")
        if np.any(np.diff(grid) <= 0):
            raise ValidationError("carrier grid must be strictly increasing")
        if not np.all(np.isfinite(snr)):
            raise ValidationError("SNR values must be finite")
        if self.end_tag not in END_TAGS:
            raise ValidationError(f"end tag must be one of {END_TAGS}, got {self.end_tag!r}")
        object.__setattr__(self, "carrier_grid_hz", grid)
        object.__setattr__(self, "snr_db", snr)


@dataclass(frozen=True)
class SnrSummary:
    psi2: float
    deviation: float
    instant_id: int = 0
    end_tag: str = "near"

    def to_dict(self) -> dict:
        return {"instant_id": self.instant_id, "end": self.end_tag,
                "psi2": self.psi2, "deviation": self.deviation}


def summarize_snr(trace: SnrTrace, reference: float | None = None) -> SnrSummary:
    """psi2 is the arithmetic mean of the per-carrier SNR.

    ``reference`` is the healthy mean psi2; the deviation is
    ``reference - psi2`` (zero when no reference is given).
    """
    psi2 = float(np.mean(trace.snr_db))
    dev = 0.0 if reference is None else float(reference) - psi2
    return SnrSummary(psi2, dev, trace.instant_id, trace.end_tag)


def derive_snr_thresholds(labeled: Mapping, position: float = 0.5) -> ThresholdPair:
    """Same midpoint rule as the CFR modality, on healthy-mean-minus-psi2.

    Values may be plain floats or :class:`SnrSummary` objects.
    """
    clean = {k: [v.psi2 if isinstance(v, SnrSummary) else float(v) for v in np.atleast_1d(vals)]
             for k, vals in labeled.items()}
    return derive_thresholds(clean, sign=-1, position=position)


def classify_snr(summary: SnrSummary | float, th: ThresholdPair) -> tuple[CableState, int]:
    psi = summary.psi2 if isinstance(summary, SnrSummary) else float(summary)
    state = th.classify(psi)
    return state, int(state == CableState.F_l)


def _cell(row: dict, key: str, rowno: int, kind=float):
    raw = row.get(key)
    if raw is None or raw == "":
        raise SnrParseError(f"empty cell in column {key!r}", rowno)
    try:
        val = kind(raw)
    except ValueError:
        raise SnrParseError(f"non-numeric cell {raw!r} in column {key!r}", rowno) from None
    if kind is float and not math.isfinite(val):
        raise SnrParseError(f"non-finite value in column {key!r}", rowno)
    return val


def parse_snr_csv(source) -> list[SnrTrace]:
    """Read a modem SNR export, one trace per (end, instant) pair.

    Row indices in errors count data rows from 1 (the header is row 0).
    Traces are returned in order of first appearance.
    """
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read()
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames or []
    missing = [c for c in CSV_COLUMNS if c not in header]
    if missing:
        raise SnrParseError(f"missing column(s): {', '.join(missing)}", 0)

    groups: dict[tuple[str, int], dict] = {}
    for rowno, row in enumerate(reader, start=1):
        end = (row.get("end") or "").strip()
        if end not in END_TAGS:
            raise SnrParseError(f"end must be near or far, got {end!r}", rowno)
        f = _cell(row, "carrier_hz", rowno)
        s = _cell(row, "snr_db", rowno)
        inst = _cell(row, "instant", rowno, int)
        load_raw = row.get("load_w")
        load = None if load_raw in ("", "none", None) else _cell(row, "load_w", rowno)
        g = groups.setdefault((end, inst), {"f": [], "s": [], "load": load, "row": rowno})
        g["f"].append(f)
        g["s"].append(s)

    traces = []
    for (end, inst), g in groups.items():
        try:
            traces.append(SnrTrace(np.array(g["f"]), np.array(g["s"]), end, inst, g["load"]))
        except ValidationError as exc:
            raise SnrParseError(f"trace ({end}, {inst}): {exc}", g["row"]) from None
    return traces


def format_snr_csv(traces: Iterable[SnrTrace]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for t in traces:
        load = "none" if t.load_w is None else repr(float(t.load_w))
        for f, s in zip(t.carrier_grid_hz, t.snr_db):
            w.writerow((repr(float(f)), repr(float(s)), t.end_tag, t.instant_id, load))
    return out.getvalue()


def write_snr_csv(traces: Iterable[SnrTrace], path) -> Path:
    path = Path(path)
    path.write_text(format_snr_csv(traces), encoding="utf-8")
    return path
