"""Waveform files.

Two encodings:

* CSV with columns ``sample_index,value`` (values written with ``repr`` so
  they read back bit-identically);
* a small binary container: the 8-byte magic ``CWWAVE01``, then
  little-endian ``float64 sample_rate_hz``, ``uint32 oversampling``,
  ``uint64 length``, followed by ``length`` little-endian float64 samples.
"""
from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"CWWAVE01"
_HEADER = struct.Struct("<8sdIQ")


class WaveformFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate_hz: float
    oversampling: int = 1


def write_binary(path, wave: Waveform) -> Path:
    data = np.ascontiguousarray(wave.samples, dtype="<f8")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, float(wave.sample_rate_hz), int(wave.oversampling), data.size))
        fh.write(data.tobytes())
    return path


def read_binary(path) -> Waveform:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise WaveformFormatError(f"{path}: truncated header")
    magic, rate, over, n = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise WaveformFormatError(f"{path}: bad magic {magic!r}")
    body = raw[_HEADER.size:]
    if len(body) != 8 * n:
        raise WaveformFormatError(f"{path}: header says {n} samples, body holds {len(body) / 8:g}")
    return Waveform(np.frombuffer(body, dtype="<f8").astype(float), rate, over)


def format_csv(samples) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(("sample_index", "value"))
    for i, v in enumerate(np.asarray(samples, dtype=float)):
        w.writerow((i, repr(float(v))))
    return out.getvalue()


def write_csv(path, samples) -> Path:
    path = Path(path)
    path.write_text(format_csv(samples), encoding="utf-8")
    return path


def read_csv(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["sample_index", "value"]:
            raise WaveformFormatError(f"{path}: expected header sample_index,value")
        vals = []
        for k, row in enumerate(reader, start=1):
            try:
                idx, v = int(row[0]), float(row[1])
            except (IndexError, ValueError):
                raise WaveformFormatError(f"{path}: row {k} is malformed") from None
            if idx != k - 1:
                raise WaveformFormatError(f"{path}: row {k} has sample_index {idx}, expected {k - 1}")
            vals.append(v)
    return np.array(vals, dtype=float)
