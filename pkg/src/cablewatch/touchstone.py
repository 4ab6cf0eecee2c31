"""Two-port Touchstone (v1) reader and writer."""
from __future__ import annotations

import io
import os
from pathlib import Path

import numpy as np

FREQ_UNITS = {"HZ": 1.0, "KHZ": 1e3, "MHZ": 1e6, "GHZ": 1e9}
FORMATS = ("RI", "MA", "DB")


class TouchstoneError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _pairs_to_complex(a: np.ndarray, b: np.ndarray, fmt: str) -> np.ndarray:
    if fmt == "RI":
        return a + 1j * b
    mag = a if fmt == "MA" else 10 ** (a / 20)
    return mag * np.exp(1j * np.deg2rad(b))


def read_touchstone(source) -> dict:
    """Parse a two-port Touchstone file.

    Returns a dict with ``freq_hz``, ``s`` (n, 2, 2) complex, ``z_ref`` and the
    ``comments`` lines.  ``source`` is a path or an open text stream.
    """
    if isinstance(source, (str, os.PathLike)):
        name = str(source)
        if Path(name).suffix.lower() not in (".s2p", ""):
            raise TouchstoneError(f"expected a two-port .s2p file, got {Path(name).suffix}")
        with open(source, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    else:
        lines = source.read().splitlines()

    unit, param, fmt, z_ref = "GHZ", "S", "MA", 50.0
    option_seen = False
    comments: list[str] = []
    rows: list[tuple[int, list[float]]] = []
    pending: list[float] = []
    pending_line = None

    for lineno, raw in enumerate(lines, start=1):
        text, _, comment = raw.partition("!")
        if comment and not text.strip():
            comments.append(comment.strip())
        text = text.strip()
        if not text:
            continue
        if text.startswith("["):
            raise TouchstoneError("Touchstone v2 keywords are not supported", lineno)
        if text.startswith("#"):
            if option_seen:
                raise TouchstoneError("duplicate option line", lineno)
            option_seen = True
            tokens = text[1:].upper().split()
            i = 0
            while i < len(tokens):
                tok = tokens[i]
                if tok in FREQ_UNITS:
                    unit = tok
                elif tok in FORMATS:
                    fmt = tok
                elif tok in ("S", "Y", "Z", "H", "G"):
                    param = tok
                elif tok == "R":
                    try:
                        z_ref = float(tokens[i + 1])
                    except (IndexError, ValueError):
                        raise TouchstoneError("option line: R must be followed by a number",
                                              lineno) from None
                    i += 1
                else:
                    raise TouchstoneError(f"unknown option {tok!r}", lineno)
                i += 1
            if param != "S":
                raise TouchstoneError(f"only S parameters are supported, got {param}", lineno)
            continue
        if not option_seen:
            raise TouchstoneError("data before option line", lineno)
        try:
            values = [float(t) for t in text.split()]
        except ValueError:
            raise TouchstoneError(f"non-numeric data {text!r}", lineno) from None
        if pending_line is None:
            pending_line = lineno
        pending.extend(values)
        if len(pending) == 9:
            rows.append((pending_line, pending))
            pending, pending_line = [], None
        elif len(pending) > 9:
            raise TouchstoneError(
                f"{len(pending)} values for one frequency; a two-port row holds 9", pending_line)

    if pending:
        raise TouchstoneError(
            f"incomplete data row ({len(pending)} of 9 values); wrong port count?", pending_line)
    if not option_seen:
        raise TouchstoneError("missing option line")
    if not rows:
        raise TouchstoneError("no data rows")

    data = np.array([r for _, r in rows], dtype=float)
    freq = data[:, 0] * FREQ_UNITS[unit]
    for k in range(1, len(rows)):
        if not freq[k] > freq[k - 1]:
            raise TouchstoneError("frequencies must be strictly increasing", rows[k][0])
    s = np.empty((len(rows), 2, 2), dtype=complex)
    # v1 two-port column order: S11 S21 S12 S22
    s[:, 0, 0] = _pairs_to_complex(data[:, 1], data[:, 2], fmt)
    s[:, 1, 0] = _pairs_to_complex(data[:, 3], data[:, 4], fmt)
    s[:, 0, 1] = _pairs_to_complex(data[:, 5], data[:, 6], fmt)
    s[:, 1, 1] = _pairs_to_complex(data[:, 7], data[:, 8], fmt)
    return {"freq_hz": freq, "s": s, "z_ref": z_ref, "comments": comments}


def format_touchstone(freq_hz, s, z_ref: float = 50.0, fmt: str = "RI",
                      comments=()) -> str:
    """Touchstone text in Hz; RI output round-trips exactly."""
    fmt = fmt.upper()
    if fmt not in FORMATS:
        raise TouchstoneError(f"unsupported format {fmt}")
    out = io.StringIO()
    for c in comments:
        out.write(f"! {c}\n")
    out.write(f"# HZ S {fmt} R {z_ref!r}\n")
    order = [(0, 0), (1, 0), (0, 1), (1, 1)]
    for k, f in enumerate(np.asarray(freq_hz, dtype=float)):
        parts = [repr(float(f))]
        for i, j in order:
            z = complex(s[k, i, j])
            if fmt == "RI":
                a, b = z.real, z.imag
            else:
                mag = abs(z)
                a = mag if fmt == "MA" else 20 * np.log10(mag)
                b = np.rad2deg(np.angle(z))
            parts += [repr(float(a)), repr(float(b))]
        out.write(" ".join(parts) + "\n")
    return out.getvalue()
