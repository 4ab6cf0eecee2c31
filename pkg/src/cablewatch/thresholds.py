"""Deviation scores and three-band thresholds shared by every modality.

Each modality reduces a measurement to a scalar summary.  The summary is
mapped to a deviation score where larger means worse, and two thresholds
``th_s < th_l`` split the score axis into Healthy / Small / Large.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from .channel import CableState, ValidationError


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class ThresholdPair:
    th_s: float
    th_l: float
    reference: float = 0.0
    sign: int = 1
    direction: str = "deviation-increasing"

    def __post_init__(self):
        if not (np.isfinite(self.th_s) and np.isfinite(self.th_l)):
            raise ValidationError("thresholds must be finite")
        if not self.th_s < self.th_l:
            raise ValidationError(f"need th_s < th_l, got {self.th_s} >= {self.th_l}")
        if self.sign not in (1, -1):
            raise ValidationError("sign must be +1 or -1")

    def deviation(self, value):
        """Deviation score of a raw summary value (array-friendly)."""
        return self.sign * (np.asarray(value, dtype=float) - self.reference)

    def classify(self, value) -> CableState:
        return classify_deviation(float(self.deviation(value)), self.th_s, self.th_l)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ThresholdPair":
        return cls(float(d["th_s"]), float(d["th_l"]), float(d.get("reference", 0.0)),
                   int(d.get("sign", 1)), d.get("direction", "deviation-increasing"))


def classify_deviation(score: float, th_s: float, th_l: float) -> CableState:
    """Large at or above ``th_l``, Small in ``[th_s, th_l)``, Healthy below."""
    if score >= th_l:
        return CableState.F_l
    if score >= th_s:
        return CableState.F_s
    return CableState.H


def class_means(labeled: Mapping) -> dict[CableState, float]:
    out = {}
    for state in CableState:
        vals = None
        for key, v in labeled.items():
            if CableState.parse(key) == state:
                vals = v
        if vals is None or len(np.atleast_1d(vals)) == 0:
            raise CalibrationError(f"no calibration values for state {state.code}")
        out[state] = float(np.mean(vals))
    return out


def derive_thresholds(labeled: Mapping, sign: int = -1, position: float = 0.5) -> ThresholdPair:
    """Thresholds between class means on the deviation axis.

    ``labeled`` maps each state to its calibration values.  With ``sign=-1``
    the healthy mean minus a value is the deviation (summaries that drop as
    the cable degrades); with ``sign=+1`` the value minus the healthy mean is.
    ``position`` places each threshold between adjacent class means; 0.5 is
    the midpoint.
    """
    if not 0 < position < 1:
        raise ValidationError("threshold position must lie in (0, 1)")
    means = class_means(labeled)
    ref = means[CableState.H]
    dev = {s: sign * (m - ref) for s, m in means.items()}
    d_h, d_s, d_l = dev[CableState.H], dev[CableState.F_s], dev[CableState.F_l]
    if not d_h < d_s < d_l:
        raise CalibrationError(
            f"class means not ordered on the deviation axis: H={d_h:.6g}, F_s={d_s:.6g}, F_l={d_l:.6g}")
    th_s = d_h + position * (d_s - d_h)
    th_l = d_s + position * (d_l - d_s)
    return ThresholdPair(th_s, th_l, ref, sign)


def classify_values(values: Sequence[float], th: ThresholdPair) -> np.ndarray:
    """Vectorized verdicts (ints 0/1/2) for raw summary values."""
    d = th.deviation(values)
    return np.where(d >= th.th_l, 2, np.where(d >= th.th_s, 1, 0))
