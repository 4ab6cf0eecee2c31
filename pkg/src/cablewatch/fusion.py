"""Bayesian fusion of the three fault detectors into a cable health index.

Per detector we estimate the likelihood matrix ``P(Y=y | S=s)`` by counting
threshold verdicts on measurements of known cable states, invert it with
priors into ``P(S=s | Y=y)``, and condense the diagonal into a trust weight.
The health index is one minus the weight-normalized large-fault flag rate.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .channel import CableState, ValidationError
from .thresholds import CalibrationError, ThresholdPair, classify_values

METHODS = ("sparam", "snr", "omtdr")


class UndefinedPosteriorError(CalibrationError):
    """A posterior column was requested for a verdict with zero marginal."""


@dataclass(frozen=True)
class Priors:
    p_h: float = 0.9
    p_fs: float = 0.08
    p_fl: float = 0.02

    def __post_init__(self):
        v = self.as_array()
        if np.any(v < 0) or np.any(v > 1):
            raise ValidationError(f"priors must lie in [0, 1], got {v.tolist()}")
        if abs(v.sum() - 1.0) > 1e-12:
            raise ValidationError(f"priors must sum to 1, got {v.sum()!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.p_h, self.p_fs, self.p_fl], dtype=float)

    @classmethod
    def from_sequence(cls, seq) -> "Priors":
        a, b, c = (float(x) for x in seq)
        return cls(a, b, c)


@dataclass(frozen=True)
class Profile:
    """End-user trade-off between detection and false positives.

    ``alpha``, ``beta`` and ``gamma`` weight the large-fault, small-fault and
    healthy posteriors in the trust weight; ``threshold_position`` places the
    class thresholds between class means (0.5 = midpoint).
    """

    name: str
    alpha: float
    beta: float
    gamma: float
    threshold_position: float = 0.5

    def __post_init__(self):
        ab = np.array([self.alpha, self.beta, self.gamma])
        if np.any(ab < 0) or abs(ab.sum() - 1.0) > 1e-9:
            raise ValidationError("alpha, beta, gamma must be non-negative and sum to 1")


PROFILES = {
    "detect-first": Profile("detect-first", 0.5, 0.3, 0.2, 0.5),
    "low-fp": Profile("low-fp", 0.2, 0.3, 0.5, 0.65),
}


def get_profile(name: str) -> Profile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ValidationError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None


def estimate_conditionals(psi_values: Sequence[float], th: ThresholdPair,
                          state: CableState | None = None) -> np.ndarray:
    """Likelihood row ``P(Y | S=state)`` as verdict counts over ``N``, ordered (H, F_s, F_l)."""
    psi = np.asarray(psi_values, dtype=float)
    if psi.size == 0:
        raise ValidationError("need at least one psi value")
    counts = np.bincount(classify_values(psi, th), minlength=3)
    return counts / psi.size


def likelihood_matrix(psi_by_state: Mapping, th: ThresholdPair) -> tuple[np.ndarray, np.ndarray]:
    """Stack per-state rows; returns (likelihood 3x3, sample counts per state)."""
    rows, counts = [], []
    for state in CableState:
        vals = [v for k, v in psi_by_state.items() if CableState.parse(k) == state]
        if not vals or len(vals[0]) == 0:
            raise CalibrationError(f"no calibration measurements for state {state.code}")
        rows.append(estimate_conditionals(vals[0], th, state))
        counts.append(len(vals[0]))
    return np.vstack(rows), np.array(counts)


def marginal_and_posterior(likelihood, priors: Priors) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Marginal ``P(Y=y)``, posterior ``P(S=s | Y=y)`` (rows s, columns y), defined-column mask.

    Columns whose marginal is zero are left at zero and flagged undefined.
    """
    lik = np.asarray(likelihood, dtype=float)
    if lik.shape != (3, 3):
        raise ValidationError("likelihood must be 3x3")
    if np.any(lik < 0) or np.any(np.abs(lik.sum(axis=1) - 1) > 1e-12):
        raise ValidationError("likelihood rows must be probability vectors")
    prior = priors.as_array()
    joint = lik * prior[:, None]
    marginal = joint.sum(axis=0)
    defined = marginal > 0
    posterior = np.zeros((3, 3))
    posterior[:, defined] = joint[:, defined] / marginal[defined]
    return marginal, posterior, defined


@dataclass(frozen=True)
class ConfusionModel:
    method_id: str
    likelihood: np.ndarray
    priors: Priors
    n_samples: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=int))

    @property
    def _inverted(self):
        return marginal_and_posterior(self.likelihood, self.priors)

    @property
    def marginal(self) -> np.ndarray:
        return self._inverted[0]

    @property
    def posterior(self) -> np.ndarray:
        return self._inverted[1]

    @property
    def defined(self) -> np.ndarray:
        return self._inverted[2]

    def posterior_entry(self, s: CableState, y: CableState) -> float:
        _, post, defined = self._inverted
        if not defined[int(y)]:
            raise UndefinedPosteriorError(
                f"{self.method_id}: P(S | Y={CableState(y).code}) undefined, "
                "the detector never emitted that verdict")
        return float(post[int(s), int(y)])

    def with_priors(self, priors: Priors) -> "ConfusionModel":
        return ConfusionModel(self.method_id, self.likelihood, priors, self.n_samples)

    def to_dict(self) -> dict:
        marginal, post, defined = self._inverted
        return {
            "method_id": self.method_id,
            "likelihood": self.likelihood.tolist(),
            "priors": self.priors.as_array().tolist(),
            "marginal": marginal.tolist(),
            "posterior": [[post[s, y] if defined[y] else None for y in range(3)] for s in range(3)],
            "n_samples": [int(n) for n in self.n_samples],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ConfusionModel":
        return cls(d["method_id"], np.array(d["likelihood"], dtype=float),
                   Priors.from_sequence(d["priors"]), np.array(d.get("n_samples", [0, 0, 0])))


def compute_weight(model_or_posterior, alpha: float, beta: float, gamma: float,
                   defined: Sequence[bool] | None = None) -> float:
    """Trust weight from the posterior diagonal, mixed by (alpha, beta, gamma)."""
    coeffs = np.array([gamma, beta, alpha], dtype=float)  # state order H, F_s, F_l
    if np.any(coeffs < 0) or abs(coeffs.sum() - 1) > 1e-9:
        raise ValidationError("alpha, beta, gamma must be non-negative and sum to 1")
    if isinstance(model_or_posterior, ConfusionModel):
        diag = [model_or_posterior.posterior_entry(s, s) if coeffs[int(s)] else 0.0
                for s in CableState]
    else:
        post = np.asarray(model_or_posterior, dtype=float)
        ok = np.ones(3, dtype=bool) if defined is None else np.asarray(defined, dtype=bool)
        for s in CableState:
            if coeffs[int(s)] and not ok[int(s)]:
                raise UndefinedPosteriorError(
                    f"P(S={s.code} | Y={s.code}) undefined, the detector never emitted that verdict")
        diag = np.diag(post)
    # skip terms with zero coefficient so an undefined column they need is harmless
    return float(sum(c * d for c, d in zip(coeffs, diag) if c))


@dataclass(frozen=True)
class TrustWeights:
    w1: float
    w2: float
    w3: float
    alpha: float = 0.5
    beta: float = 0.3
    gamma: float = 0.2

    def __post_init__(self):
        w = self.as_array()
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValidationError("weights must be finite and non-negative")
        if not np.any(w > 0):
            raise ValidationError("at least one weight must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.w1, self.w2, self.w3], dtype=float)


def trust_weights(models: Mapping[str, ConfusionModel], profile: Profile) -> TrustWeights:
    w = [compute_weight(models[m], profile.alpha, profile.beta, profile.gamma) for m in METHODS]
    return TrustWeights(*w, alpha=profile.alpha, beta=profile.beta, gamma=profile.gamma)


def flags_from_verdicts(verdicts, rule: str = "large-only") -> np.ndarray:
    """Binary fault indicator per verdict.

    ``large-only`` flags only Large verdicts; ``fractional`` also counts a
    Small verdict as half a flag.
    """
    v = np.asarray([int(x) for x in verdicts], dtype=int)
    if rule == "large-only":
        return (v == 2).astype(float)
    if rule == "fractional":
        return np.where(v == 2, 1.0, np.where(v == 1, 0.5, 0.0))
    raise ValidationError(f"unknown flag rule {rule!r}")


def individual_hi(flags) -> float:
    f = np.asarray(flags, dtype=float)
    if f.size == 0:
        raise ValidationError("flag stream is empty")
    return float((1.0 - f.mean()) * 100.0)


@dataclass(frozen=True)
class HealthReport:
    cfd: float
    ncfd: float
    hi: float
    hi_sparam: float
    hi_snr: float
    hi_omtdr: float
    rates: tuple
    weights: TrustWeights
    counts: tuple = ()

    @property
    def individual(self) -> tuple[float, float, float]:
        return (self.hi_sparam, self.hi_snr, self.hi_omtdr)

    def to_dict(self) -> dict:
        return {
            "cfd": self.cfd, "ncfd": self.ncfd, "hi": self.hi,
            "hi_sparam": self.hi_sparam, "hi_snr": self.hi_snr, "hi_omtdr": self.hi_omtdr,
            "flag_rates": list(self.rates),
            "weights": {"w1": self.weights.w1, "w2": self.weights.w2, "w3": self.weights.w3,
                        "alpha": self.weights.alpha, "beta": self.weights.beta,
                        "gamma": self.weights.gamma},
            "counts": list(self.counts),
        }


def compute_health_index(flags: Sequence, weights: TrustWeights) -> HealthReport:
    """Composite and per-method health index from three flag streams (sparam, snr, omtdr)."""
    if len(flags) != 3:
        raise ValidationError("need exactly three flag streams")
    streams = [np.asarray(f, dtype=float) for f in flags]
    for name, s in zip(METHODS, streams):
        if s.size == 0:
            raise ValidationError(f"{name} flag stream is empty")
    w = weights.as_array()
    rates = np.array([s.mean() for s in streams])
    cfd = float(np.dot(w, rates))
    ncfd = cfd / float(w.sum())
    ncfd = min(max(ncfd, 0.0), 1.0)
    hi = (1.0 - ncfd) * 100.0
    ind = [individual_hi(s) for s in streams]
    return HealthReport(cfd, ncfd, hi, *ind, tuple(float(r) for r in rates), weights,
                        tuple(int(s.size) for s in streams))


@dataclass(frozen=True)
class CaseDraw:
    states: dict
    verdicts: dict
    flags: dict
    ground_truth_hi: float


def emulate_case(pools: Mapping[str, Mapping], mix, n: int, seed: int,
                 thresholds: Mapping[str, ThresholdPair], rule: str = "large-only") -> CaseDraw:
    """Emulate a cable whose state follows ``mix`` by resampling labeled measurements.

    For each method, ``n`` states are drawn from ``mix`` and a summary value
    is picked uniformly from that method's pool for the state, then classified.
    """
    p = np.asarray(mix, dtype=float)
    if p.shape != (3,) or np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
        raise ValidationError("mix must be three non-negative probabilities summing to 1")
    if n < 1:
        raise ValidationError("n must be positive")
    rng = np.random.default_rng(seed)
    states, verdicts, flags = {}, {}, {}
    for method in METHODS:
        pool = {CableState.parse(k): np.asarray(v, dtype=float) for k, v in pools[method].items()}
        for s in CableState:
            if p[int(s)] > 0 and (s not in pool or pool[s].size == 0):
                raise ValidationError(f"{method}: empty pool for state {s.code} with positive mix")
        st = rng.choice(3, size=n, p=p)
        vals = np.empty(n)
        for s in CableState:
            sel = st == int(s)
            if sel.any():
                vals[sel] = pool[s][rng.integers(0, pool[s].size, sel.sum())]
        v = classify_values(vals, thresholds[method])
        states[method], verdicts[method] = st, v
        flags[method] = flags_from_verdicts(v, rule)
    return CaseDraw(states, verdicts, flags, float((1.0 - p[2]) * 100.0))


EMULATED_CASES = (
    ("case1", (0.90, 0.08, 0.02), 0, 50),
    ("case2", (0.17, 0.58, 0.25), 50, 100),
    ("case3", (0.70, 0.25, 0.05), 100, 180),
)


def case_trace(pools: Mapping[str, Mapping], thresholds: Mapping[str, ThresholdPair],
               likelihoods: Mapping[str, ConfusionModel], profile: Profile, n: int = 40,
               seed: int = 0, cases=EMULATED_CASES, rule: str = "large-only",
               priors_from_mix: bool = True, fixed_weights: TrustWeights | None = None) -> list[dict]:
    """Health index per time sample over consecutive emulated cases.

    Each time sample is an independent assessment of ``n`` measurements per
    method.  Trust weights are recomputed per case with the case mix as prior
    unless ``fixed_weights`` is given.
    """
    rows = []
    for name, mix, start, stop in cases:
        if fixed_weights is not None:
            weights = fixed_weights
        else:
            pri = Priors.from_sequence(mix) if priors_from_mix else Priors()
            weights = trust_weights({m: likelihoods[m].with_priors(pri) for m in METHODS}, profile)
        for t in range(start, stop):
            draw = emulate_case(pools, mix, n, seed * 100003 + t, thresholds, rule)
            rep = compute_health_index([draw.flags[m] for m in METHODS], weights)
            rows.append({
                "time_sample": t, "case": name,
                "hi_sparam": rep.hi_sparam, "hi_snr": rep.hi_snr, "hi_omtdr": rep.hi_omtdr,
                "hi_composite": rep.hi, "hi_groundtruth": draw.ground_truth_hi,
                "w1": weights.w1, "w2": weights.w2, "w3": weights.w3,
            })
    return rows
