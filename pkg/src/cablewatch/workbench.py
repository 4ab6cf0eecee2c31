"""Pipeline orchestration behind the command-line verbs.

Directory layout under an output root::

    dataset/manifest.json            ground truth, hashes, file index
    dataset/omtdr/probe.cwf          probe symbol
    dataset/omtdr/baseline_<W>w.cwf  healthy echo per scheduled load
    dataset/omtdr/echo_<id>.cwf      one echo per instant (.csv when requested)
    dataset/sparam/instant_<id>.s2p  one sweep per instant
    dataset/snr/snr_traces.csv       near and far traces for every instant
    calibration.json                 thresholds, confusion models, weights
    assessment.json                  health report
    monitor.jsonl                    append-only monitoring records
    report/*.csv                     plot-ready tables
"""
from __future__ import annotations

import csv
import fcntl
import hashlib
import io
import json
import os
import time
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .channel import CableState, LoadSpec, ValidationError
from .fusion import (METHODS, ConfusionModel, Priors, TrustWeights, case_trace,
                     compute_health_index, flags_from_verdicts, get_profile, likelihood_matrix,
                     trust_weights)
from .instruments import (capture_echo, instrument_rng, measure_snr, measure_sparams,
                          omtdr_evidence, reflectogram_of)
from .reflectometry import Reflectogram, baseline_difference, correlate
from .scenario import FORMAT_VERSION, CableScenario, canonical_json
from .snr import parse_snr_csv, summarize_snr, write_snr_csv
from .sparam import average_cfr, cfr_from_sparams, parse_touchstone, write_touchstone
from .thresholds import (CalibrationError, ThresholdPair, class_means, classify_values,
                         derive_thresholds)
from .waveio import Waveform, read_binary, read_csv, write_binary, write_csv

HI_BANDS = ((80.0, 0), (50.0, 1), (float("-inf"), 2))


class UsageError(ValueError):
    pass


class VersionError(ValueError):
    pass


class DataError(ValueError):
    pass


def exit_code_for_hi(hi: float) -> int:
    """0 when HI >= 80, 1 when 50 <= HI < 80, 2 below 50."""
    for lower, code in HI_BANDS:
        if hi >= lower:
            return code
    return 2


def write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(obj), encoding="utf-8")
    return path


def _load_key(w: float) -> str:
    return f"{float(w):g}"


# ---------------------------------------------------------------- simulate

def draw_instants(scenario: CableScenario) -> list[dict]:
    n = max(scenario.run.counts)
    rng = instrument_rng(scenario.seed, 0, "draw")
    states = rng.choice(3, size=n, p=np.asarray(scenario.mix, dtype=float))
    loads = rng.choice(np.asarray(scenario.load_schedule_w, dtype=float), size=n)
    return [{"instant_id": i, "state": CableState(int(s)).code, "load_w": float(w)}
            for i, (s, w) in enumerate(zip(states, loads))]


WAVEFORM_FORMATS = {"binary": ".cwf", "csv": ".csv"}


def _write_wave(path: Path, wave: Waveform) -> None:
    if path.suffix == ".csv":
        write_csv(path, wave.samples)
    else:
        write_binary(path, wave)


def _read_wave(path: Path) -> np.ndarray:
    return read_csv(path) if path.suffix == ".csv" else read_binary(path).samples


def simulate(scenario: CableScenario, dataset_dir, waveform_format: str = "binary") -> dict:
    """Write a labeled dataset and return its manifest.

    Waveforms go to ``.cwf`` binary files or, with ``waveform_format="csv"``,
    to ``sample_index,value`` tables; the sample rate then lives only in the
    scenario.
    """
    if waveform_format not in WAVEFORM_FORMATS:
        raise UsageError(f"unknown waveform format {waveform_format!r}")
    ext = WAVEFORM_FORMATS[waveform_format]
    root = Path(dataset_dir)
    for sub in ("omtdr", "sparam", "snr"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    setup, cable, seed = scenario.setup, scenario.cable, scenario.seed
    n_sp, n_snr, n_om = scenario.run.counts
    rate, over = setup.omtdr.effective_rate_hz, setup.omtdr.oversampling

    baselines = {}
    probe = None
    for k, w in enumerate(sorted(set(scenario.load_schedule_w))):
        probe, echo = capture_echo(setup, cable, [], LoadSpec(w), seed, k, "baseline")
        name = f"omtdr/baseline_{_load_key(w)}w{ext}"
        _write_wave(root / name, Waveform(echo, rate, over))
        baselines[_load_key(w)] = name
    _write_wave(root / f"omtdr/probe{ext}", Waveform(probe, rate, over))

    instants = draw_instants(scenario)
    traces = []
    for inst in instants:
        i = inst["instant_id"]
        state = CableState.parse(inst["state"])
        faults = scenario.state_faults(state)
        inst["extent_m"] = scenario.calibration_extents_m[int(state)]
        files = {}
        if i < n_om:
            _, echo = capture_echo(setup, cable, faults, LoadSpec(inst["load_w"]), seed, i)
            files["omtdr"] = f"omtdr/echo_{i:05d}{ext}"
            _write_wave(root / files["omtdr"], Waveform(echo, rate, over))
        if i < n_sp:
            rec = measure_sparams(setup, cable, faults, seed, i, inst["load_w"])
            files["sparam"] = f"sparam/instant_{i:05d}.s2p"
            write_touchstone(rec, root / files["sparam"])
        if i < n_snr:
            traces.extend(measure_snr(setup, cable, faults, seed, i, inst["load_w"]))
            files["snr"] = "snr/snr_traces.csv"
        inst["files"] = files
    write_snr_csv(traces, root / "snr/snr_traces.csv")

    manifest = {
        "format_version": FORMAT_VERSION,
        "config_hash": scenario.config_hash(),
        "dataset_id": hashlib.sha256(canonical_json(scenario.to_dict()).encode()).hexdigest()[:16],
        "scenario": scenario.to_dict(),
        "probe": f"omtdr/probe{ext}",
        "baselines": baselines,
        "state_counts": {s.code: sum(1 for x in instants if x["state"] == s.code)
                         for s in CableState},
        "instants": instants,
    }
    write_json(root / "manifest.json", manifest)
    return manifest


# ---------------------------------------------------------------- dataset access

@dataclass
class Dataset:
    root: Path
    manifest: dict

    @classmethod
    def open(cls, root) -> "Dataset":
        root = Path(root)
        path = root / "manifest.json"
        if not path.is_file():
            raise UsageError(f"{root} is not a dataset (no manifest.json)")
        try:
            manifest = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON at line {exc.lineno}") from None
        if manifest.get("format_version") != FORMAT_VERSION:
            raise VersionError(f"{path}: unsupported format_version {manifest.get('format_version')}")
        return cls(root, manifest)

    @cached_property
    def scenario(self) -> CableScenario:
        return CableScenario.from_dict(self.manifest["scenario"])

    @property
    def config_hash(self) -> str:
        return self.manifest["config_hash"]

    @property
    def dataset_id(self) -> str:
        return self.manifest["dataset_id"]

    @property
    def instants(self) -> list[dict]:
        return self.manifest["instants"]

    def states(self) -> dict[int, CableState]:
        return {x["instant_id"]: CableState.parse(x["state"]) for x in self.instants}

    @cached_property
    def probe(self) -> np.ndarray:
        return _read_wave(self.root / self.manifest["probe"])

    def reflectogram(self, relpath: str) -> Reflectogram:
        echo = _read_wave(self.root / relpath)
        return reflectogram_of(self.scenario.setup, self.probe, echo, self.scenario.cable)

    @cached_property
    def baselines(self) -> dict[str, Reflectogram]:
        return {k: self.reflectogram(v) for k, v in self.manifest["baselines"].items()}

    @cached_property
    def snr_traces(self) -> dict[int, list]:
        out: dict[int, list] = {}
        path = self.root / "snr/snr_traces.csv"
        if path.is_file():
            for t in parse_snr_csv(path):
                out.setdefault(t.instant_id, []).append(t)
        return out

    def sparam_record(self, instant: dict):
        return parse_touchstone(self.root / instant["files"]["sparam"])

    @cached_property
    def evidence(self) -> dict[str, dict[int, float]]:
        """Per-method summary value for every measured instant."""
        ev = {m: {} for m in METHODS}
        for inst in self.instants:
            i, files = inst["instant_id"], inst["files"]
            if "sparam" in files:
                ev["sparam"][i] = cfr_from_sparams(self.sparam_record(inst)).psi1
            if "snr" in files:
                ev["snr"][i] = float(np.mean([summarize_snr(t).psi2 for t in self.snr_traces[i]]))
            if "omtdr" in files:
                r = self.reflectogram(files["omtdr"])
                base = self.baselines[_load_key(inst["load_w"])]
                ev["omtdr"][i] = omtdr_evidence(self.scenario.setup, r, base)[1]
        return ev


# ---------------------------------------------------------------- calibrate

def stratified_split(states: dict[int, CableState], fraction: float, seed: int) -> tuple[list, list]:
    """Per-state random split of instant ids; every present state keeps at least
    one calibration instant and, when it has two or more, one held-out instant."""
    rng = instrument_rng(seed, 1, "draw")
    cal, hold = [], []
    for s in CableState:
        ids = sorted(i for i, st in states.items() if st == s)
        if not ids:
            continue
        ids = [ids[k] for k in rng.permutation(len(ids))]
        k = max(1, int(round(fraction * len(ids))))
        if len(ids) >= 2:
            k = min(k, len(ids) - 1)
        cal += ids[:k]
        hold += ids[k:]
    return sorted(cal), sorted(hold)


def method_thresholds(method: str, labeled: dict, position: float) -> ThresholdPair:
    """CFR and SNR summaries fall with damage; the OMTDR peak grows and is
    thresholded on its absolute magnitude."""
    if method == "omtdr":
        th = derive_thresholds(labeled, sign=1, position=position)
        return ThresholdPair(th.th_s + th.reference, th.th_l + th.reference, 0.0, 1)
    return derive_thresholds(labeled, sign=-1, position=position)


def _by_state(values: dict[int, float], states: dict[int, CableState], ids) -> dict:
    out = {s: [] for s in CableState}
    for i in ids:
        if i in values:
            out[states[i]].append(values[i])
    return out


def calibrate(ds: Dataset, profile_name: str | None = None, split: float | None = None,
              seed: int | None = None) -> dict:
    scen = ds.scenario
    profile = get_profile(profile_name or scen.run.profile)
    fraction = scen.run.split if split is None else split
    states = ds.states()
    missing = [s.code for s in CableState if s not in states.values()]
    if missing:
        raise CalibrationError(f"dataset lacks state(s) {', '.join(missing)}")
    split_seed = scen.seed if seed is None else seed
    cal_ids, hold_ids = stratified_split(states, fraction, split_seed)
    priors = Priors.from_sequence(scen.run.priors)
    thresholds, models, means = {}, {}, {}
    for m in METHODS:
        labeled = _by_state(ds.evidence[m], states, cal_ids)
        for s, v in labeled.items():
            if not v:
                raise CalibrationError(f"{m}: no calibration measurements for state {s.code}")
        try:
            th = method_thresholds(m, labeled, profile.threshold_position)
        except CalibrationError as exc:
            raise CalibrationError(f"{m}: {exc}") from None
        lik, n = likelihood_matrix(labeled, th)
        means[m] = {s.code: v for s, v in class_means(labeled).items()}
        thresholds[m] = th
        models[m] = ConfusionModel(m, lik, priors, n)
    weights = trust_weights(models, profile)
    return {
        "format_version": FORMAT_VERSION,
        "config_hash": ds.config_hash,
        "dataset_id": ds.dataset_id,
        "profile": profile.name,
        "flag_rule": scen.run.flag_rule,
        "split": {"fraction": fraction, "calibration": cal_ids, "holdout": hold_ids},
        "seed": split_seed,
        "thresholds": {m: {**thresholds[m].to_dict(), "class_means": means[m]} for m in METHODS},
        "models": {m: models[m].to_dict() for m in METHODS},
        "weights": {"w1": weights.w1, "w2": weights.w2, "w3": weights.w3,
                    "alpha": weights.alpha, "beta": weights.beta, "gamma": weights.gamma},
    }


@dataclass(frozen=True)
class Calibration:
    raw: dict

    @classmethod
    def load(cls, path) -> "Calibration":
        path = Path(path)
        if not path.is_file():
            raise UsageError(f"calibration artifact {path} not found")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON at line {exc.lineno}") from None
        if raw.get("format_version") != FORMAT_VERSION:
            raise VersionError(f"{path}: unsupported format_version {raw.get('format_version')}")
        return cls(raw)

    @property
    def thresholds(self) -> dict[str, ThresholdPair]:
        return {m: ThresholdPair.from_dict(self.raw["thresholds"][m]) for m in METHODS}

    @property
    def models(self) -> dict[str, ConfusionModel]:
        return {m: ConfusionModel.from_dict(self.raw["models"][m]) for m in METHODS}

    @property
    def weights(self) -> TrustWeights:
        return TrustWeights(**self.raw["weights"])

    def check_compatible(self, config_hash: str) -> None:
        if self.raw["config_hash"] != config_hash:
            raise VersionError(
                f"calibration was made for configuration {self.raw['config_hash']}, "
                f"data uses {config_hash}")


# ---------------------------------------------------------------- assess

def verdicts_for(values: dict[int, float], th: ThresholdPair, ids) -> tuple[list, np.ndarray]:
    keep = [i for i in ids if i in values]
    return keep, classify_values([values[i] for i in keep], th) if keep else np.zeros(0, int)


def assess(ds: Dataset, cal: Calibration) -> dict:
    cal.check_compatible(ds.config_hash)
    same = cal.raw["dataset_id"] == ds.dataset_id
    ids = cal.raw["split"]["holdout"] if same else sorted(ds.states())
    states = ds.states()
    ths = cal.thresholds
    flags, per_method = [], {}
    for m in METHODS:
        keep, v = verdicts_for(ds.evidence[m], ths[m], ids)
        if not keep:
            raise UsageError(f"no {m} measurements to assess")
        truth = np.array([int(states[i]) for i in keep])
        acc = {}
        for s in CableState:
            sel = truth == int(s)
            acc[s.code] = float(np.mean(v[sel] == int(s))) if sel.any() else None
        per_method[m] = {"n": len(keep),
                         "verdict_counts": {s.code: int(np.sum(v == int(s))) for s in CableState},
                         "accuracy_by_state": acc}
        flags.append(flags_from_verdicts(v, cal.raw["flag_rule"]))
    rep = compute_health_index(flags, cal.weights)
    out = rep.to_dict()
    out.update({"dataset_id": ds.dataset_id, "scope": "holdout" if same else "all",
                "instants": ids, "methods": per_method,
                "exit_code": exit_code_for_hi(rep.hi)})
    return out


# ---------------------------------------------------------------- monitor

MONITOR_KEYS = ("timestamp", "scenario_id", "seq", "hi", "hi_sparam", "hi_snr", "hi_omtdr",
                "verdict_counts")


def read_monitor_records(path) -> list[dict]:
    """Parse a monitor file; any malformed line is reported by number."""
    path = Path(path)
    if not path.exists():
        return []
    records = []
    last_ts: dict[str, float] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.endswith("\n"):
                raise DataError(f"{path}: line {lineno} is truncated")
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                raise DataError(f"{path}: line {lineno} is not valid JSON") from None
            if not isinstance(rec, dict) or any(k not in rec for k in MONITOR_KEYS):
                raise DataError(f"{path}: line {lineno} lacks required monitor fields")
            sid = rec["scenario_id"]
            if sid in last_ts and not rec["timestamp"] > last_ts[sid]:
                raise DataError(f"{path}: line {lineno} timestamp does not increase")
            last_ts[sid] = rec["timestamp"]
            records.append(rec)
    return records


def measure_snapshot(scen: CableScenario, cal: Calibration, seq: int) -> dict:
    """Measure the cable as currently described and score it."""
    setup, cable = scen.setup, scen.cable
    faults = list(scen.faults)
    n = scen.run.monitor_batch
    base_seed = scen.seed + 7919 * (seq + 1)
    schedule = sorted(set(scen.load_schedule_w))
    ths = cal.thresholds
    values = {m: [] for m in METHODS}
    baselines = {}
    for k in range(n):
        w = schedule[k % len(schedule)]
        if w not in baselines:
            probe, echo = capture_echo(setup, cable, [], LoadSpec(w), scen.seed,
                                       schedule.index(w), "baseline")
            baselines[w] = correlate(probe, echo, setup.omtdr, cable.velocity_factor)
        probe, echo = capture_echo(setup, cable, faults, LoadSpec(w), base_seed, k)
        r = correlate(probe, echo, setup.omtdr, cable.velocity_factor)
        values["omtdr"].append(omtdr_evidence(setup, r, baselines[w])[1])
        values["sparam"].append(cfr_from_sparams(measure_sparams(setup, cable, faults,
                                                                 base_seed, k)).psi1)
        values["snr"].append(float(np.mean([summarize_snr(t).psi2 for t in
                                            measure_snr(setup, cable, faults, base_seed, k)])))
    verdicts = {m: classify_values(values[m], ths[m]) for m in METHODS}
    rep = compute_health_index([flags_from_verdicts(verdicts[m], cal.raw["flag_rule"])
                                for m in METHODS], cal.weights)
    return {"hi": rep.hi, "hi_sparam": rep.hi_sparam, "hi_snr": rep.hi_snr,
            "hi_omtdr": rep.hi_omtdr,
            "verdict_counts": {m: [int(np.sum(verdicts[m] == s)) for s in range(3)]
                               for m in METHODS}}


def append_record(path, record: dict) -> None:
    """Append one line under an exclusive lock."""
    with open(path, "a", encoding="utf-8") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def monitor(config_path, cal: Calibration, records_path, iterations: int,
            interval_s: float = 0.0, load_scenario=None, clock=time.time,
            sleep=time.sleep) -> list[dict]:
    """Run ``iterations`` monitoring cycles, re-reading the scenario each cycle."""
    from .scenario import load_scenario as _default_loader

    loader = load_scenario or _default_loader
    if iterations < 1:
        raise UsageError("iterations must be >= 1")
    existing = read_monitor_records(records_path)
    new = []
    for it in range(iterations):
        if it and interval_s > 0:
            sleep(interval_s)
        scen = loader(config_path)
        cal.check_compatible(scen.config_hash())
        mine = [r for r in existing + new if r["scenario_id"] == scen.scenario_id]
        seq = mine[-1]["seq"] + 1 if mine else 0
        snap = measure_snapshot(scen, cal, seq)
        ts = float(clock())
        if mine and ts <= mine[-1]["timestamp"]:
            ts = float(np.nextafter(mine[-1]["timestamp"], np.inf))
        rec = {"timestamp": ts, "scenario_id": scen.scenario_id, "seq": seq, **snap}
        append_record(records_path, rec)
        new.append(rec)
    return new


# ---------------------------------------------------------------- report

def _csv_text(header, rows) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return out.getvalue()


def _write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_csv_text(header, rows), encoding="utf-8")
    return path


def report(ds: Dataset, cal: Calibration, out_dir, records=None, instant: int | None = None,
           trace_n: int = 40, trace_seed: int | None = None) -> list[Path]:
    """Plot-ready CSV tables; see the README for column meanings."""
    cal.check_compatible(ds.config_hash)
    out = Path(out_dir)
    written = []
    states = ds.states()
    by_id = {x["instant_id"]: x for x in ds.instants}

    om_ids = [x["instant_id"] for x in ds.instants if "omtdr" in x["files"]]
    if om_ids:
        if instant is None:
            ranked = sorted(om_ids, key=lambda i: (-int(states[i]), i))
            instant = ranked[0]
        if instant not in om_ids:
            raise UsageError(f"instant {instant} has no OMTDR capture")
        inst = by_id[instant]
        r = ds.reflectogram(inst["files"]["omtdr"])
        b = ds.baselines[_load_key(inst["load_w"])]
        diff = baseline_difference(r, b)
        rows = [(k, (k - r.tx_peak_index) * r.meters_per_sample, r.values[k], b.values[k], diff[k])
                for k in range(r.values.size)]
        written.append(_write_csv(out / "reflectogram.csv",
                                  ("sample_index", "distance_m", "magnitude",
                                   "baseline_magnitude", "residual_magnitude"), rows))

    present = [s for s in CableState if s in states.values()]
    snr_ids = sorted(ds.snr_traces)
    if snr_ids:
        grid = ds.snr_traces[snr_ids[0]][0].carrier_grid_hz
        cols = {}
        for s in present:
            ts = [t.snr_db for i in snr_ids if states[i] == s for t in ds.snr_traces[i]
                  if t.end_tag == "near"]
            if ts:
                cols[s] = np.mean(ts, axis=0)
        rows = [(grid[k], *[cols[s][k] for s in cols]) for k in range(grid.size)]
        written.append(_write_csv(out / "snr_spectrum.csv",
                                  ("carrier_hz", *[f"snr_db_{s.code}" for s in cols]), rows))

    sp = [x for x in ds.instants if "sparam" in x["files"]]
    if sp:
        cols, grid = {}, None
        for s in present:
            traces = [cfr_from_sparams(ds.sparam_record(x)) for x in sp
                      if states[x["instant_id"]] == s]
            if traces:
                avg = average_cfr(traces)
                grid = avg.freq_grid_hz
                cols[s] = 20 * np.log10(np.abs(avg.h))
        rows = [(grid[k], *[cols[s][k] for s in cols]) for k in range(grid.size)]
        written.append(_write_csv(out / "cfr_spectrum.csv",
                                  ("freq_hz", *[f"cfr_db_{s.code}" for s in cols]), rows))

    pools = {m: {s: [v for i, v in ds.evidence[m].items() if states[i] == s] for s in present}
             for m in METHODS}
    if len(present) == 3:
        trace = case_trace(pools, cal.thresholds, cal.models, get_profile(cal.raw["profile"]),
                           n=trace_n, seed=ds.scenario.seed if trace_seed is None else trace_seed,
                           rule=cal.raw["flag_rule"])
        keys = ("time_sample", "case", "hi_sparam", "hi_snr", "hi_omtdr", "hi_composite",
                "hi_groundtruth", "w1", "w2", "w3")
        written.append(_write_csv(out / "hi_trace.csv", keys,
                                  [[row[k] for k in keys] for row in trace]))

    if records:
        keys = ("seq", "timestamp", "scenario_id", "hi", "hi_sparam", "hi_snr", "hi_omtdr")
        written.append(_write_csv(out / "monitor_hi.csv", keys,
                                  [[float(r[k]) if k in ("timestamp",) else r[k] for k in keys]
                                   for r in records]))
    return written
