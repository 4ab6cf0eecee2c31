"""``cablewatch`` command line.

Exit codes: 0 success (``assess``: healthy band), 1 and 2 the degraded and
critical ``assess`` bands, 64 usage error, 65 malformed or incompatible
input, 66 calibration failure, 74 I/O error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from .channel import ValidationError
from .fusion import PROFILES
from .scenario import ConfigError, default_scenario, load_scenario
from .snr import SnrParseError
from .thresholds import CalibrationError
from .touchstone import TouchstoneError
from .waveio import WaveformFormatError
from . import workbench as wb

EX_USAGE, EX_DATAERR, EX_CALIBRATION, EX_IOERR = 64, 65, 66, 74


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EX_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    def add_globals(parser, default):
        parser.add_argument("--config", type=Path, default=default,
                            help="scenario JSON file (defaults to a built-in 70 m cable)")
        parser.add_argument("--seed", type=int, default=default, help="override the scenario seed")
        parser.add_argument("--out", type=Path, default=default,
                            help="output root (default: $CABLEWATCH_OUT, else ./cablewatch-out)")
        parser.add_argument("--profile", choices=sorted(PROFILES), default=default,
                            help="override the calibration profile")

    p = _Parser(prog="cablewatch", description="Cable fault diagnostics workbench.")
    add_globals(p, None)
    # global flags are accepted after the verb too
    common = argparse.ArgumentParser(add_help=False)
    add_globals(common, argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub_kw = {"parents": [common]}

    s = sub.add_parser("simulate", **sub_kw, help="write a labeled dataset")
    s.add_argument("--n", type=int, help="instants per method (overrides the config counts)")
    s.add_argument("--mix", type=float, nargs=3, metavar=("P_H", "P_FS", "P_FL"),
                   help="state mix for the drawn instants")
    s.add_argument("--dataset", type=Path, help="dataset directory (default: OUT/dataset)")
    s.add_argument("--waveform-format", choices=sorted(wb.WAVEFORM_FORMATS), default="binary",
                   help="echo waveform encoding (default: binary .cwf)")

    c = sub.add_parser("calibrate", **sub_kw, help="derive thresholds, confusion models and trust weights")
    c.add_argument("--dataset", type=Path, help="dataset directory (default: OUT/dataset)")
    c.add_argument("--split", type=float, help="calibration fraction (default from config, 0.6)")

    a = sub.add_parser("assess", **sub_kw, help="score a dataset with a calibration")
    a.add_argument("--dataset", type=Path, help="dataset directory (default: OUT/dataset)")
    a.add_argument("--calibration", type=Path, help="artifact (default: OUT/calibration.json)")

    m = sub.add_parser("monitor", **sub_kw, help="periodically measure the configured cable")
    m.add_argument("--calibration", type=Path, help="artifact (default: OUT/calibration.json)")
    m.add_argument("--iterations", type=int, default=1)
    m.add_argument("--interval", type=float, default=0.0, help="seconds between iterations")
    m.add_argument("--records", type=Path, help="record file (default: OUT/monitor.jsonl)")

    r = sub.add_parser("report", **sub_kw, help="write plot-ready CSV tables")
    r.add_argument("--dataset", type=Path, help="dataset directory (default: OUT/dataset)")
    r.add_argument("--calibration", type=Path, help="artifact (default: OUT/calibration.json)")
    r.add_argument("--records", type=Path, help="monitor records to tabulate")
    r.add_argument("--instant", type=int, help="instant whose reflectogram is exported")
    return p


def output_root(args) -> Path:
    if args.out is not None:
        return args.out
    env = os.environ.get("CABLEWATCH_OUT")
    return Path(env) if env else Path("cablewatch-out")


def _scenario(args):
    scen = load_scenario(args.config) if args.config else default_scenario()
    if args.seed is not None:
        scen = replace(scen, seed=args.seed)
    if args.profile is not None:
        scen = replace(scen, run=replace(scen.run, profile=args.profile))
    return scen


def _run(args) -> int:
    out = output_root(args)
    dataset = getattr(args, "dataset", None) or out / "dataset"
    cal_path = getattr(args, "calibration", None) or out / "calibration.json"

    if args.command == "simulate":
        scen = _scenario(args)
        if args.n is not None:
            scen = replace(scen, run=replace(scen.run, counts=(args.n,) * 3))
        if args.mix is not None:
            scen = replace(scen, mix=tuple(args.mix))
        man = wb.simulate(scen, dataset, args.waveform_format)
        counts = ", ".join(f"{k}={v}" for k, v in man["state_counts"].items())
        print(f"dataset {man['dataset_id']} written to {dataset} ({counts})")
        return 0

    if args.command == "calibrate":
        ds = wb.Dataset.open(dataset)
        art = wb.calibrate(ds, args.profile, args.split, args.seed)
        wb.write_json(cal_path, art)
        w = art["weights"]
        print(f"profile {art['profile']}: W1 (S-parameter) = {w['w1']:.4f}, "
              f"W2 (SNR) = {w['w2']:.4f}, W3 (OMTDR) = {w['w3']:.4f}")
        print(f"calibration written to {cal_path}")
        return 0

    if args.command == "assess":
        ds = wb.Dataset.open(dataset)
        rep = wb.assess(ds, wb.Calibration.load(cal_path))
        wb.write_json(out / "assessment.json", rep)
        print(f"HI = {rep['hi']:.2f} (S-parameter {rep['hi_sparam']:.2f}, SNR {rep['hi_snr']:.2f}, "
              f"OMTDR {rep['hi_omtdr']:.2f}) over {rep['scope']} instants")
        return rep["exit_code"]

    if args.command == "monitor":
        if args.config is None:
            raise wb.UsageError("monitor needs --config so scenario changes can be picked up")
        cal = wb.Calibration.load(cal_path)
        records = args.records or out / "monitor.jsonl"
        records.parent.mkdir(parents=True, exist_ok=True)

        def loader(path):
            scen = load_scenario(path)
            return replace(scen, seed=args.seed) if args.seed is not None else scen

        for rec in wb.monitor(args.config, cal, records, args.iterations, args.interval, loader):
            print(f"[{rec['seq']}] {rec['scenario_id']}: HI = {rec['hi']:.2f}")
        return 0

    if args.command == "report":
        ds = wb.Dataset.open(dataset)
        cal = wb.Calibration.load(cal_path)
        recs = wb.read_monitor_records(args.records) if args.records else None
        for p in wb.report(ds, cal, out / "report", recs, args.instant):
            print(p)
        return 0
    raise wb.UsageError(f"unknown command {args.command}")  # pragma: no cover


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except wb.UsageError as exc:
        print(f"cablewatch: {exc}", file=sys.stderr)
        return EX_USAGE
    except CalibrationError as exc:
        print(f"cablewatch: calibration failed: {exc}", file=sys.stderr)
        return EX_CALIBRATION
    except (wb.VersionError, wb.DataError, ConfigError, ValidationError, TouchstoneError,
            SnrParseError, WaveformFormatError, json.JSONDecodeError) as exc:
        print(f"cablewatch: {exc}", file=sys.stderr)
        return EX_DATAERR
    except OSError as exc:
        print(f"cablewatch: I/O error: {exc}", file=sys.stderr)
        return EX_IOERR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
