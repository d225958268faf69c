"""Command-line interface: ``srpsbl {simulate,localize,compare,grid-info}``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
Every JSON/CSV output is a pure function of the config and seed; wall-clock
timings go to a separate ``runtime.json``.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import JobConfig, apply_env, from_dict, load_config
from .errors import ConfigurationError, DomainError, NumericalFailure, WavFormatError
from .geometry import GridPoint, build_doa_grid
from .localize import assigned_localization_error, localization_error
from .pipeline import METHODS, Analysis
from .sim import Reverb, Scenario, SignalSpec, Source, close_pair_layout, synthesize
from .solvers import write_trace
from .srp import band_bins, map_to_csv
from .stft import load_wav, write_wav

log = logging.getLogger("srpsbl")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
_LAYOUT_STREAM = 7  # keeps layout draws independent of the signal streams


def build_scenario(cfg: JobConfig, seed, duration=None):
    v = cfg.values
    array = cfg.array()
    kind = v["scenario.signal"]
    if v["scenario.layout"] == "close_pair":
        rng = np.random.default_rng([seed, _LAYOUT_STREAM])
        sources = [Source(p, SignalSpec(kind)) for p in
                   close_pair_layout(rng, float(v["scenario.separation_deg"]))]
    else:
        sources = []
        for src in v["scenario.sources"]:
            path = src.get("path")
            if path is not None and not Path(path).is_absolute():
                path = str(cfg.base_dir / path)
            sources.append(Source(GridPoint(float(src["elevation"]), float(src["azimuth"])),
                                  SignalSpec(src.get("signal", kind), path,
                                             float(src.get("gain", 1.0)))))
    reverb = None
    if v["scenario.reverb"] == "exponential":
        reverb = Reverb(float(v["scenario.t60"]), float(v["scenario.echo_density"]),
                        float(v["scenario.drr_db"]))
    return Scenario(array, sources, float(duration or v["scenario.duration"]),
                    float(v["scenario.snr_db"]), reverb, int(seed),
                    float(v["scenario.sample_rate"]))


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _round(x, nd=6):
    return None if x is None or not np.isfinite(x) else round(float(x), nd)


def _input(cfg):
    """Recording and (for synthetic input) true directions."""
    if cfg["input.wav"] is not None:
        path = cfg.input_path("input.wav")
        if not path.is_file():
            raise cfg.error(f"input file {path} does not exist", "input.wav")
        try:
            return load_wav(path), None
        except (OSError, WavFormatError) as exc:
            raise cfg.error(f"cannot read {path}: {exc}", "input.wav") from exc
    scenario = build_scenario(cfg, cfg["seed"])
    return synthesize(scenario), scenario.truths


def cmd_simulate(cfg, args):
    scenario = build_scenario(cfg, cfg["seed"])
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    signal = synthesize(scenario)
    write_wav(out / "scenario.wav", signal)
    record = scenario.truth_record()
    record["array"] = scenario.array.name
    _write_json(out / "truth.json", record)
    print(f"wrote {out / 'scenario.wav'} ({signal.n_channels} ch, {signal.n_samples} samples) "
          f"and {out / 'truth.json'}")
    return EXIT_OK


def cmd_localize(cfg, args):
    method = cfg.method
    signal, truths = _input(cfg)
    array = cfg.array()
    settings = cfg.settings()
    t0 = time.perf_counter()
    result = Analysis(signal, array, settings).run(method, trace=args.trace)
    runtime_ms = (time.perf_counter() - t0) * 1e3
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    report = {
        "version": __version__,
        "method": method,
        "estimates": [e.to_record() for e in result.estimates],
        "shortfall": result.shortfall,
        "config": cfg.resolved(),
    }
    if result.iterations is not None:
        report["iterations"] = result.iterations
        report["converged"] = result.converged
    if truths is not None:
        report["truths"] = [{"elevation_deg": t.elevation, "azimuth_deg": t.azimuth} for t in truths]
        report["localization_error_deg"] = _round(localization_error(result.estimates, truths))
        report["assigned_localization_error_deg"] = _round(
            assigned_localization_error(result.estimates, truths))
    _write_json(out / "report.json", report)
    _write_json(out / "runtime.json", {"method": method, "runtime_ms": round(runtime_ms, 3)})
    map_to_csv(result.map_values, result.grid, out / "map.csv")
    if args.trace and result.extras.get("solver") is not None and result.extras["solver"].trace:
        write_trace(result.extras["solver"], out / "trace.csv")
    if args.plot:
        from .plotting import plot_map
        plot_map(result.map_values, result.grid, out / "map.png", truths or (),
                 result.estimates, title=f"{method} map")
    for e in result.estimates:
        print(f"#{e.rank}: elevation {e.elevation:g} deg, azimuth {e.azimuth:g} deg "
              f"(score {e.score:.4g})")
    if result.shortfall:
        print(f"warning: fewer than {settings.n_peaks} peaks found", file=sys.stderr)
    if truths is not None:
        print(f"localization error: {report['localization_error_deg']} deg")
    print(f"report: {out / 'report.json'}")
    return EXIT_OK


def _trial(cfg_values, base_dir, trial, methods, durations):
    """One compare trial: synthesize at the longest duration, then truncate."""
    cfg = JobConfig(cfg_values, base_dir)
    seed = cfg["seed"] + trial
    rows = []
    try:
        scenario = build_scenario(cfg, seed, max(durations))
        full = synthesize(scenario)
        array = cfg.array()
    except (ConfigurationError, DomainError, OSError, WavFormatError) as exc:
        return [_nan_row(m, d, trial, seed, exc) for d in durations for m in methods]
    settings = cfg.settings()
    for d in durations:
        try:
            analysis = Analysis(full.truncate(d), array, settings)
        except (ConfigurationError, DomainError, NumericalFailure, np.linalg.LinAlgError) as exc:
            rows += [_nan_row(m, d, trial, seed, exc) for m in methods]
            continue
        for m in methods:
            try:
                r = analysis.run(m)
            except (ConfigurationError, DomainError, NumericalFailure,
                    np.linalg.LinAlgError) as exc:
                rows.append(_nan_row(m, d, trial, seed, exc))
                continue
            rows.append({
                "method": m, "duration_s": d, "trial": trial, "seed": seed,
                "le_deg": localization_error(r.estimates, scenario.truths),
                "assigned_le_deg": assigned_localization_error(r.estimates, scenario.truths),
                "iterations": r.iterations, "converged": r.converged,
                "shortfall": r.shortfall, "error": "",
            })
    return rows


def _nan_row(method, duration, trial, seed, exc):
    return {"method": method, "duration_s": duration, "trial": trial, "seed": seed,
            "le_deg": float("nan"), "assigned_le_deg": float("nan"), "iterations": None,
            "converged": None, "shortfall": None, "error": f"{type(exc).__name__}: {exc}"}


def aggregate(rows, methods, durations):
    out = []
    for m in methods:
        for d in durations:
            sub = [r for r in rows if r["method"] == m and r["duration_s"] == d]
            le = np.array([r["le_deg"] for r in sub], dtype=float)
            ok = le[np.isfinite(le)]
            la = np.array([r["assigned_le_deg"] for r in sub], dtype=float)
            la = la[np.isfinite(la)]
            q1, med, q3 = np.percentile(ok, [25, 50, 75]) if ok.size else (np.nan,) * 3
            out.append({
                "method": m, "duration_s": d, "trials": len(sub), "failures": int(len(sub) - ok.size),
                "median_le_deg": med, "q1_le_deg": q1, "q3_le_deg": q3, "iqr_le_deg": q3 - q1,
                "median_assigned_le_deg": np.median(la) if la.size else np.nan,
            })
    return out


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, float):
        return "nan" if not np.isfinite(x) else f"{x:.6f}"
    return str(x)


def _write_csv(path, rows, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    Path(path).write_text(buf.getvalue())


TRIAL_COLUMNS = ["method", "duration_s", "trial", "seed", "le_deg", "assigned_le_deg",
                 "iterations", "converged", "shortfall", "error"]
SUMMARY_COLUMNS = ["method", "duration_s", "trials", "failures", "median_le_deg", "q1_le_deg",
                   "q3_le_deg", "iqr_le_deg", "median_assigned_le_deg"]


def run_compare(cfg, methods, durations, trials, jobs=1):
    """All trial rows (in trial order) and the aggregated table."""
    if trials < 1:
        raise ConfigurationError("trials must be at least 1", field="compare.trials")
    if cfg["input.wav"] is not None:
        raise ConfigurationError("compare needs a synthetic scenario, not input.wav",
                                 field="input.wav")
    args = [(cfg.values, cfg.base_dir, i, methods, durations) for i in range(trials)]
    if jobs > 1 and trials > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, trials)) as pool:
            results = list(pool.map(_trial, *zip(*args)))
    else:
        results = [_trial(*a) for a in args]
    rows = [r for chunk in results for r in chunk]
    return rows, aggregate(rows, methods, durations)


def cmd_compare(cfg, args):
    methods = cfg["compare.methods"] if args.methods is None else args.methods
    durations = ([float(d) for d in cfg["compare.durations"]] if args.durations is None
                 else args.durations)
    trials = cfg["compare.trials"] if args.trials is None else args.trials
    if not methods or not durations or not all(d > 0 for d in durations):
        raise ConfigurationError("need at least one method and positive durations",
                                 field="compare.durations")
    for m in methods:
        if m not in METHODS:
            raise ConfigurationError(f"unknown method {m!r}", field="compare.methods")
    t0 = time.perf_counter()
    rows, summary = run_compare(cfg, methods, durations, trials, cfg["jobs"])
    runtime_ms = (time.perf_counter() - t0) * 1e3
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "compare.csv", summary, SUMMARY_COLUMNS)
    _write_csv(out / "trials.csv", rows, TRIAL_COLUMNS)
    _write_json(out / "report.json", {
        "version": __version__,
        "methods": methods, "durations_s": durations, "trials": trials,
        "summary": [{k: (_round(v) if isinstance(v, float) else v) for k, v in r.items()}
                    for r in summary],
        "config": cfg.resolved(),
    })
    _write_json(out / "runtime.json", {"runtime_ms": round(runtime_ms, 3), "jobs": cfg["jobs"]})
    if args.plot:
        from .plotting import plot_le_vs_duration
        plot_le_vs_duration(summary, out / "le_vs_duration.png")
    for r in summary:
        print(f"{r['method']:12s} {r['duration_s']:6g} s  median LE {_fmt(r['median_le_deg'])} deg"
              f"  IQR {_fmt(r['iqr_le_deg'])}  failures {r['failures']}")
    print(f"table: {out / 'compare.csv'}")
    return EXIT_OK


def cmd_grid_info(cfg, args):
    s = cfg.settings()
    coarse = build_doa_grid(s.coarse_elevation_step, s.coarse_azimuth_step)
    fine = build_doa_grid(s.fine_elevation_step, s.fine_azimuth_step)
    array = cfg.array()
    fs = float(cfg["scenario.sample_rate"])
    bins = band_bins(fs, s.frame_length, s.band_low_hz, s.band_high_hz, s.band_stride, s.max_bins)
    info = {
        "array": {"name": array.name, "n_mics": array.n_mics, "n_pairs": array.n_pairs},
        "coarse": {"points": len(coarse), "n_elevation": coarse.n_elevation,
                   "n_azimuth": coarse.n_azimuth, "steps_deg": [coarse.elevation_step, coarse.azimuth_step]},
        "fine": {"points": len(fine), "n_elevation": fine.n_elevation,
                 "n_azimuth": fine.n_azimuth, "steps_deg": [fine.elevation_step, fine.azimuth_step]},
        "band": {"bins": len(bins), "first_hz": float(bins[0] * fs / s.frame_length),
                 "last_hz": float(bins[-1] * fs / s.frame_length)},
        "dictionary_bytes": int(len(bins) * len(coarse) * len(fine) * 8),
    }
    text = json.dumps(info, indent=2, sort_keys=True)
    print(text)
    if args.csv:
        out = cfg.output_dir
        out.mkdir(parents=True, exist_ok=True)
        map_to_csv(np.zeros(len(coarse)), coarse, out / "coarse_grid.csv")
        map_to_csv(np.zeros(len(fine)), fine, out / "fine_grid.csv")
    return EXIT_OK


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _methods(text):
    return [m.strip() for m in text.split(",") if m.strip()]


def build_parser():
    p = argparse.ArgumentParser(prog="srpsbl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("config", nargs=None if config_required else "?",
                        help="TOML job configuration")
        sp.add_argument("-o", "--output-dir", help="overrides output_dir and $SRPSBL_OUTPUT_DIR")
        sp.add_argument("--seed", type=int)

    sp = sub.add_parser("simulate", help="synthesize a scenario to WAV + truth JSON")
    common(sp)
    sp.add_argument("--duration", type=float)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("localize", help="localize sources in one recording or scenario")
    common(sp)
    sp.add_argument("-m", "--method", choices=METHODS)
    sp.add_argument("--plot", action="store_true", help="also write map.png")
    sp.add_argument("--trace", action="store_true", help="write the solver trace CSV")
    sp.set_defaults(func=cmd_localize)

    sp = sub.add_parser("compare", help="LE versus duration over seeded trials")
    common(sp)
    sp.add_argument("--methods", type=_methods)
    sp.add_argument("--durations", type=_floats)
    sp.add_argument("--trials", type=int)
    sp.add_argument("-j", "--jobs", type=int, help="parallel trials (overrides $SRPSBL_JOBS)")
    sp.add_argument("--plot", action="store_true", help="also write le_vs_duration.png")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("grid-info", help="grid sizes, band bins and dictionary footprint")
    common(sp, config_required=False)
    sp.add_argument("--csv", action="store_true", help="dump both grids as CSV")
    sp.set_defaults(func=cmd_grid_info)
    return p


def _resolve(args):
    if args.config is None:
        cfg = apply_env(from_dict({"scenario": {"layout": "close_pair"}}), os.environ)
    else:
        cfg = load_config(args.config)
    over = {"output_dir": args.output_dir, "seed": args.seed,
            "method": getattr(args, "method", None), "jobs": getattr(args, "jobs", None),
            "scenario.duration": getattr(args, "duration", None)}
    return cfg.with_overrides(**over)


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
        return args.func(cfg, args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DomainError, WavFormatError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
