"""Job configuration: a TOML document with dotted sections.

Every key has a default, unknown keys are rejected, and errors carry the
line number and dotted field name of the offending entry.  Relative input
paths (WAV files, array geometry files) resolve against the directory of
the config file; the output directory resolves against the working
directory.  Example::

    seed = 3
    method = "srp_sbl"
    output_dir = "out"

    [scenario]
    layout = "close_pair"
    duration = 1.0
    reverb = "exponential"
    t60 = 0.5

    [band]
    low_hz = 1000
    high_hz = 4000
    stride = 3
"""
from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigurationError
from .geometry import FF, NF, get_array
from .pipeline import METHODS, AnalysisSettings

ENV_OUTPUT_DIR = "SRPSBL_OUTPUT_DIR"
ENV_JOBS = "SRPSBL_JOBS"

LAYOUTS = ("explicit", "close_pair")
SIGNAL_KINDS = ("white", "speech_shaped", "wav_file")

# dotted key -> (accepted types, default)
_NUM = (int, float)
SCHEMA = {
    "seed": (int, 0),
    "method": (str, "srp_sbl"),
    "output_dir": (str, "srpsbl-out"),
    "jobs": (int, 1),
    "input.wav": (str, None),
    "array.geometry": (str, "uma16"),
    "array.sound_speed": (_NUM, 343.0),
    "grid.coarse_elevation_step": (_NUM, 15.0),
    "grid.coarse_azimuth_step": (_NUM, 10.0),
    "grid.fine_elevation_step": (_NUM, 2.0),
    "grid.fine_azimuth_step": (_NUM, 2.0),
    "band.low_hz": (_NUM, 300.0),
    "band.high_hz": (_NUM, 4000.0),
    "band.stride": (int, 1),
    "band.max_bins": (int, None),
    "stft.frame_length": (int, 1024),
    "stft.overlap": (_NUM, 0.5),
    "solver.mode": (str, FF),
    "solver.threshold": (_NUM, 1e-3),
    "solver.max_iterations": (int, 200),
    "solver.n_peaks": (int, 3),
    "solver.min_separation_deg": (_NUM, 3.0),
    "solver.learn_noise": (bool, False),
    "solver.normalize_bins": (bool, False),
    "solver.cache_dir": (str, None),
    "scenario.layout": (str, "explicit"),
    "scenario.separation_deg": (_NUM, 12.0),
    "scenario.duration": (_NUM, 1.0),
    "scenario.sample_rate": (_NUM, 48000.0),
    "scenario.snr_db": (_NUM, 20.0),
    "scenario.reverb": (str, "none"),
    "scenario.t60": (_NUM, 0.5),
    "scenario.echo_density": (_NUM, 2000.0),
    "scenario.drr_db": (_NUM, 0.0),
    "scenario.signal": (str, "speech_shaped"),
    "scenario.sources": (list, None),
    "compare.methods": (list, list(METHODS)),
    "compare.durations": (list, [0.25, 0.5, 1.0, 2.0]),
    "compare.trials": (int, 5),
}
_SOURCE_KEYS = {"elevation": _NUM, "azimuth": _NUM, "signal": str, "path": str, "gain": _NUM}


def _locate(text, dotted):
    """Line number (1-based) where ``dotted`` is assigned, or None."""
    if text is None:
        return None
    *section, key = dotted.split(".")
    want = ".".join(section)
    current = ""
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        head = re.match(r"^\[\[?\s*([^\]]+?)\s*\]\]?", s)
        if head:
            current = head.group(1)
            continue
        m = re.match(r"^([A-Za-z0-9_.\"-]+)\s*=", s)
        if not m:
            continue
        full = ".".join(p for p in (current, m.group(1).replace('"', "")) if p)
        if full == dotted or (current == want and m.group(1) == key) or full.startswith(dotted + "."):
            return no
    if want:
        return _locate(text, want)
    return None


def _flatten(table, prefix=""):
    out = {}
    for k, v in table.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and key not in SCHEMA:
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


@dataclass
class JobConfig:
    values: dict
    base_dir: Path = field(default_factory=Path.cwd)
    text: str | None = None

    def __getitem__(self, key):
        return self.values[key]

    def error(self, message, key):
        return ConfigurationError(message, field=key, line=_locate(self.text, key))

    @property
    def method(self):
        return self.values["method"]

    @property
    def output_dir(self):
        return Path(self.values["output_dir"])

    def input_path(self, key):
        p = Path(self.values[key])
        return p if p.is_absolute() else self.base_dir / p

    def settings(self):
        v = self.values
        return AnalysisSettings(
            frame_length=v["stft.frame_length"], overlap=float(v["stft.overlap"]),
            band_low_hz=float(v["band.low_hz"]), band_high_hz=float(v["band.high_hz"]),
            band_stride=v["band.stride"], max_bins=v["band.max_bins"],
            coarse_elevation_step=float(v["grid.coarse_elevation_step"]),
            coarse_azimuth_step=float(v["grid.coarse_azimuth_step"]),
            fine_elevation_step=float(v["grid.fine_elevation_step"]),
            fine_azimuth_step=float(v["grid.fine_azimuth_step"]),
            mode=v["solver.mode"], threshold=float(v["solver.threshold"]),
            max_iterations=v["solver.max_iterations"], n_peaks=v["solver.n_peaks"],
            min_separation_deg=float(v["solver.min_separation_deg"]),
            learn_noise=v["solver.learn_noise"], normalize_bins=v["solver.normalize_bins"],
            cache_dir=v["solver.cache_dir"])

    def array(self):
        ref = self.values["array.geometry"]
        path = self.input_path("array.geometry")
        try:
            return get_array(str(path) if path.exists() else ref,
                             sound_speed=float(self.values["array.sound_speed"]))
        except (OSError, ValueError) as exc:
            raise self.error(f"cannot load array geometry {ref!r}: {exc}", "array.geometry") from exc

    def resolved(self):
        """Full config with defaults, JSON-ready, in sorted key order."""
        return {k: self.values[k] for k in sorted(self.values)}

    def with_overrides(self, **kw):
        vals = dict(self.values)
        for k, v in kw.items():
            if v is not None:
                vals[k] = v
        out = JobConfig(vals, self.base_dir, self.text)
        out.validate()
        return out

    def validate(self):
        v = self.values
        for key, (types, _) in SCHEMA.items():
            val = v[key]
            if val is None:
                continue
            if isinstance(val, bool) and types is not bool:
                raise self.error(f"expected a {_type_name(types)}, got a boolean", key)
            if not isinstance(val, types):
                raise self.error(f"expected a {_type_name(types)}, got {type(val).__name__}", key)
        if v["method"] not in METHODS:
            raise self.error(f"unknown method {v['method']!r}; choose from {', '.join(METHODS)}",
                             "method")
        if v["solver.mode"] not in (FF, NF):
            raise self.error("mode must be 'FF' or 'NF'", "solver.mode")
        positive = ["array.sound_speed", "grid.coarse_elevation_step", "grid.coarse_azimuth_step",
                    "grid.fine_elevation_step", "grid.fine_azimuth_step", "band.high_hz",
                    "band.stride", "stft.frame_length", "solver.threshold",
                    "solver.max_iterations", "solver.n_peaks", "scenario.duration",
                    "scenario.sample_rate", "scenario.echo_density", "compare.trials", "jobs"]
        for key in positive:
            if not v[key] > 0:
                raise self.error(f"must be positive, got {v[key]}", key)
        if v["band.max_bins"] is not None and v["band.max_bins"] < 1:
            raise self.error("must be at least 1", "band.max_bins")
        if not 0 <= v["band.low_hz"] < v["band.high_hz"]:
            raise self.error("need 0 <= low_hz < high_hz", "band.low_hz")
        if not 0 <= v["stft.overlap"] < 1:
            raise self.error("overlap must lie in [0, 1)", "stft.overlap")
        if v["solver.min_separation_deg"] < 0:
            raise self.error("must be nonnegative", "solver.min_separation_deg")
        if v["scenario.layout"] not in LAYOUTS:
            raise self.error(f"layout must be one of {', '.join(LAYOUTS)}", "scenario.layout")
        if v["scenario.reverb"] not in ("none", "exponential"):
            raise self.error("reverb must be 'none' or 'exponential'", "scenario.reverb")
        if v["scenario.reverb"] == "exponential" and not v["scenario.t60"] > 0:
            raise self.error(f"t60 must be positive with reverb enabled, got {v['scenario.t60']}",
                             "scenario.t60")
        if v["scenario.signal"] not in SIGNAL_KINDS:
            raise self.error(f"signal must be one of {', '.join(SIGNAL_KINDS)}", "scenario.signal")
        if v["scenario.layout"] == "explicit" and v["input.wav"] is None:
            sources = v["scenario.sources"]
            if not sources:
                raise self.error("give input.wav, scenario.sources or layout = 'close_pair'",
                                 "scenario.sources")
            for i, src in enumerate(sources):
                self._check_source(i, src)
        for m in v["compare.methods"]:
            if m not in METHODS:
                raise self.error(f"unknown method {m!r}", "compare.methods")
        if not v["compare.methods"]:
            raise self.error("at least one method is required", "compare.methods")
        durs = v["compare.durations"]
        if not durs or not all(isinstance(d, _NUM) and not isinstance(d, bool) and d > 0 for d in durs):
            raise self.error("durations must be positive numbers", "compare.durations")
        return self

    def _check_source(self, i, src):
        key = "scenario.sources"
        if not isinstance(src, dict):
            raise self.error(f"source {i} must be a table", key)
        for k, val in src.items():
            if k not in _SOURCE_KEYS:
                raise self.error(f"source {i}: unknown key {k!r}", key)
            if not isinstance(val, _SOURCE_KEYS[k]) or isinstance(val, bool):
                raise self.error(f"source {i}: bad type for {k!r}", key)
        if "elevation" not in src or "azimuth" not in src:
            raise self.error(f"source {i} needs elevation and azimuth", key)
        if not -90 <= src["elevation"] <= 90 or not 0 <= src["azimuth"] < 360:
            raise self.error(f"source {i} direction outside [-90, 90] x [0, 360)", key)
        kind = src.get("signal", self.values["scenario.signal"])
        if kind not in SIGNAL_KINDS:
            raise self.error(f"source {i}: unknown signal {kind!r}", key)
        if kind == "wav_file" and "path" not in src:
            raise self.error(f"source {i}: wav_file signal needs a path", key)


def _type_name(types):
    if isinstance(types, tuple):
        return "number"
    return {int: "integer", str: "string", bool: "boolean", list: "list"}[types]


def from_dict(table, base_dir=None, text=None):
    flat = _flatten(table)
    for key in flat:
        if key not in SCHEMA:
            raise ConfigurationError(f"unknown key {key!r}", field=key, line=_locate(text, key))
    values = {k: d for k, (_, d) in SCHEMA.items()}
    values.update(flat)
    for key in ("scenario.sources", "compare.methods", "compare.durations"):
        if values[key] is not None:
            values[key] = list(values[key])
    return JobConfig(values, Path(base_dir) if base_dir else Path.cwd(), text).validate()


def load_config(path, env=None):
    """Parse, validate and apply environment overrides."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    try:
        table = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigurationError(f"malformed config: {exc}",
                                 line=int(m.group(1)) if m else None) from exc
    cfg = from_dict(table, path.parent, text)
    return apply_env(cfg, os.environ if env is None else env)


def apply_env(cfg, env):
    over = {}
    if env.get(ENV_OUTPUT_DIR):
        over["output_dir"] = env[ENV_OUTPUT_DIR]
    if env.get(ENV_JOBS):
        try:
            over["jobs"] = int(env[ENV_JOBS])
        except ValueError as exc:
            raise ConfigurationError(f"{ENV_JOBS} must be an integer", field="jobs") from exc
    return cfg.with_overrides(**over) if over else cfg
