"""Synthetic multichannel scenes with known source directions.

Sources are far-field plane waves rendered with windowed-sinc fractional
delays relative to the array centroid.  Reverberation is a statistical echo
tail: a Poisson train of echoes from random directions whose envelope decays
by 60 dB over ``t60`` seconds, scaled to a fixed direct-to-reverberant ratio.
White Gaussian noise is added per channel at ``snr_db`` relative to the mean
direct-path power.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.signal import fftconvolve, resample_poly

from .errors import ConfigurationError
from .geometry import GridPoint, green_matrix, wavenumbers
from .stft import MultichannelSignal, Spectrogram, load_wav

log = logging.getLogger(__name__)

DEFAULT_SAMPLE_RATE = 48000.0
FRACTIONAL_DELAY_TAPS = 64
SPEECH_CORNER_HZ = 500.0
_KAISER_BETA = 8.0


@dataclass(frozen=True)
class SignalSpec:
    kind: str = "speech_shaped"  # white | speech_shaped | wav_file
    path: str | None = None
    gain: float = 1.0


@dataclass(frozen=True)
class Source:
    doa: GridPoint
    signal: SignalSpec = field(default_factory=SignalSpec)


@dataclass(frozen=True)
class Reverb:
    t60: float
    density: float = 2000.0  # echoes per second
    drr_db: float = 0.0
    onset: float = 0.003

    def __post_init__(self):
        if not self.t60 > 0:
            raise ConfigurationError(f"t60 must be positive, got {self.t60}", field="scenario.t60")
        if not self.density > 0:
            raise ConfigurationError("echo density must be positive", field="scenario.echo_density")
        if not 0 <= self.onset < self.t60:
            raise ConfigurationError("reverb onset must lie in [0, t60)", field="scenario.onset")


@dataclass(frozen=True, eq=False)
class Scenario:
    array: object
    sources: tuple
    duration: float
    snr_db: float | None = 20.0
    reverb: Reverb | None = None
    rng_seed: int = 0
    sample_rate: float = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        if not self.duration > 0:
            raise ConfigurationError("duration must be positive", field="scenario.duration")
        if not self.sources:
            raise ConfigurationError("a scenario needs at least one source", field="scenario.sources")
        for s in self.sources:
            if not (-90 <= s.doa.elevation <= 90 and 0 <= s.doa.azimuth < 360):
                raise ConfigurationError(f"source direction {s.doa} outside the grid ranges",
                                         field="scenario.sources")
        object.__setattr__(self, "sources", tuple(self.sources))

    @property
    def truths(self):
        return [s.doa for s in self.sources]

    def truth_record(self):
        return {
            "sources": [{"elevation_deg": s.doa.elevation, "azimuth_deg": s.doa.azimuth,
                         "signal": s.signal.kind} for s in self.sources],
            "seed": self.rng_seed,
            "snr_db": self.snr_db,
            "duration_s": self.duration,
            "sample_rate": self.sample_rate,
            "reverb": None if self.reverb is None else {
                "model": "exponential", "t60_s": self.reverb.t60,
                "density_per_s": self.reverb.density, "drr_db": self.reverb.drr_db},
        }


def speech_shaped_gain(freqs, corner=SPEECH_CORNER_HZ):
    """Amplitude envelope: flat up to ``corner`` Hz, then -6 dB per octave."""
    f = np.abs(np.asarray(freqs, dtype=float))
    return np.minimum(1.0, corner / np.maximum(f, 1e-12))


def signal_spec(kind, duration, sample_rate=DEFAULT_SAMPLE_RATE, rng=None, path=None):
    """Source waveform of ``duration`` seconds, unit variance for noise kinds."""
    if not duration > 0:
        raise ConfigurationError("duration must be positive")
    n = int(round(duration * sample_rate))
    rng = np.random.default_rng(rng)
    if kind == "white":
        return rng.standard_normal(n)
    if kind == "speech_shaped":
        spec = np.fft.rfft(rng.standard_normal(n))
        spec *= speech_shaped_gain(np.fft.rfftfreq(n, 1 / sample_rate))
        x = np.fft.irfft(spec, n)
        return x / np.std(x)
    if kind in ("wav", "wav_file"):
        if path is None:
            raise ConfigurationError("wav_file signals need a path", field="signal.path")
        sig = load_wav(path)
        x = sig.samples[0]
        if sig.sample_rate != sample_rate:
            ratio = Fraction(sample_rate / sig.sample_rate).limit_denominator(1000)
            x = resample_poly(x, ratio.numerator, ratio.denominator)
        if len(x) < n:
            warnings.warn(f"{path} is shorter than {duration} s; padding with silence",
                          stacklevel=2)
            x = np.concatenate([x, np.zeros(n - len(x))])
        return x[:n]
    raise ConfigurationError(f"unknown signal kind {kind!r}", field="signal.kind")


def _kaiser(x, half):
    arg = np.clip(1.0 - (x / half) ** 2, 0.0, None)
    return np.i0(_KAISER_BETA * np.sqrt(arg)) / np.i0(_KAISER_BETA)


def _add_taps(ir, delays, gains, taps=FRACTIONAL_DELAY_TAPS):
    """Accumulate windowed-sinc taps for fractional ``delays`` (samples)."""
    half = taps // 2
    delays = np.asarray(delays, dtype=float)
    base = np.floor(delays).astype(int)
    offsets = np.arange(-half + 1, half + 1)
    idx = base[:, None] + offsets[None, :]
    x = idx - delays[:, None]
    h = np.sinc(x) * _kaiser(x, half) * np.asarray(gains, dtype=float)[:, None]
    np.add.at(ir, idx.ravel(), h.ravel())


def _relative_delays(array, direction, sample_rate):
    # a plane wave from ``direction`` reaches microphones further along it first
    return -(array.positions - array.centroid) @ np.asarray(direction) / array.sound_speed * sample_rate


def _impulse_responses(array, direction, reverb, sample_rate, rng, latency):
    m = array.n_mics
    n_direct = latency + FRACTIONAL_DELAY_TAPS
    direct = np.zeros((m, n_direct + latency))
    rel = _relative_delays(array, direction, sample_rate)
    for ch in range(m):
        _add_taps(direct[ch], [latency + rel[ch]], [1.0])
    if reverb is None:
        return direct, None
    span = reverb.t60 - reverb.onset
    count = max(int(rng.poisson(reverb.density * span)), 1)
    times = np.sort(reverb.onset + span * rng.random(count))
    dirs = rng.standard_normal((count, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    gains = rng.standard_normal(count) * 10.0 ** (-3.0 * times / reverb.t60)
    gains *= np.sqrt(10.0 ** (-reverb.drr_db / 10.0) / np.sum(gains ** 2))
    length = int(np.ceil(reverb.t60 * sample_rate)) + 2 * latency + FRACTIONAL_DELAY_TAPS
    tail = np.zeros((m, length))
    for ch in range(m):
        offs = -((array.positions[ch] - array.centroid) @ dirs.T) / array.sound_speed
        _add_taps(tail[ch], latency + (times + offs) * sample_rate, gains)
    return direct, tail


def render(scenario):
    """Render a scenario into separate direct, reverb and noise components."""
    fs = scenario.sample_rate
    n = int(round(scenario.duration * fs))
    m = scenario.array.n_mics
    seeds = np.random.SeedSequence(scenario.rng_seed).spawn(2 * len(scenario.sources) + 1)
    latency = FRACTIONAL_DELAY_TAPS + int(np.ceil(
        np.max(np.linalg.norm(scenario.array.positions - scenario.array.centroid, axis=1))
        / scenario.array.sound_speed * fs))
    direct = np.zeros((m, n))
    reverb = np.zeros((m, n))
    for j, src in enumerate(scenario.sources):
        s = src.signal.gain * signal_spec(src.signal.kind, scenario.duration, fs,
                                          np.random.default_rng(seeds[2 * j]), src.signal.path)
        ir_d, ir_r = _impulse_responses(scenario.array, src.doa.unit_vector, scenario.reverb,
                                        fs, np.random.default_rng(seeds[2 * j + 1]), latency)
        direct += fftconvolve(s[None, :], ir_d, axes=1)[:, latency:latency + n]
        if ir_r is not None:
            reverb += fftconvolve(s[None, :], ir_r, axes=1)[:, latency:latency + n]
    noise = np.zeros((m, n))
    if scenario.snr_db is not None:
        p_direct = np.mean(direct ** 2)
        sigma = np.sqrt(p_direct / 10.0 ** (scenario.snr_db / 10.0))
        noise = sigma * np.random.default_rng(seeds[-1]).standard_normal((m, n))
    return {"direct": direct, "reverb": reverb, "noise": noise}


def synthesize(scenario):
    """Multichannel recording of the scenario (direct + reverb + noise)."""
    parts = render(scenario)
    return MultichannelSignal(parts["direct"] + parts["reverb"] + parts["noise"],
                              scenario.sample_rate)


def render_spectrogram(array, directions, n_frames, frame_length=1024,
                       sample_rate=DEFAULT_SAMPLE_RATE, amplitudes=None):
    """Narrowband model P_m(k, t) = sum_j S_j(k, t) G_m(y_j, k) for FF sources.

    ``amplitudes`` is (J, K, T) complex; ``None`` means unit weights.  This
    bypasses time-domain rendering, so it satisfies the sparse model exactly.
    """
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    k_bins = frame_length // 2 + 1
    if amplitudes is None:
        amplitudes = np.ones((len(directions), k_bins, n_frames), dtype=complex)
    freqs = np.arange(k_bins) * sample_rate / frame_length
    ks = wavenumbers(freqs, array.sound_speed)
    out = np.zeros((array.n_mics, k_bins, n_frames), dtype=complex)
    for b, k in enumerate(ks):
        g = green_matrix(array, directions, k)  # (J, M)
        out[:, b, :] = g.T @ amplitudes[:, b, :]
    hop = frame_length // 2
    return Spectrogram(out, frame_length, hop, sample_rate)


def close_pair_layout(rng, separation=12.0):
    """Three directions: two sharing an azimuth ``separation`` deg apart in
    elevation, and a third at least 40 deg away in azimuth."""
    rng = np.random.default_rng(rng)
    az = int(rng.integers(50, 131))
    el = int(rng.integers(-30, 31 - int(np.ceil(separation))))
    while True:
        az3 = int(rng.integers(30, 151))
        if abs(az3 - az) >= 40:
            break
    el3 = int(rng.integers(-30, 31))
    return [GridPoint(float(el), float(az)), GridPoint(float(el + separation), float(az)),
            GridPoint(float(el3), float(az3))]


def write_truth(path, scenario):
    with open(path, "w") as fh:
        json.dump(scenario.truth_record(), fh, indent=2, sort_keys=True)
        fh.write("\n")
