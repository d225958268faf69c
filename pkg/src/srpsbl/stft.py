"""Multichannel WAV ingestion and short-time Fourier analysis.

Framing: frame ``t`` covers samples ``[t*hop, t*hop + frame_length)``; trailing
samples that do not fill a frame are dropped, so
``T = (n_samples - frame_length) // hop + 1``.

Each frame is multiplied by a periodic Hann window and transformed with the
``exp(+j 2 pi k n / N)`` kernel (the complex conjugate of ``numpy.fft.rfft``).
With this kernel a delay of ``d`` seconds multiplies bin ``k`` by
``exp(+j 2 pi f_k d)``, which is the convention the Green's functions in
:mod:`srpsbl.geometry` assume.
"""
from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.io.wavfile
from scipy.signal import get_window

from .errors import ConfigurationError, WavFormatError

_SCALE = {np.dtype("int16"): 2.0 ** 15, np.dtype("int32"): 2.0 ** 31}


@dataclass(frozen=True, eq=False)
class MultichannelSignal:
    samples: np.ndarray  # (M, n_samples), float64
    sample_rate: float

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if x.ndim != 2:
            raise ConfigurationError("samples must be an (M, n_samples) matrix")
        if not self.sample_rate > 0:
            raise ConfigurationError("sample rate must be positive")
        object.__setattr__(self, "samples", x)

    @property
    def n_channels(self):
        return self.samples.shape[0]

    @property
    def n_samples(self):
        return self.samples.shape[1]

    @property
    def duration(self):
        return self.n_samples / self.sample_rate

    def truncate(self, duration):
        n = int(round(duration * self.sample_rate))
        return MultichannelSignal(self.samples[:, :n], self.sample_rate)


@dataclass(frozen=True, eq=False)
class Spectrogram:
    bins: np.ndarray  # (M, K, T) complex
    frame_length: int
    hop: int
    sample_rate: float

    @property
    def n_channels(self):
        return self.bins.shape[0]

    @property
    def n_bins(self):
        return self.bins.shape[1]

    @property
    def n_frames(self):
        return self.bins.shape[2]

    def frequencies(self, bins=None):
        k = np.arange(self.n_bins) if bins is None else np.asarray(bins)
        return k * self.sample_rate / self.frame_length


def load_wav(path):
    """Read a PCM 16/24/32-bit or float WAV file, scaled to [-1, 1]."""
    path = Path(path)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.io.wavfile.WavFileWarning)
            rate, data = scipy.io.wavfile.read(path)
    except FileNotFoundError:
        raise
    except (EOFError, struct.error) as exc:
        raise OSError(f"{path}: truncated or unreadable WAV ({exc})") from exc
    except ValueError as exc:
        msg = str(exc)
        if "format" in msg.lower() or "bit depth" in msg.lower() or "riff" in msg.lower():
            raise WavFormatError(f"{path}: {msg}") from exc
        raise OSError(f"{path}: truncated or unreadable WAV ({msg})") from exc
    if data.dtype in _SCALE:
        x = data.astype(np.float64) / _SCALE[data.dtype]
    elif data.dtype.kind == "f":
        x = data.astype(np.float64)
    else:
        raise WavFormatError(f"{path}: unsupported sample encoding {data.dtype}")
    if data.size == 0:
        raise WavFormatError(f"{path}: empty data chunk")
    x = x.reshape(len(x), -1).T
    return MultichannelSignal(np.ascontiguousarray(x), float(rate))


def write_wav(path, signal):
    """Write 32-bit float WAV, channel order preserved."""
    data = np.ascontiguousarray(signal.samples.T.astype(np.float32))
    scipy.io.wavfile.write(Path(path), int(round(signal.sample_rate)), data)


def stft(signal, frame_length=1024, overlap_fraction=0.5, window="hann"):
    """One-sided STFT of every channel, shape (M, frame_length//2 + 1, T)."""
    n = int(frame_length)
    if n < 2 or n & (n - 1):
        raise ConfigurationError(f"frame length must be a power of two, got {frame_length}")
    if not 0 <= overlap_fraction < 1:
        raise ConfigurationError("overlap fraction must lie in [0, 1)")
    hop = max(1, int(round(n * (1 - overlap_fraction))))
    x = signal.samples
    if x.shape[1] < n:
        raise ConfigurationError(
            f"signal has {x.shape[1]} samples, shorter than one {n}-sample frame")
    win = get_window(window, n)
    frames = np.lib.stride_tricks.sliding_window_view(x, n, axis=1)[:, ::hop, :]
    spec = np.conj(np.fft.rfft(frames * win, axis=-1))
    return Spectrogram(np.ascontiguousarray(spec.transpose(0, 2, 1)), n, hop, signal.sample_rate)


def dump_spectrogram(spec, path):
    """Write a spectrogram for debugging.

    ``.csv`` gives rows ``channel,bin,frame,real,imag``.  Any other suffix
    gives a binary file: a little-endian uint32 header length, a UTF-8 JSON
    header ``{shape, frame_length, hop, sample_rate, dtype}``, then the
    ``(M, K, T)`` tensor as little-endian complex128 in C order.
    """
    path = Path(path)
    if path.suffix.lower() == ".csv":
        m, k, t = np.indices(spec.bins.shape)
        rows = np.column_stack([m.ravel(), k.ravel(), t.ravel(),
                                spec.bins.real.ravel(), spec.bins.imag.ravel()])
        with open(path, "w") as fh:
            fh.write("channel,bin,frame,real,imag\n")
            for row in rows:
                fh.write(f"{int(row[0])},{int(row[1])},{int(row[2])},{row[3]:.17g},{row[4]:.17g}\n")
        return
    header = json.dumps({"shape": list(spec.bins.shape), "frame_length": spec.frame_length,
                         "hop": spec.hop, "sample_rate": spec.sample_rate,
                         "dtype": "<c16"}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(spec.bins, dtype="<c16").tobytes())


def read_spectrogram(path):
    raw = Path(path).read_bytes()
    (hlen,) = struct.unpack("<I", raw[:4])
    header = json.loads(raw[4:4 + hlen])
    bins = np.frombuffer(raw[4 + hlen:], dtype="<c16").reshape(header["shape"])
    return Spectrogram(bins.copy(), header["frame_length"], header["hop"], header["sample_rate"])
