"""End-to-end localizers: SRP-PHAT, SRP-SBL, SRP-S and direct M-SBL."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .dictionary import build_dictionary
from .errors import ConfigurationError
from .geometry import build_doa_grid
from .localize import pick_peaks
from .solvers import msbl_direct_solve, msbl_solve, somp_solve
from .srp import band_bins, srp_phat_localize, srp_tensor, whiten
from .stft import stft

METHODS = ("srp_phat", "msbl_direct", "srp_s", "srp_sbl")


@dataclass
class AnalysisSettings:
    frame_length: int = 1024
    overlap: float = 0.5
    band_low_hz: float = 300.0
    band_high_hz: float = 4000.0
    band_stride: int = 1
    max_bins: int | None = None
    coarse_elevation_step: float = 15.0
    coarse_azimuth_step: float = 10.0
    fine_elevation_step: float = 2.0
    fine_azimuth_step: float = 2.0
    mode: str = "FF"
    threshold: float = 1e-3
    max_iterations: int = 200
    n_peaks: int = 3
    min_separation_deg: float = 3.0
    learn_noise: bool = False
    normalize_bins: bool = False
    cache_dir: str | None = None

    def as_dict(self):
        return asdict(self)


@dataclass
class LocalizationResult:
    method: str
    estimates: list
    shortfall: bool
    map_values: np.ndarray
    grid: object
    iterations: int | None = None
    converged: bool | None = None
    extras: dict = field(default_factory=dict)


class Analysis:
    """Shared front end for one recording: STFT, band selection, SRP tensor."""

    def __init__(self, signal, array, settings):
        if signal.n_channels != array.n_mics:
            raise ConfigurationError(
                f"recording has {signal.n_channels} channels but the array has {array.n_mics} microphones",
                field="array.geometry")
        self.signal = signal
        self.array = array
        self.settings = settings
        s = settings
        self.spec = stft(signal, s.frame_length, s.overlap)
        self.bins = band_bins(signal.sample_rate, s.frame_length, s.band_low_hz, s.band_high_hz,
                              s.band_stride, s.max_bins)
        self.coarse_grid = build_doa_grid(s.coarse_elevation_step, s.coarse_azimuth_step)
        self.fine_grid = build_doa_grid(s.fine_elevation_step, s.fine_azimuth_step)
        self._tensor = None
        self._dictionary = None

    @property
    def tensor(self):
        if self._tensor is None:
            cross = whiten(self.spec, self.array.pairs, self.bins)
            self._tensor = srp_tensor(cross, self.coarse_grid, self.array)
        return self._tensor

    @property
    def dictionary(self):
        if self._dictionary is None:
            self._dictionary = build_dictionary(
                self.array, self.coarse_grid, self.fine_grid, self.bins,
                self.spec.frequencies(self.bins), self.settings.mode,
                materialize=self.settings.cache_dir is not None,
                cache_dir=self.settings.cache_dir)
        return self._dictionary

    def run(self, method, trace=False):
        """Localize with one method; ``trace`` keeps the M-SBL iteration log."""
        s = self.settings
        if method == "srp_phat":
            peaks = srp_phat_localize(self.tensor, s.n_peaks, s.min_separation_deg)
            return LocalizationResult(method, peaks.estimates, peaks.shortfall,
                                      self.tensor.coarse_map(), self.coarse_grid)
        if method == "srp_sbl":
            res = msbl_solve(self.tensor, self.dictionary, s.threshold, s.max_iterations,
                             normalize_bins=s.normalize_bins, learn_noise=s.learn_noise,
                             trace=trace)
        elif method == "srp_s":
            res = somp_solve(self.tensor.coarse_map(), self.dictionary.mean_matrix(), s.n_peaks)
        elif method == "msbl_direct":
            res = msbl_direct_solve(self.spec, self.array, self.fine_grid, self.bins, s.mode,
                                    s.threshold, s.max_iterations, learn_noise=s.learn_noise,
                                    trace=trace)
        else:
            raise ConfigurationError(f"unknown method {method!r}; choose from {', '.join(METHODS)}",
                                     field="method")
        peaks = pick_peaks(res.weights, self.fine_grid, s.n_peaks, s.min_separation_deg)
        return LocalizationResult(method, peaks.estimates, peaks.shortfall, res.weights,
                                  self.fine_grid, iterations=res.iterations,
                                  converged=res.converged, extras={"solver": res})


def localize(signal, array, method, settings=None):
    return Analysis(signal, array, settings or AnalysisSettings()).run(method)
