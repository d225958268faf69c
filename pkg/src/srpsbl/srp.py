"""PHAT-whitened cross-spectra, steered response power maps and SRP-PHAT."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .geometry import pair_tdoas
from .localize import local_maxima, pick_peaks

PHAT_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class WhitenedCrossSpectra:
    """Unit-magnitude cross-spectra, shape (L, K_sel, T).

    ``bins`` lists the STFT bin index held at each position of axis 1 and
    ``frequencies`` the matching physical frequencies in Hz.  Entries whose
    raw cross-power fell below the PHAT floor are exactly zero.
    """

    values: np.ndarray
    pairs: list
    bins: np.ndarray
    frequencies: np.ndarray

    def position(self, k):
        hit = np.flatnonzero(self.bins == k)
        if hit.size == 0:
            raise IndexError(f"bin {k} was not whitened")
        return int(hit[0])


@dataclass(frozen=True, eq=False)
class SrpTensor:
    """Real SRP values, shape (N, T, K_sel); ``bins`` as in the cross-spectra."""

    values: np.ndarray
    grid: object
    bins: np.ndarray
    frequencies: np.ndarray

    @property
    def freq_band(self):
        return int(self.bins[0]), int(self.bins[-1])

    def coarse_map(self):
        """Time-frequency average z(y_n)."""
        return self.values.mean(axis=(1, 2))

    def per_bin(self):
        """Contiguous (K_sel, N, T) view for per-bin solvers."""
        return np.ascontiguousarray(self.values.transpose(2, 0, 1))


def band_bins(sample_rate, frame_length, low_hz, high_hz, stride=1, max_bins=None):
    """Inclusive bin indices whose centre frequency lies in [low_hz, high_hz].

    ``stride`` keeps every n-th bin; ``max_bins`` then caps the count by
    dropping bins evenly across the band.
    """
    df = sample_rate / frame_length
    lo = int(np.ceil(low_hz / df - 1e-9))
    hi = int(np.floor(high_hz / df + 1e-9))
    hi = min(hi, frame_length // 2)
    if hi < lo or stride < 1:
        raise ConfigurationError(f"empty frequency band [{low_hz}, {high_hz}] Hz", field="band")
    bins = np.arange(lo, hi + 1, int(stride))
    if max_bins is not None and len(bins) > max_bins:
        keep = np.unique(np.round(np.linspace(0, len(bins) - 1, int(max_bins))).astype(int))
        bins = bins[keep]
    return bins


def whiten(spec, pairs, bins=None, floor=PHAT_FLOOR):
    """PHAT-normalised cross-spectra P_m conj(P_m') / |P_m conj(P_m')|."""
    bins = np.arange(spec.n_bins) if bins is None else np.asarray(bins, dtype=int)
    first = np.array([p[0] for p in pairs], dtype=int)
    second = np.array([p[1] for p in pairs], dtype=int)
    sub = spec.bins[:, bins, :]
    cross = sub[first] * np.conj(sub[second])
    mag = np.abs(cross)
    keep = mag >= floor
    out = np.zeros_like(cross)
    np.divide(cross, mag, out=out, where=keep)
    return WhitenedCrossSpectra(out, list(pairs), bins, spec.frequencies(bins))


def srp_bin(cross, k, t, candidate_tdoas, bin_frequency):
    """Re(sum_l W_l(k, t) exp(j 2 pi f_k tau_l)) for one candidate."""
    w = cross.values[:, cross.position(k), t]
    steer = np.exp(2j * np.pi * bin_frequency * np.asarray(candidate_tdoas, dtype=float))
    return float(np.real(np.sum(w * steer)))


def srp_tensor(cross, grid, array, freq_band=None):
    """SRP for every grid point, frame and bin in ``freq_band``.

    ``freq_band`` is an inclusive ``(first_bin, last_bin)`` pair or an explicit
    sequence of bin indices; ``None`` uses every whitened bin.
    """
    if freq_band is None:
        bins = cross.bins
    elif isinstance(freq_band, tuple) and len(freq_band) == 2:
        bins = np.arange(int(freq_band[0]), int(freq_band[1]) + 1)
    else:
        bins = np.asarray(freq_band, dtype=int)
    if bins.size == 0:
        raise ConfigurationError("empty frequency band", field="band")
    pos = [cross.position(int(k)) for k in bins]
    freqs = cross.frequencies[pos]
    tau = pair_tdoas(array, grid.unit_vectors)  # (N, L), once per (n, l)
    n_frames = cross.values.shape[2]
    out = np.empty((len(grid), n_frames, len(bins)))
    for j, (p, f) in enumerate(zip(pos, freqs)):
        steer = np.exp(2j * np.pi * f * tau)
        out[:, :, j] = np.real(steer @ cross.values[:, p, :])
    return SrpTensor(out, grid, bins, freqs)


def srp_phat_localize(tensor, n_sources, min_separation=0.0):
    """Rank local maxima of the averaged SRP map.

    Returns a :class:`~srpsbl.localize.PeakSelection`; ``shortfall`` is set
    when the map has fewer strict local maxima than ``n_sources``.
    """
    z = tensor.coarse_map()
    peaks = local_maxima(z, tensor.grid)
    return pick_peaks(z, tensor.grid, n_sources, min_separation, candidates=peaks)


def map_to_csv(values, grid, path):
    """Write ``index,elevation_deg,azimuth_deg,value`` rows in grid order."""
    with open(path, "w") as fh:
        fh.write("index,elevation_deg,azimuth_deg,value\n")
        for i, (el, az, v) in enumerate(zip(grid.elevations, grid.azimuths, values)):
            fh.write(f"{i},{el:g},{az:g},{v:.10g}\n")
