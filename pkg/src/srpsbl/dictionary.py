"""Per-bin sparse-representation operators for SRP maps.

For bin k the coarse-grid matrix ``A_k`` (N x L) holds conjugate relative
transfer functions ``conj(H_{n,l})``, the fine-grid matrix ``B_k`` (L x Q)
holds phase-only RTFs ``H_{q,l} / |H_{q,l}|`` and the real dictionary is
``D_k = Re(A_k B_k)``.  Column q of ``D_k`` is the noiseless SRP map over the
coarse grid produced by a single source at fine point q.
"""
from __future__ import annotations

import hashlib
import json
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SingularityError
from .geometry import FF, NF, _check_mode, rtf_matrix, wavenumbers

DEFAULT_MEMORY_LIMIT = 2 * 1024 ** 3
_MAGIC = b"SRPD"
_COINCIDENT_M = 1e-9


def _candidates(array, grid, mode, radius):
    if mode == FF:
        return grid.unit_vectors
    return array.centroid + radius * grid.unit_vectors


@dataclass(eq=False)
class DictionarySet:
    array: object
    coarse_grid: object
    fine_grid: object
    bins: np.ndarray
    frequencies: np.ndarray
    mode: str = FF
    radius: float = 2.0
    D: np.ndarray | None = None  # (K, N, Q) when materialised

    @property
    def pair_order(self):
        return self.array.pairs

    @property
    def shape(self):
        return len(self.bins), len(self.coarse_grid), len(self.fine_grid)

    def position(self, k):
        hit = np.flatnonzero(self.bins == k)
        if hit.size == 0:
            raise IndexError(f"bin {k} is not in the dictionary band")
        return int(hit[0])

    def _wavenumber(self, pos):
        return float(wavenumbers(self.frequencies[pos], self.array.sound_speed))

    def A(self, k):
        """Coarse operator for STFT bin ``k``, shape (N, L)."""
        pos = self.position(k)
        cand = _candidates(self.array, self.coarse_grid, self.mode, self.radius)
        return np.conj(rtf_matrix(self.array, cand, self._wavenumber(pos), self.mode))

    def B(self, k):
        """Fine operator for STFT bin ``k``, shape (L, Q)."""
        pos = self.position(k)
        cand = _candidates(self.array, self.fine_grid, self.mode, self.radius)
        h = rtf_matrix(self.array, cand, self._wavenumber(pos), self.mode)
        return (h / np.abs(h)).T

    def _compute(self, pos):
        k = int(self.bins[pos])
        a, b = self.A(k), self.B(k)
        # Re(AB) as one real product
        return np.hstack([a.real, -a.imag]) @ np.vstack([b.real, b.imag])

    def factors(self, k):
        """Exact real factorisation D_k = U @ V with U (N x r) and V (r x Q).

        In far-field mode pairs sharing a baseline vector have identical
        RTFs, so they are merged (weighted by multiplicity) and r is twice
        the number of distinct baselines; otherwise r = 2L.
        """
        a, b = self.A(k), self.B(k)
        groups = self._baseline_groups()
        if groups is not None:
            rep, mult = groups
            a = a[:, rep] * mult
            b = b[rep, :]
        return np.hstack([a.real, -a.imag]), np.vstack([b.real, b.imag])

    def _baseline_groups(self):
        if self.mode != FF:
            return None
        first, second = self.array.pair_index
        base = self.array.positions[first] - self.array.positions[second]
        keys = np.round(base / 1e-9).astype(np.int64)
        _, rep, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
        mult = np.bincount(inverse.ravel(), minlength=len(rep)).astype(float)
        return rep, mult

    def matrix(self, k):
        """D_k for STFT bin ``k``, shape (N, Q)."""
        pos = self.position(k)
        if self.D is not None:
            return self.D[pos]
        return self._compute(pos)

    def stacked(self):
        """All bins as a (K, N, Q) array."""
        if self.D is not None:
            return self.D
        return np.stack([self._compute(p) for p in range(len(self.bins))])

    def column(self, k, q):
        """Column q of D_k without forming the other columns."""
        if not 0 <= q < len(self.fine_grid):
            raise IndexError(f"fine-grid index {q} out of range")
        pos = self.position(k)
        if self.D is not None:
            return self.D[pos][:, q].copy()
        a = self.A(int(self.bins[pos]))
        cand = _candidates(self.array, self.fine_grid, self.mode, self.radius)[q:q + 1]
        h = rtf_matrix(self.array, cand, self._wavenumber(pos), self.mode)[0]
        return np.real(a @ (h / np.abs(h)))

    def mean_matrix(self):
        """Average of D_k over the band (dictionary for averaged SRP maps)."""
        if self.D is not None:
            return self.D.mean(axis=0)
        acc = np.zeros(self.shape[1:])
        for p in range(len(self.bins)):
            acc += self._compute(p)
        return acc / len(self.bins)


def cache_key(array, coarse_grid, fine_grid, bins, frequencies, mode, radius):
    payload = {
        "array": array.fingerprint(),
        "coarse": list(coarse_grid.key()),
        "fine": list(fine_grid.key()),
        "bins": [int(b) for b in bins],
        "frequencies": [float(f).hex() for f in frequencies],
        "mode": mode,
        "radius": float(radius).hex() if mode == NF else None,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _write_cache(path, d, key):
    """Layout: b'SRPD', uint32 LE header length, JSON header {key, shape,
    dtype}, then D as little-endian float64 in C order (K, N, Q)."""
    header = json.dumps({"key": key, "shape": list(d.shape), "dtype": "<f8"},
                        sort_keys=True).encode()
    tmp = path.with_suffix(".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(d, dtype="<f8").tobytes())
    tmp.replace(path)


def _read_cache(path, key):
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            return None
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen))
        if header.get("key") != key:
            return None
        d = np.fromfile(fh, dtype="<f8")
    return d.reshape(header["shape"]).astype(np.float64, copy=False)


_MEMO = {}


def build_dictionary(array, coarse_grid, fine_grid, bins, frequencies, mode=FF,
                     radius=2.0, materialize=None, cache_dir=None,
                     memory_limit=DEFAULT_MEMORY_LIMIT):
    """Build the per-bin dictionaries for the given band.

    ``materialize=None`` stores every D_k when it fits in ``memory_limit``
    bytes and otherwise falls back to computing bins and columns on demand.
    ``cache_dir`` enables an on-disk cache of the materialised tensor.
    Near-field candidates sit at ``radius`` meters from the array centroid.
    """
    mode = _check_mode(mode)
    bins = np.asarray(bins, dtype=int)
    frequencies = np.asarray(frequencies, dtype=float)
    n, q = len(coarse_grid), len(fine_grid)
    if q < n:
        warnings.warn(f"fine grid ({q}) is smaller than the coarse grid ({n}); "
                      "the sparse model is no longer underdetermined", stacklevel=2)
    if mode == NF:
        # surface singularities before any work is done
        for grid in (coarse_grid, fine_grid):
            cand = _candidates(array, grid, mode, radius)
            dist = np.linalg.norm(cand[:, None, :] - array.positions[None], axis=-1)
            # candidates are computed, so allow for rounding in the coincidence test
            if np.any(dist <= _COINCIDENT_M):
                raise SingularityError("near-field candidate coincides with a microphone")
    dset = DictionarySet(array, coarse_grid, fine_grid, bins, frequencies, mode, radius)
    if materialize is None:
        materialize = len(bins) * n * q * 8 <= memory_limit
    if not materialize:
        return dset
    key = cache_key(array, coarse_grid, fine_grid, bins, frequencies, mode, radius)
    if key in _MEMO:
        dset.D = _MEMO[key]
        return dset
    d = None
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"dict-{key[:24]}.bin"
        if path.exists():
            d = _read_cache(path, key)
    if d is None:
        d = np.empty((len(bins), n, q))
        for p in range(len(bins)):
            d[p] = dset._compute(p)
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            _write_cache(path, d, key)
    d.setflags(write=False)
    _MEMO.clear()
    _MEMO[key] = d
    dset.D = d
    return dset
