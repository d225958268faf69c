"""Array geometry, candidate-direction grids, TDOAs and free-field transfer functions.

Direction convention: a grid point (elevation, azimuth) in degrees maps to the
unit vector

    (cos(el) cos(az), cos(el) sin(az), sin(el))

i.e. azimuth is measured in the horizontal x-y plane from +x toward +y and
elevation from that plane toward +z.  The unit vector points from the array
toward the source.

Phase convention: spectra are analysed with an ``exp(+j 2 pi f t)`` kernel (see
:mod:`srpsbl.stft`), so a signal delayed by ``d`` seconds picks up the factor
``exp(+j 2 pi f d)``.  Under that convention the far-field Green's function
``exp(-j k y.x)`` is the physical response of a microphone at ``x`` to a plane
wave arriving from direction ``y``.

Pairs are enumerated as ``(m, m')`` with ``m < m'`` in lexicographic order:
``(0, 1), (0, 2), ..., (0, M-1), (1, 2), ...``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DomainError, SingularityError

DEFAULT_SOUND_SPEED = 343.0
NF = "NF"
FF = "FF"


def _check_mode(mode):
    mode = str(mode).upper()
    if mode not in (NF, FF):
        raise ConfigurationError(f"unknown propagation mode {mode!r}; expected NF or FF")
    return mode


@dataclass(frozen=True, eq=False)
class MicArray:
    """Microphone positions in meters, shape (M, 3)."""

    positions: np.ndarray
    sound_speed: float = DEFAULT_SOUND_SPEED
    name: str = "custom"

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ConfigurationError("microphone positions must be an (M, 3) array")
        if pos.shape[0] < 2:
            raise ConfigurationError("an array needs at least two microphones")
        if not np.all(np.isfinite(pos)):
            raise ConfigurationError("microphone positions must be finite")
        if self.sound_speed <= 0:
            raise ConfigurationError("sound speed must be positive")
        dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        if np.any(dist[np.triu_indices(len(pos), 1)] == 0.0):
            raise ConfigurationError("microphone positions must be distinct")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "sound_speed", float(self.sound_speed))

    @property
    def n_mics(self):
        return self.positions.shape[0]

    @cached_property
    def pairs(self):
        """Ordered list of (m, m') index pairs with m < m'."""
        m = self.n_mics
        return [(i, j) for i in range(m) for j in range(i + 1, m)]

    @property
    def n_pairs(self):
        return self.n_mics * (self.n_mics - 1) // 2

    @cached_property
    def pair_index(self):
        """(first, second) index arrays of the pair enumeration."""
        first, second = np.triu_indices(self.n_mics, 1)
        return first, second

    @property
    def centroid(self):
        return self.positions.mean(axis=0)

    def fingerprint(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.positions, dtype="<f8").tobytes())
        h.update(np.float64(self.sound_speed).astype("<f8").tobytes())
        return h.hexdigest()

    def to_text(self):
        return "".join(f"{x:.9g} {y:.9g} {z:.9g}\n" for x, y, z in self.positions)


def load_array(path, sound_speed=DEFAULT_SOUND_SPEED):
    """Read a geometry file: one microphone per line as ``x y z`` in meters.

    Blank lines and ``#`` comments are ignored.
    """
    rows = []
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 3:
            raise ConfigurationError(f"expected 'x y z', got {raw!r}", line=lineno)
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise ConfigurationError(f"non-numeric coordinate in {raw!r}", line=lineno) from None
    return MicArray(np.array(rows), sound_speed=sound_speed, name=Path(path).stem)


def uma16_array(spacing=0.042, sound_speed=DEFAULT_SOUND_SPEED):
    """A 4 x 4 planar grid approximating a 16-channel MEMS board.

    The board is mounted upright in the x-z plane facing +y, so the front
    hemisphere (azimuth 0..180 deg) is the half-space y >= 0.  Channels are
    numbered row by row from the top-left corner seen from the front.
    """
    offsets = (np.arange(4) - 1.5) * spacing
    pos = [(x, 0.0, z) for z in offsets[::-1] for x in offsets]
    return MicArray(np.array(pos), sound_speed=sound_speed, name="uma16")


BUILTIN_ARRAYS = {"uma16": uma16_array}


def get_array(ref, sound_speed=DEFAULT_SOUND_SPEED):
    """Resolve a built-in array name or a geometry file path."""
    if ref in BUILTIN_ARRAYS:
        return BUILTIN_ARRAYS[ref](sound_speed=sound_speed)
    path = Path(ref)
    if not path.exists():
        raise ConfigurationError(f"array geometry {ref!r} is neither built-in nor an existing file")
    return load_array(path, sound_speed=sound_speed)


def unit_vector(elevation, azimuth):
    """Unit direction(s) for elevation/azimuth given in degrees."""
    el = np.deg2rad(np.asarray(elevation, dtype=float))
    az = np.deg2rad(np.asarray(azimuth, dtype=float))
    return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1)


@dataclass(frozen=True)
class GridPoint:
    elevation: float
    azimuth: float
    unit_vector: np.ndarray = field(compare=False, repr=False, default=None)

    def __post_init__(self):
        if self.unit_vector is None:
            object.__setattr__(self, "unit_vector", unit_vector(self.elevation, self.azimuth))


@dataclass(frozen=True, eq=False)
class DoaGrid:
    """Candidate directions ordered elevation-major, then azimuth.

    Index ``i`` corresponds to elevation index ``i // n_azimuth`` and azimuth
    index ``i % n_azimuth``.
    """

    elevations: np.ndarray
    azimuths: np.ndarray
    elevation_step: float
    azimuth_step: float
    n_elevation: int
    n_azimuth: int

    def __len__(self):
        return len(self.elevations)

    @cached_property
    def unit_vectors(self):
        return unit_vector(self.elevations, self.azimuths)

    @property
    def points(self):
        return [GridPoint(float(e), float(a), u) for e, a, u in
                zip(self.elevations, self.azimuths, self.unit_vectors)]

    def point(self, index):
        return GridPoint(float(self.elevations[index]), float(self.azimuths[index]),
                         self.unit_vectors[index])

    def nearest(self, direction):
        """Index of the grid point closest in angle to a unit direction."""
        return int(np.argmax(self.unit_vectors @ np.asarray(direction, dtype=float)))

    def key(self):
        return (float(self.elevation_step), float(self.azimuth_step),
                self.n_elevation, self.n_azimuth,
                float(self.azimuths[0]), float(self.azimuths[self.n_azimuth - 1]))


def _n_steps(span, step, name):
    if not step > 0:
        raise ConfigurationError(f"{name} step must be positive, got {step}")
    n = span / step
    if abs(n - round(n)) > 1e-9:
        raise ConfigurationError(f"{name} step {step} does not divide the {span} deg range evenly")
    return int(round(n))


def build_doa_grid(elevation_step, azimuth_step, full_sphere=False):
    """Grid over elevation [-90, 90] and azimuth [0, 180], endpoints included.

    With ``full_sphere`` the azimuth range becomes [0, 360) for arrays that
    are not planar.
    """
    n_el = _n_steps(180.0, elevation_step, "elevation") + 1
    if full_sphere:
        n_az = _n_steps(360.0, azimuth_step, "azimuth")
    else:
        n_az = _n_steps(180.0, azimuth_step, "azimuth") + 1
    el = -90.0 + elevation_step * np.arange(n_el)
    az = azimuth_step * np.arange(n_az)
    elevations = np.repeat(el, n_az)
    azimuths = np.tile(az, n_el)
    return DoaGrid(elevations, azimuths, float(elevation_step), float(azimuth_step), n_el, n_az)


def _as_direction(target):
    u = np.asarray(target, dtype=float)
    if isinstance(target, GridPoint):
        u = target.unit_vector
    if u.shape != (3,) or abs(np.linalg.norm(u) - 1.0) > 1e-9:
        raise DomainError("far-field target must be a 3-D unit direction")
    return u


def _as_position(target):
    y = np.asarray(target, dtype=float)
    if y.shape != (3,):
        raise DomainError("near-field target must be a 3-D position")
    return y


def tdoa(array, pair, target, mode=FF):
    """TDOA in seconds for pair (m, m') and one target.

    NF: (|y - x_m| - |y - x_m'|) / c for a source position ``y``.
    FF: ((x_m - x_m') . y) / c for a unit direction ``y``.

    The two branches follow opposite sign conventions (the FF value is the
    negative of the NF value in the far limit); both are kept as defined.
    Only the FF branch feeds the SRP steering.
    """
    mode = _check_mode(mode)
    m, mp = pair
    xm, xmp = array.positions[m], array.positions[mp]
    c = array.sound_speed
    if mode == FF:
        return float(np.dot(xm - xmp, _as_direction(target)) / c)
    y = _as_position(target)
    dm, dmp = np.linalg.norm(y - xm), np.linalg.norm(y - xmp)
    if dm == 0.0 or dmp == 0.0:
        raise DomainError("near-field target coincides with a microphone")
    return float((dm - dmp) / c)


def pair_tdoas(array, directions):
    """Far-field TDOAs for many directions, shape (n_directions, L)."""
    first, second = array.pair_index
    u = np.atleast_2d(np.asarray(directions, dtype=float))
    proj = u @ array.positions.T
    return (proj[:, first] - proj[:, second]) / array.sound_speed


def green(candidate, mic_position, wavenumber, mode=FF):
    """Free-field Green's function between a candidate and one microphone."""
    mode = _check_mode(mode)
    if wavenumber < 0:
        raise DomainError("wavenumber must be non-negative")
    x = np.asarray(mic_position, dtype=float)
    if mode == FF:
        return complex(np.exp(-1j * wavenumber * np.dot(_as_direction(candidate), x)))
    r = np.linalg.norm(x - _as_position(candidate))
    if r == 0.0:
        raise SingularityError("near-field candidate coincides with a microphone")
    return complex(np.exp(1j * wavenumber * r) / (4 * np.pi * r))


def green_matrix(array, candidates, wavenumber, mode=FF):
    """Green's functions for many candidates, shape (Q, M).

    ``candidates`` holds unit directions (FF) or positions (NF), one per row.
    """
    mode = _check_mode(mode)
    if wavenumber < 0:
        raise DomainError("wavenumber must be non-negative")
    cand = np.atleast_2d(np.asarray(candidates, dtype=float))
    if mode == FF:
        return np.exp(-1j * wavenumber * (cand @ array.positions.T))
    r = np.linalg.norm(cand[:, None, :] - array.positions[None, :, :], axis=-1)
    if np.any(r == 0.0):
        raise SingularityError("near-field candidate coincides with a microphone")
    return np.exp(1j * wavenumber * r) / (4 * np.pi * r)


def rtf(candidate, pair_positions, wavenumber, mode=FF):
    """Relative transfer function G_m conj(G_m') for one microphone pair.

    ``pair_positions`` is ``(x_m, x_m')``; positions rather than indices so
    degenerate pairs can be evaluated.
    """
    xm, xmp = pair_positions
    return green(candidate, xm, wavenumber, mode) * np.conj(green(candidate, xmp, wavenumber, mode))


def rtf_matrix(array, candidates, wavenumber, mode=FF):
    """RTFs for every candidate and pair, shape (Q, L)."""
    g = green_matrix(array, candidates, wavenumber, mode)
    first, second = array.pair_index
    return g[:, first] * np.conj(g[:, second])


def tdoa_from_rtf(h, frequency):
    """Recover the FF TDOA (seconds) from a unit-magnitude RTF at ``frequency`` Hz.

    Valid only while |2 pi f tau| < pi; beyond that the phase wraps.
    """
    h = complex(h)
    if abs(abs(h) - 1.0) > 1e-6:
        raise DomainError(f"RTF magnitude {abs(h):.3g} is not 1; only far-field RTFs carry a pure delay")
    if not frequency > 0:
        raise DomainError("frequency must be positive")
    return float(-np.angle(h) / (2 * np.pi * frequency))


def bin_frequencies(bins, sample_rate, frame_length):
    """Physical frequency (Hz) of STFT bin indices."""
    return np.asarray(bins, dtype=float) * sample_rate / frame_length


def wavenumbers(frequencies, sound_speed=DEFAULT_SOUND_SPEED):
    return 2 * np.pi * np.asarray(frequencies, dtype=float) / sound_speed

