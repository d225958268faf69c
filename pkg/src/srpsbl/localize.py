"""Peak extraction on direction maps and the localization-error metric."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .errors import DomainError
from .geometry import GridPoint, unit_vector

SHORTFALL_PENALTY_DEG = 180.0


@dataclass(frozen=True)
class DoaEstimate:
    elevation: float
    azimuth: float
    score: float
    rank: int
    index: int = field(default=-1, compare=False)

    @property
    def unit_vector(self):
        return unit_vector(self.elevation, self.azimuth)

    def to_record(self):
        return {"rank": self.rank, "elevation_deg": self.elevation,
                "azimuth_deg": self.azimuth, "score": self.score}


@dataclass
class PeakSelection:
    estimates: list
    shortfall: bool = False

    def __iter__(self):
        return iter(self.estimates)

    def __len__(self):
        return len(self.estimates)

    def __getitem__(self, i):
        return self.estimates[i]


def _vec(p):
    if isinstance(p, (GridPoint, DoaEstimate)):
        return np.asarray(p.unit_vector, dtype=float)
    return np.asarray(p, dtype=float)


def _angles(u, v):
    # atan2 form of arccos(u . v): same angle, but exact near 0 and 180 deg
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    cross = np.linalg.norm(np.cross(u[..., :, None, :], v[..., None, :, :]), axis=-1)
    return np.degrees(np.arctan2(cross, u @ np.swapaxes(v, -1, -2)))


def great_circle_angle(a, b):
    """Angle between two directions in degrees."""
    return float(_angles(_vec(a)[None], _vec(b)[None])[0, 0])


def _ranked_order(values):
    # descending value, ties resolved toward the lowest index
    return np.lexsort((np.arange(len(values)), -np.asarray(values, dtype=float)))


def pick_peaks(values, grid, n_peaks, min_separation=3.0, candidates=None):
    """Greedy peak selection by descending value with an angular exclusion.

    A candidate closer than ``min_separation`` degrees to an already selected
    point is skipped.  ``candidates`` optionally restricts the search to a
    subset of grid indices (e.g. local maxima).  When fewer than ``n_peaks``
    points qualify, all qualifying points are returned with ``shortfall`` set.
    """
    if n_peaks < 1:
        raise DomainError("n_peaks must be at least 1")
    if min_separation < 0:
        raise DomainError("min_separation must be non-negative")
    values = np.asarray(values, dtype=float)
    if values.shape != (len(grid),):
        raise DomainError(f"map has {values.shape} entries, grid has {len(grid)} points")
    order = _ranked_order(values)
    if candidates is not None:
        allowed = np.zeros(len(values), dtype=bool)
        allowed[np.asarray(candidates, dtype=int)] = True
        order = order[allowed[order]]
    uvec = grid.unit_vectors
    chosen = []
    for idx in order:
        # the small slack keeps points exactly min_separation apart eligible
        if chosen and np.any(_angles(uvec[chosen], uvec[idx][None]) < min_separation - 1e-9):
            continue
        chosen.append(int(idx))
        if len(chosen) == n_peaks:
            break
    estimates = [DoaEstimate(float(grid.elevations[i]), float(grid.azimuths[i]),
                             float(values[i]), rank, i)
                 for rank, i in enumerate(chosen, start=1)]
    return PeakSelection(estimates, shortfall=len(chosen) < n_peaks)


def local_maxima(values, grid, radius=None):
    """Indices of strict local maxima of a map on a direction grid.

    Neighbours are grid points within ``radius`` degrees (default: one
    diagonal grid step).  Points sharing a direction (the poles) are merged
    into one candidate: the member with the largest value, ties going to the
    lowest index.  A point qualifies only if it is strictly larger
    than every neighbour, so flat plateaus yield no maxima.
    """
    values = np.asarray(values, dtype=float)
    if radius is None:
        radius = float(np.hypot(grid.elevation_step, grid.azimuth_step)) + 1e-6
    uvec = grid.unit_vectors
    tree = cKDTree(uvec)
    chord = 2 * np.sin(np.radians(radius) / 2)
    dup_chord = 1e-9
    maxima = []
    for i, nbrs in enumerate(tree.query_ball_point(uvec, chord)):
        nbrs = np.asarray(nbrs, dtype=int)
        d = np.linalg.norm(uvec[nbrs] - uvec[i], axis=1)
        same = nbrs[(d <= dup_chord) & (nbrs != i)]
        # a shared direction is represented by its largest entry, ties to the lowest index
        if same.size and np.any((values[same] > values[i]) |
                                ((values[same] == values[i]) & (same < i))):
            continue
        others = nbrs[d > dup_chord]
        if others.size == 0 or np.all(values[i] > values[others]):
            maxima.append(i)
    return np.asarray(maxima, dtype=int)


def localization_error(estimates, truths):
    """Mean angle (deg) from each estimate to its nearest true direction.

    Each estimate is matched to the closest truth independently, so two
    estimates may share a truth.  Missing estimates (fewer than truths)
    count as ``SHORTFALL_PENALTY_DEG`` each.
    """
    truths = list(truths)
    if not truths:
        raise DomainError("at least one true direction is required")
    j = len(truths)
    ests = list(estimates)[:j]
    tv = np.array([_vec(t) for t in truths])
    errors = [float(_angles(_vec(e)[None], tv).min()) for e in ests]
    errors += [SHORTFALL_PENALTY_DEG] * (j - len(ests))
    return float(np.mean(errors))


def assigned_localization_error(estimates, truths):
    """Mean angle under a one-to-one estimate/truth assignment.

    A stricter companion to :func:`localization_error`: duplicate estimates
    of one source cannot hide a missed source.  Unmatched truths cost
    ``SHORTFALL_PENALTY_DEG`` each.
    """
    truths = list(truths)
    if not truths:
        raise DomainError("at least one true direction is required")
    ests = list(estimates)[:len(truths)]
    if not ests:
        return SHORTFALL_PENALTY_DEG
    tv = np.array([_vec(t) for t in truths])
    ev = np.array([_vec(e) for e in ests])
    cost = _angles(ev, tv)
    rows, cols = linear_sum_assignment(cost)
    total = cost[rows, cols].sum() + SHORTFALL_PENALTY_DEG * (len(truths) - len(rows))
    return float(total / len(truths))


def estimates_to_json(estimates):
    return json.dumps([e.to_record() for e in estimates], indent=2)


def estimate_from_record(rec):
    return DoaEstimate(rec["elevation_deg"], rec["azimuth_deg"], rec["score"], rec["rank"])

