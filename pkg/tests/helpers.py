"""Small fixtures shared by solver and acceptance tests."""
import itertools

import numpy as np

from srpsbl.srp import SrpTensor


class MatrixDictionary:
    """Explicit per-bin dictionaries with the interface the solvers use."""

    def __init__(self, mats, bins=None):
        self.mats = [np.asarray(m, dtype=float) for m in mats]
        self.bins = np.arange(len(self.mats)) if bins is None else np.asarray(bins)
        self.fine_grid = range(self.mats[0].shape[1])

    def matrix(self, k):
        return self.mats[int(np.flatnonzero(self.bins == k)[0])]

    def factors(self, k):
        d = self.matrix(k)
        return d, np.eye(d.shape[1])


def tensor(slices, bins=None):
    """SrpTensor from per-bin (N, T) slices."""
    vals = np.stack(slices, axis=-1)
    bins = np.arange(len(slices)) if bins is None else np.asarray(bins)
    return SrpTensor(vals, None, bins, bins.astype(float))


def sparse_fixture(rng, n=12, q=20, t=8, k=3, separation=5):
    """Z_k = D_k S_k with two active, well separated rows."""
    mats = [rng.standard_normal((n, q)) for _ in range(k)]
    q1 = int(rng.integers(0, q - separation))
    q2 = int(rng.integers(q1 + separation, q))
    data = []
    for d in mats:
        s = np.zeros((q, t))
        s[[q1, q2]] = rng.standard_normal((2, t)) * rng.uniform(1, 2, (2, 1))
        data.append(d @ s)
    return mats, data, {q1, q2}


def brute_force_support(mats, data, size=2):
    """Support of the given size with the smallest joint least-squares residual."""
    q = mats[0].shape[1]
    best, best_res = None, np.inf
    for sup in itertools.combinations(range(q), size):
        res = 0.0
        for d, z in zip(mats, data):
            sub = d[:, sup]
            coef = np.linalg.lstsq(sub, z, rcond=None)[0]
            res += np.sum((z - sub @ coef) ** 2)
        if res < best_res:
            best, best_res = set(sup), res
    return best
