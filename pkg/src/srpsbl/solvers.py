"""Sparse solvers for direction maps.

* :func:`msbl_solve` - multi-bin M-SBL on the real SRP tensor (SRP-SBL).
* :func:`somp_solve` - simultaneous OMP on averaged SRP maps (SRP-S).
* :func:`msbl_direct_solve` - complex M-SBL on microphone spectra.

All M-SBL variants share one fixed-point update.  For bin k with data
``Z_k`` (N x T), dictionary ``D_k`` (N x Q) and
``Sigma_k = s2_k I + D_k diag(gamma) D_k^H``::

    gamma_q <- gamma_q / T * sum_k |Z_k^H Sigma_k^-1 d_kq|^2
                           / sum_k d_kq^H Sigma_k^-1 d_kq

The update is multiplicative, so ``gamma_q = 0`` stays zero.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DomainError, NumericalFailure
from .geometry import FF, green_matrix, wavenumbers

log = logging.getLogger(__name__)

PRUNE_RATIO = 1e-8
NOISE_FRACTION = 0.1
_EPS = np.finfo(float).tiny


@dataclass
class MsblState:
    gamma: np.ndarray
    noise_variance: np.ndarray
    iteration: int = 0
    last_relative_change: float = np.inf


@dataclass
class SparseMap:
    weights: np.ndarray
    solver_tag: str
    iterations: int = 0
    converged: bool = True
    noise_variance: np.ndarray | None = None
    trace: list = field(default_factory=list)
    residual_norms: list = field(default_factory=list)


def relative_change(new, old):
    return float(np.max(np.abs(new - old)) / max(np.max(np.abs(old)), _EPS))


def _cholesky(sigma):
    """Lower Cholesky factor with jitter escalation (1e-10 .. 1e-6 of trace/N)."""
    try:
        return scipy.linalg.cholesky(sigma, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    scale = np.real(np.trace(sigma)) / sigma.shape[0]
    eye = np.eye(sigma.shape[0])
    for rel in (1e-10, 1e-9, 1e-8, 1e-7, 1e-6):
        try:
            return scipy.linalg.cholesky(sigma + rel * scale * eye, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            continue
    # last resort: clip the spectrum of the Hermitian part
    w, v = np.linalg.eigh((sigma + sigma.conj().T) / 2)
    w = np.maximum(w, 1e-6 * max(scale, _EPS))
    return scipy.linalg.cholesky((v * w) @ v.conj().T, lower=True, check_finite=False)


class _DenseProblem:
    """Per-bin dense dictionaries (real or complex) and data matrices."""

    def __init__(self, dicts, data):
        self.dicts = list(dicts)
        self.data = list(data)
        self.n_rows = self.data[0].shape[0]
        self.n_frames = self.data[0].shape[1]

    def restrict(self, keep):
        return _DenseProblem([d[:, keep] for d in self.dicts], self.data)

    def sweep(self, gamma, noise, want_residual=False):
        """Numerator and denominator sums of the update over all bins.

        With ``want_residual`` also returns per-bin (residual energy,
        effective parameter count) pairs for the noise refit.
        """
        num = np.zeros(gamma.shape)
        den = np.zeros(gamma.shape)
        resid = []
        for d, z, s2 in zip(self.dicts, self.data, noise):
            sigma = (d * gamma) @ d.conj().T
            sigma[np.diag_indices_from(sigma)] += s2
            chol = _cholesky(sigma)
            xt = scipy.linalg.solve_triangular(chol, d, lower=True, check_finite=False)
            zt = scipy.linalg.solve_triangular(chol, z, lower=True, check_finite=False)
            dq = np.sum(np.abs(xt) ** 2, axis=0)
            num += np.sum(np.abs(zt.conj().T @ xt) ** 2, axis=0)
            den += dq
            if want_residual:
                # residual Z - D mu equals s2 Sigma^-1 Z
                w = scipy.linalg.solve_triangular(chol, zt, lower=True, trans="C",
                                                  check_finite=False)
                resid.append((s2 ** 2 * np.sum(np.abs(w) ** 2), float(gamma @ dq)))
        return num, den, resid


class _FactoredProblem:
    """SRP-SBL restricted to the column space of the dictionary.

    With D_k = Q_k V_k (Q_k orthonormal, N x r) the update only involves V_k
    (r x Q) and the projected scatter C_k = Q_k^T Z_k Z_k^T Q_k, so each
    product is r x r x Q instead of N x N x Q.  Exact, not an approximation.
    """

    def __init__(self, v, scatter, perp_energy, n_rows, n_frames):
        self.v = v  # (K, r, Q)
        self.scatter = scatter  # (K, r, r)
        self.perp_energy = perp_energy  # (K,)
        self.n_rows = n_rows
        self.n_frames = n_frames

    @classmethod
    def build(cls, dictionary, data):
        vs, scat, perp = [], [], []
        for k, z in zip(dictionary.bins, data):
            u, v = dictionary.factors(int(k))
            q, r = np.linalg.qr(u)
            zr = q.T @ z
            vs.append(r @ v)
            scat.append(zr @ zr.T)
            perp.append(max(float(np.sum(z ** 2) - np.sum(zr ** 2)), 0.0))
        return cls(np.stack(vs), np.stack(scat), np.asarray(perp),
                   data[0].shape[0], data[0].shape[1])

    def restrict(self, keep):
        return _FactoredProblem(np.ascontiguousarray(self.v[:, :, keep]), self.scatter,
                                self.perp_energy, self.n_rows, self.n_frames)

    def sweep(self, gamma, noise, want_residual=False):
        r = self.v.shape[1]
        inner = (self.v * gamma) @ self.v.transpose(0, 2, 1)
        inner[:, np.arange(r), np.arange(r)] += np.asarray(noise)[:, None]
        f = np.linalg.inv(inner)
        f = (f + f.transpose(0, 2, 1)) / 2
        fv = f @ self.v
        num = np.einsum("krq,krq->q", fv, self.scatter @ fv)
        if not want_residual:
            return num, np.einsum("krq,krq->q", self.v, fv), []
        dq = np.einsum("krq,krq->kq", self.v, fv)
        resid = []
        for b, s2 in enumerate(noise):
            proj = float(np.trace(f[b] @ self.scatter[b] @ f[b]))
            resid.append((self.perp_energy[b] + s2 ** 2 * proj, float(gamma @ dq[b])))
        return num, dq.sum(axis=0), resid


def _update_gamma(gamma, num, den, n_frames):
    out = np.zeros_like(gamma)
    ok = den > 0
    out[ok] = gamma[ok] / n_frames * num[ok] / den[ok]
    return np.maximum(out, 0.0)


def _refit_noise(resid, n_rows, n_frames, floor):
    out = []
    for energy, fit in resid:
        dof = max(n_rows - fit, 1e-3 * n_rows)
        out.append(max(energy / n_frames / dof, floor))
    return np.asarray(out)


def _iterate(problem, gamma, noise, threshold, max_iterations, tag,
             prune=PRUNE_RATIO, learn_noise=False, trace=False):
    """Shared M-SBL loop; zeroed columns are dropped from ``problem``."""
    if not threshold > 0:
        raise DomainError("convergence threshold must be positive")
    q_total = gamma.size
    active = np.flatnonzero(gamma > 0)
    if active.size < q_total:
        problem = problem.restrict(active)
    g = gamma[active].copy()
    noise = np.asarray(noise, dtype=float).copy()
    noise_floor = 1e-12 * max(float(np.max(noise)), _EPS)
    trace_rows = []
    change = np.inf
    it = 0
    for it in range(1, max_iterations + 1):
        num, den, resid = problem.sweep(g, noise, want_residual=learn_noise)
        new = _update_gamma(g, num, den, problem.n_frames)
        if not np.all(np.isfinite(new)):
            raise NumericalFailure("non-finite hyperparameters in M-SBL update", iteration=it)
        top = new.max() if new.size else 0.0
        if prune and top > 0:
            new[new < prune * top] = 0.0
        full_old = np.zeros(q_total)
        full_old[active] = g
        full_new = np.zeros(q_total)
        full_new[active] = new
        change = relative_change(full_new, full_old)
        if learn_noise:
            noise = _refit_noise(resid, problem.n_rows, problem.n_frames, noise_floor)
        if trace:
            order = np.argsort(-full_new, kind="stable")[:5]
            trace_rows.append((it, change, [(int(i), float(full_new[i])) for i in order]))
        log.debug("%s iteration %d: relative change %.3e, %d active", tag, it, change,
                  np.count_nonzero(new))
        keep = new > 0
        if keep.sum() < 0.9 * keep.size:
            active = active[keep]
            problem = problem.restrict(keep)
            new = new[keep]
        g = new
        if change < threshold or active.size == 0:
            break
    weights = np.zeros(q_total)
    weights[active] = g
    return SparseMap(weights, tag, iterations=it, converged=change < threshold,
                     noise_variance=noise, trace=trace_rows)


def default_noise_variance(data, fraction=NOISE_FRACTION):
    """Per-bin s2_k = fraction * mean diagonal of Z_k Z_k^H / T."""
    return np.array([fraction * np.sum(np.abs(z) ** 2) / z.size for z in data])


def default_gamma(data, n_atoms):
    """Uniform start: mean per-bin data power divided by the atom count."""
    power = np.mean([np.sum(np.abs(z) ** 2) / z.size for z in data])
    return np.full(n_atoms, power / n_atoms)


def _srp_data(srp, normalize_bins):
    data = list(srp.per_bin())
    if normalize_bins:
        data = [z / max(np.sqrt(np.mean(z ** 2)), _EPS) for z in data]
    return data


def msbl_update(state, srp, dictionary, normalize_bins=False):
    """One M-SBL step on an SRP tensor; returns a new state (no pruning)."""
    data = _srp_data(srp, normalize_bins)
    dicts = [dictionary.matrix(int(k)) for k in srp.bins]
    gamma = np.asarray(state.gamma, dtype=float)
    num, den, _ = _DenseProblem(dicts, data).sweep(gamma, state.noise_variance)
    new = _update_gamma(gamma, num, den, data[0].shape[1])
    return MsblState(new, np.asarray(state.noise_variance), state.iteration + 1,
                     relative_change(new, gamma))


def _check_finite(data):
    if not all(np.all(np.isfinite(z)) for z in data):
        raise NumericalFailure("non-finite values in the data entering the M-SBL update",
                               iteration=1)


def _noise(data, noise_variance):
    if noise_variance is None:
        return default_noise_variance(data)
    return np.broadcast_to(np.asarray(noise_variance, dtype=float), (len(data),)).copy()


def msbl_solve(srp, dictionary, convergence_threshold=1e-3, max_iterations=200,
               noise_variance=None, gamma_init=None, normalize_bins=False,
               prune=PRUNE_RATIO, learn_noise=False, trace=False, dense=False):
    """SRP-SBL: M-SBL over all bins of an SRP tensor.

    ``noise_variance`` (scalar or per bin) defaults to a tenth of the mean
    per-bin SRP power and is held fixed unless ``learn_noise`` is set.
    ``dense=True`` iterates on the full N x Q dictionaries instead of their
    exact low-rank factors (slower; kept for cross-checking).
    """
    if not np.array_equal(np.asarray(dictionary.bins), np.asarray(srp.bins)):
        raise DomainError("SRP tensor and dictionary cover different bins")
    data = _srp_data(srp, normalize_bins)
    _check_finite(data)
    q = len(dictionary.fine_grid)
    noise = _noise(data, noise_variance)
    if not np.any(noise > 0):
        # all-zero tensor: no power to explain, every weight is zero
        return SparseMap(np.zeros(q), "srp_sbl", iterations=0, noise_variance=noise)
    gamma = default_gamma(data, q) if gamma_init is None else np.asarray(gamma_init, dtype=float)
    if gamma.shape != (q,) or not np.all(np.isfinite(gamma)) or np.any(gamma < 0):
        raise DomainError("gamma_init must hold one finite, nonnegative weight per fine direction")
    if dense:
        problem = _DenseProblem([dictionary.matrix(int(k)) for k in srp.bins], data)
    else:
        problem = _FactoredProblem.build(dictionary, data)
    return _iterate(problem, gamma, noise, convergence_threshold, max_iterations, "srp_sbl",
                    prune=prune, learn_noise=learn_noise, trace=trace)


def msbl_direct_solve(spec, array, fine_grid, bins, mode=FF, convergence_threshold=1e-3,
                      max_iterations=200, noise_variance=None, prune=PRUNE_RATIO,
                      learn_noise=False, trace=False, radius=2.0):
    """Baseline M-SBL on microphone spectra with a Green's-function dictionary."""
    bins = np.asarray(bins, dtype=int)
    ks = wavenumbers(spec.frequencies(bins), array.sound_speed)
    if mode == FF:
        cand = fine_grid.unit_vectors
    else:
        cand = array.centroid + radius * fine_grid.unit_vectors
    dicts = [green_matrix(array, cand, k, mode).T for k in ks]
    data = [spec.bins[:, k, :] for k in bins]
    _check_finite(data)
    q = len(fine_grid)
    noise = _noise(data, noise_variance)
    if not np.any(noise > 0):
        return SparseMap(np.zeros(q), "msbl_direct", iterations=0, noise_variance=noise)
    return _iterate(_DenseProblem(dicts, data), default_gamma(data, q), noise,
                    convergence_threshold, max_iterations, "msbl_direct", prune=prune,
                    learn_noise=learn_noise, trace=trace)


def somp_solve(data, dictionary, n_atoms, tol=1e-12):
    """Simultaneous OMP with a least-squares refit after every selection.

    ``data`` is N x m (or a length-N vector); atoms are ranked by the summed
    absolute correlation of their unit-normalised column with all residual
    columns.  Weights are the row norms of the final coefficient matrix.
    """
    if n_atoms < 1:
        raise DomainError("n_atoms must be at least 1")
    phi = np.asarray(dictionary, dtype=float)
    y = np.asarray(data, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    norms = np.linalg.norm(phi, axis=0)
    if np.any(norms == 0):
        raise DomainError("dictionary has an all-zero column")
    weights = np.zeros(phi.shape[1])
    y_norm = np.linalg.norm(y)
    residual = y.copy()
    residual_norms = [float(y_norm)]
    support = []
    coef = np.zeros((0, y.shape[1]))
    for _ in range(min(n_atoms, phi.shape[1])):
        if residual_norms[-1] <= tol * max(y_norm, 1.0):
            break
        score = np.sum(np.abs(phi.T @ residual), axis=1) / norms
        score[support] = -np.inf
        best = int(np.argmax(score))
        if not score[best] > 0:
            break
        support.append(best)
        sub = phi[:, support]
        if np.linalg.matrix_rank(sub) < len(support):
            warnings.warn("SOMP support is rank deficient; refitting with the pseudoinverse",
                          stacklevel=2)
            coef = np.linalg.pinv(sub) @ y
        else:
            coef = np.linalg.lstsq(sub, y, rcond=None)[0]
        residual = y - sub @ coef
        residual_norms.append(float(np.linalg.norm(residual)))
    if support:
        weights[support] = np.linalg.norm(coef, axis=1)
    return SparseMap(weights, "srp_s", iterations=len(support),
                     residual_norms=residual_norms)


def write_trace(sparse_map, path):
    """Solver trace as CSV: iteration, relative change, top-5 (index:gamma)."""
    with open(path, "w") as fh:
        fh.write("iteration,relative_change,top5\n")
        for it, change, top in sparse_map.trace:
            cells = " ".join(f"{i}:{g:.6g}" for i, g in top)
            fh.write(f"{it},{change:.6e},{cells}\n")
