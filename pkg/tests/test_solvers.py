import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import MatrixDictionary, brute_force_support, sparse_fixture, tensor
from srpsbl.dictionary import build_dictionary
from srpsbl.errors import DomainError, NumericalFailure
from srpsbl.geometry import build_doa_grid
from srpsbl.sim import render_spectrogram
from srpsbl.solvers import (MsblState, default_gamma, default_noise_variance, msbl_direct_solve,
                            msbl_solve, msbl_update, relative_change, somp_solve, write_trace)
from srpsbl.srp import srp_tensor, whiten
from srpsbl.stft import Spectrogram


def scalar_problem(z=1.0):
    return tensor([np.array([[z]])]), MatrixDictionary([np.array([[1.0]])])


# --- single update ------------------------------------------------------------

def test_update_zero_data():
    srp = tensor([np.zeros((4, 3))])
    d = MatrixDictionary([np.random.default_rng(0).standard_normal((4, 6))])
    out = msbl_update(MsblState(np.ones(6), np.array([0.1])), srp, d)
    assert not np.any(out.gamma)


def test_update_scalar_fixed_point():
    srp, d = scalar_problem()
    out = msbl_update(MsblState(np.array([0.9]), np.array([0.1])), srp, d)
    assert out.gamma[0] == pytest.approx(0.9, abs=1e-15)
    assert out.iteration == 1 and out.last_relative_change == pytest.approx(0, abs=1e-14)


def test_update_zero_is_absorbing(rng):
    srp = tensor([rng.standard_normal((5, 4)) for _ in range(2)])
    d = MatrixDictionary([rng.standard_normal((5, 9)) for _ in range(2)])
    g = rng.random(9)
    g[[2, 7]] = 0
    out = msbl_update(MsblState(g, np.array([0.3, 0.2])), srp, d)
    assert out.gamma[2] == 0 and out.gamma[7] == 0 and np.all(out.gamma >= 0)


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=60, deadline=None)
def test_update_nonnegative_and_absorbing(seed):
    rng = np.random.default_rng(seed)
    n, q, t, k = rng.integers(2, 7), rng.integers(2, 12), rng.integers(1, 5), rng.integers(1, 3)
    srp = tensor([rng.standard_normal((n, t)) for _ in range(k)])
    d = MatrixDictionary([rng.standard_normal((n, q)) for _ in range(k)])
    g = rng.random(q) * (rng.random(q) > 0.3)
    out = msbl_update(MsblState(g, rng.uniform(1e-3, 1, k)), srp, d)
    assert np.all(out.gamma >= 0) and np.all(np.isfinite(out.gamma))
    assert np.all(out.gamma[g == 0] == 0)


def test_relative_change_definition():
    assert relative_change(np.array([1.0, 3.0]), np.array([1.0, 2.0])) == 0.5
    assert np.isfinite(relative_change(np.ones(2), np.zeros(2)))


def test_defaults():
    data = [np.full((2, 5), 2.0), np.full((2, 5), 1.0)]
    np.testing.assert_allclose(default_noise_variance(data), [0.4, 0.1])
    np.testing.assert_allclose(default_gamma(data, 10), np.full(10, 2.5 / 10))


# --- solve ----------------------------------------------------------------------

def test_scalar_fixed_point_reached():
    srp, d = scalar_problem()
    res = msbl_solve(srp, d, convergence_threshold=1e-12, max_iterations=200,
                     noise_variance=0.1, gamma_init=np.array([0.05]), prune=0)
    assert res.iterations <= 200
    assert res.weights[0] == pytest.approx(0.9, abs=1e-6)


def test_threshold_huge_stops_after_one_iteration(rng):
    mats, data, _ = sparse_fixture(rng)
    res = msbl_solve(tensor(data), MatrixDictionary(mats), convergence_threshold=1e9)
    assert res.iterations == 1 and res.converged


def test_threshold_must_be_positive():
    srp, d = scalar_problem()
    with pytest.raises(DomainError):
        msbl_solve(srp, d, convergence_threshold=0)


@pytest.mark.parametrize("dense", [False, True])
def test_exact_support_recovery(dense):
    rng = np.random.default_rng(11)
    for _ in range(5):
        mats, data, support = sparse_fixture(rng)
        power = np.mean([np.mean(z ** 2) for z in data])
        res = msbl_solve(tensor(data), MatrixDictionary(mats), noise_variance=1e-6 * power,
                         dense=dense)
        top2 = set(np.argsort(-res.weights)[:2].tolist())
        assert top2 == support == brute_force_support(mats, data)


def test_factored_matches_dense(rng):
    mats, data, _ = sparse_fixture(rng, n=10, q=30, t=6, k=4)
    data = [z + 0.3 * rng.standard_normal(z.shape) for z in data]
    for learn in (False, True):
        a = msbl_solve(tensor(data), MatrixDictionary(mats), learn_noise=learn, dense=True)
        b = msbl_solve(tensor(data), MatrixDictionary(mats), learn_noise=learn)
        assert a.iterations == b.iterations
        np.testing.assert_allclose(b.weights, a.weights, atol=1e-8 * a.weights.max())


def test_scale_coherence(rng):
    mats, data, _ = sparse_fixture(rng)
    data = [z + 0.1 * rng.standard_normal(z.shape) for z in data]
    a = msbl_solve(tensor(data), MatrixDictionary(mats), prune=0, max_iterations=50)
    b = msbl_solve(tensor([3.0 * z for z in data]), MatrixDictionary(mats), prune=0,
                   max_iterations=50)
    np.testing.assert_allclose(b.weights, 9.0 * a.weights, rtol=1e-6, atol=1e-12)
    assert np.array_equal(np.argsort(-a.weights, kind="stable")[:5],
                          np.argsort(-b.weights, kind="stable")[:5])


def test_zero_tensor_gives_zero_map():
    srp = tensor([np.zeros((4, 3))])
    res = msbl_solve(srp, MatrixDictionary([np.ones((4, 5))]))
    assert not np.any(res.weights)


def test_non_finite_reports_iteration(rng):
    mats, data, _ = sparse_fixture(rng)
    data[0][0, 0] = np.nan
    with pytest.raises(NumericalFailure, match="iteration 1"):
        msbl_solve(tensor(data), MatrixDictionary(mats))


@pytest.mark.parametrize("bad", [[np.inf], [np.nan], [-1.0], [1.0, 1.0]])
def test_gamma_init_validated(bad):
    srp, d = scalar_problem()
    with pytest.raises(DomainError):
        msbl_solve(srp, d, gamma_init=np.array(bad), noise_variance=0.1)


def test_bins_must_match(rng):
    mats, data, _ = sparse_fixture(rng)
    with pytest.raises(DomainError):
        msbl_solve(tensor(data, bins=[5, 6, 7]), MatrixDictionary(mats))


def test_pruning_and_trace(tmp_path, rng):
    mats, data, support = sparse_fixture(rng)
    res = msbl_solve(tensor(data), MatrixDictionary(mats), noise_variance=1e-4, trace=True)
    assert np.count_nonzero(res.weights) < len(res.weights)
    assert set(np.flatnonzero(res.weights)) >= support
    write_trace(res, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "iteration,relative_change,top5"
    assert len(lines) == res.iterations + 1
    assert len(lines[1].split(",")[2].split()) == 5


def test_learned_noise_stays_positive(rng):
    mats, data, _ = sparse_fixture(rng)
    res = msbl_solve(tensor(data), MatrixDictionary(mats), learn_noise=True, max_iterations=30)
    assert np.all(res.noise_variance > 0)


def test_srp_sbl_single_source_on_real_dictionary(uma16):
    coarse, fine = build_doa_grid(15, 10), build_doa_grid(6, 6)
    bins = np.arange(45, 86, 8)
    q = fine.nearest(fine.point(len(fine) // 2 + 40).unit_vector)
    spec = render_spectrogram(uma16, fine.unit_vectors[q:q + 1], 4)
    srp = srp_tensor(whiten(spec, uma16.pairs, bins), coarse, uma16)
    d = build_dictionary(uma16, coarse, fine, bins, spec.frequencies(bins), materialize=False)
    res = msbl_solve(srp, d, max_iterations=50)
    assert int(np.argmax(res.weights)) == q


# --- SOMP -----------------------------------------------------------------------

def test_somp_orthogonal_exact():
    rng = np.random.default_rng(3)
    phi = np.linalg.qr(rng.standard_normal((10, 10)))[0][:, :8]
    coef = np.zeros((8, 2))
    coef[1] = [2.0, -1.0]
    coef[6] = [0.5, 3.0]
    res = somp_solve(phi @ coef, phi, 2)
    assert set(np.flatnonzero(res.weights)) == {1, 6} and res.iterations == 2
    np.testing.assert_allclose(res.weights[[1, 6]], np.linalg.norm(coef[[1, 6]], axis=1))
    assert res.residual_norms[-1] < 1e-10


def test_somp_zero_data():
    res = somp_solve(np.zeros((5, 3)), np.eye(5), 3)
    assert not np.any(res.weights) and res.iterations == 0 and res.residual_norms == [0.0]


def test_somp_monotone_residuals(rng):
    phi = rng.standard_normal((15, 40))
    res = somp_solve(rng.standard_normal((15, 4)), phi, 8)
    r = np.array(res.residual_norms)
    assert np.all(np.diff(r) < 0)


def test_somp_rank_deficient_warns():
    # the second column differs from the first only below the rank tolerance
    phi = np.array([[1.0, 1.0], [0.0, 1e-17]])
    y = np.array([1.0, 1.0])
    with pytest.warns(UserWarning, match="rank deficient"):
        res = somp_solve(y, phi, 2, tol=0)
    assert res.iterations == 2 and np.all(np.isfinite(res.weights))


def test_somp_errors():
    with pytest.raises(DomainError):
        somp_solve(np.ones(3), np.eye(3), 0)
    with pytest.raises(DomainError):
        somp_solve(np.ones(3), np.zeros((3, 2)), 1)


def test_somp_exact_recovery_matches_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(5):
        mats, data, support = sparse_fixture(rng, k=1)
        res = somp_solve(data[0], mats[0], 2)
        assert set(np.flatnonzero(res.weights)) == support == brute_force_support(mats, data)


def test_somp_single_source_map(uma16):
    coarse, fine = build_doa_grid(15, 10), build_doa_grid(6, 6)
    bins = np.arange(45, 86, 8)
    q = len(fine) // 2 + 100
    spec = render_spectrogram(uma16, fine.unit_vectors[q:q + 1], 2)
    srp = srp_tensor(whiten(spec, uma16.pairs, bins), coarse, uma16)
    d = build_dictionary(uma16, coarse, fine, bins, spec.frequencies(bins), materialize=False)
    res = somp_solve(srp.coarse_map(), d.mean_matrix(), 1)
    assert int(np.argmax(res.weights)) == q


# --- direct M-SBL -------------------------------------------------------------------

def test_direct_single_source(uma16):
    fine = build_doa_grid(4, 4)
    q = len(fine) // 2 + 17
    spec = render_spectrogram(uma16, fine.unit_vectors[q:q + 1], 3,
                              amplitudes=np.exp(2j * np.pi * np.random.default_rng(0).random((1, 513, 3))))
    res = msbl_direct_solve(spec, uma16, fine, np.arange(50, 86, 5), max_iterations=60)
    assert int(np.argmax(res.weights)) == q and res.solver_tag == "msbl_direct"


def test_direct_zero_spectrogram(uma16):
    spec = Spectrogram(np.zeros((16, 513, 3), dtype=complex), 1024, 512, 48000.0)
    res = msbl_direct_solve(spec, uma16, build_doa_grid(10, 10), np.arange(50, 60))
    assert not np.any(res.weights)
