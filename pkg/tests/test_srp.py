import numpy as np
import pytest
import scipy.signal

from srpsbl.errors import ConfigurationError
from srpsbl.geometry import GridPoint, MicArray, build_doa_grid, pair_tdoas
from srpsbl.sim import Scenario, Source, synthesize
from srpsbl.srp import (SrpTensor, WhitenedCrossSpectra, band_bins, map_to_csv, srp_bin,
                        srp_phat_localize, srp_tensor, whiten)
from srpsbl.stft import MultichannelSignal, Spectrogram, stft


def spec_of(values, frame_length=8, fs=8000.0):
    return Spectrogram(np.asarray(values, dtype=complex), frame_length, frame_length // 2, fs)


def test_whiten_examples():
    s = spec_of(np.array([2 * np.exp(1j * np.pi / 3), 0.5 * np.exp(1j * np.pi / 6)]).reshape(2, 1, 1))
    w = whiten(s, [(0, 1)])
    assert w.values[0, 0, 0] == pytest.approx(np.exp(1j * np.pi / 6), abs=1e-15)
    z = whiten(spec_of(np.array([0, 1 + 1j]).reshape(2, 1, 1)), [(0, 1)])
    assert z.values[0, 0, 0] == 0
    same = whiten(spec_of(np.tile(np.array([1 + 2j, -3j, 0.5])[None, :, None], (2, 1, 4))), [(0, 1)])
    np.testing.assert_array_equal(same.values, 1 + 0j)


def test_whiten_unit_or_zero(uma16, rng):
    x = rng.standard_normal((16, 4096))
    x[3] = 0.0
    w = whiten(stft(MultichannelSignal(x, 48000.0)), uma16.pairs, np.arange(10, 60))
    mag = np.abs(w.values)
    assert np.all((np.abs(mag - 1) < 1e-9) | (mag == 0))
    assert np.count_nonzero(mag == 0) == 15 * 50 * w.values.shape[2]


def test_srp_bin_matched_candidate(uma16, coarse_grid):
    tau = pair_tdoas(uma16, coarse_grid.unit_vectors[123:124])[0]
    f = 1500.0
    vals = np.exp(-2j * np.pi * f * tau)[:, None, None]
    cross = WhitenedCrossSpectra(vals, uma16.pairs, np.array([32]), np.array([f]))
    assert srp_bin(cross, 32, 0, tau, f) == pytest.approx(120.0, abs=1e-10)
    empty = WhitenedCrossSpectra(np.zeros_like(vals), uma16.pairs, np.array([32]), np.array([f]))
    assert srp_bin(empty, 32, 0, tau, f) == 0.0


def test_srp_bin_random_phase_bound():
    rng = np.random.default_rng(7)
    n_pairs, hits = 1000, 0
    for _ in range(400):
        vals = np.exp(2j * np.pi * rng.random(n_pairs))[:, None, None]
        cross = WhitenedCrossSpectra(vals, [(0, 1)] * n_pairs, np.array([1]), np.array([100.0]))
        hits += abs(srp_bin(cross, 1, 0, np.zeros(n_pairs), 100.0)) < 3 * np.sqrt(n_pairs / 2)
    assert hits / 400 >= 0.99


def random_cross(uma16, rng, n_bins=6, n_frames=5):
    x = rng.standard_normal((16, 512 * (n_frames + 1)))
    return whiten(stft(MultichannelSignal(x, 48000.0)), uma16.pairs, np.arange(20, 20 + n_bins))


def test_srp_tensor_matches_srp_bin(uma16, coarse_grid, rng):
    cross = random_cross(uma16, rng)
    tens = srp_tensor(cross, coarse_grid, uma16)
    tau = pair_tdoas(uma16, coarse_grid.unit_vectors)
    for n, t, j in [(0, 0, 0), (100, 3, 2), (246, 4, 5)]:
        k = int(cross.bins[j])
        assert tens.values[n, t, j] == pytest.approx(
            srp_bin(cross, k, t, tau[n], cross.frequencies[j]), abs=1e-10)
    assert np.all(np.abs(tens.values) <= 120 + 1e-9)
    np.testing.assert_allclose(tens.coarse_map(), tens.values.mean(axis=(1, 2)), atol=1e-12)
    assert tens.per_bin().shape == (6, 247, tens.values.shape[1])


def test_srp_tensor_band_selection(uma16, coarse_grid, rng):
    cross = random_cross(uma16, rng)
    sub = srp_tensor(cross, coarse_grid, uma16, (21, 23))
    assert sub.bins.tolist() == [21, 22, 23] and sub.freq_band == (21, 23)
    full = srp_tensor(cross, coarse_grid, uma16)
    np.testing.assert_allclose(sub.values, full.values[:, :, 1:4])
    with pytest.raises(ConfigurationError):
        srp_tensor(cross, coarse_grid, uma16, [])


def test_srp_tensor_shape_and_zero_input(uma16, coarse_grid):
    spec = stft(MultichannelSignal(np.zeros((16, 48000)), 48000.0))
    bins = np.arange(20, 84)
    tens = srp_tensor(whiten(spec, uma16.pairs, bins), coarse_grid, uma16)
    assert tens.values.shape == (247, 92, 64)
    assert not np.any(tens.values)


def test_per_channel_scaling_invariance(uma16, coarse_grid, rng):
    x = rng.standard_normal((16, 3072))
    scale = rng.uniform(0.1, 10, (16, 1))
    a = srp_tensor(whiten(stft(MultichannelSignal(x, 48000.0)), uma16.pairs, np.arange(30, 36)),
                   coarse_grid, uma16)
    b = srp_tensor(whiten(stft(MultichannelSignal(x * scale, 48000.0)), uma16.pairs,
                          np.arange(30, 36)), coarse_grid, uma16)
    np.testing.assert_allclose(a.values, b.values, atol=1e-12 * 120)


def tensor_from_map(values, grid):
    return SrpTensor(np.asarray(values, float)[:, None, None], grid, np.array([1]), np.array([1.0]))


def test_phat_single_strict_max(coarse_grid):
    z = np.zeros(247)
    z[17] = 5.0
    sel = srp_phat_localize(tensor_from_map(z, coarse_grid), 1)
    assert sel.estimates[0].index == 17 and not sel.shortfall


def test_phat_constant_map_shortfall(coarse_grid):
    sel = srp_phat_localize(tensor_from_map(np.ones(247), coarse_grid), 3)
    assert sel.shortfall and len(sel.estimates) < 3


def test_phat_simulated_source_on_grid_point(uma16, coarse_grid):
    truth = GridPoint(30.0, 60.0)
    sig = synthesize(Scenario(uma16, [Source(truth)], 0.5, snr_db=20.0, rng_seed=3))
    spec = stft(sig)
    cross = whiten(spec, uma16.pairs, band_bins(48000, 1024, 300, 4000))
    sel = srp_phat_localize(srp_tensor(cross, coarse_grid, uma16), 1)
    best = sel.estimates[0]
    assert (best.elevation, best.azimuth) == (30.0, 60.0)


def test_band_bins():
    b = band_bins(48000, 1024, 300, 4000)
    assert b[0] == 7 and b[-1] == 85 and len(b) == 79
    assert band_bins(48000, 1024, 2000, 4000, stride=3)[:3].tolist() == [43, 46, 49]
    assert len(band_bins(48000, 1024, 300, 4000, max_bins=64)) == 64
    with pytest.raises(ConfigurationError):
        band_bins(48000, 1024, 4000, 300)


def test_map_to_csv(tmp_path, coarse_grid):
    map_to_csv(np.arange(247) / 2, coarse_grid, tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "index,elevation_deg,azimuth_deg,value"
    assert lines[1] == "0,-90,0,0" and lines[-1] == "246,90,180,123"


# --- GCC-PHAT oracle --------------------------------------------------------------

def phat_xcorr_time_domain(frame_a, frame_b, lags):
    """Circular cross-correlation of the individually whitened frames, by direct sums."""
    def flat(x):
        spec = np.fft.fft(x)
        return np.fft.ifft(spec / np.abs(spec)).real
    a, b = flat(frame_a), flat(frame_b)
    n = len(a)
    idx = np.arange(n)
    return np.array([np.sum(a * b[(idx + d) % n]) for d in lags])


def steered_sum(cross, n_fft, fs, lags):
    """Sum over the whole spectrum of the steered whitened cross-spectrum."""
    k_bins = n_fft // 2 + 1
    weight = np.full(k_bins, 2.0)
    weight[[0, -1]] = 1.0
    out = []
    for d in lags:
        tau = np.array([d / fs])
        vals = [srp_bin(cross, k, 0, tau, cross.frequencies[k]) for k in range(k_bins)]
        out.append(np.dot(weight, vals))
    return np.array(out)


def steered_sum_tensor(cross, n_fft, fs, lags):
    """Same sum through srp_tensor: a two-mic array whose candidate TDOAs are the lags."""
    c = 343.0
    span = np.max(np.abs(lags))
    arr = MicArray(np.array([[span * c / fs, 0.0, 0.0], [0.0, 0.0, 0.0]]), sound_speed=c)
    ux = lags / span
    dirs = np.stack([ux, np.sqrt(1 - ux ** 2), np.zeros_like(ux)], axis=1)
    grid = _Directions(dirs)
    vals = srp_tensor(cross, grid, arr).values[:, 0, :]
    weight = np.full(n_fft // 2 + 1, 2.0)
    weight[[0, -1]] = 1.0
    return vals @ weight


class _Directions:
    def __init__(self, unit_vectors):
        self.unit_vectors = unit_vectors

    def __len__(self):
        return len(self.unit_vectors)


def gcc_trial(rng, n_fft=256, fs=16000.0, vectorized=False):
    x = rng.standard_normal((2, n_fft))
    spec = stft(MultichannelSignal(x, fs), n_fft, 0.5)
    cross = whiten(spec, [(0, 1)])
    lags = np.arange(-n_fft // 2, n_fft // 2)
    win = scipy.signal.get_window("hann", n_fft)
    oracle = phat_xcorr_time_domain(x[0] * win, x[1] * win, lags) * n_fft
    steer = steered_sum_tensor if vectorized else steered_sum
    return steer(cross, n_fft, fs, lags), oracle


def test_gcc_oracle_equivalence():
    rng = np.random.default_rng(2024)
    for _ in range(5):
        got, want = gcc_trial(rng)
        assert np.max(np.abs(got - want)) <= 1e-6 * np.max(np.abs(want))
        got, want = gcc_trial(rng, vectorized=True)
        assert np.max(np.abs(got - want)) <= 1e-6 * np.max(np.abs(want))
