import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cp3 import InsufficientCandidates, InsufficientData, ModelParams, TrainingError, detect, train
from cp3.trainer import (
    CandidateSet, adaptive_threshold, compute_pixel_stats, correlation_row, pair_statistics,
    pixel_rng, sample_supporting, select_candidates, select_supports,
)


def series_video(*cols):
    """Each argument is one pixel's time series; pixels lie on one row."""
    return np.array(cols, dtype=float).T[:, None, :, None]


# --- pixel statistics -------------------------------------------------------

def test_stats_constant():
    s = compute_pixel_stats(series_video([5, 5, 5, 5]))
    assert (s.mean.item(), s.variance.item(), s.noise_var.item()) == (5, 0, 0)


def test_stats_two_points():
    s = compute_pixel_stats(series_video([0, 10]))
    assert s.mean.item() == 5 and s.variance.item() == 50


def test_stats_ramp():
    s = compute_pixel_stats(series_video([1, 2, 3, 4, 5]))
    assert s.mean.item() == 3 and s.variance.item() == 2.5
    assert s.noise_var.item() == pytest.approx((1.4826 / math.sqrt(2)) ** 2)
    assert s.noise_var.item() == pytest.approx(1.0990, abs=1e-4)


def test_stats_use_luma_for_color():
    rng = np.random.default_rng(0)
    video = rng.uniform(0, 255, (6, 2, 3, 3))
    luma = 0.299 * video[..., 0] + 0.587 * video[..., 1] + 0.114 * video[..., 2]
    s = compute_pixel_stats(video)
    np.testing.assert_allclose(s.mean, luma.mean(0), rtol=1e-12)
    np.testing.assert_allclose(s.variance, luma.var(0, ddof=1), rtol=1e-12)


def test_stats_need_two_frames():
    with pytest.raises(InsufficientData):
        compute_pixel_stats(series_video([1]))


# --- correlation ------------------------------------------------------------

def _gamma(row, coord):
    return dict(row)[coord]


def test_correlation_perfect_and_anti():
    x = [1.0, 4, 2, 8, 5]
    row = correlation_row(series_video(x, x, [10 - v for v in x]), (0, 0))
    assert _gamma(row, (1, 0)) == pytest.approx(1.0, abs=1e-14)
    assert _gamma(row, (2, 0)) == pytest.approx(-1.0, abs=1e-14)
    assert (0, 0) not in dict(row)


def test_correlation_hand_example():
    row = correlation_row(series_video([1, 2, 3, 4], [1, 3, 2, 4]), (0, 0))
    assert _gamma(row, (1, 0)) == pytest.approx(0.8, abs=1e-14)


def test_correlation_zero_variance_is_zero():
    row = correlation_row(series_video([1, 2, 3], [7, 7, 7]), (0, 0))
    assert _gamma(row, (1, 0)) == 0.0


def test_correlation_matches_corrcoef_and_is_symmetric():
    rng = np.random.default_rng(5)
    video = rng.normal(size=(30, 6, 7, 1)).cumsum(axis=0)
    full = np.corrcoef(video[..., 0].reshape(30, -1).T)
    for target in [(0, 0), (3, 2), (6, 5)]:
        row = correlation_row(video, target)
        ti = target[1] * 7 + target[0]
        for (u, v), g in row:
            assert g == pytest.approx(full[ti, v * 7 + u], abs=1e-12)
    a = _gamma(correlation_row(video, (1, 1)), (4, 3))
    b = _gamma(correlation_row(video, (4, 3)), (1, 1))
    assert a == pytest.approx(b, abs=1e-14)


def test_correlation_stride():
    video = np.random.default_rng(1).normal(size=(10, 6, 6, 1))
    coords = [c for c, _ in correlation_row(video, (1, 1), stride=2)]
    assert coords == [(u, v) for v in range(0, 6, 2) for u in range(0, 6, 2)]
    assert (1, 1) not in coords


# --- adaptive threshold -----------------------------------------------------

def test_threshold_examples():
    assert adaptive_threshold(9, 1, ModelParams(gamma_scale=1.0, gamma_floor=0.0)) == pytest.approx(0.9)
    assert adaptive_threshold(4, 0, ModelParams(gamma_scale=0.8, gamma_floor=0.1)) == pytest.approx(0.8)
    assert adaptive_threshold(1, 1, ModelParams()) == 0.5
    assert adaptive_threshold(0, 0, ModelParams(gamma_floor=0.3)) == 0.3


@given(st.floats(0, 1e4), st.floats(0, 1e4))
def test_threshold_bounds(sv, nv):
    p = ModelParams()
    g = adaptive_threshold(sv, nv, p)
    assert p.gamma_floor <= g <= p.gamma_scale or g == p.gamma_floor


# --- candidates -------------------------------------------------------------

def test_candidates_filter_and_sort():
    row = [((1, 0), 0.5), ((2, 0), 0.95), ((3, 0), 0.9)]
    cs = select_candidates(row, 0.6, n_max=2, k_supports=1)
    assert cs.coords == [(2, 0), (3, 0)] and not cs.fallback


def test_candidates_ties_in_row_major_order():
    row = [((u, v), 1.0) for v in range(3) for u in range(3) if (u, v) != (1, 1)]
    row.reverse()
    cs = select_candidates(row, 0.5, n_max=4, k_supports=2, owner=(1, 1))
    assert cs.coords == [(0, 0), (1, 0), (2, 0), (0, 1)]


def test_candidates_fallback():
    row = [((u, 0), g) for u, g in enumerate([0.95, 0.92, 0.91, 0.2, 0.1, 0.3], start=1)]
    cs = select_candidates(row, 0.9, n_max=5, k_supports=4)
    assert cs.fallback
    assert cs.coords == [(1, 0), (2, 0), (3, 0), (6, 0), (4, 0)]


def test_candidates_too_few_positions():
    with pytest.raises(InsufficientCandidates):
        select_candidates([((1, 0), 0.9)], 0.5, n_max=8, k_supports=2)


# --- scattered sampling -----------------------------------------------------

def test_sampling_one_per_blob():
    centers = [(5, 5), (40, 5), (5, 40), (40, 40)]
    coords, gammas = [], []
    for i, (cu, cv) in enumerate(centers):
        for du in range(3):
            coords.append((cu + du, cv))
            gammas.append(0.9 - 0.01 * (i * 3 + du))
    order = np.argsort(gammas)[::-1]
    cs = CandidateSet((0, 0), [coords[i] for i in order], [gammas[i] for i in order])
    picks = sample_supporting(cs, 4, pixel_rng(0, 0, 0))
    blobs = sorted({min(range(4), key=lambda b: abs(p[0] - centers[b][0]) + abs(p[1] - centers[b][1]))
                    for p in picks})
    assert blobs == [0, 1, 2, 3]
    # the highest-correlation member of each blob is the leftmost one
    assert sorted(picks) == sorted(centers)


def test_sampling_k1_takes_best():
    cs = CandidateSet((0, 0), [(3, 3), (9, 1), (2, 7)], [0.99, 0.9, 0.8])
    assert sample_supporting(cs, 1, pixel_rng(4, 1, 2)) == [(3, 3)]


@given(st.integers(0, 2**32 - 1))
def test_sampling_grid_distinct_and_spread(seed):
    coords = [(2 * u, 2 * v) for v in range(5) for u in range(8)]
    cs = CandidateSet((50, 50), coords, [1.0 - 1e-3 * i for i in range(40)])
    picks = sample_supporting(cs, 20, np.random.default_rng(seed))
    assert len(set(picks)) == 20 and set(picks) <= set(coords)
    pts = np.array(picks, float)
    dist = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    assert dist[np.triu_indices(20, 1)].min() >= 2.0


def test_sampling_too_few():
    cs = CandidateSet((0, 0), [(1, 1)], [0.9])
    with pytest.raises(InsufficientCandidates):
        sample_supporting(cs, 2, pixel_rng(0, 0, 0))


# --- whole-frame selection and training --------------------------------------

def test_selected_pairs_clear_floor_unless_fallback(small_video):
    p = ModelParams(k_supports=6, seed=3)
    sel = select_supports(small_video, p)
    ok = sel.gammas.min(axis=-1) > sel.gamma_min
    assert np.all(ok | sel.fallback)
    # supports are distinct per pixel and never the pixel itself
    h, w, k, _ = sel.supports.shape
    for v in range(h):
        for u in range(w):
            s = {tuple(x) for x in sel.supports[v, u]}
            assert len(s) == k and (u, v) not in s


def test_selection_matches_per_pixel_pipeline(small_video):
    p = ModelParams(k_supports=5, seed=11)
    sel = select_supports(small_video, p)
    stats = compute_pixel_stats(small_video)
    for u, v in [(0, 0), (5, 4), (11, 9)]:
        row = correlation_row(small_video, (u, v))
        gmin = adaptive_threshold(stats.variance[v, u], stats.noise_var[v, u], p)
        cs = select_candidates(row, gmin, p.n_candidates, p.k_supports, owner=(u, v))
        picks = sample_supporting(cs, p.k_supports, pixel_rng(p.seed, u, v))
        assert [tuple(x) for x in sel.supports[v, u]] == picks
        assert bool(sel.fallback[v, u]) == cs.fallback


def test_pair_statistics_match_two_pass_oracle(small_video, small_model):
    delta, sigma = small_model.delta, small_model.sigma
    eps = small_model.params.cov_epsilon
    for (u, v, k) in [(0, 0, 0), (4, 7, 3), (11, 9, 5)]:
        qu, qv = small_model.supports[v, u, k]
        d = small_video[:, v, u] - small_video[:, qv, qu]
        np.testing.assert_allclose(delta[v, u, k], d.mean(0), rtol=1e-12, atol=1e-9)
        np.testing.assert_allclose(sigma[v, u, k], np.cov(d.T) + eps * np.eye(3), rtol=1e-9, atol=1e-9)
    np.testing.assert_array_equal(small_model.range_lo, small_video.min(0))
    np.testing.assert_array_equal(small_model.range_hi, small_video.max(0))


def test_constant_video_trains_exactly():
    video = np.full((4, 5, 6, 3), 77.0)
    m = train(video, ModelParams(k_supports=3, cov_epsilon=1e-3))
    assert np.all(m.delta == 0)
    np.testing.assert_array_equal(m.sigma, np.broadcast_to(1e-3 * np.eye(3), m.sigma.shape))
    assert np.all(m.range_lo == 77) and np.all(m.range_hi == 77)


def test_pure_noise_falls_back_and_stays_quiet():
    rng = np.random.default_rng(2)
    video = np.clip(np.rint(128 + rng.normal(0, 2, (60, 32, 32, 1))), 0, 255)
    m = train(video[:50], ModelParams())
    assert m.info["selection"].fallback.all()
    fpr = np.mean([detect(m, f).mean() for f in video[:50:5]])
    assert fpr < 0.05


def test_covarying_regions_get_unit_correlation():
    t = np.arange(20)
    signal = 40 * np.sin(t / 2.0)
    video = np.empty((20, 6, 8, 1))
    video[:, :, :4, 0] = 100 + signal[:, None, None]
    video[:, :, 4:, 0] = 60 + signal[:, None, None]
    m = train(video, ModelParams(k_supports=4))
    np.testing.assert_allclose(m.info["selection"].gammas, 1.0, atol=1e-12)
    # both regions are eligible supports for a left pixel
    right = (m.supports[:, :4, :, 0] >= 4).any()
    assert right


def test_training_is_deterministic_and_seeded(small_video):
    a = train(small_video, ModelParams(k_supports=6, seed=3))
    b = train(small_video, ModelParams(k_supports=6, seed=3))
    c = train(small_video, ModelParams(k_supports=6, seed=4))
    assert a.identical(b)
    assert not np.array_equal(a.supports, c.supports)


def test_frame_too_small_names_pixel():
    video = np.random.default_rng(0).normal(100, 5, (5, 2, 2, 1))
    with pytest.raises(TrainingError) as info:
        train(video, ModelParams(k_supports=4))
    assert info.value.coord == (0, 0)


def test_progress_and_timings(small_video):
    calls, timings = [], {}
    train(small_video, ModelParams(k_supports=4), progress=lambda d, n: calls.append((d, n)),
          timings=timings)
    assert calls[-1] == (10, 10)
    assert {"load", "correlation", "gaussian"} <= set(timings)


def test_pair_statistics_unbiased():
    video = np.array([[[[0.0], [1.0]]], [[[4.0], [1.0]]], [[[2.0], [1.0]]]])
    sup = np.array([[[[1, 0]], [[0, 0]]]], dtype=np.int32)
    delta, sigma = pair_statistics(video, sup, 0.0)
    assert delta[0, 0, 0, 0] == 1.0  # mean of -1, 3, 1
    assert sigma[0, 0, 0, 0, 0] == 4.0  # (4 + 4 + 0) / 2
