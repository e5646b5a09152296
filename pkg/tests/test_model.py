import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from cp3 import BackgroundModel, InvalidInput, ModelParams, NumericFailure, detect, step
from cp3.model import (
    PairModel, PixelModel, classify_pixel, pair_distance2, update_pair, update_range,
)

finite = st.floats(-50, 50, allow_nan=False)


def pair(delta, sigma, q=(0, 0)):
    return PairModel(q, np.asarray(delta, float), np.asarray(sigma, float))


# --- pair distance ----------------------------------------------------------

def test_distance_identity_covariance():
    assert pair_distance2([3, 0, 0], pair([0, 0, 0], np.eye(3)), 0.0) == pytest.approx(9.0)


def test_distance_zero_deviation():
    assert pair_distance2([4, 5, 6], pair([4, 5, 6], [[2, 1, 0], [1, 2, 0], [0, 0, 1]]), 1e-3) == 0.0


def test_distance_diagonal():
    d2 = pair_distance2([1, 1, 0], pair([0, 0, 0], np.diag([4.0, 1, 1])), 0.0)
    assert d2 == pytest.approx(1.25)


def test_distance_rejects_nonfinite():
    with pytest.raises(InvalidInput):
        pair_distance2([np.nan], pair([0], [[1]]), 1e-3)


@given(hnp.arrays(float, 3, elements=finite), st.floats(0.1, 100), st.floats(1e-4, 1))
def test_distance_isotropic_reduces_to_scaled_norm(d, var, eps):
    got = pair_distance2(d, pair(np.zeros(3), var * np.eye(3)), eps)
    assert got == pytest.approx(float(d @ d) / (var + eps), rel=1e-10, abs=1e-12)


@given(hnp.arrays(float, 3, elements=finite), hnp.arrays(float, (3, 3), elements=st.floats(-3, 3)))
def test_distance_sign_symmetric(d, m):
    sigma = m @ m.T
    p = pair(np.zeros(3), sigma)
    assert pair_distance2(d, p, 1e-2) == pytest.approx(pair_distance2(-d, p, 1e-2), rel=1e-9, abs=1e-9)


# --- pixel classification ---------------------------------------------------

def _pixel_with_fails(n_fail, k=20):
    """A 1-channel pixel at (0,0) whose first n_fail pairs see a deviation of
    10 sigma and the rest none.  Supports sit at (1,0)...(k,0)."""
    frame = np.zeros((1, k + 1, 1))
    frame[0, 0, 0] = 100.0
    frame[0, 1:, 0] = 100.0
    pairs = []
    for j in range(k):
        mean = -10.0 if j < n_fail else 0.0
        pairs.append(pair([mean], [[1.0]], q=(j + 1, 0)))
    return PixelModel(pairs, np.array([90.0]), np.array([110.0])), frame


@pytest.mark.parametrize("n_fail,expected", [(7, False), (8, True), (0, False), (20, True)])
def test_vote_threshold_is_strict(n_fail, expected):
    pm, frame = _pixel_with_fails(n_fail)
    fg, frac = classify_pixel(pm, frame, (0, 0), ModelParams())
    assert fg is expected
    assert frac == n_fail / 20


def test_range_violation_alone_makes_foreground():
    pm, frame = _pixel_with_fails(0)
    pm = PixelModel(pm.pairs, np.array([50.0]), np.array([80.0]))
    assert classify_pixel(pm, frame, (0, 0), ModelParams())[0] is True
    assert classify_pixel(pm, frame, (0, 0), ModelParams(range_check_enabled=False))[0] is False


def test_distance_equal_to_threshold_passes():
    # deviation of exactly C sigma: D^2 == C^2, not a failure
    frame = np.array([[[3.0], [0.0]]])
    pm = PixelModel([pair([0.0], [[1.0 - 1e-3]], q=(1, 0))], np.array([0.0]), np.array([255.0]))
    fg, frac = classify_pixel(pm, frame, (0, 0), ModelParams(k_supports=1, pf_threshold=0.0))
    assert frac == 0.0 and fg is False


@given(st.floats(0.5, 5), st.floats(0.0, 3), st.integers(0, 2**32 - 1))
def test_failing_fraction_nonincreasing_in_c(c, extra, seed):
    rng = np.random.default_rng(seed)
    frame = rng.uniform(0, 255, (4, 4, 3))
    pairs = []
    for j in range(5):
        m = rng.normal(size=(3, 3))
        pairs.append(pair(rng.normal(0, 20, 3), m @ m.T * 50, q=(j % 4, 1 + j // 4)))
    pm = PixelModel(pairs, np.zeros(3), np.full(3, 255.0))
    p1 = ModelParams(k_supports=5, gauss_c=c)
    p2 = ModelParams(k_supports=5, gauss_c=c + extra)
    _, f1 = classify_pixel(pm, frame, (0, 0), p1)
    _, f2 = classify_pixel(pm, frame, (0, 0), p2)
    assert f2 <= f1


# --- updates ----------------------------------------------------------------

def test_mean_update_example():
    out = update_pair(pair([10, 10, 10], np.eye(3)), np.array([20.0, 20, 20]), 0.01)
    np.testing.assert_allclose(out.delta, [10.1, 10.1, 10.1], rtol=1e-15)


def test_full_rate_update_collapses_covariance():
    out = update_pair(pair([1, 2, 3], 5 * np.eye(3)), np.array([7.0, -2, 4]), 1.0)
    np.testing.assert_array_equal(out.delta, [7, -2, 4])
    np.testing.assert_array_equal(out.sigma, np.zeros((3, 3)))


@given(st.floats(0, 1))
def test_update_at_mean_scales_covariance(alpha):
    s = np.array([[4.0, 1, 0], [1, 3, 0.5], [0, 0.5, 2]])
    out = update_pair(pair([1, 2, 3], s), np.array([1.0, 2, 3]), alpha)
    # a*x + (1-a)*x equals x up to one rounding
    np.testing.assert_allclose(out.delta, [1, 2, 3], rtol=4e-16)
    np.testing.assert_allclose(out.sigma, (1 - alpha) * s, rtol=1e-15)


def test_update_uses_new_mean_in_covariance():
    out = update_pair(pair([0.0], [[0.0]]), np.array([10.0]), 0.5)
    # new mean 5, residual 5, sigma = 0.5 * 25
    assert out.sigma[0, 0] == 12.5


def test_range_instant_expansion():
    pm = PixelModel([], np.array([10.0]), np.array([50.0]))
    assert update_range(pm, [4.0], 0.01).range_lo[0] == 4.0
    assert update_range(pm, [70.0], 0.01).range_hi[0] == 70.0


def test_range_frozen_at_zero_rate():
    pm = PixelModel([], np.array([10.0]), np.array([50.0]))
    out = update_range(pm, [30.0], 0.0)
    assert (out.range_lo[0], out.range_hi[0]) == (10.0, 50.0)


def test_range_contraction_example():
    pm = PixelModel([], np.array([10.0]), np.array([50.0]))
    out = update_range(pm, [30.0], 0.5)
    assert (out.range_lo[0], out.range_hi[0]) == (20.0, 40.0)


@given(st.lists(st.floats(0, 255), min_size=1, max_size=60), st.floats(0, 1))
def test_range_order_preserved(ps, alpha):
    pm = PixelModel([], np.array([100.0]), np.array([120.0]))
    for p in ps:
        pm = update_range(pm, [p], alpha)
        assert pm.range_lo[0] <= pm.range_hi[0]


# --- frame level: compiled step against a plain loop oracle -----------------

def oracle_step(model: BackgroundModel, frame):
    """Per-pixel loops with explicit matrix inverses."""
    p = model.params
    h, w, c = frame.shape
    delta = model.delta.copy()
    sigma = model.sigma.copy()
    lo, hi = model.range_lo.copy(), model.range_hi.copy()
    mask = np.zeros((h, w), bool)
    for v in range(h):
        for u in range(w):
            fails = 0
            for k in range(p.k_supports):
                qu, qv = model.supports[v, u, k]
                dev = frame[v, u] - frame[qv, qu]
                d = dev - delta[v, u, k]
                inv = np.linalg.inv(sigma[v, u, k] + p.cov_epsilon * np.eye(c))
                if d @ inv @ d > p.gauss_c ** 2:
                    fails += 1
                m = p.alpha * dev + (1 - p.alpha) * delta[v, u, k]
                r = dev - m
                delta[v, u, k] = m
                sigma[v, u, k] = p.alpha * np.outer(r, r) + (1 - p.alpha) * sigma[v, u, k]
            fg = fails / p.k_supports > p.pf_threshold
            px = frame[v, u]
            if p.range_check_enabled and (np.any(px < lo[v, u] - p.range_margin_lo)
                                          or np.any(px > hi[v, u] + p.range_margin_hi)):
                fg = True
            mask[v, u] = fg
            for ch in range(c):
                x = px[ch]
                nh = x if x > hi[v, u, ch] else p.alpha * x + (1 - p.alpha) * hi[v, u, ch]
                nl = x if x < lo[v, u, ch] else p.alpha * x + (1 - p.alpha) * lo[v, u, ch]
                hi[v, u, ch] = nh
                lo[v, u, ch] = min(nl, nh)
    return mask, delta, sigma, lo, hi


@pytest.mark.parametrize("channels", [1, 3])
def test_step_matches_loop_oracle(small_video, channels):
    from cp3 import train

    video = small_video if channels == 3 else small_video[..., :1]
    model = train(video[:20], ModelParams(k_supports=5, alpha=0.05, seed=1))
    rng = np.random.default_rng(0)
    for t in range(20, 24):
        frame = video[t].copy()
        frame[2:5, 3:7] += rng.uniform(20, 60)
        want = oracle_step(model, frame)
        mask, _ = step(model, frame)
        np.testing.assert_array_equal(mask, want[0])
        np.testing.assert_allclose(model.delta, want[1], rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(model.sigma, want[2], rtol=1e-12, atol=1e-12)
        np.testing.assert_array_equal(model.range_lo, want[3])
        np.testing.assert_array_equal(model.range_hi, want[4])


def test_detect_agrees_with_classify_pixel(small_model, small_video):
    frame = small_video[-1].copy()
    frame[0:3, 0:4] = 250
    mask, frac = detect(small_model, frame, return_fraction=True)
    for v in range(small_model.height):
        for u in range(small_model.width):
            fg, f = classify_pixel(small_model.pixel(u, v), frame, (u, v), small_model.params)
            assert mask[v, u] == fg and frac[v, u] == f


def test_constant_scene_is_background():
    from cp3 import train

    video = np.full((5, 6, 7, 3), 90.0)
    video[:, :, 3:] = 140.0
    model = train(video, ModelParams(k_supports=4))
    mask, _ = step(model, video[0])
    assert not mask.any()


def test_zero_rate_step_is_frozen(small_model, small_video):
    model = small_model.copy()
    model.params = model.params.replace(alpha=0.0)
    frame = small_video[3] + 5
    m1, _ = step(model, frame)
    snapshot = model.copy()
    m2, _ = step(model, frame)
    np.testing.assert_array_equal(m1, m2)
    assert model.identical(snapshot)


def test_step_not_inplace_leaves_model(small_model, small_video):
    before = small_model.copy()
    _, updated = step(small_model, small_video[0] + 3, inplace=False)
    assert small_model.identical(before)
    assert not updated.identical(before)


def test_frame_shape_mismatch(small_model):
    with pytest.raises(InvalidInput):
        step(small_model, np.zeros((3, 3, 3)))


def test_broken_covariance_raises_numeric_failure(small_model, small_video):
    model = small_model.copy()
    c = model.channels
    model.state[0, 0, c, 0] = -1.0  # negative variance
    with pytest.raises(NumericFailure):
        detect(model, small_video[0])


def test_model_rejects_self_support(small_model):
    sup = small_model.supports.copy()
    sup[0, 0, 0] = (0, 0)
    with pytest.raises(InvalidInput, match="itself"):
        BackgroundModel(small_model.params, sup, small_model.state, small_model.range_lo,
                        small_model.range_hi)


def test_pixel_roundtrip(small_model):
    model = small_model.copy()
    pm = model.pixel(3, 2)
    pm.pairs[0] = update_pair(pm.pairs[0], np.array([1.0, 2, 3]), 0.5)
    model.set_pixel(3, 2, pm)
    back = model.pixel(3, 2)
    np.testing.assert_array_equal(back.pairs[0].delta, pm.pairs[0].delta)
    np.testing.assert_array_equal(back.pairs[0].sigma, pm.pairs[0].sigma)
