"""Model initialization from a window of training frames.

Pipeline per target pixel: temporal luma statistics, one row of the
pixel-pair correlation matrix, an adaptive correlation floor, the top-N
candidates above it, and K spatially scattered supports picked by k-means
on candidate coordinates.  Pair Gaussians and intensity ranges are then
estimated over the same window.

The full P x P correlation matrix is never formed; rows are computed one
target at a time against the standardized training tensor.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels
from .errors import InsufficientCandidates, InsufficientData, InvalidInput, TrainingError
from .model import BackgroundModel, as_frame
from .params import ModelParams

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
# 1.4826 turns a median absolute deviation into a Gaussian sigma
MAD_SCALE = 1.4826
KMEANS_MAX_ITER = 30


@dataclass
class PixelStats:
    mean: np.ndarray
    variance: np.ndarray
    noise_var: np.ndarray


@dataclass
class CandidateSet:
    owner: tuple[int, int]
    coords: list[tuple[int, int]]
    gammas: list[float]
    fallback: bool = False

    def __len__(self):
        return len(self.coords)


@dataclass
class SupportSelection:
    """Chosen supports for every pixel plus selection diagnostics."""

    supports: np.ndarray  # (H, W, K, 2) int32 (u, v)
    gammas: np.ndarray  # (H, W, K) correlation to each support
    gamma_min: np.ndarray  # (H, W) adaptive floor
    fallback: np.ndarray  # (H, W) bool
    stats: PixelStats = field(repr=False)


def stack_frames(frames: Iterable) -> np.ndarray:
    """Stack frames into a (T, H, W, C) float64 array, checking shapes."""
    out = [as_frame(f) for f in frames]
    if not out:
        raise InsufficientData("no frames given")
    shape = out[0].shape
    for i, f in enumerate(out):
        if f.shape != shape:
            raise InvalidInput(f"frame {i} has shape {f.shape}, expected {shape}")
    return np.stack(out)


def to_luma(video: np.ndarray) -> np.ndarray:
    """(T, H, W, C) -> (T, H, W) luma; single-channel input passes through."""
    if video.shape[-1] == 1:
        return video[..., 0]
    return video @ LUMA_WEIGHTS


def _luma_video(frames) -> np.ndarray:
    video = frames if isinstance(frames, np.ndarray) and frames.ndim == 4 else stack_frames(frames)
    if video.shape[0] < 2:
        raise InsufficientData(f"need at least 2 frames, got {video.shape[0]}")
    return to_luma(video)


def compute_pixel_stats(frames) -> PixelStats:
    """Temporal mean, unbiased variance and a robust noise variance of luma.

    The noise estimate is (1.4826 * median|x[t+1] - x[t]| / sqrt(2))**2,
    insensitive to slow drifts and occasional outliers.
    """
    luma = _luma_video(frames)
    mean = luma.mean(axis=0)
    variance = luma.var(axis=0, ddof=1)
    diffs = np.abs(np.diff(luma, axis=0))
    noise_sigma = MAD_SCALE * np.median(diffs, axis=0) / np.sqrt(2.0)
    return PixelStats(mean, variance, noise_sigma**2)


def adaptive_threshold(signal_var, noise_var, params: ModelParams):
    """Correlation floor from the signal-to-noise attenuation ratio.

    Two noisy copies of one signal cannot correlate above
    var_signal / (var_signal + var_noise); the floor is that ceiling scaled
    by ``gamma_scale`` and clipped below at ``gamma_floor``.
    """
    sv = np.asarray(signal_var, dtype=np.float64)
    nv = np.asarray(noise_var, dtype=np.float64)
    if not (np.isfinite(sv).all() and np.isfinite(nv).all()):
        raise InvalidInput("variances must be finite")
    total = sv + nv
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(total > 0, sv / np.where(total > 0, total, 1.0), 0.0)
    out = np.maximum(params.gamma_floor, params.gamma_scale * ratio)
    return float(out) if out.ndim == 0 else out


def candidate_positions(height: int, width: int, stride: int) -> np.ndarray:
    """Flat row-major indices of the strided candidate grid."""
    vs, us = np.meshgrid(np.arange(0, height, stride), np.arange(0, width, stride), indexing="ij")
    return (vs * width + us).ravel().astype(np.int64)


def correlation_row(frames, target: tuple[int, int], stride: int = 1) -> list[tuple[tuple[int, int], float]]:
    """Pearson correlation of the target's luma series with each strided pixel.

    Zero-variance series correlate at 0.  The target is left out.
    """
    if stride < 1:
        raise InvalidInput("stride must be >= 1")
    luma = _luma_video(frames)
    t, h, w = luma.shape
    u, v = target
    if not (0 <= u < w and 0 <= v < h):
        raise InvalidInput(f"target {target} outside {w}x{h} frame")
    z = _kernels.standardize(np.ascontiguousarray(luma.reshape(t, h * w)))
    cand = candidate_positions(h, w, stride)
    row = _kernels.corr_row(z, v * w + u, np.ascontiguousarray(z[:, cand]))
    flat = v * w + u
    return [((int(i % w), int(i // w)), float(g)) for i, g in zip(cand, row) if i != flat]


def _row_major_key(coord):
    u, v = coord
    return (v, u)


def select_candidates(row, gamma_min: float, n_max: int, k_supports: int,
                      owner=None) -> CandidateSet:
    """Top ``n_max`` candidates with correlation above ``gamma_min``.

    Ties go to the earlier pixel in row-major order.  When fewer than
    ``k_supports`` clear the floor, the global top ``n_max`` are used and
    the set is flagged as a fallback.
    """
    row = [(c, g) for c, g in row if owner is None or tuple(c) != tuple(owner)]
    if not row:
        raise InvalidInput("empty correlation row")
    if len(row) < k_supports:
        raise InsufficientCandidates(
            f"only {len(row)} candidate positions for {k_supports} supports"
        )
    ranked = sorted(row, key=lambda cg: (-cg[1], _row_major_key(cg[0])))
    above = [cg for cg in ranked if cg[1] > gamma_min]
    fallback = len(above) < k_supports
    chosen = (ranked if fallback else above)[:n_max]
    return CandidateSet(
        owner=tuple(owner) if owner is not None else None,
        coords=[tuple(c) for c, _ in chosen],
        gammas=[float(g) for _, g in chosen],
        fallback=fallback,
    )


def pixel_rng(seed: int, u: int, v: int) -> np.random.Generator:
    """Independent random stream for one pixel, fixed by (seed, u, v)."""
    return np.random.default_rng([seed, v, u])


def sample_supporting(cands: CandidateSet, k: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Pick k scattered supports: one per spatial k-means cluster.

    The cluster's highest-correlation member is taken; clusters that end up
    empty are filled with the next best unused candidate.
    """
    m = len(cands)
    if m < k:
        raise InsufficientCandidates(f"{m} candidates cannot supply {k} supports")
    us = np.array([c[0] for c in cands.coords], dtype=np.float64)
    vs = np.array([c[1] for c in cands.coords], dtype=np.float64)
    keys = rng.random(m)
    picks = _kernels.kmeans_pick(us, vs, keys, k, KMEANS_MAX_ITER)
    return [cands.coords[i] for i in picks]


def select_supports(frames, params: ModelParams,
                    progress: Callable[[int, int], None] | None = None) -> SupportSelection:
    """Run candidate selection and scattered sampling for every pixel."""
    video = frames if isinstance(frames, np.ndarray) and frames.ndim == 4 else stack_frames(frames)
    stats = compute_pixel_stats(video)
    luma = to_luma(video)
    t, h, w = luma.shape
    k, n = params.k_supports, params.n_candidates
    gamma_min = adaptive_threshold(stats.variance, stats.noise_var, params).ravel()

    z = _kernels.standardize(np.ascontiguousarray(luma.reshape(t, h * w)))
    cand = candidate_positions(h, w, params.candidate_stride)
    z_cand = np.ascontiguousarray(z[:, cand])

    sup = np.zeros((h * w, k), dtype=np.int64)
    gam = np.zeros((h * w, k))
    fallback = np.zeros(h * w, dtype=np.bool_)
    count = np.zeros(h * w, dtype=np.int64)
    rows_per_chunk = max(1, 4096 // w)
    for v0 in range(0, h, rows_per_chunk):
        v1 = min(h, v0 + rows_per_chunk)
        targets = np.arange(v0 * w, v1 * w, dtype=np.int64)
        keys = np.stack([pixel_rng(params.seed, int(i % w), int(i // w)).random(n) for i in targets])
        _kernels.select_supports(
            z, z_cand, cand, targets, w, gamma_min, k, n, keys, KMEANS_MAX_ITER,
            sup[v0 * w:v1 * w], gam[v0 * w:v1 * w], fallback[v0 * w:v1 * w], count[v0 * w:v1 * w],
        )
        short = np.flatnonzero(count[v0 * w:v1 * w] < k)
        if short.size:
            i = v0 * w + int(short[0])
            coord = (i % w, i // w)
            raise TrainingError(
                f"pixel {coord}: only {count[i]} candidate positions for {k} supports",
                coord=coord,
            ) from InsufficientCandidates("too few candidates")
        if progress is not None:
            progress(v1, h)

    supports = np.stack([sup % w, sup // w], axis=-1).astype(np.int32).reshape(h, w, k, 2)
    return SupportSelection(
        supports=supports,
        gammas=gam.reshape(h, w, k),
        gamma_min=gamma_min.reshape(h, w),
        fallback=fallback.reshape(h, w),
        stats=stats,
    )


def pair_statistics(video: np.ndarray, supports: np.ndarray, epsilon: float):
    """Two-pass mean and unbiased covariance of p - q for every pair.

    Returns delta (H, W, K, C) and sigma (H, W, K, C, C) with epsilon added
    to the covariance diagonal.
    """
    t, h, w, c = video.shape
    k = supports.shape[2]
    delta = np.empty((h, w, k, c))
    sigma = np.empty((h, w, k, c, c))
    for j in range(k):
        qu = supports[:, :, j, 0]
        qv = supports[:, :, j, 1]
        d = video - video[:, qv, qu]
        mu = d.mean(axis=0)
        dc = d - mu
        delta[:, :, j] = mu
        for a in range(c):
            for b in range(a, c):
                s = (dc[..., a] * dc[..., b]).sum(axis=0) / (t - 1)
                if a == b:
                    s = s + epsilon
                sigma[:, :, j, a, b] = s
                sigma[:, :, j, b, a] = s
    return delta, sigma


def train(frames: Sequence | np.ndarray, params: ModelParams = ModelParams(),
          progress: Callable[[int, int], None] | None = None,
          timings: dict | None = None) -> BackgroundModel:
    """Build a background model from a training window.

    ``progress(rows_done, rows_total)`` is called as selection advances;
    ``timings`` (if given) is filled with wall-clock seconds per stage.
    """
    timings = {} if timings is None else timings
    t0 = time.perf_counter()
    video = frames if isinstance(frames, np.ndarray) and frames.ndim == 4 else stack_frames(frames)
    video = np.ascontiguousarray(video, dtype=np.float64)
    if video.shape[0] < 2:
        raise InsufficientData(f"need at least 2 training frames, got {video.shape[0]}")
    if video.shape[-1] not in (1, 3):
        raise InvalidInput(f"frames must have 1 or 3 channels, got {video.shape[-1]}")
    timings["load"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    sel = select_supports(video, params, progress)
    timings["correlation"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    delta, sigma = pair_statistics(video, sel.supports, params.cov_epsilon)
    range_lo = video.min(axis=0)
    range_hi = video.max(axis=0)
    timings["gaussian"] = time.perf_counter() - t0

    return BackgroundModel.from_pairs(
        params, sel.supports, delta, sigma, range_lo, range_hi,
        info={"selection": sel, "timings": dict(timings)},
    )
