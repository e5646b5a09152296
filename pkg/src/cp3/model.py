"""Background model state, per-pixel pair tests and the online update step.

A frame is a float64 array of shape (height, width, channels) with
intensities in [0, 255]; masks are boolean (height, width) arrays where
True marks foreground.  Supporting-pixel coordinates are stored as
(u, v) = (column, row).

The per-pixel functions here (``pair_distance2``, ``classify_pixel``,
``update_pair``, ``update_range``) are written for clarity and operate on
one pixel at a time.  ``step`` and ``detect`` run the same arithmetic over
the whole frame through compiled kernels.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import InvalidInput, NumericFailure
from .params import ModelParams


def as_frame(data, channels: int | None = None) -> np.ndarray:
    """Return ``data`` as a contiguous float64 (H, W, C) frame.

    2-D input is treated as single channel.
    """
    arr = np.asarray(data)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInput(f"frame must be (H, W) or (H, W, C), got shape {arr.shape}")
    if arr.shape[2] not in (1, 3):
        raise InvalidInput(f"frame must have 1 or 3 channels, got {arr.shape[2]}")
    if channels is not None and arr.shape[2] != channels:
        raise InvalidInput(f"expected {channels} channels, got {arr.shape[2]}")
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise InvalidInput("frame contains non-finite samples")
    return arr


@dataclass
class PairModel:
    q_coord: tuple[int, int]
    delta: np.ndarray
    sigma: np.ndarray


@dataclass
class PixelModel:
    pairs: list[PairModel]
    range_lo: np.ndarray
    range_hi: np.ndarray


def n_fields(channels: int) -> int:
    return channels + channels * (channels + 1) // 2


def _triu(channels: int):
    return np.triu_indices(channels)


@dataclass(eq=False)
class BackgroundModel:
    """Trained model, stored as dense per-pixel arrays.

    With K = ``params.k_supports`` and C channels:
      supports  (H, W, K, 2) int32, (u, v) of each supporting pixel
      state     (H, K, F, W) float64, F = C + C(C+1)/2: per pair the mean
                deviation followed by the covariance upper triangle.  The
                pixel column is innermost so detection vectorizes along rows.
      range_lo, range_hi  (H, W, C)

    ``delta`` is a writable (H, W, K, C) view into ``state``; ``sigma``
    assembles full (H, W, K, C, C) symmetric matrices on access.
    """

    params: ModelParams
    supports: np.ndarray
    state: np.ndarray
    range_lo: np.ndarray
    range_hi: np.ndarray
    # training diagnostics; not serialized
    info: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.supports.ndim != 4 or self.supports.shape[-1] != 2:
            raise InvalidInput(f"supports must be (H, W, K, 2), got {self.supports.shape}")
        h, w, k, _ = self.supports.shape
        c = self.range_lo.shape[-1]
        if c not in (1, 3):
            raise InvalidInput(f"channels must be 1 or 3, got {c}")
        if k != self.params.k_supports:
            raise InvalidInput(f"model holds {k} supports per pixel, params say {self.params.k_supports}")
        expected = {
            "state": (h, k, n_fields(c), w),
            "range_lo": (h, w, c),
            "range_hi": (h, w, c),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise InvalidInput(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        u, v = self.supports[..., 0], self.supports[..., 1]
        if u.min() < 0 or v.min() < 0 or u.max() >= w or v.max() >= h:
            raise InvalidInput("supporting pixel outside the frame")
        vv, uu = np.mgrid[0:h, 0:w]
        if np.any((u == uu[..., None]) & (v == vv[..., None])):
            raise InvalidInput("a pixel cannot support itself")

    @classmethod
    def from_pairs(cls, params, supports, delta, sigma, range_lo, range_hi, info=None):
        """Build from (H, W, K, C) means and (H, W, K, C, C) covariances."""
        delta = np.asarray(delta, dtype=np.float64)
        sigma = np.asarray(sigma, dtype=np.float64)
        c = delta.shape[-1]
        iu = _triu(c)
        state = np.concatenate([delta, sigma[..., iu[0], iu[1]]], axis=-1)
        return cls(
            params,
            np.ascontiguousarray(supports, dtype=np.int32),
            np.ascontiguousarray(state.transpose(0, 2, 3, 1)),
            np.ascontiguousarray(range_lo, dtype=np.float64),
            np.ascontiguousarray(range_hi, dtype=np.float64),
            info or {},
        )

    @property
    def height(self) -> int:
        return self.supports.shape[0]

    @property
    def width(self) -> int:
        return self.supports.shape[1]

    @property
    def channels(self) -> int:
        return self.range_lo.shape[-1]

    @property
    def delta(self) -> np.ndarray:
        return self.state[:, :, : self.channels, :].transpose(0, 3, 1, 2)

    @property
    def sigma(self) -> np.ndarray:
        c = self.channels
        tri = self.state[:, :, c:, :].transpose(0, 3, 1, 2)
        out = np.empty(tri.shape[:-1] + (c, c))
        f = 0
        for a in range(c):
            for b in range(a, c):
                out[..., a, b] = tri[..., f]
                out[..., b, a] = tri[..., f]
                f += 1
        return out

    def pixel(self, u: int, v: int) -> PixelModel:
        c = self.channels
        block = self.state[v, :, :, u].T
        pairs = []
        for k in range(self.params.k_supports):
            sigma = np.empty((c, c))
            f = c
            for a in range(c):
                for b in range(a, c):
                    sigma[a, b] = sigma[b, a] = block[f, k]
                    f += 1
            pairs.append(PairModel(
                q_coord=(int(self.supports[v, u, k, 0]), int(self.supports[v, u, k, 1])),
                delta=block[:c, k].copy(),
                sigma=sigma,
            ))
        return PixelModel(pairs, self.range_lo[v, u].copy(), self.range_hi[v, u].copy())

    def set_pixel(self, u: int, v: int, pm: PixelModel) -> None:
        c = self.channels
        iu = _triu(c)
        for k, pair in enumerate(pm.pairs):
            self.supports[v, u, k] = pair.q_coord
            self.state[v, k, :c, u] = pair.delta
            self.state[v, k, c:, u] = np.asarray(pair.sigma)[iu]
        self.range_lo[v, u] = pm.range_lo
        self.range_hi[v, u] = pm.range_hi
        self.info.pop("_flat_supports", None)

    def flat_supports(self) -> np.ndarray:
        """(H, K, W) int32 row-major index of every support, cached."""
        cached = self.info.get("_flat_supports")
        if cached is None or cached[0] is not self.supports:
            flat = self.supports[..., 1] * np.int32(self.width) + self.supports[..., 0]
            cached = (self.supports, np.ascontiguousarray(flat.transpose(0, 2, 1), dtype=np.int32))
            self.info["_flat_supports"] = cached
        return cached[1]

    def copy(self) -> "BackgroundModel":
        info = {k: v for k, v in self.info.items() if not k.startswith("_")}
        return BackgroundModel(
            self.params,
            self.supports.copy(),
            self.state.copy(),
            self.range_lo.copy(),
            self.range_hi.copy(),
            info,
        )

    def identical(self, other: "BackgroundModel") -> bool:
        """Bit-for-bit equality of parameters and state."""
        if self.params != other.params:
            return False
        return all(
            a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self._arrays(), other._arrays())
        )

    def _arrays(self):
        return (self.supports, self.state, self.range_lo, self.range_hi)


def pair_distance2(dev, pair: PairModel, epsilon: float) -> float:
    """Squared Mahalanobis distance of a deviation from the pair's Gaussian."""
    dev = np.atleast_1d(np.asarray(dev, dtype=np.float64))
    mu = np.atleast_1d(pair.delta)
    cov = np.atleast_2d(pair.sigma)
    if not (np.isfinite(dev).all() and np.isfinite(mu).all() and np.isfinite(cov).all()):
        raise InvalidInput("non-finite input to pair_distance2")
    if not np.isfinite(epsilon) or epsilon < 0:
        raise InvalidInput(f"epsilon must be a finite nonnegative number, got {epsilon}")
    d = dev - mu
    if not d.any():
        return 0.0
    a = cov + epsilon * np.eye(len(d))
    return float(d @ np.linalg.solve(a, d))


def range_violation(pm: PixelModel, p, params: ModelParams) -> bool:
    p = np.atleast_1d(p)
    lo = pm.range_lo - params.range_margin_lo
    hi = pm.range_hi + params.range_margin_hi
    return bool(np.any(p < lo) or np.any(p > hi))


def classify_pixel(pm: PixelModel, frame, coord, params: ModelParams) -> tuple[bool, float]:
    """Classify one pixel. Returns (is_foreground, failing_fraction).

    A pair fails when its squared distance exceeds C**2.  The pixel is
    background only when the failing fraction does not exceed pf and,
    if enabled, every channel lies inside the widened range.
    """
    frame = np.asarray(frame)
    if frame.ndim == 2:
        frame = frame[:, :, None]
    u, v = coord
    h, w = frame.shape[:2]
    if not (0 <= u < w and 0 <= v < h):
        raise InvalidInput(f"coordinate {coord} outside {w}x{h} frame")
    p = frame[v, u].astype(np.float64)
    c2 = params.gauss_c * params.gauss_c
    fails = 0
    for pair in pm.pairs:
        qu, qv = pair.q_coord
        dev = p - frame[qv, qu]
        if pair_distance2(dev, pair, params.cov_epsilon) > c2:
            fails += 1
    frac = fails / len(pm.pairs)
    foreground = frac > params.pf_threshold
    if params.range_check_enabled and range_violation(pm, p, params):
        foreground = True
    return foreground, frac


def update_pair(pair: PairModel, dev, alpha: float) -> PairModel:
    """Recursive mean update, then covariance update around the new mean."""
    if not 0.0 <= alpha <= 1.0:
        raise InvalidInput(f"alpha={alpha} not in [0, 1]")
    dev = np.atleast_1d(np.asarray(dev, dtype=np.float64))
    delta = alpha * dev + (1 - alpha) * np.atleast_1d(pair.delta)
    r = dev - delta
    sigma = alpha * np.outer(r, r) + (1 - alpha) * np.atleast_2d(pair.sigma)
    return PairModel(pair.q_coord, delta, sigma)


def update_range(pm: PixelModel, p, alpha: float) -> PixelModel:
    """Expand the per-channel range instantly; shrink it toward p at rate alpha."""
    if not 0.0 <= alpha <= 1.0:
        raise InvalidInput(f"alpha={alpha} not in [0, 1]")
    p = np.atleast_1d(np.asarray(p, dtype=np.float64))
    lo = np.array(pm.range_lo, dtype=np.float64)
    hi = np.array(pm.range_hi, dtype=np.float64)
    for c in range(len(p)):
        hi[c] = p[c] if p[c] > hi[c] else alpha * p[c] + (1 - alpha) * hi[c]
        new_lo = p[c] if p[c] < lo[c] else alpha * p[c] + (1 - alpha) * lo[c]
        lo[c] = min(new_lo, hi[c])
    return PixelModel(pm.pairs, lo, hi)


def _check_frame(model: BackgroundModel, frame) -> np.ndarray:
    frame = as_frame(frame)
    if frame.shape != (model.height, model.width, model.channels):
        raise InvalidInput(
            f"frame shape {frame.shape} does not match model "
            f"{(model.height, model.width, model.channels)}"
        )
    return frame


def _kernel_args(model: BackgroundModel, frame: np.ndarray):
    p = model.params
    h, w, c = frame.shape
    return (
        frame.reshape(h * w, c),
        model.flat_supports(),
        model.state,
        model.range_lo.reshape(h * w, c),
        model.range_hi.reshape(h * w, c),
        p.gauss_c * p.gauss_c,
        p.pf_threshold,
        p.cov_epsilon,
        p.range_margin_lo,
        p.range_margin_hi,
        p.range_check_enabled,
    )


def detect(model: BackgroundModel, frame, return_fraction: bool = False):
    """Classify a frame against the model without updating it."""
    frame = _check_frame(model, frame)
    mask = np.empty((model.height, model.width), dtype=np.bool_)
    frac = np.empty((model.height, model.width), dtype=np.float64)
    status = _kernels.classify_frame(*_kernel_args(model, frame), mask, frac)
    if status:
        raise NumericFailure(f"{status} pair covariances are not positive definite")
    return (mask, frac) if return_fraction else mask


def step(model: BackgroundModel, frame, inplace: bool = True):
    """Classify ``frame`` and then blindly update every pair and range.

    Classification only reads pre-update state.  Returns (mask, model);
    with ``inplace=False`` the input model is left untouched.
    """
    frame = _check_frame(model, frame)
    if not inplace:
        model = model.copy()
    mask = np.empty((model.height, model.width), dtype=np.bool_)
    status = _kernels.step_frame(*_kernel_args(model, frame), model.params.alpha, mask)
    if status:
        raise NumericFailure(f"{status} pair covariances are not positive definite")
    return mask, model
