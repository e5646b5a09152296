"""Frame and mask files, changedetection.net directory layout, model files.

Binary PGM/PPM (P5/P6, maxval 255) are parsed here directly and are the
bit-exact path.  PNG, BMP and JPEG go through Pillow.

Ground truth frames keep the dataset's five gray levels as label codes:
0 background, 50 shadow, 85 outside ROI, 170 unknown, 255 foreground.
"""
from __future__ import annotations

import enum
import logging
import os
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from .errors import DecodeError, IncompatibleModel, InvalidInput, SequenceGap
from .model import BackgroundModel, as_frame, n_fields
from .params import ModelParams

log = logging.getLogger(__name__)


class GT(enum.IntEnum):
    BACKGROUND = 0
    SHADOW = 50
    OUTSIDE_ROI = 85
    UNKNOWN = 170
    FOREGROUND = 255


_GT_LEVELS = np.array([g.value for g in GT], dtype=np.int16)


# --- PNM -------------------------------------------------------------------

_PNM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _parse_pnm(data: bytes, path) -> np.ndarray:
    pos = 0
    tokens = []
    for _ in range(4):
        m = _PNM_TOKEN.match(data, pos)
        if m is None:
            raise DecodeError(f"{path}: truncated PNM header")
        tokens.append(m.group(1))
        pos = m.end()
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise DecodeError(f"{path}: unsupported PNM type {magic!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise DecodeError(f"{path}: malformed PNM header") from None
    if maxval != 255:
        raise DecodeError(f"{path}: unsupported maxval {maxval} (only 255)")
    if width < 1 or height < 1:
        raise DecodeError(f"{path}: bad dimensions {width}x{height}")
    # exactly one whitespace byte separates the header from the raster
    pos += 1
    channels = 1 if magic == b"P5" else 3
    size = width * height * channels
    body = data[pos:pos + size]
    if len(body) != size:
        raise DecodeError(f"{path}: expected {size} raster bytes, got {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width, channels)


def _encode_pnm(pixels: np.ndarray) -> bytes:
    h, w, c = pixels.shape
    magic = b"P5" if c == 1 else b"P6"
    return b"%s\n%d %d\n255\n" % (magic, w, h) + pixels.tobytes()


def _to_uint8(frame) -> np.ndarray:
    arr = np.asarray(frame)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.dtype == np.uint8:
        return arr
    return np.clip(np.rint(arr), 0, 255).astype(np.uint8)


def _is_pnm(path) -> bool:
    return str(path).lower().endswith((".pgm", ".ppm", ".pnm"))


def read_frame(path) -> np.ndarray:
    """Decode an 8-bit image into a float64 (H, W, C) frame, C in {1, 3}."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DecodeError(f"{path}: {exc.strerror or exc}") from exc
    if data[:2] in (b"P5", b"P6"):
        pixels = _parse_pnm(data, path)
    elif data[:1] == b"P" and data[1:2].isdigit():
        raise DecodeError(f"{path}: unsupported PNM type {data[:2]!r}")
    else:
        try:
            with Image.open(path) as img:
                img.load()
                mode = img.mode
                if mode in ("I;16", "I;16B", "I", "F"):
                    raise DecodeError(f"{path}: unsupported {mode} image (8-bit only)")
                if mode not in ("L", "RGB"):
                    img = img.convert("RGB" if mode in ("RGBA", "P", "CMYK", "YCbCr") else "L")
                pixels = np.asarray(img)
        except DecodeError:
            raise
        except Exception as exc:
            raise DecodeError(f"{path}: {exc}") from exc
        if pixels.ndim == 2:
            pixels = pixels[:, :, None]
    return pixels.astype(np.float64)


def write_frame(frame, path) -> None:
    """Write a frame as 8-bit PGM/PPM or via Pillow; values are rounded and clipped."""
    pixels = _to_uint8(frame)
    _write_pixels(pixels, path)


def _write_pixels(pixels: np.ndarray, path) -> None:
    path = Path(path)
    try:
        if _is_pnm(path):
            path.write_bytes(_encode_pnm(pixels))
        else:
            img = Image.fromarray(pixels[:, :, 0] if pixels.shape[2] == 1 else pixels)
            img.save(path)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def write_mask(mask, path) -> None:
    """Foreground -> 255, background -> 0, as an 8-bit grayscale image."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise InvalidInput(f"mask must be 2-D, got shape {mask.shape}")
    _write_pixels((mask.astype(np.uint8) * 255)[:, :, None], path)


def read_mask(path) -> np.ndarray:
    """Read a binary mask written by ``write_mask`` (nonzero is foreground)."""
    frame = read_frame(path)
    if frame.shape[2] != 1:
        frame = frame.max(axis=2, keepdims=True)
    return frame[:, :, 0] > 127


def decode_groundtruth(frame) -> np.ndarray:
    """Snap a single-channel ground-truth frame to the five label levels.

    Returns a uint8 array whose values are ``GT`` members.  Off-level pixels
    go to the nearest level (ties to the lower one) and are logged.
    """
    arr = np.asarray(frame)
    if arr.ndim == 3:
        if arr.shape[2] != 1:
            raise InvalidInput("ground truth must be single channel")
        arr = arr[:, :, 0]
    if arr.ndim != 2:
        raise InvalidInput(f"ground truth must be 2-D, got shape {arr.shape}")
    dist = np.abs(arr.astype(np.float64)[..., None] - _GT_LEVELS)
    labels = _GT_LEVELS[np.argmin(dist, axis=-1)].astype(np.uint8)
    off = np.count_nonzero(labels != arr)
    if off:
        log.warning("ground truth: %d pixels off the label levels, snapped to nearest", off)
    return labels


def apply_roi(gt: np.ndarray, roi) -> np.ndarray:
    """Mark pixels outside a spatial ROI mask (zero in ``roi``) as OUTSIDE_ROI."""
    roi = np.asarray(roi)
    if roi.ndim == 3:
        roi = roi[:, :, 0]
    if roi.shape != gt.shape:
        raise InvalidInput(f"ROI shape {roi.shape} does not match ground truth {gt.shape}")
    out = gt.copy()
    out[roi == 0] = GT.OUTSIDE_ROI
    return out


def read_temporal_roi(path) -> tuple[int, int]:
    text = Path(path).read_text().split()
    if len(text) < 2:
        raise DecodeError(f"{path}: expected two integers")
    try:
        first, last = int(text[0]), int(text[1])
    except ValueError:
        raise DecodeError(f"{path}: expected two integers") from None
    if first > last:
        raise DecodeError(f"{path}: first frame {first} after last {last}")
    return first, last


def write_temporal_roi(path, first: int, last: int) -> None:
    Path(path).write_text(f"{first} {last}\n")


# --- sequences ---------------------------------------------------------------


@dataclass
class SequenceSpec:
    """Where a video's frames, ground truth and ROI live.

    Frame indices are 1-based, as in the dataset.  ``pattern`` and
    ``gt_pattern`` are printf-style names such as ``in%06d.jpg``.
    """

    input_dir: Path
    groundtruth_dir: Path | None = None
    roi_path: Path | None = None
    temporal_roi: tuple[int, int] | None = None
    pattern: str = "in%06d.jpg"
    gt_pattern: str = "gt%06d.png"

    def __post_init__(self):
        self.input_dir = Path(self.input_dir)
        if self.groundtruth_dir is not None:
            self.groundtruth_dir = Path(self.groundtruth_dir)
        if self.roi_path is not None:
            self.roi_path = Path(self.roi_path)
        if not self.input_dir.is_dir():
            raise InvalidInput(f"input directory {self.input_dir} does not exist")
        if self.groundtruth_dir is not None and not self.groundtruth_dir.is_dir():
            raise InvalidInput(f"groundtruth directory {self.groundtruth_dir} does not exist")
        if self.roi_path is not None and not self.roi_path.is_file():
            raise InvalidInput(f"ROI file {self.roi_path} does not exist")
        if self.temporal_roi is not None:
            first, last = self.temporal_roi
            if first > last:
                raise InvalidInput(f"temporal ROI {self.temporal_roi}: first after last")
        for p in (self.pattern, self.gt_pattern):
            try:
                p % 1
            except TypeError:
                raise InvalidInput(f"bad frame-name pattern {p!r}") from None

    @classmethod
    def from_video_dir(cls, root, pattern: str | None = None) -> "SequenceSpec":
        """Read a video directory in the dataset layout.

        Expects ``input/``; uses ``groundtruth/``, ``ROI.bmp`` (or
        ``ROI.png``) and ``temporalROI.txt`` when present.  Without an
        explicit pattern, the input extension is detected.
        """
        root = Path(root)
        if not root.is_dir():
            raise InvalidInput(f"video directory {root} does not exist")
        input_dir = root / "input"
        if not input_dir.is_dir():
            input_dir = root
        gt_dir = root / "groundtruth"
        roi = next((root / n for n in ("ROI.bmp", "ROI.png", "ROI.pgm") if (root / n).is_file()), None)
        troi = root / "temporalROI.txt"
        if pattern is None:
            pattern = _detect_pattern(input_dir)
        return cls(
            input_dir=input_dir,
            groundtruth_dir=gt_dir if gt_dir.is_dir() else None,
            roi_path=roi,
            temporal_roi=read_temporal_roi(troi) if troi.is_file() else None,
            pattern=pattern,
        )

    def frame_path(self, index: int) -> Path:
        return self.input_dir / (self.pattern % index)

    def gt_path(self, index: int) -> Path | None:
        if self.groundtruth_dir is None:
            return None
        return self.groundtruth_dir / (self.gt_pattern % index)

    def indices(self) -> list[int]:
        """Sorted indices of the input frames present on disk."""
        return _indices(self.input_dir, self.pattern)


def _pattern_regex(pattern: str) -> re.Pattern:
    m = re.search(r"%0?(\d*)d", pattern)
    if m is None:
        raise InvalidInput(f"pattern {pattern!r} has no %d field")
    head, tail = pattern[: m.start()], pattern[m.end():]
    return re.compile("^" + re.escape(head) + r"(\d+)" + re.escape(tail) + "$")


def _indices(directory: Path, pattern: str) -> list[int]:
    rx = _pattern_regex(pattern)
    found = []
    for name in os.listdir(directory):
        m = rx.match(name)
        if m:
            found.append(int(m.group(1)))
    return sorted(found)


def _detect_pattern(input_dir: Path) -> str:
    for ext in ("jpg", "png", "ppm", "pgm", "bmp"):
        pattern = f"in%06d.{ext}"
        if _indices(input_dir, pattern):
            return pattern
    return "in%06d.jpg"


def load_sequence(spec: SequenceSpec, first: int | None = None, last: int | None = None,
                  evaluation: bool = False) -> Iterator[tuple[int, np.ndarray, np.ndarray | None]]:
    """Yield (index, frame, ground truth or None) in ascending index order.

    Without explicit bounds the range spans the frames found on disk; in
    evaluation mode it is further clipped to the temporal ROI.  Frames are
    read lazily.  A missing frame (or missing ground truth, when a
    groundtruth directory is configured) inside the range raises
    ``SequenceGap``.
    """
    if first is None or last is None:
        present = spec.indices()
        if not present:
            raise SequenceGap(first or 1, spec.frame_path(first or 1))
        first = present[0] if first is None else first
        last = present[-1] if last is None else last
    if evaluation and spec.temporal_roi is not None:
        first = max(first, spec.temporal_roi[0])
        last = min(last, spec.temporal_roi[1])
    roi = read_frame(spec.roi_path) if spec.roi_path is not None else None
    for index in range(first, last + 1):
        path = spec.frame_path(index)
        if not path.is_file():
            raise SequenceGap(index, path)
        frame = read_frame(path)
        gt = None
        gt_path = spec.gt_path(index)
        if gt_path is not None:
            if not gt_path.is_file():
                raise SequenceGap(index, gt_path)
            gt = decode_groundtruth(read_frame(gt_path))
            if roi is not None:
                gt = apply_roi(gt, roi)
        yield index, frame, gt


# --- model files -------------------------------------------------------------

MODEL_MAGIC = b"CP3M"
MODEL_VERSION = 1
_HEADER = struct.Struct("<4sIIII")
# k_supports, pf_threshold, gauss_c, alpha, candidate_multiplier, gamma_scale,
# gamma_floor, range_margin_lo, range_margin_hi, range_check_enabled,
# cov_epsilon, seed, training_frames, candidate_stride
_PARAMS = struct.Struct("<IdddIddddBdQII")
_PARAM_ORDER = (
    "k_supports", "pf_threshold", "gauss_c", "alpha", "candidate_multiplier", "gamma_scale",
    "gamma_floor", "range_margin_lo", "range_margin_hi", "range_check_enabled",
    "cov_epsilon", "seed", "training_frames", "candidate_stride",
)


def _pixel_dtype(k: int, c: int) -> np.dtype:
    pair = np.dtype([
        ("q_u", "<u4"),
        ("q_v", "<u4"),
        ("delta", "<f8", (c,)),
        ("sigma", "<f8", (c * (c + 1) // 2,)),
    ])
    return np.dtype([("pairs", pair, (k,)), ("range_lo", "<f8", (c,)), ("range_hi", "<f8", (c,))])


def save_model(model: BackgroundModel) -> bytes:
    """Serialize to the versioned little-endian model format.

    Layout: magic, version, width, height, channels, every ModelParams
    field, then one record per pixel in row-major order.  Each record holds
    K pairs (q_u, q_v, mean, covariance upper triangle) and the per-channel
    range bounds.
    """
    h, w, c = model.height, model.width, model.channels
    p = model.params
    k = p.k_supports
    head = _HEADER.pack(MODEL_MAGIC, MODEL_VERSION, w, h, c)
    head += _PARAMS.pack(*(getattr(p, name) for name in _PARAM_ORDER))
    rec = np.empty((h, w), dtype=_pixel_dtype(k, c))
    rec["pairs"]["q_u"] = model.supports[..., 0]
    rec["pairs"]["q_v"] = model.supports[..., 1]
    # state is (H, K, F, W); records want (H, W, K, F)
    state = model.state.transpose(0, 3, 1, 2)
    rec["pairs"]["delta"] = state[..., :c]
    rec["pairs"]["sigma"] = state[..., c:]
    rec["range_lo"] = model.range_lo
    rec["range_hi"] = model.range_hi
    return head + rec.tobytes()


def load_model(data: bytes) -> BackgroundModel:
    if len(data) < _HEADER.size + _PARAMS.size:
        raise IncompatibleModel(f"model data truncated ({len(data)} bytes)")
    magic, version, w, h, c = _HEADER.unpack_from(data, 0)
    if magic != MODEL_MAGIC:
        raise IncompatibleModel(f"bad magic {magic!r}")
    if version != MODEL_VERSION:
        raise IncompatibleModel(f"unsupported model version {version} (expected {MODEL_VERSION})")
    values = _PARAMS.unpack_from(data, _HEADER.size)
    raw = dict(zip(_PARAM_ORDER, values))
    raw["range_check_enabled"] = bool(raw["range_check_enabled"])
    try:
        params = ModelParams(**raw)
    except InvalidInput as exc:
        raise IncompatibleModel(f"invalid parameters in model: {exc}") from exc
    if c not in (1, 3) or w < 1 or h < 1:
        raise IncompatibleModel(f"bad model dimensions {w}x{h}x{c}")
    k = params.k_supports
    dtype = _pixel_dtype(k, c)
    offset = _HEADER.size + _PARAMS.size
    expected = offset + dtype.itemsize * w * h
    if len(data) != expected:
        raise IncompatibleModel(f"model data has {len(data)} bytes, expected {expected}")
    rec = np.frombuffer(data, dtype=dtype, offset=offset).reshape(h, w)
    supports = np.stack([rec["pairs"]["q_u"], rec["pairs"]["q_v"]], axis=-1).astype(np.int32)
    fields = np.concatenate([rec["pairs"]["delta"], rec["pairs"]["sigma"]], axis=-1)
    assert fields.shape[-1] == n_fields(c)
    state = np.ascontiguousarray(fields.transpose(0, 2, 3, 1), dtype=np.float64)
    try:
        return BackgroundModel(
            params, supports, state,
            np.ascontiguousarray(rec["range_lo"], dtype=np.float64),
            np.ascontiguousarray(rec["range_hi"], dtype=np.float64),
        )
    except InvalidInput as exc:
        raise IncompatibleModel(f"inconsistent model data: {exc}") from exc


def save_model_file(model: BackgroundModel, path) -> None:
    Path(path).write_bytes(save_model(model))


def load_model_file(path) -> BackgroundModel:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DecodeError(f"{path}: {exc.strerror or exc}") from exc
    return load_model(data)
