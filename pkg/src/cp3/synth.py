"""Deterministic synthetic scenes with ground truth.

A scene is a static background plus timed events.  Per frame, in order:
periodic regions modulate the background, illumination steps apply, moving
boxes and camouflage boxes are drawn, then i.i.d. Gaussian noise is added
and the result is clamped to [0, 255] and (by default) rounded to integers
so it survives 8-bit files unchanged.

Frame t uses its own noise stream seeded by (seed, t), so any frame can be
regenerated alone.  Frame indices here are 0-based; written sequences use
1-based file names (frame t -> ``in%06d`` with t + 1).
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Union

import numpy as np

from .dataset import GT, write_frame, write_mask, _write_pixels, write_temporal_roi
from .errors import InvalidInput

Rect = tuple[int, int, int, int]  # (u0, v0, width, height)


@dataclass(frozen=True)
class IlluminationStep:
    """From ``start`` on, every pixel becomes ``gain * x + offset``."""

    start: int
    offset: float = 0.0
    gain: float = 1.0
    kind: str = field(default="illumination", init=False)


@dataclass(frozen=True)
class MovingBox:
    """A square or rectangle at ``contrast`` above the scene, moving at a
    constant integer velocity from ``position`` at frame ``start``."""

    start: int
    size: tuple[int, int] = (8, 8)
    position: tuple[int, int] = (0, 0)
    velocity: tuple[int, int] = (1, 0)
    contrast: float = 80.0
    stop: int | None = None
    kind: str = field(default="moving_box", init=False)

    def rect_at(self, t: int) -> Rect | None:
        if t < self.start or (self.stop is not None and t >= self.stop):
            return None
        dt = t - self.start
        return (self.position[0] + self.velocity[0] * dt, self.position[1] + self.velocity[1] * dt,
                self.size[0], self.size[1])


@dataclass(frozen=True)
class PeriodicRegion:
    """Sinusoidal intensity swing inside ``rect``; stays background."""

    rect: Rect
    amplitude: float
    period: float
    phase: float = 0.0
    kind: str = field(default="periodic", init=False)


@dataclass(frozen=True)
class CamouflageBox:
    """Adds a uniform offset inside ``rect`` for ``duration`` frames.

    Differences between pixels inside the box are unchanged.
    """

    rect: Rect
    offset: float
    start: int
    duration: int | None = None
    kind: str = field(default="camouflage", init=False)


Event = Union[IlluminationStep, MovingBox, PeriodicRegion, CamouflageBox]
_EVENT_TYPES = {cls.__dataclass_fields__["kind"].default: cls
                for cls in (IlluminationStep, MovingBox, PeriodicRegion, CamouflageBox)}


@dataclass(frozen=True)
class SceneSpec:
    width: int = 64
    height: int = 64
    frame_count: int = 200
    seed: int = 0
    background: str = "flat"  # flat | gradient | two-region
    level: float = 128.0
    # gradient: horizontal ramp of this total span; two-region: right half level
    level2: float = 96.0
    gradient_span: float = 64.0
    noise_sigma: float = 2.0
    channels: int = 1
    quantize: bool = True
    events: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        validate(self)

    def replace(self, **changes) -> "SceneSpec":
        return dataclasses.replace(self, **changes)

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["events"] = [dataclasses.asdict(e) for e in self.events]
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SceneSpec":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidInput(f"scene file is not valid JSON: {exc}") from None
        events = []
        for i, e in enumerate(d.pop("events", [])):
            e = dict(e)
            kind = e.pop("kind", None)
            if kind not in _EVENT_TYPES:
                raise InvalidInput(f"event {i}: unknown kind {kind!r}")
            try:
                for key in ("rect", "size", "position", "velocity"):
                    if key in e and e[key] is not None:
                        e[key] = tuple(e[key])
                events.append(_EVENT_TYPES[kind](**e))
            except TypeError as exc:
                raise InvalidInput(f"event {i} ({kind}): {exc}") from None
        try:
            return cls(events=tuple(events), **d)
        except TypeError as exc:
            raise InvalidInput(f"scene: {exc}") from None


def _rect_problem(rect, w, h) -> str | None:
    if len(rect) != 4:
        return f"rect {rect} must be (u0, v0, width, height)"
    u0, v0, rw, rh = rect
    if rw < 1 or rh < 1:
        return f"rect {rect} has non-positive size"
    if u0 < 0 or v0 < 0 or u0 + rw > w or v0 + rh > h:
        return f"rect {rect} outside the {w}x{h} frame"
    return None


def validate(spec: SceneSpec) -> None:
    """Raise InvalidInput listing every problem, naming offending events."""
    problems = []
    if spec.width < 1 or spec.height < 1:
        problems.append(f"frame size {spec.width}x{spec.height} must be positive")
    if spec.frame_count < 1:
        problems.append("frame_count must be >= 1")
    if spec.background not in ("flat", "gradient", "two-region"):
        problems.append(f"unknown background {spec.background!r}")
    if spec.noise_sigma < 0:
        problems.append("noise_sigma must be nonnegative")
    if spec.channels not in (1, 3):
        problems.append("channels must be 1 or 3")
    if not 0 <= spec.seed < 2**63:
        problems.append("seed must be a nonnegative 63-bit integer")
    w, h, n = spec.width, spec.height, spec.frame_count
    for i, e in enumerate(spec.events):
        label = f"event {i} ({getattr(e, 'kind', type(e).__name__)})"
        if not isinstance(e, tuple(_EVENT_TYPES.values())):
            problems.append(f"{label}: not a known event type")
            continue
        start = getattr(e, "start", 0)
        if not 0 <= start < n:
            problems.append(f"{label}: start {start} outside [0, {n})")
        if isinstance(e, (PeriodicRegion, CamouflageBox)):
            bad = _rect_problem(e.rect, w, h)
            if bad:
                problems.append(f"{label}: {bad}")
        if isinstance(e, PeriodicRegion) and not e.period > 0:
            problems.append(f"{label}: period must be positive")
        if isinstance(e, CamouflageBox) and e.duration is not None and e.duration < 1:
            problems.append(f"{label}: duration must be >= 1")
        if isinstance(e, MovingBox):
            bad = _rect_problem((*e.position, *e.size), w, h)
            if bad:
                problems.append(f"{label}: initial box: {bad}")
            if e.stop is not None and e.stop <= e.start:
                problems.append(f"{label}: stop must come after start")
    if problems:
        raise InvalidInput("invalid scene: " + "; ".join(problems))


def background_image(spec: SceneSpec) -> np.ndarray:
    h, w = spec.height, spec.width
    if spec.background == "flat":
        img = np.full((h, w), float(spec.level))
    elif spec.background == "gradient":
        ramp = np.linspace(-0.5, 0.5, w) * spec.gradient_span + spec.level
        img = np.broadcast_to(ramp, (h, w)).copy()
    else:
        img = np.full((h, w), float(spec.level))
        img[:, w // 2:] = spec.level2
    return img


def _slices(rect: Rect, w: int, h: int):
    """Clip a rect to the frame; None when nothing is visible."""
    u0, v0, rw, rh = rect
    u1, v1 = min(w, u0 + rw), min(h, v0 + rh)
    u0, v0 = max(0, u0), max(0, v0)
    if u0 >= u1 or v0 >= v1:
        return None
    return slice(v0, v1), slice(u0, u1)


def render(spec: SceneSpec, t: int, base: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Frame ``t`` as float64 (H, W, C) and its ground truth (H, W) uint8."""
    if not 0 <= t < spec.frame_count:
        raise InvalidInput(f"frame {t} outside [0, {spec.frame_count})")
    w, h = spec.width, spec.height
    x = (background_image(spec) if base is None else base).copy()
    gt = np.full((h, w), GT.BACKGROUND, dtype=np.uint8)
    for e in spec.events:
        if isinstance(e, PeriodicRegion):
            sl = _slices(e.rect, w, h)
            x[sl] += e.amplitude * np.sin(2.0 * np.pi * t / e.period + e.phase)
    for e in spec.events:
        if isinstance(e, IlluminationStep) and t >= e.start:
            x = e.gain * x + e.offset
    for e in spec.events:
        if isinstance(e, MovingBox):
            rect = e.rect_at(t)
            sl = _slices(rect, w, h) if rect is not None else None
            if sl is not None:
                x[sl] += e.contrast
                gt[sl] = GT.FOREGROUND
        elif isinstance(e, CamouflageBox):
            if t >= e.start and (e.duration is None or t < e.start + e.duration):
                sl = _slices(e.rect, w, h)
                x[sl] += e.offset
                gt[sl] = GT.FOREGROUND
    frame = np.repeat(x[:, :, None], spec.channels, axis=2)
    if spec.noise_sigma > 0:
        rng = np.random.default_rng([spec.seed, t])
        frame = frame + rng.normal(0.0, spec.noise_sigma, frame.shape)
    frame = np.clip(frame, 0.0, 255.0)
    if spec.quantize:
        frame = np.rint(frame)
    return frame, gt


def iter_frames(spec: SceneSpec) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    base = background_image(spec)
    for t in range(spec.frame_count):
        yield render(spec, t, base)


def generate(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """All frames (T, H, W, C) float64 and ground truth (T, H, W) uint8."""
    frames, gts = zip(*iter_frames(spec))
    return np.stack(frames), np.stack(gts)


def write_sequence(spec: SceneSpec, root, temporal_roi: tuple[int, int] | None = None) -> Path:
    """Write the scene in the dataset layout under ``root``.

    ``input/in%06d.pgm`` (or ``.ppm``), ``groundtruth/gt%06d.png``,
    ``temporalROI.txt`` (defaults to every frame), an all-inside
    ``ROI.bmp`` and ``scene.json``.
    """
    root = Path(root)
    (root / "input").mkdir(parents=True, exist_ok=True)
    (root / "groundtruth").mkdir(exist_ok=True)
    ext = "pgm" if spec.channels == 1 else "ppm"
    for t, (frame, gt) in enumerate(iter_frames(spec)):
        write_frame(frame, root / "input" / f"in{t + 1:06d}.{ext}")
        _write_pixels(gt[:, :, None], root / "groundtruth" / f"gt{t + 1:06d}.png")
    first, last = temporal_roi or (1, spec.frame_count)
    write_temporal_roi(root / "temporalROI.txt", first, last)
    write_mask(np.ones((spec.height, spec.width), dtype=bool), root / "ROI.bmp")
    (root / "scene.json").write_text(spec.to_json() + "\n")
    return root


# --- ready-made scenes used by the experiments --------------------------------

def illumination_scene(seed: int = 0, offset: float = 30.0, gain: float = 1.0,
                       channels: int = 1, start: int = 150, frame_count: int = 161) -> SceneSpec:
    """Flat 64x64 scene with a global illumination step."""
    return SceneSpec(
        width=64, height=64, frame_count=frame_count, seed=seed, channels=channels,
        events=(IlluminationStep(start=start, offset=offset, gain=gain),),
    )


def moving_box_scene(seed: int = 0, contrast: float = 80.0, start: int = 100,
                     frame_count: int = 150, channels: int = 1) -> SceneSpec:
    """8x8 box crossing a flat 64x64 scene left to right after ``start``."""
    return SceneSpec(
        width=64, height=64, frame_count=frame_count, seed=seed, level=100.0, channels=channels,
        events=(MovingBox(start=start, size=(8, 8), position=(4, 28), velocity=(1, 0),
                          contrast=contrast),),
    )


def camouflage_scene(seed: int = 0, offset: float = 40.0, start: int = 100,
                     frame_count: int = 110, channels: int = 1) -> SceneSpec:
    """Two regions flickering at unrelated periods; at ``start`` the left
    region is covered by an object that keeps its texture but is
    ``offset`` brighter."""
    return SceneSpec(
        width=64, height=64, frame_count=frame_count, seed=seed, background="two-region",
        level=100.0, level2=150.0, channels=channels,
        events=(
            PeriodicRegion(rect=(0, 0, 32, 64), amplitude=10.0, period=40.0),
            PeriodicRegion(rect=(32, 0, 32, 64), amplitude=10.0, period=29.0, phase=1.0),
            CamouflageBox(rect=(0, 0, 32, 64), offset=offset, start=start),
        ),
    )


PRESETS = {
    "static": lambda seed=0: SceneSpec(seed=seed, frame_count=120),
    "illumination": illumination_scene,
    "moving-box": moving_box_scene,
    "camouflage": camouflage_scene,
}
