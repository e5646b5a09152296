"""Model parameters and their defaults."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from .errors import InvalidInput


@dataclass(frozen=True)
class ModelParams:
    k_supports: int = 20
    pf_threshold: float = 0.35
    gauss_c: float = 3.0
    alpha: float = 0.01
    candidate_multiplier: int = 4
    gamma_scale: float = 0.75
    gamma_floor: float = 0.5
    range_margin_lo: float = 10.0
    range_margin_hi: float = 10.0
    range_check_enabled: bool = True
    cov_epsilon: float = 1e-3
    seed: int = 0
    training_frames: int = 100
    # subsampling of candidate positions during correlation; 1 = every pixel
    candidate_stride: int = 1

    def __post_init__(self):
        problems = []
        if not 0.0 <= self.pf_threshold <= 1.0:
            problems.append(f"pf_threshold={self.pf_threshold} not in [0, 1]")
        if not 0.0 <= self.alpha <= 1.0:
            problems.append(f"alpha={self.alpha} not in [0, 1]")
        if not self.gauss_c > 0:
            problems.append(f"gauss_c={self.gauss_c} must be positive")
        if self.k_supports < 1:
            problems.append(f"k_supports={self.k_supports} must be >= 1")
        if self.candidate_multiplier < 1:
            problems.append("candidate_multiplier must be >= 1")
        if not 0.0 < self.gamma_scale <= 1.0:
            problems.append(f"gamma_scale={self.gamma_scale} not in (0, 1]")
        if not 0.0 <= self.gamma_floor < 1.0:
            problems.append(f"gamma_floor={self.gamma_floor} not in [0, 1)")
        if self.range_margin_lo < 0 or self.range_margin_hi < 0:
            problems.append("range margins must be nonnegative")
        if not self.cov_epsilon > 0:
            problems.append(f"cov_epsilon={self.cov_epsilon} must be positive")
        if not 0 <= self.seed < 2**64:
            problems.append("seed must fit in an unsigned 64-bit integer")
        if self.training_frames < 1:
            problems.append("training_frames must be >= 1")
        if self.candidate_stride < 1:
            problems.append("candidate_stride must be >= 1")
        if problems:
            raise InvalidInput("; ".join(problems))

    @property
    def n_candidates(self) -> int:
        return self.candidate_multiplier * self.k_supports

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_strings(cls, items: dict[str, str], base: "ModelParams | None" = None) -> "ModelParams":
        """Build params from textual key/value pairs, rejecting unknown keys."""
        base = base or cls()
        types = {f.name: f.type for f in fields(cls)}
        changes = {}
        for key, raw in items.items():
            if key not in types:
                raise InvalidInput(f"unknown parameter {key!r}")
            changes[key] = _parse_value(types[key], raw, key)
        return base.replace(**changes)


def _parse_value(type_name, raw, key):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if type_name in ("bool", bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if type_name in ("int", int):
            return int(text, 0)
        return float(text)
    except ValueError:
        raise InvalidInput(f"bad value for {key}: {raw!r}") from None
