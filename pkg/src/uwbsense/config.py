"""Flat ``key = value`` configuration files and the run configuration records.

A config file is UTF-8 text with one ``key = value`` pair per line. Blank lines
and anything after ``#`` are ignored. Dotted keys (``anchor.0.x``) describe
list entries.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    """A configuration value is missing, malformed or violates an invariant."""


def parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def load_kv(path: str | Path) -> dict[str, str]:
    return parse_kv(Path(path).read_text(encoding="utf-8"))


def dump_kv(items: dict[str, object]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in items.items())


def _coerce(value: str, like: object):
    if isinstance(like, bool):
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    try:
        if isinstance(like, int):
            return int(value)
        if isinstance(like, float):
            return float(value)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return value


def _flat_fields(obj) -> dict[str, object]:
    return {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)
            if not isinstance(getattr(obj, f.name), (list, tuple, dict))}


def _apply(cls, kv: dict[str, str], prefix: str = ""):
    defaults = cls()
    kwargs = {}
    for f in dataclasses.fields(cls):
        key = prefix + f.name
        if key in kv:
            kwargs[f.name] = _coerce(kv[key], getattr(defaults, f.name))
    return cls(**kwargs)


def config_hash(text: str) -> int:
    """Stable unsigned 64-bit hash of a config dump."""
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


@dataclass(frozen=True)
class AnchorPose:
    id: int
    x: float
    y: float


def _corner_anchors(width: float = 6.0, length: float = 6.0, inset: float = 0.5):
    return (
        AnchorPose(0, inset, inset),
        AnchorPose(1, width - inset, inset),
        AnchorPose(2, width - inset, length - inset),
        AnchorPose(3, inset, length - inset),
    )


@dataclass(frozen=True)
class SceneConfig:
    room_width: float = 6.0
    room_length: float = 6.0
    wall_reflectivity: float = 0.6
    anchors: tuple[AnchorPose, ...] = field(default_factory=_corner_anchors)
    rng_seed: int = 0
    person_rcs: float = 0.4
    sitting_rcs_factor: float = 0.6

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "SceneConfig":
        base = _apply(cls, {k: v for k, v in kv.items() if not k.startswith("anchor.")})
        ids = sorted({k.split(".")[1] for k in kv if k.startswith("anchor.")}, key=int)
        if not ids:
            return base
        anchors = []
        for i in ids:
            try:
                anchors.append(AnchorPose(
                    int(kv.get(f"anchor.{i}.id", i)),
                    float(kv[f"anchor.{i}.x"]),
                    float(kv[f"anchor.{i}.y"]),
                ))
            except KeyError as exc:
                raise ConfigError(f"anchor.{i} is missing {exc.args[0]}") from None
            except ValueError as exc:
                raise ConfigError(f"anchor.{i}: {exc}") from None
        return dataclasses.replace(base, anchors=tuple(anchors))

    def to_kv(self) -> dict[str, object]:
        out = _flat_fields(self)
        for i, a in enumerate(self.anchors):
            out[f"anchor.{i}.id"] = a.id
            out[f"anchor.{i}.x"] = a.x
            out[f"anchor.{i}.y"] = a.y
        return out


@dataclass(frozen=True)
class RadioConfig:
    """DW1000 radio settings; defaults follow the channel-5 configuration."""

    channel_number: int = 5
    carrier_frequency: float = 6489.6  # MHz
    bandwidth: float = 499.2  # MHz
    prf: int = 64  # MHz
    preamble_length: int = 256
    pac_size: int = 16
    preamble_code: int = 10
    sample_spacing: float = 1.0016  # ns
    window_length: int = 58
    pre_fp_samples: int = 3
    buffer_length: int = 1016
    fp_nominal_index: int = 740
    rolloff: float = 0.25
    full_scale_fraction: float = 0.25
    detect_threshold: float = 6.0  # multiples of the noise floor
    fp_dither: int = 1  # +- steps of 1/64 sample added to the reported fp_frac
    random_sampling_phase: bool = True

    def __post_init__(self):
        if self.window_length < 1 or not 0 <= self.pre_fp_samples < self.window_length:
            raise ConfigError("bad window_length/pre_fp_samples")
        if self.sample_spacing <= 0 or self.bandwidth <= 0 or self.carrier_frequency <= 0:
            raise ConfigError("frequencies and sample spacing must be positive")
        if not 0 < self.full_scale_fraction <= 1:
            raise ConfigError("full_scale_fraction must be in (0, 1]")
        if not 0 <= self.rolloff <= 1:
            raise ConfigError("rolloff must be in [0, 1]")

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "RadioConfig":
        return _apply(cls, kv)

    def to_kv(self) -> dict[str, object]:
        return _flat_fields(self)

    def hash64(self) -> int:
        return config_hash(dump_kv(self.to_kv()))


@dataclass(frozen=True)
class TimingConfig:
    processing_us: float = 8000.0
    backoff_max_us: float = 100.0
    airtime_us: float = 180.0
    wake_on_rx: bool = False
    clock_skew_ppm: float = 0.0  # placeholder; the clock model is ideal

    def __post_init__(self):
        if self.processing_us < 0 or self.backoff_max_us < 0 or self.airtime_us <= 0:
            raise ConfigError("timing values must be non-negative, airtime positive")

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "TimingConfig":
        return _apply(cls, kv)

    def to_kv(self) -> dict[str, object]:
        return _flat_fields(self)


@dataclass(frozen=True)
class PreprocessConfig:
    m: int = 16
    c: int = 4
    window_s: float = 1.0
    hop_s: float = 0.5
    n_upsample: int = 500
    stride: int = 0  # 0 means stride == m (non-overlapping blocks)
    preamble_normalize: bool = False

    def __post_init__(self):
        if self.m < 2:
            raise ConfigError("m must be >= 2")
        if self.c < 1:
            raise ConfigError("c must be >= 1")
        if self.window_s <= 0 or self.hop_s <= 0:
            raise ConfigError("window_s and hop_s must be positive")
        if self.stride < 0:
            raise ConfigError("stride must be >= 0")

    @property
    def block_stride(self) -> int:
        return self.stride or self.m

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "PreprocessConfig":
        return _apply(cls, kv)

    def to_kv(self) -> dict[str, object]:
        return _flat_fields(self)
