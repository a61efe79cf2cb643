"""Frame-level corruption transforms and their temporal placement.

Every random choice is drawn from a generator seeded by
``(corruption seed, video id hash, frame index, salt)`` so outputs never depend on
execution order.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import FrameSequence, VideoRecord, frame_span
from .hashing import MASK64, stable_hash


class CorruptionType(str, enum.Enum):
    BLACK_FRAME = "black_frame"
    PACKET_LOSS = "packet_loss"
    OVEREXPOSURE = "overexposure"
    MOTION_BLUR = "motion_blur"
    OCCLUSION = "occlusion"
    JITTERING = "jittering"
    FRAME_RATE = "frame_rate"
    SLOW_MOTION = "slow_motion"
    TIME_LAPSE = "time_lapse"

    @property
    def is_temporal(self) -> bool:
        return self in TEMPORAL_TYPES

    @property
    def is_core(self) -> bool:
        return self in CORE_TYPES


CORE_TYPES = (
    CorruptionType.BLACK_FRAME,
    CorruptionType.PACKET_LOSS,
    CorruptionType.OVEREXPOSURE,
    CorruptionType.MOTION_BLUR,
    CorruptionType.OCCLUSION,
)
EXTENDED_TYPES = (
    CorruptionType.JITTERING,
    CorruptionType.FRAME_RATE,
    CorruptionType.SLOW_MOTION,
    CorruptionType.TIME_LAPSE,
)
TEMPORAL_TYPES = frozenset(
    {CorruptionType.FRAME_RATE, CorruptionType.SLOW_MOTION, CorruptionType.TIME_LAPSE}
)

SEVERITY_PERCENT = {1: 1, 2: 5, 3: 10}


class PlacementError(ValueError):
    """Window outside sequence bounds, or an action too short for a sweep."""


class CompositionMode(str, enum.Enum):
    SPATIAL = "spatial"
    TEMPORAL = "temporal"


@dataclass(frozen=True)
class SeverityLevel:
    level: int

    def __post_init__(self) -> None:
        if self.level not in SEVERITY_PERCENT:
            raise ValueError(f"severity level must be 1, 2 or 3, got {self.level}")

    @property
    def percent(self) -> int:
        return SEVERITY_PERCENT[self.level]


@dataclass(frozen=True)
class PlacementPolicy:
    """Where corruption lands inside each action.

    ``center`` corrupts the central l% of the action, ``fraction`` places a
    fixed-length window (5 frames by default) at ``fraction`` of the action,
    and ``explicit`` uses the given absolute frame ranges.
    """

    mode: str = "center"
    fraction: float | None = None
    length: int = 5
    windows: tuple[tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        if self.mode not in ("center", "fraction", "explicit"):
            raise ValueError(f"unknown placement mode {self.mode!r}")
        if self.mode == "fraction" and not (self.fraction is not None and 0 < self.fraction < 1):
            raise ValueError("fraction placement needs fraction in (0, 1)")

    @classmethod
    def center_of_action(cls) -> "PlacementPolicy":
        return cls("center")

    @classmethod
    def fixed_fraction(cls, f: float, length: int = 5) -> "PlacementPolicy":
        return cls("fraction", fraction=f, length=length)

    @classmethod
    def explicit(cls, windows: Iterable[tuple[int, int]]) -> "PlacementPolicy":
        return cls("explicit", windows=tuple((int(a), int(b)) for a, b in windows))


@dataclass(frozen=True)
class CorruptionParams:
    gamma: float = 0.45
    gain: float = 1.6
    blur_length: int = 15
    occlusion_area: float = 0.4
    occlusion_value: int = 128
    block_size: int = 16
    block_prob: float = 0.3
    max_shift: int = 8


DEFAULT_PARAMS = CorruptionParams()


@dataclass(frozen=True)
class CorruptionSpec:
    ctype: CorruptionType
    severity: SeverityLevel = SeverityLevel(1)
    placement: PlacementPolicy = PlacementPolicy()
    seed: int = 0
    second: CorruptionType | None = None
    composition: CompositionMode | None = None
    params: CorruptionParams = DEFAULT_PARAMS

    def __post_init__(self) -> None:
        object.__setattr__(self, "ctype", CorruptionType(self.ctype))
        object.__setattr__(self, "seed", int(self.seed) & MASK64)
        if (self.second is None) != (self.composition is None):
            raise ValueError("composition needs both a second type and a mode")
        if self.second is not None:
            second = CorruptionType(self.second)
            object.__setattr__(self, "second", second)
            object.__setattr__(self, "composition", CompositionMode(self.composition))
            if not (self.ctype.is_core and second.is_core) or second == self.ctype:
                raise ValueError("composition requires two distinct core corruption types")

    @property
    def types(self) -> list[CorruptionType]:
        return [self.ctype] if self.second is None else [self.ctype, self.second]


@dataclass
class CorruptionLog:
    records: list[dict] = field(default_factory=list)

    def add(self, video_id: str, window: tuple[int, int], spec: CorruptionSpec) -> None:
        rec = {
            "video_id": video_id,
            "window": [int(window[0]), int(window[1])],
            "types": [t.value for t in spec.types],
            "severity": spec.severity.level,
            "seed": spec.seed,
        }
        if spec.composition is not None:
            rec["composition"] = spec.composition.value
        self.records.append(rec)

    def extend(self, other: "CorruptionLog") -> None:
        self.records.extend(other.records)

    def __len__(self) -> int:
        return len(self.records)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def append_to(self, path: str | Path) -> None:
        with open(path, "a", encoding="utf-8") as f:
            f.write(self.to_jsonl())


# ---------------------------------------------------------------- placement


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def placement_window(action_frames: tuple[int, int], severity: SeverityLevel | int) -> tuple[int, int]:
    """Central l% of the action's frames, at least one frame long."""
    if isinstance(severity, int):
        severity = SeverityLevel(severity)
    a0, a1 = action_frames
    n_a = a1 - a0 + 1
    if n_a < 1:
        raise PlacementError(f"empty action range {action_frames}")
    # integer form of round_half_up(l * n_a / 100), exact for all n_a
    n = max(1, (2 * severity.percent * n_a + 100) // 200)
    start = a0 + (n_a - n) // 2
    return (start, start + n - 1)


def sweep_window(action_frames: tuple[int, int], fraction: float, length: int = 5) -> tuple[int, int]:
    """Fixed-length window centred at ``fraction`` of the action, clamped inside it."""
    a0, a1 = action_frames
    n_a = a1 - a0 + 1
    if n_a < length:
        raise PlacementError(f"action of {n_a} frames is shorter than the {length}-frame sweep window")
    center = a0 + round_half_up(fraction * (n_a - 1))
    start = center - length // 2
    start = min(max(start, a0), a1 - length + 1)
    return (start, start + length - 1)


def merge_windows(windows: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
    """Union of inclusive ranges, as sorted disjoint ranges (overlaps merge, adjacency does not)."""
    out: list[list[int]] = []
    for a, b in sorted(windows):
        if out and a <= out[-1][1]:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return [(a, b) for a, b in out]


def action_windows(record: VideoRecord, spec: CorruptionSpec, frame_count: int | None = None) -> list[tuple[int, int]]:
    """Merged windows the placement policy selects for ``record``."""
    count = record.frame_count if frame_count is None else frame_count
    pol = spec.placement
    if pol.mode == "explicit":
        return merge_windows(pol.windows)
    wins = []
    for ann in record.annotations:
        span = frame_span(ann, record.fps, count)
        if pol.mode == "center":
            wins.append(placement_window(span, spec.severity))
        else:
            wins.append(sweep_window(span, pol.fraction, pol.length))
    return merge_windows(wins)


# ---------------------------------------------------------------- RNG


def frame_rng(seed: int, video_id: str, frame_index: int, salt: str = "") -> np.random.Generator:
    words = [int(seed) & MASK64, stable_hash(video_id), int(frame_index) & MASK64, stable_hash(salt)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))


# ---------------------------------------------------------------- transforms


def _overexposure_lut(gamma: float, gain: float) -> np.ndarray:
    v = np.arange(256, dtype=np.float64)
    out = np.floor(255.0 * (v / 255.0) ** gamma * gain + 0.5)
    return np.clip(out, 0, 255).astype(np.uint8)


def overexpose(frame: np.ndarray, params: CorruptionParams = DEFAULT_PARAMS) -> np.ndarray:
    return _overexposure_lut(params.gamma, params.gain)[frame]


def motion_blur(frame: np.ndarray, length: int = 15) -> np.ndarray:
    """Horizontal 1 x length box filter with edge-replicate padding, integer exact."""
    left = (length - 1) // 2
    right = length - 1 - left
    padded = np.pad(frame.astype(np.int64), ((0, 0), (left, right), (0, 0)), mode="edge")
    csum = np.cumsum(padded, axis=1)
    csum = np.concatenate([np.zeros_like(csum[:, :1]), csum], axis=1)
    window_sum = csum[:, length:] - csum[:, :-length]
    # round half up: (sum + L/2) // L
    return ((2 * window_sum + length) // (2 * length)).astype(np.uint8)


def occlusion_rect(height: int, width: int, rng: np.random.Generator, area: float = 0.4) -> tuple[int, int, int, int]:
    """(y0, x0, h, w) of a rectangle with the frame's aspect ratio covering ``area``."""
    scale = math.sqrt(area)
    h = max(1, min(height, round_half_up(height * scale)))
    w = max(1, min(width, round_half_up(width * scale)))
    y0 = int(rng.integers(0, height - h + 1))
    x0 = int(rng.integers(0, width - w + 1))
    return (y0, x0, h, w)


def occlude(frame: np.ndarray, rect: tuple[int, int, int, int], value: int = 128) -> np.ndarray:
    y0, x0, h, w = rect
    out = frame.copy()
    out[y0 : y0 + h, x0 : x0 + w, :] = value
    return out


def _shift_edge(frame: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Translate content by (dy, dx); uncovered pixels replicate the nearest edge."""
    h, w = frame.shape[:2]
    ys = np.clip(np.arange(h) - dy, 0, h - 1)
    xs = np.clip(np.arange(w) - dx, 0, w - 1)
    return frame[ys[:, None], xs[None, :]]


def jitter(frame: np.ndarray, rng: np.random.Generator, max_shift: int = 8) -> np.ndarray:
    dy, dx = (int(v) for v in rng.integers(-max_shift, max_shift + 1, size=2))
    return _shift_edge(frame, dy, dx)


def packet_loss(
    frame: np.ndarray,
    prev: np.ndarray | None,
    rng: np.random.Generator,
    params: CorruptionParams = DEFAULT_PARAMS,
) -> np.ndarray:
    """Blockwise stale-copy corruption.

    Each block is hit independently with probability ``block_prob``; a hit
    block is replaced by the co-located block of ``prev`` displaced by a random
    offset (zeros when there is no previous frame).
    """
    h, w = frame.shape[:2]
    bs = params.block_size
    out = frame.copy()
    ny, nx = -(-h // bs), -(-w // bs)
    hits = rng.random((ny, nx)) < params.block_prob
    offsets = rng.integers(-params.max_shift, params.max_shift + 1, size=(ny, nx, 2))
    for by in range(ny):
        for bx in range(nx):
            if not hits[by, bx]:
                continue
            y0, x0 = by * bs, bx * bs
            y1, x1 = min(y0 + bs, h), min(x0 + bs, w)
            if prev is None:
                out[y0:y1, x0:x1] = 0
                continue
            dy, dx = offsets[by, bx]
            ys = np.clip(np.arange(y0, y1) + dy, 0, h - 1)
            xs = np.clip(np.arange(x0, x1) + dx, 0, w - 1)
            out[y0:y1, x0:x1] = prev[ys[:, None], xs[None, :]]
    return out


def corrupt_frame(
    frame: np.ndarray,
    ctype: CorruptionType,
    rng: np.random.Generator,
    prev: np.ndarray | None = None,
    params: CorruptionParams = DEFAULT_PARAMS,
    occlusion: tuple[int, int, int, int] | None = None,
) -> np.ndarray:
    """Apply one per-frame transform. Temporal types are identity at frame level."""
    ctype = CorruptionType(ctype)
    if ctype is CorruptionType.BLACK_FRAME:
        return np.zeros_like(frame)
    if ctype is CorruptionType.OVEREXPOSURE:
        return overexpose(frame, params)
    if ctype is CorruptionType.MOTION_BLUR:
        return motion_blur(frame, params.blur_length)
    if ctype is CorruptionType.OCCLUSION:
        if occlusion is None:
            occlusion = occlusion_rect(frame.shape[0], frame.shape[1], rng, params.occlusion_area)
        return occlude(frame, occlusion, params.occlusion_value)
    if ctype is CorruptionType.PACKET_LOSS:
        return packet_loss(frame, prev, rng, params)
    if ctype is CorruptionType.JITTERING:
        return jitter(frame, rng, params.max_shift)
    return frame.copy()


def temporal_remap(ctype: CorruptionType, n: int) -> list[int]:
    """Source offsets (within the window) for each output slot of a temporal type."""
    if ctype is CorruptionType.FRAME_RATE:
        return [(i // 3) * 3 for i in range(n)]
    if ctype is CorruptionType.SLOW_MOTION:
        return [i // 2 for i in range(n)]
    if ctype is CorruptionType.TIME_LAPSE:
        last_kept = ((n - 1) // 2) * 2
        return [min(2 * i, last_kept) for i in range(n)]
    return list(range(n))


def _apply_types(
    frames: np.ndarray,
    source: np.ndarray,
    idxs: Sequence[int],
    types: Sequence[CorruptionType],
    spec: CorruptionSpec,
    video_id: str,
    window_start: int,
) -> None:
    """Corrupt ``frames[idxs]`` in place by applying ``types`` in order."""
    if not idxs:
        return
    for ctype in types:
        if ctype.is_temporal:
            remap = temporal_remap(ctype, len(idxs))
            block = frames[list(idxs)].copy()
            frames[list(idxs)] = block[remap]
            continue
        rect = None
        if ctype is CorruptionType.OCCLUSION:
            rng = frame_rng(spec.seed, video_id, window_start, "occlusion-rect")
            rect = occlusion_rect(frames.shape[1], frames.shape[2], rng, spec.params.occlusion_area)
        for t in idxs:
            rng = frame_rng(spec.seed, video_id, t, ctype.value)
            prev = source[t - 1] if t > 0 else None
            frames[t] = corrupt_frame(frames[t], ctype, rng, prev, spec.params, rect)


def corrupt_window(
    seq: FrameSequence,
    window: tuple[int, int],
    spec: CorruptionSpec,
    video_id: str = "",
) -> tuple[FrameSequence, CorruptionLog]:
    return corrupt_windows(seq, [window], spec, video_id)


def corrupt_windows(
    seq: FrameSequence,
    windows: Sequence[tuple[int, int]],
    spec: CorruptionSpec,
    video_id: str = "",
) -> tuple[FrameSequence, CorruptionLog]:
    log = CorruptionLog()
    for a, b in windows:
        if not (0 <= a <= b < seq.frame_count):
            raise PlacementError(f"window [{a}, {b}] outside [0, {seq.frame_count - 1}]")
    frames = seq.frames.copy()
    for a, b in merge_windows(windows):
        idxs = list(range(a, b + 1))
        if spec.composition is CompositionMode.TEMPORAL:
            half = (len(idxs) + 1) // 2
            _apply_types(frames, seq.frames, idxs[:half], [spec.ctype], spec, video_id, a)
            _apply_types(frames, seq.frames, idxs[half:], [spec.second], spec, video_id, a)
        else:
            _apply_types(frames, seq.frames, idxs, spec.types, spec, video_id, a)
        log.add(video_id, (a, b), spec)
    return FrameSequence(frames, fps=seq.fps), log


def corrupt_video(record: VideoRecord, seq: FrameSequence, spec: CorruptionSpec) -> tuple[FrameSequence, CorruptionLog]:
    if seq.frame_count != record.frame_count:
        raise PlacementError(
            f"video {record.id}: sequence has {seq.frame_count} frames, record says {record.frame_count}"
        )
    windows = action_windows(record, spec)
    if not windows:
        return seq, CorruptionLog()
    return corrupt_windows(seq, windows, spec, record.id)


def corrupt_features(values: np.ndarray, windows: Iterable[tuple[int, int]]) -> np.ndarray:
    """Feature-space black frame: zero the timesteps in ``windows``."""
    out = np.array(values, copy=True)
    for a, b in merge_windows(windows):
        out[a : b + 1] = 0
    return out
