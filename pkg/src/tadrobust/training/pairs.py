"""Action-background pairing and the FrameDrop augmentation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..data import FeatureSequence, FrameSequence, VideoRecord, frame_span

log = logging.getLogger(__name__)

Range = tuple[int, int]


@dataclass(frozen=True)
class ABPair:
    """One action span plus the background attached to it.

    ``background_frames`` holds disjoint inclusive ranges: the gap that
    follows the action and, for the first pair only, the leading background.
    """

    action_frames: Range
    background_frames: tuple[Range, ...] = ()

    @property
    def n_action(self) -> int:
        return self.action_frames[1] - self.action_frames[0] + 1

    @property
    def n_background(self) -> int:
        return sum(b - a + 1 for a, b in self.background_frames)

    def action_indices(self) -> np.ndarray:
        return np.arange(self.action_frames[0], self.action_frames[1] + 1)

    def indices(self) -> np.ndarray:
        parts = [self.action_indices()] + [np.arange(a, b + 1) for a, b in self.background_frames]
        return np.concatenate(parts)


def _action_spans(record: VideoRecord, fps: float, frame_count: int) -> list[Range]:
    spans: list[list[int]] = []
    prev_end_sec = None
    for ann in record.annotations:
        s, e = frame_span(ann, fps, frame_count)
        if spans and prev_end_sec is not None and ann.start_sec < prev_end_sec:
            log.info("video %s: merging overlapping actions before pairing", record.id)
            spans[-1][1] = max(spans[-1][1], e)
            prev_end_sec = max(prev_end_sec, ann.end_sec)
            continue
        if spans and s <= spans[-1][1]:
            # touching in seconds but sharing a boundary frame
            s = spans[-1][1] + 1
            if s > e:
                continue
        spans.append([s, e])
        prev_end_sec = ann.end_sec
    return [(a, b) for a, b in spans]


def segment_ab_pairs(record: VideoRecord, fps: float | None = None, frame_count: int | None = None) -> list[ABPair]:
    fps = record.fps if fps is None else fps
    frame_count = record.frame_count if frame_count is None else frame_count
    spans = _action_spans(record, fps, frame_count)
    pairs = []
    for i, (a0, a1) in enumerate(spans):
        nxt = spans[i + 1][0] if i + 1 < len(spans) else frame_count
        bg: list[Range] = []
        if a1 + 1 <= nxt - 1:
            bg.append((a1 + 1, nxt - 1))
        if i == 0 and a0 > 0:
            bg.append((0, a0 - 1))
        pairs.append(ABPair((a0, a1), tuple(bg)))
    return pairs


def framedrop(seq, pairs: list[ABPair], rng: np.random.Generator, scope: str = "ab_pair"):
    """Black out one uniformly chosen frame per pair.

    ``seq`` may be a :class:`FrameSequence`, a :class:`FeatureSequence` or a raw
    (T, ...) array. Returns the augmented copy (same type) and the dropped
    indices in pair order.
    """
    if scope not in ("ab_pair", "action_only"):
        raise ValueError(f"unknown framedrop scope {scope!r}")
    dropped = []
    for pair in pairs:
        candidates = pair.action_indices() if scope == "action_only" else pair.indices()
        dropped.append(int(candidates[rng.integers(0, len(candidates))]))
    if isinstance(seq, FrameSequence):
        frames = seq.frames.copy()
        frames[dropped] = 0
        return FrameSequence(frames, fps=seq.fps), dropped
    if isinstance(seq, FeatureSequence):
        values = seq.values.copy()
        values[dropped] = 0
        return FeatureSequence(values, stride=seq.stride, meta=dict(seq.meta)), dropped
    arr = np.array(seq, copy=True)
    if dropped:
        arr[dropped] = 0
    return arr, dropped
