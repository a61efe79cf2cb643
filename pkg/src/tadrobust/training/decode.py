"""Turn per-timestep detector outputs into scored segments."""

from __future__ import annotations

import numpy as np

from ..data import Prediction
from ..metrics import tiou
from .model import ToyModelConfig


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def nms(segments: list[tuple[float, float]], scores: list[float], threshold: float) -> list[int]:
    """Greedy NMS; returns kept indices in score-descending order."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], segments[i][0], i))
    keep: list[int] = []
    for i in order:
        if all(tiou(segments[i], segments[j]) < threshold for j in keep):
            keep.append(i)
    return keep


def decode_predictions(
    outputs: np.ndarray,
    cfg: ToyModelConfig,
    video_id: str = "",
    labels: tuple[str, ...] | None = None,
    fps: float = 1.0,
    stride: int = 1,
    duration: float | None = None,
) -> list[Prediction]:
    """``outputs``: T x (C+1+2), class logits (background first) then (d_s, d_e).

    Segments are ``[t - d_s, t + d_e]`` in timestep units, scaled by
    ``stride / fps`` to seconds and clipped to ``[0, duration]``.
    """
    outputs = np.asarray(outputs, dtype=np.float64)
    C = cfg.num_classes
    if outputs.ndim != 2 or outputs.shape[1] != C + 3:
        raise ValueError(f"expected T x {C + 3} outputs, got {outputs.shape}")
    labels = labels or tuple(f"class{c}" for c in range(C))
    probs = softmax(outputs[:, : C + 1])
    offsets = outputs[:, C + 1 :]
    cls = probs.argmax(axis=1)
    scale = stride / fps
    by_class: dict[int, tuple[list, list]] = {}
    for t in np.flatnonzero(cls > 0):
        score = float(probs[t, cls[t]])
        if score < cfg.score_threshold:
            continue
        s = (t - offsets[t, 0]) * scale
        e = (t + offsets[t, 1]) * scale
        s = max(s, 0.0)
        if duration is not None:
            e = min(e, duration)
        if e <= s:
            continue
        segs, scores = by_class.setdefault(int(cls[t]), ([], []))
        segs.append((float(s), float(e)))
        scores.append(score)
    preds = []
    for c in sorted(by_class):
        segs, scores = by_class[c]
        for i in nms(segs, scores, cfg.nms_tiou):
            preds.append(Prediction(video_id, segs[i][0], segs[i][1], labels[c - 1], min(1.0, scores[i])))
    preds.sort(key=lambda p: (-p.score, p.start_sec, p.label))
    return preds[: cfg.max_detections]
