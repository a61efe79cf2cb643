"""Domain types, annotation/prediction IO, and the ``.fseq`` frame container.

Time is canonical in seconds; frame indices are always derived via
:func:`sec_to_frame` and never stored on annotations. Frame indices are
0-based.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np

log = logging.getLogger(__name__)

FSEQ_MAGIC = b"FSEQ"
FSEQ_VERSION = 1
_FSEQ_HEADER = struct.Struct("<4sIIIII")


class AnnotationFormatError(ValueError):
    """Raised when an annotation or prediction file does not parse."""


class ValidationError(ValueError):
    """Raised when parsed data violates a domain invariant."""


@dataclass(frozen=True)
class ActionInstance:
    start_sec: float
    end_sec: float
    label: str

    def __post_init__(self) -> None:
        if not self.start_sec >= 0:
            raise ValidationError(f"start_sec must be non-negative, got {self.start_sec}")
        if not self.start_sec < self.end_sec:
            raise ValidationError(
                f"start_sec < end_sec violated: [{self.start_sec}, {self.end_sec}]"
            )

    @property
    def segment(self) -> tuple[float, float]:
        return (self.start_sec, self.end_sec)

    @property
    def center(self) -> float:
        return 0.5 * (self.start_sec + self.end_sec)


@dataclass(frozen=True)
class VideoRecord:
    id: str
    fps: float
    frame_count: int
    duration_sec: float
    annotations: tuple[ActionInstance, ...] = ()

    def __post_init__(self) -> None:
        if not self.fps > 0:
            raise ValidationError(f"video {self.id}: fps must be positive")
        if self.frame_count < 1:
            raise ValidationError(f"video {self.id}: frame_count must be >= 1")
        if abs(self.duration_sec - self.frame_count / self.fps) > 1.0 / self.fps + 1e-9:
            raise ValidationError(
                f"video {self.id}: |duration_sec - frame_count/fps| <= 1/fps violated"
            )
        for a in self.annotations:
            if a.end_sec > self.duration_sec + 1e-9:
                raise ValidationError(
                    f"video {self.id}: end_sec <= duration violated by {a}"
                )
        anns = tuple(sorted(self.annotations, key=lambda a: (a.start_sec, a.end_sec, a.label)))
        object.__setattr__(self, "annotations", anns)


@dataclass(frozen=True)
class Prediction:
    video_id: str
    start_sec: float
    end_sec: float
    label: str
    score: float

    def __post_init__(self) -> None:
        if not self.start_sec < self.end_sec:
            raise ValidationError(
                f"prediction on {self.video_id}: start_sec < end_sec violated"
            )
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(
                f"prediction on {self.video_id}: score {self.score} outside [0, 1]"
            )

    @property
    def segment(self) -> tuple[float, float]:
        return (self.start_sec, self.end_sec)

    @property
    def center(self) -> float:
        return 0.5 * (self.start_sec + self.end_sec)


@dataclass(frozen=True)
class Dataset:
    name: str
    label_set: tuple[str, ...]
    videos: tuple[VideoRecord, ...] = ()

    def __post_init__(self) -> None:
        seen: set[str] = set()
        labels = set(self.label_set)
        for v in self.videos:
            if v.id in seen:
                raise ValidationError(f"duplicate video id {v.id!r}")
            seen.add(v.id)
            for a in v.annotations:
                if a.label not in labels:
                    raise ValidationError(
                        f"video {v.id}: label {a.label!r} not in label_set"
                    )
        object.__setattr__(self, "label_set", tuple(self.label_set))
        object.__setattr__(self, "videos", tuple(sorted(self.videos, key=lambda v: v.id)))

    def video(self, video_id: str) -> VideoRecord:
        for v in self.videos:
            if v.id == video_id:
                return v
        raise KeyError(video_id)

    @property
    def video_ids(self) -> list[str]:
        return [v.id for v in self.videos]


@dataclass(frozen=True, eq=False)
class FrameSequence:
    """Decoded video: ``frames`` has shape (frame_count, height, width, 3), uint8."""

    frames: np.ndarray
    fps: float = 30.0

    def __post_init__(self) -> None:
        arr = np.asarray(self.frames)
        if arr.dtype != np.uint8:
            raise ValidationError(f"frames must be uint8, got {arr.dtype}")
        if arr.ndim != 4 or arr.shape[3] != 3:
            raise ValidationError(f"frames must be (T, H, W, 3), got {arr.shape}")
        if arr.shape[0] < 1:
            raise ValidationError("frame sequence must contain at least one frame")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "frames", arr)

    @property
    def frame_count(self) -> int:
        return int(self.frames.shape[0])

    @property
    def height(self) -> int:
        return int(self.frames.shape[1])

    @property
    def width(self) -> int:
        return int(self.frames.shape[2])

    @property
    def channels(self) -> int:
        return 3

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FrameSequence):
            return NotImplemented
        return self.frames.shape == other.frames.shape and bool(
            np.array_equal(self.frames, other.frames)
        )

    def to_bytes(self) -> bytes:
        t, h, w, c = self.frames.shape
        header = _FSEQ_HEADER.pack(FSEQ_MAGIC, FSEQ_VERSION, w, h, c, t)
        return header + self.frames.tobytes(order="C")

    @classmethod
    def from_bytes(cls, payload: bytes, fps: float = 30.0) -> "FrameSequence":
        if len(payload) < _FSEQ_HEADER.size:
            raise AnnotationFormatError("fseq: truncated header")
        magic, version, w, h, c, t = _FSEQ_HEADER.unpack_from(payload)
        if magic != FSEQ_MAGIC:
            raise AnnotationFormatError(f"fseq: bad magic {magic!r}")
        if version != FSEQ_VERSION:
            raise AnnotationFormatError(f"fseq: unsupported version {version}")
        if c != 3:
            raise AnnotationFormatError(f"fseq: channels must be 3, got {c}")
        expected = _FSEQ_HEADER.size + t * h * w * c
        if len(payload) != expected:
            raise AnnotationFormatError(
                f"fseq: payload size {len(payload)} != expected {expected}"
            )
        frames = np.frombuffer(payload, dtype=np.uint8, offset=_FSEQ_HEADER.size)
        return cls(frames.reshape(t, h, w, c).copy(), fps=fps)


def write_fseq(seq: FrameSequence, path: str | Path) -> None:
    Path(path).write_bytes(seq.to_bytes())


def read_fseq(path: str | Path, fps: float = 30.0) -> FrameSequence:
    return FrameSequence.from_bytes(Path(path).read_bytes(), fps=fps)


def load_image_dir(directory: str | Path, fps: float = 30.0) -> FrameSequence:
    """Import a directory of zero-padded numbered 8-bit RGB images."""
    from PIL import Image

    directory = Path(directory)
    exts = {".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".tif", ".tiff"}
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in exts)
    if not files:
        raise AnnotationFormatError(f"no image files in {directory}")
    frames = []
    for p in files:
        with Image.open(p) as im:
            frames.append(np.asarray(im.convert("RGB"), dtype=np.uint8))
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise ValidationError(f"{directory}: frames have differing geometry {sorted(shapes)}")
    return FrameSequence(np.stack(frames), fps=fps)


def sec_to_frame(t: float, fps: float, count: int) -> int:
    return int(min(max(math.floor(t * fps), 0), count - 1))


def frame_span(a: ActionInstance, fps: float, count: int) -> tuple[int, int]:
    """Inclusive frame index range covered by ``a``."""
    s = sec_to_frame(a.start_sec, fps, count)
    e = sec_to_frame(a.end_sec, fps, count)
    return (s, max(s, e))


# ---------------------------------------------------------------- JSON IO


def _require(obj: dict, key: str, ctx: str) -> Any:
    if not isinstance(obj, dict) or key not in obj:
        raise AnnotationFormatError(f"{ctx}: missing field {key!r}")
    return obj[key]


def _parse_segment(raw: Any, ctx: str) -> tuple[float, float]:
    if not isinstance(raw, (list, tuple)) or len(raw) != 2:
        raise AnnotationFormatError(f"{ctx}: segment_sec must be a [start, end] pair")
    try:
        return float(raw[0]), float(raw[1])
    except (TypeError, ValueError) as exc:
        raise AnnotationFormatError(f"{ctx}: segment_sec is not numeric") from exc


def _read_json(path: str | Path) -> Any:
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise AnnotationFormatError(
            f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc


def dataset_from_dict(raw: dict, name: str = "dataset") -> Dataset:
    label_set = _require(raw, "label_set", "root")
    videos_raw = _require(raw, "videos", "root")
    if not isinstance(videos_raw, list):
        raise AnnotationFormatError("root: 'videos' must be a list")
    videos = []
    for i, v in enumerate(videos_raw):
        ctx = f"videos[{i}]"
        vid = str(_require(v, "id", ctx))
        ctx = f"video {vid!r}"
        anns = []
        for j, a in enumerate(_require(v, "annotations", ctx)):
            actx = f"{ctx} annotations[{j}]"
            s, e = _parse_segment(_require(a, "segment_sec", actx), actx)
            try:
                anns.append(ActionInstance(s, e, str(_require(a, "label", actx))))
            except ValidationError as exc:
                raise ValidationError(f"{actx}: {exc}") from exc
        try:
            videos.append(
                VideoRecord(
                    id=vid,
                    fps=float(_require(v, "fps", ctx)),
                    frame_count=int(_require(v, "frame_count", ctx)),
                    duration_sec=float(_require(v, "duration_sec", ctx)),
                    annotations=tuple(anns),
                )
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise AnnotationFormatError(f"{ctx}: {exc}") from exc
    return Dataset(name=str(raw.get("name", name)), label_set=tuple(label_set), videos=tuple(videos))


def dataset_to_dict(ds: Dataset) -> dict:
    return {
        "version": "1.0",
        "name": ds.name,
        "label_set": list(ds.label_set),
        "videos": [
            {
                "id": v.id,
                "fps": v.fps,
                "frame_count": v.frame_count,
                "duration_sec": v.duration_sec,
                "annotations": [
                    {"label": a.label, "segment_sec": [a.start_sec, a.end_sec]}
                    for a in v.annotations
                ],
            }
            for v in ds.videos
        ],
    }


def load_annotations(path: str | Path) -> Dataset:
    raw = _read_json(path)
    if not isinstance(raw, dict):
        raise AnnotationFormatError(f"{path}: root must be an object")
    return dataset_from_dict(raw, name=Path(path).stem)


def save_annotations(ds: Dataset, path: str | Path) -> None:
    Path(path).write_text(json.dumps(dataset_to_dict(ds), indent=2) + "\n", encoding="utf-8")


def predictions_from_dict(raw: dict) -> list[Prediction]:
    results = _require(raw, "results", "root")
    if not isinstance(results, dict):
        raise AnnotationFormatError("root: 'results' must be an object keyed by video id")
    preds = []
    for vid, items in results.items():
        for j, p in enumerate(items):
            ctx = f"results[{vid!r}][{j}]"
            s, e = _parse_segment(_require(p, "segment_sec", ctx), ctx)
            try:
                preds.append(
                    Prediction(vid, s, e, str(_require(p, "label", ctx)), float(_require(p, "score", ctx)))
                )
            except ValidationError as exc:
                raise ValidationError(f"{ctx}: {exc}") from exc
    return preds


def predictions_to_dict(preds: Iterable[Prediction]) -> dict:
    results: dict[str, list[dict]] = {}
    for p in preds:
        results.setdefault(p.video_id, []).append(
            {"label": p.label, "segment_sec": [p.start_sec, p.end_sec], "score": p.score}
        )
    return {"results": {k: results[k] for k in sorted(results)}}


def load_predictions(path: str | Path) -> list[Prediction]:
    raw = _read_json(path)
    if not isinstance(raw, dict):
        raise AnnotationFormatError(f"{path}: root must be an object")
    return predictions_from_dict(raw)


def save_predictions(preds: Iterable[Prediction], path: str | Path) -> None:
    Path(path).write_text(json.dumps(predictions_to_dict(preds), indent=1) + "\n", encoding="utf-8")


@dataclass
class FeatureSequence:
    """Per-timestep feature matrix (T x D) standing in for extracted video features."""

    values: np.ndarray
    stride: int = 1
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ValidationError(f"features must be T x D, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("features contain non-finite values")

    @property
    def T(self) -> int:
        return int(self.values.shape[0])

    @property
    def D(self) -> int:
        return int(self.values.shape[1])
