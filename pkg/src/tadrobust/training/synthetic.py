"""Desk-scale synthetic TAD data: noise backgrounds with class templates planted as actions."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..data import ActionInstance, Dataset, FeatureSequence, VideoRecord

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SyntheticConfig:
    num_videos: int = 250
    T: int = 256
    D: int = 16
    C: int = 4
    min_actions: int = 1
    max_actions: int = 3
    min_length: int = 8
    max_length: int | None = None  # defaults to T // 4
    noise: float = 1.0
    amplitude: float = 1.5
    fps: float = 1.0
    train_fraction: float = 0.8
    max_retries: int = 50

    def __post_init__(self) -> None:
        if self.T < 64:
            raise ValueError("T must be >= 64")
        if self.C < 2:
            raise ValueError("C must be >= 2")
        if self.min_actions > self.max_actions or self.min_actions < 0:
            raise ValueError("need 0 <= min_actions <= max_actions")

    @property
    def length_cap(self) -> int:
        return self.T // 4 if self.max_length is None else self.max_length


@dataclass
class SyntheticData:
    dataset: Dataset
    features: dict[str, FeatureSequence]
    train_ids: list[str]
    test_ids: list[str]
    templates: dict = field(default_factory=dict)
    config: SyntheticConfig | None = None

    def subset(self, ids: list[str], name: str) -> Dataset:
        keep = set(ids)
        return Dataset(name, self.dataset.label_set, tuple(v for v in self.dataset.videos if v.id in keep))

    @property
    def train(self) -> Dataset:
        return self.subset(self.train_ids, self.dataset.name + "-train")

    @property
    def test(self) -> Dataset:
        return self.subset(self.test_ids, self.dataset.name + "-test")


def class_templates(C: int, D: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Per-class offset direction, temporal frequency and per-dimension phase."""
    offsets = rng.standard_normal((C, D))
    offsets /= np.linalg.norm(offsets, axis=1, keepdims=True)
    return {
        "offset": offsets * np.sqrt(D),
        "frequency": np.arange(1, C + 1, dtype=np.float64),
        "phase": rng.uniform(0, 2 * np.pi, size=(C, D)),
    }


def render_template(templates: dict, c: int, length: int, amplitude: float) -> np.ndarray:
    tau = (np.arange(length) + 0.5) / length
    wave = np.sin(2 * np.pi * templates["frequency"][c] * tau[:, None] + templates["phase"][c][None, :])
    return amplitude * (0.5 * templates["offset"][c][None, :] + wave)


def _place_spans(rng: np.random.Generator, cfg: SyntheticConfig, n: int) -> list[tuple[int, int]] | None:
    spans: list[tuple[int, int]] = []
    for _ in range(n):
        for _attempt in range(cfg.max_retries):
            length = int(rng.integers(cfg.min_length, cfg.length_cap + 1))
            s = int(rng.integers(1, cfg.T - length))
            e = s + length
            # keep at least two background steps between actions
            if all(e + 2 <= a or s >= b + 2 for a, b in spans):
                spans.append((s, e))
                break
        else:
            return None
    return sorted(spans)


def generate_synthetic_dataset(cfg: SyntheticConfig = SyntheticConfig(), seed: int = 0) -> SyntheticData:
    rng = np.random.default_rng(seed)
    templates = class_templates(cfg.C, cfg.D, rng)
    labels = tuple(f"class{c}" for c in range(cfg.C))
    videos, features = [], {}
    width = len(str(cfg.num_videos - 1))
    for i in range(cfg.num_videos):
        vid = f"syn{i:0{width}d}"
        n = int(rng.integers(cfg.min_actions, cfg.max_actions + 1))
        spans = _place_spans(rng, cfg, n)
        while spans is None:
            log.warning("video %s: span packing failed, retrying with fewer actions", vid)
            n -= 1
            spans = _place_spans(rng, cfg, n)
        x = rng.standard_normal((cfg.T, cfg.D)) * cfg.noise
        anns = []
        for s, e in spans:
            c = int(rng.integers(0, cfg.C))
            x[s:e] += render_template(templates, c, e - s, cfg.amplitude)
            anns.append(ActionInstance(s / cfg.fps, e / cfg.fps, labels[c]))
        videos.append(VideoRecord(vid, cfg.fps, cfg.T, cfg.T / cfg.fps, tuple(anns)))
        features[vid] = FeatureSequence(x.astype(np.float32))
    n_train = int(round(cfg.train_fraction * cfg.num_videos))
    ids = [v.id for v in videos]
    return SyntheticData(
        Dataset("synthetic", labels, tuple(videos)),
        features,
        ids[:n_train],
        ids[n_train:],
        templates,
        cfg,
    )
