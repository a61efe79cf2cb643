"""Training loop for the toy detector, with optional FrameDrop and consistency loss.

Training is single-threaded and draws every random number from generators
derived from the run seed, so a run is bit-reproducible.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
from torch.nn import functional as F

from ..corruption import PlacementPolicy, SeverityLevel, corrupt_features, placement_window, sweep_window
from ..data import Dataset, FeatureSequence, Prediction, VideoRecord, frame_span
from ..metrics import EvalProtocol, mean_ap
from .decode import decode_predictions
from .model import ToyDetector, ToyModelConfig, build_model
from .pairs import framedrop, segment_ab_pairs
from .synthetic import SyntheticData
from .trc import TRCConfig, consistency_loss_torch

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainOptions:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 2e-3
    weight_decay: float = 1e-4
    framedrop: bool = False
    framedrop_scope: str = "ab_pair"
    trc: TRCConfig | None = None
    seed: int = 0


@dataclass
class TrainingLog:
    rows: list[tuple[int, float, float]] = field(default_factory=list)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "det_loss", "trc_loss"])
            for epoch, det, trc in self.rows:
                w.writerow([epoch, f"{det:.6f}", f"{trc:.6f}"])


@dataclass
class _Video:
    x: np.ndarray  # (T, D) float32
    cls: np.ndarray  # (T,) int64, 0 = background
    box: np.ndarray  # (T, 2) GT segment covering each action step, in steps
    mask: np.ndarray  # (T,) bool, action steps
    gts: list[tuple[float, float]]  # GT segments in steps
    pairs: list


def _steps(record: VideoRecord, stride: int) -> float:
    return record.fps / stride


def _prepare(record: VideoRecord, feats: FeatureSequence, labels: Sequence[str]) -> _Video:
    T = feats.T
    per_sec = _steps(record, feats.stride)
    cls = np.zeros(T, dtype=np.int64)
    box = np.zeros((T, 2), dtype=np.float32)
    mask = np.zeros(T, dtype=bool)
    gts = []
    for a in record.annotations:
        s, e = a.start_sec * per_sec, a.end_sec * per_sec
        gts.append((s, e))
        lo, hi = int(math.floor(s)), min(T, int(math.ceil(e)))
        cls[lo:hi] = labels.index(a.label) + 1
        box[lo:hi] = (s, e)
        mask[lo:hi] = True
    pairs = segment_ab_pairs(record, record.fps / feats.stride, T)
    return _Video(feats.values, cls, box, mask, gts, pairs)


def _pair_tiou(s1, e1, s2, e2):
    inter = (torch.minimum(e1, e2) - torch.maximum(s1, s2)).clamp(min=0)
    union = (e1 - s1) + (e2 - s2) - inter
    return inter / union.clamp(min=1e-6)


def detection_loss(logits, offsets, cls, box, mask) -> torch.Tensor:
    ce = F.cross_entropy(logits.reshape(-1, logits.shape[-1]), cls.reshape(-1))
    if not bool(mask.any()):
        return ce
    t = torch.arange(logits.shape[1], dtype=offsets.dtype).expand(mask.shape)
    s = t - offsets[..., 0]
    e = t + offsets[..., 1]
    iou = _pair_tiou(s[mask], e[mask], box[..., 0][mask], box[..., 1][mask])
    return ce + (1.0 - iou).mean()


def _select(centers: np.ndarray, starts: np.ndarray, gt: tuple[float, float], cfg: TRCConfig, other_inside: int | None = None):
    t_star = 0.5 * (gt[0] + gt[1])
    dist = np.abs(centers - t_star)
    order = np.lexsort((np.arange(len(centers)), starts, dist))
    if cfg.sampling == "action_center":
        return order[: cfg.K]
    if cfg.sampling == "full_video":
        return order
    return order  # full_action handled by caller


def consistency_term(off_c, off_d, videos: Sequence[_Video], cfg: TRCConfig) -> torch.Tensor:
    """Mean consistency loss over every GT instance in the batch."""
    T = off_c.shape[1]
    t = torch.arange(T, dtype=off_c.dtype)
    s_c, e_c = t - off_c[..., 0], t + off_c[..., 1]
    s_d, e_d = t - off_d[..., 0], t + off_d[..., 1]
    cen_c = (0.5 * (s_c + e_c)).detach().numpy()
    cen_d = (0.5 * (s_d + e_d)).detach().numpy()
    st_c = s_c.detach().numpy()
    st_d = s_d.detach().numpy()
    terms = []
    for b, v in enumerate(videos):
        for gs, ge in v.gts:
            if cfg.sampling == "full_action":
                in_c = np.flatnonzero((cen_c[b] >= gs) & (cen_c[b] <= ge))
                in_d = np.flatnonzero((cen_d[b] >= gs) & (cen_d[b] <= ge))
                k = max(1, min(len(in_c), len(in_d)))
                sel_c = _select(cen_c[b], st_c[b], (gs, ge), cfg)[:k]
                sel_d = _select(cen_d[b], st_d[b], (gs, ge), cfg)[:k]
            else:
                sel_c = _select(cen_c[b], st_c[b], (gs, ge), cfg)
                sel_d = _select(cen_d[b], st_d[b], (gs, ge), cfg)
            ic = torch.as_tensor(sel_c)
            id_ = torch.as_tensor(sel_d)
            g_s = torch.tensor(gs, dtype=off_c.dtype)
            g_e = torch.tensor(ge, dtype=off_c.dtype)
            r_c = _pair_tiou(s_c[b, ic], e_c[b, ic], g_s, g_e) + cfg.epsilon
            r_d = _pair_tiou(s_d[b, id_], e_d[b, id_], g_s, g_e) + cfg.epsilon
            p_c = r_c / r_c.sum()
            p_d = r_d / r_d.sum()
            terms.append(consistency_loss_torch(p_c, p_d, cfg.loss))
    if not terms:
        return off_c.sum() * 0.0
    return torch.stack(terms).mean()


def _batch(videos: Sequence[_Video], xs: Sequence[np.ndarray]):
    x = torch.from_numpy(np.stack(xs))
    cls = torch.from_numpy(np.stack([v.cls for v in videos]))
    box = torch.from_numpy(np.stack([v.box for v in videos]))
    mask = torch.from_numpy(np.stack([v.mask for v in videos]))
    return x, cls, box, mask


def train_toy_model(
    data: SyntheticData,
    model_cfg: ToyModelConfig,
    opts: TrainOptions = TrainOptions(),
    train_ids: Sequence[str] | None = None,
    drop_fn=None,
) -> tuple[ToyDetector, TrainingLog]:
    """Train on ``train_ids`` (default: the data's train split).

    With ``opts.framedrop`` the batch is fed twice, clean and FrameDropped,
    and the detection loss is averaged over both branches. With ``opts.trc``
    the consistency term between branches is added with weight ``trc.weight``.
    ``drop_fn(x, pairs, rng)`` overrides the augmentation (tests use it).
    """
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    model = build_model(model_cfg)
    trlog = TrainingLog()
    if opts.epochs == 0:
        return model, trlog

    ids = list(data.train_ids if train_ids is None else train_ids)
    labels = data.dataset.label_set
    videos = [_prepare(data.dataset.video(i), data.features[i], labels) for i in ids]
    two_branch = opts.framedrop or opts.trc is not None
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(opts.seed)
        optim = torch.optim.AdamW(model.parameters(), lr=opts.lr, weight_decay=opts.weight_decay)
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(optim, T_max=opts.epochs)
        order_rng = np.random.default_rng([opts.seed, 0x5EED])
        for epoch in range(opts.epochs):
            model.train()
            perm = order_rng.permutation(len(videos))
            det_sum = trc_sum = 0.0
            n_batches = 0
            for start in range(0, len(perm), opts.batch_size):
                idx = perm[start : start + opts.batch_size]
                vb = [videos[i] for i in idx]
                x, cls, box, mask = _batch(vb, [v.x for v in vb])
                logits_d, off_d = model(x)
                det = detection_loss(logits_d, off_d, cls, box, mask)
                trc = torch.zeros(())
                if two_branch:
                    xs_c = []
                    for i, v in zip(idx, vb):
                        rng = np.random.default_rng([opts.seed, epoch, int(i)])
                        if drop_fn is not None:
                            xc = drop_fn(v.x, v.pairs, rng)
                        elif opts.framedrop:
                            xc, _ = framedrop(v.x, v.pairs, rng, opts.framedrop_scope)
                        else:
                            xc = v.x
                        xs_c.append(xc)
                    x_c = torch.from_numpy(np.stack(xs_c))
                    logits_c, off_c = model(x_c)
                    det = 0.5 * (det + detection_loss(logits_c, off_c, cls, box, mask))
                    if opts.trc is not None:
                        trc = consistency_term(off_c, off_d, vb, opts.trc)
                loss = det + (opts.trc.weight * trc if opts.trc is not None else 0.0)
                if not torch.isfinite(loss):
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch}: det={float(det)}, trc={float(trc)}")
                optim.zero_grad()
                loss.backward()
                optim.step()
                det_sum += float(det.detach())
                trc_sum += float(trc.detach())
                n_batches += 1
            sched.step()
            trlog.rows.append((epoch, det_sum / n_batches, trc_sum / n_batches))
            log.debug("epoch %d det %.4f trc %.4f", epoch, det_sum / n_batches, trc_sum / n_batches)
    model.eval()
    return model, trlog


# ---------------------------------------------------------------- inference


@torch.no_grad()
def predict(
    model: ToyDetector,
    records: Iterable[VideoRecord],
    features: dict[str, np.ndarray | FeatureSequence],
    labels: Sequence[str],
) -> list[Prediction]:
    model.eval()
    preds: list[Prediction] = []
    for rec in records:
        f = features[rec.id]
        x = f.values if isinstance(f, FeatureSequence) else np.asarray(f, dtype=np.float32)
        stride = f.stride if isinstance(f, FeatureSequence) else 1
        logits, off = model(torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32))[None])
        out = torch.cat([logits[0], off[0]], dim=1).numpy()
        preds.extend(
            decode_predictions(out, model.cfg, rec.id, tuple(labels), rec.fps, stride, rec.duration_sec)
        )
    return preds


def corrupt_feature_set(
    dataset: Dataset,
    features: dict[str, FeatureSequence],
    placement: PlacementPolicy,
    severity: int = 1,
) -> dict[str, np.ndarray]:
    """Feature-space black-frame copy: zero the windows the placement selects."""
    out = {}
    for rec in dataset.videos:
        f = features[rec.id]
        wins = []
        for a in rec.annotations:
            span = frame_span(a, rec.fps / f.stride, f.T)
            if placement.mode == "center":
                wins.append(placement_window(span, SeverityLevel(severity)))
            elif placement.mode == "fraction":
                if span[1] - span[0] + 1 < placement.length:
                    continue
                wins.append(sweep_window(span, placement.fraction, placement.length))
        out[rec.id] = corrupt_features(f.values, wins)
    return out


def evaluate_model(
    model: ToyDetector,
    data: SyntheticData,
    ids: Sequence[str] | None = None,
    levels: Sequence[int] = (1, 2, 3),
    protocol: EvalProtocol | None = None,
) -> dict:
    """Clean mAP and black-frame corrupted mAP (mean over ``levels``)."""
    protocol = protocol or EvalProtocol.single(0.5)
    ds = data.subset(list(data.test_ids if ids is None else ids), "eval")
    labels = ds.label_set
    clean = mean_ap(predict(model, ds.videos, data.features, labels), ds, protocol).aggregate
    per_level = {}
    for lvl in levels:
        feats = corrupt_feature_set(ds, data.features, PlacementPolicy.center_of_action(), lvl)
        per_level[lvl] = mean_ap(predict(model, ds.videos, feats, labels), ds, protocol).aggregate
    corrupted = float(np.mean(list(per_level.values()))) if per_level else float("nan")
    return {"clean": clean, "corrupted": corrupted, "per_level": per_level}


def position_sweep(
    model: ToyDetector,
    data: SyntheticData,
    ids: Sequence[str] | None = None,
    fractions: Sequence[float] = tuple(round(0.1 * i, 1) for i in range(1, 10)),
    protocol: EvalProtocol | None = None,
) -> dict[float, float]:
    protocol = protocol or EvalProtocol.single(0.5)
    ds = data.subset(list(data.test_ids if ids is None else ids), "sweep")
    out = {}
    for f in fractions:
        feats = corrupt_feature_set(ds, data.features, PlacementPolicy.fixed_fraction(f))
        out[f] = mean_ap(predict(model, ds.videos, feats, ds.label_set), ds, protocol).aggregate
    return out
