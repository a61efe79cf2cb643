"""Temporal IoU, average precision, mAP protocols and relative robustness."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corruption import CorruptionType
from .data import ActionInstance, Dataset, Prediction

log = logging.getLogger(__name__)

THUMOS_THRESHOLDS = (0.1, 0.2, 0.3, 0.4, 0.5)
ANET_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


class UndefinedRobustnessError(ValueError):
    pass


def tiou(a: Sequence[float], b: Sequence[float]) -> float:
    s1, e1 = float(a[0]), float(a[1])
    s2, e2 = float(b[0]), float(b[1])
    if e1 <= s1 or e2 <= s2:
        log.debug("degenerate segment in tiou: %s %s", a, b)
        return 0.0
    inter = min(e1, e2) - max(s1, s2)
    if inter <= 0:
        return 0.0
    union = (e1 - s1) + (e2 - s2) - inter
    return inter / union


@dataclass(frozen=True)
class EvalProtocol:
    """tIoU thresholds plus how per-threshold mAPs collapse to one number.

    ``report_threshold`` set means single-threshold reporting (THUMOS-style);
    ``None`` means the mean over all thresholds (ActivityNet-style).
    """

    thresholds: tuple[float, ...]
    report_threshold: float | None = None
    name: str = "custom"

    def __post_init__(self) -> None:
        th = tuple(float(t) for t in self.thresholds)
        if not th:
            raise ValueError("protocol needs at least one threshold")
        if any(not 0 < t <= 1 for t in th):
            raise ValueError("thresholds must lie in (0, 1]")
        if any(b <= a for a, b in zip(th, th[1:])):
            raise ValueError("thresholds must be strictly increasing")
        if self.report_threshold is not None and self.report_threshold not in th:
            raise ValueError("report_threshold must be one of the thresholds")
        object.__setattr__(self, "thresholds", th)

    @classmethod
    def thumos(cls) -> "EvalProtocol":
        return cls(THUMOS_THRESHOLDS, report_threshold=0.5, name="thumos")

    @classmethod
    def anet(cls) -> "EvalProtocol":
        return cls(ANET_THRESHOLDS, report_threshold=None, name="anet")

    @classmethod
    def single(cls, t: float) -> "EvalProtocol":
        return cls((t,), report_threshold=t, name=f"tiou{t}")

    @classmethod
    def by_name(cls, name: str) -> "EvalProtocol":
        if name == "thumos":
            return cls.thumos()
        if name == "anet":
            return cls.anet()
        raise ValueError(f"unknown protocol {name!r}")

    def aggregate(self, per_threshold: Sequence[float]) -> float:
        if self.report_threshold is not None:
            return float(per_threshold[self.thresholds.index(self.report_threshold)])
        return float(np.mean(per_threshold))


def rank_order(preds: Sequence[Prediction]) -> list[int]:
    """Indices by score descending; ties go to the earlier start, then the smaller video id."""
    return sorted(range(len(preds)), key=lambda i: (-preds[i].score, preds[i].start_sec, preds[i].video_id))


def rank_predictions(preds: Iterable[Prediction]) -> list[Prediction]:
    preds = list(preds)
    return [preds[i] for i in rank_order(preds)]


def match_indices(
    preds: Sequence[Prediction],
    gts: Mapping[str, Sequence[ActionInstance]],
    threshold: float,
) -> tuple[list[int], list[bool]]:
    """Greedy matching in rank order; returns the rank order and per-rank TP flags.

    A prediction is a TP when some still-unmatched GT of the same video has
    tIoU >= threshold; it claims the one with the highest tIoU.
    """
    order = rank_order(preds)
    taken = {vid: [False] * len(g) for vid, g in gts.items()}
    flags = []
    for i in order:
        p = preds[i]
        best, best_iou = -1, -1.0
        for j, g in enumerate(gts.get(p.video_id, ())):
            if taken[p.video_id][j]:
                continue
            iou = tiou(p.segment, g.segment)
            if iou >= threshold and iou > best_iou:
                best, best_iou = j, iou
        if best >= 0:
            taken[p.video_id][best] = True
        flags.append(best >= 0)
    return order, flags


def match_predictions(
    preds: Sequence[Prediction],
    gts: Mapping[str, Sequence[ActionInstance]],
    threshold: float,
) -> tuple[list[Prediction], list[bool]]:
    preds = list(preds)
    order, flags = match_indices(preds, gts, threshold)
    return [preds[i] for i in order], flags


def ap_from_flags(flags: Sequence[bool], n_gt: int) -> float:
    """All-point interpolated area under the precision-recall curve."""
    if n_gt == 0:
        raise ValueError("AP undefined without ground truth")
    if not flags:
        return 0.0
    tp = np.cumsum(np.asarray(flags, dtype=np.float64))
    fp = np.cumsum(~np.asarray(flags, dtype=bool), dtype=np.float64)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    idx = np.where(mrec[1:] != mrec[:-1])[0] + 1
    return float(np.sum((mrec[idx] - mrec[idx - 1]) * mpre[idx]))


def _group_gts(gts: Mapping[str, Sequence[ActionInstance]] | Sequence[ActionInstance], preds) -> dict:
    if isinstance(gts, Mapping):
        return {k: list(v) for k, v in gts.items()}
    # bare list: single-video convenience form
    vids = {p.video_id for p in preds}
    vid = next(iter(vids)) if len(vids) == 1 else ""
    return {vid: list(gts)}


def average_precision(
    preds: Sequence[Prediction],
    gts: Mapping[str, Sequence[ActionInstance]] | Sequence[ActionInstance],
    threshold: float,
) -> float:
    """AP of one class. ``gts`` maps video id to that video's GT instances."""
    gts = _group_gts(gts, preds)
    n_gt = sum(len(v) for v in gts.values())
    if n_gt == 0:
        raise ValueError("class has no ground truth; exclude it from averaging")
    _, flags = match_predictions(preds, gts, threshold)
    return ap_from_flags(flags, n_gt)


def _by_class(preds: Iterable[Prediction], dataset: Dataset):
    known = set(dataset.video_ids)
    gt_by_class: dict[str, dict[str, list[ActionInstance]]] = defaultdict(lambda: defaultdict(list))
    for v in dataset.videos:
        for a in v.annotations:
            gt_by_class[a.label][v.id].append(a)
    pred_by_class: dict[str, list[Prediction]] = defaultdict(list)
    unknown = 0
    for p in preds:
        if p.video_id not in known:
            unknown += 1
            continue
        pred_by_class[p.label].append(p)
    if unknown:
        log.warning("ignored %d predictions on unknown video ids", unknown)
    return gt_by_class, pred_by_class


@dataclass
class MapResult:
    thresholds: tuple[float, ...]
    per_threshold: list[float]
    aggregate: float
    per_class: dict[str, list[float]] = field(default_factory=dict)


def mean_ap(preds: Iterable[Prediction], dataset: Dataset, protocol: EvalProtocol) -> MapResult:
    """mAP (percent) per threshold and aggregated per ``protocol``.

    Classes without GT are excluded; predictions with labels outside the
    label set never match anything.
    """
    gt_by_class, pred_by_class = _by_class(preds, dataset)
    classes = [c for c in dataset.label_set if gt_by_class.get(c)]
    per_class = {}
    for c in classes:
        gts = gt_by_class[c]
        per_class[c] = [average_precision(pred_by_class.get(c, []), gts, t) for t in protocol.thresholds]
    if classes:
        per_threshold = [100.0 * float(np.mean([per_class[c][i] for c in classes])) for i in range(len(protocol.thresholds))]
    else:
        per_threshold = [0.0 for _ in protocol.thresholds]
    return MapResult(protocol.thresholds, per_threshold, protocol.aggregate(per_threshold), per_class)


def relative_robustness(m_clean: float, m_cs: float) -> float:
    """Corrupted mAP as a percentage of clean mAP, i.e. 1 - (clean - corrupted)/clean."""
    if m_clean <= 0:
        raise UndefinedRobustnessError("relative robustness is undefined for a clean mAP of 0")
    return 100.0 * m_cs / m_clean


Cell = tuple[CorruptionType, int]


@dataclass
class RobustnessReport:
    m_clean: float
    grid: dict[Cell, float]
    gamma_grid: dict[Cell, float]
    gamma_overall: float
    mean_corrupted: float
    missing: list[Cell] = field(default_factory=list)

    @classmethod
    def from_maps(cls, m_clean: float, grid: Mapping[Cell, float], expected: Iterable[Cell] = ()) -> "RobustnessReport":
        grid = {(CorruptionType(t), int(l)): float(v) for (t, l), v in grid.items()}
        if not grid:
            raise ValueError("robustness report needs at least one populated cell")
        gamma = {k: relative_robustness(m_clean, v) for k, v in grid.items()}
        gamma_overall = float(np.mean(list(gamma.values())))
        mean_corrupted = float(np.mean(list(grid.values())))
        # mean of ratios equals ratio of means because the denominator is shared
        assert abs(gamma_overall - relative_robustness(m_clean, mean_corrupted)) < 1e-9
        missing = [(CorruptionType(t), int(l)) for t, l in expected if (CorruptionType(t), int(l)) not in grid]
        return cls(m_clean, grid, gamma, gamma_overall, mean_corrupted, missing)

    def to_dict(self) -> dict:
        def key(c: Cell) -> str:
            return f"{c[0].value}@{c[1]}"

        return {
            "m_clean": round(self.m_clean, 4),
            "mean_corrupted": round(self.mean_corrupted, 4),
            "grid": {key(k): round(v, 4) for k, v in sorted(self.grid.items(), key=_cell_order)},
            "gamma_grid": {key(k): round(v, 2) for k, v in sorted(self.gamma_grid.items(), key=_cell_order)},
            "gamma_overall": round(self.gamma_overall, 2),
            "missing": [key(c) for c in self.missing],
        }


def _cell_order(item) -> tuple[int, int]:
    (t, l), _ = item
    return (list(CorruptionType).index(t), l)


def robustness_report(
    clean_preds: Iterable[Prediction],
    corrupted_preds_by_cell: Mapping[Cell, Iterable[Prediction] | None],
    dataset: Dataset,
    protocol: EvalProtocol,
) -> RobustnessReport:
    m_clean = mean_ap(clean_preds, dataset, protocol).aggregate
    grid = {}
    for cell, preds in corrupted_preds_by_cell.items():
        if preds is None:
            continue
        grid[cell] = mean_ap(preds, dataset, protocol).aggregate
    return RobustnessReport.from_maps(m_clean, grid, expected=corrupted_preds_by_cell.keys())
