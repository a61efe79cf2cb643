"""False-positive diagnosis in the DETAD style.

Every false positive falls in exactly one band, decided by its best tIoU with
same-label GT (``g_same``) and with any GT (``g_any``) in the same video::

    g_same >= thr                         -> double detection
    g_same <  thr <= g_any                -> wrong label
    bg <= g_same < thr                    -> localization
    g_same < bg <= g_any < thr            -> confusion
    g_any < bg                            -> background

Note: the one-line category glosses commonly quoted alongside these names
swap "correct"/"wrong" for localization vs wrong-label errors; the bands above
follow the original DETAD definitions.
"""

from __future__ import annotations

import enum
from collections import Counter, defaultdict
from typing import Iterable, Sequence

from .data import Dataset, Prediction
from .metrics import EvalProtocol, match_indices, mean_ap, tiou


class FPCategory(str, enum.Enum):
    BACKGROUND = "background"
    CONFUSION = "confusion"
    LOCALIZATION = "localization"
    WRONG_LABEL = "wrong_label"
    DOUBLE_DETECTION = "double_detection"


TP = "tp"


def _band(g_same: float, g_any: float, threshold: float, background_tiou: float) -> FPCategory:
    if g_same >= threshold:
        return FPCategory.DOUBLE_DETECTION
    if g_any >= threshold:
        return FPCategory.WRONG_LABEL
    if g_same >= background_tiou:
        return FPCategory.LOCALIZATION
    if g_any >= background_tiou:
        return FPCategory.CONFUSION
    return FPCategory.BACKGROUND


def classify_false_positives(
    preds: Sequence[Prediction],
    dataset: Dataset,
    threshold: float = 0.5,
    background_tiou: float = 0.1,
) -> list[tuple[Prediction, str | FPCategory]]:
    """Tag each prediction as ``"tp"`` or an :class:`FPCategory`.

    Matching is done per class with the same greedy rule used for AP, so the
    TP set here is exactly the one the evaluator counts.
    """
    known = set(dataset.video_ids)
    preds = [p for p in preds if p.video_id in known]
    gts_all = {v.id: list(v.annotations) for v in dataset.videos}

    by_label: dict[str, list[int]] = defaultdict(list)
    for i, p in enumerate(preds):
        by_label[p.label].append(i)

    tags: list[str | FPCategory] = [TP] * len(preds)
    for label, idxs in by_label.items():
        group = [preds[i] for i in idxs]
        gts = {vid: [a for a in anns if a.label == label] for vid, anns in gts_all.items()}
        order, flags = match_indices(group, gts, threshold)
        for k, is_tp in zip(order, flags):
            if is_tp:
                continue
            p = group[k]
            anns = gts_all[p.video_id]
            g_same = max((tiou(p.segment, a.segment) for a in anns if a.label == p.label), default=0.0)
            g_any = max((tiou(p.segment, a.segment) for a in anns), default=0.0)
            tags[idxs[k]] = _band(g_same, g_any, threshold, background_tiou)
    return list(zip(preds, tags))


def category_counts(tags: Iterable[tuple[Prediction, str | FPCategory]]) -> dict[str, int]:
    c = Counter(tag.value if isinstance(tag, FPCategory) else tag for _, tag in tags)
    out = {TP: c.get(TP, 0)}
    for cat in FPCategory:
        out[cat.value] = c.get(cat.value, 0)
    return out


def error_impact(
    preds: Sequence[Prediction],
    dataset: Dataset,
    protocol: EvalProtocol,
    category: FPCategory,
    background_tiou: float = 0.1,
) -> float:
    """mAP gain (percentage points) from deleting every prediction in ``category``.

    Tags are recomputed at each protocol threshold, so the deletion at a given
    threshold only removes predictions that are false positives there.
    """
    preds = list(preds)
    base, fixed = [], []
    for t in protocol.thresholds:
        single = EvalProtocol.single(t)
        tags = classify_false_positives(preds, dataset, t, background_tiou)
        kept = [p for p, tag in tags if tag != category]
        base.append(mean_ap(preds, dataset, single).aggregate)
        fixed.append(mean_ap(kept, dataset, single).aggregate)
    return protocol.aggregate(fixed) - protocol.aggregate(base)


def error_profile(
    preds: Sequence[Prediction],
    dataset: Dataset,
    protocol: EvalProtocol,
    threshold: float = 0.5,
    background_tiou: float = 0.1,
) -> dict:
    tags = classify_false_positives(preds, dataset, threshold, background_tiou)
    return {
        "threshold": threshold,
        "counts": category_counts(tags),
        "impact": {c.value: error_impact(preds, dataset, protocol, c, background_tiou) for c in FPCategory},
    }
