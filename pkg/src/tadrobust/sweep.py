"""Position sweep: slide a fixed black-frame window across each action."""

from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .corruption import CorruptionSpec, CorruptionType, PlacementError, PlacementPolicy, corrupt_video, sweep_window
from .data import Dataset, FrameSequence, Prediction, frame_span, read_fseq
from .metrics import EvalProtocol, mean_ap
from .plotting import line_chart

log = logging.getLogger(__name__)

FRACTIONS = tuple(round(0.1 * i, 1) for i in range(1, 10))

# fraction is None for the clean pass
PredictionProvider = Callable[[float | None, Mapping[str, FrameSequence]], Sequence[Prediction]]


def sweep_copies(dataset: Dataset, frames_root: str | Path, fraction: float, length: int = 5) -> dict[str, FrameSequence]:
    """Black-frame copies with one ``length``-frame window per action at ``fraction``.

    Actions shorter than the window are left clean.
    """
    out = {}
    for rec in dataset.videos:
        seq = read_fseq(Path(frames_root) / f"{rec.id}.fseq", fps=rec.fps)
        wins = []
        for ann in rec.annotations:
            span = frame_span(ann, rec.fps, seq.frame_count)
            try:
                wins.append(sweep_window(span, fraction, length))
            except PlacementError:
                log.warning("video %s: action %s shorter than the sweep window, left clean", rec.id, span)
        spec = CorruptionSpec(CorruptionType.BLACK_FRAME, placement=PlacementPolicy.explicit(wins))
        out[rec.id], _ = corrupt_video(rec, seq, spec)
    return out


def sweep_position(
    dataset: Dataset,
    frames_root: str | Path,
    provider: PredictionProvider,
    fractions: Sequence[float] = FRACTIONS,
    protocol: EvalProtocol | None = None,
) -> list[tuple[str, float]]:
    """Rows of (label, mAP): ``"clean"`` first, then one per fraction."""
    protocol = protocol or EvalProtocol.thumos()
    clean = {rec.id: read_fseq(Path(frames_root) / f"{rec.id}.fseq", fps=rec.fps) for rec in dataset.videos}
    rows = [("clean", mean_ap(provider(None, clean), dataset, protocol).aggregate)]
    for f in fractions:
        copies = sweep_copies(dataset, frames_root, f)
        rows.append((f"{f:.1f}", mean_ap(provider(f, copies), dataset, protocol).aggregate))
    return rows


def write_sweep(rows: Sequence[tuple[str, float]], out_dir: str | Path, stem: str = "sweep") -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fraction", "mAP"])
        for label, value in rows:
            w.writerow([label, f"{value:.4f}"])
    clean = dict(rows).get("clean")
    points = [(float(k), v) for k, v in rows if k != "clean"]
    svg_path = line_chart(
        [p[0] for p in points],
        [p[1] for p in points],
        out_dir / f"{stem}.svg",
        xlabel="corruption position (fraction of action)",
        ylabel="mAP (%)",
        reference=clean,
    )
    return csv_path, svg_path
