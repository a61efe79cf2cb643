"""Dataset-level corruption: build a "-C" benchmark and verify its manifest."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .corruption import (
    CORE_TYPES,
    EXTENDED_TYPES,
    CorruptionLog,
    CorruptionSpec,
    CorruptionType,
    PlacementPolicy,
    SeverityLevel,
    corrupt_video,
)
from .data import Dataset, read_fseq
from .hashing import MASK64, file_checksum, stable_hash

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
LOG_NAME = "corruption_log.jsonl"

GridCell = tuple[CorruptionType, int]


def make_grid(name: str = "core") -> list[GridCell]:
    if name == "core":
        types: Sequence[CorruptionType] = CORE_TYPES
    elif name == "extended":
        types = CORE_TYPES + EXTENDED_TYPES
    else:
        raise ValueError(f"unknown grid {name!r} (expected 'core' or 'extended')")
    return [(t, level) for t in types for level in (1, 2, 3)]


def derive_seed(master_seed: int, video_id: str, ctype: CorruptionType, level: int) -> int:
    return stable_hash(int(master_seed) & MASK64, video_id, CorruptionType(ctype).value, int(level))


def output_relpath(video_id: str, ctype: CorruptionType, level: int) -> str:
    return f"{CorruptionType(ctype).value}/level{level}/{video_id}.fseq"


@dataclass
class BenchmarkManifest:
    source: str
    grid: list[GridCell]
    master_seed: int
    entries: list[dict] = field(default_factory=list)
    gaps: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "source": self.source,
            "grid": [[t.value, lvl] for t, lvl in self.grid],
            "master_seed": self.master_seed,
            "entries": self.entries,
            "gaps": self.gaps,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "BenchmarkManifest":
        return cls(
            source=raw["source"],
            grid=[(CorruptionType(t), int(lvl)) for t, lvl in raw["grid"]],
            master_seed=int(raw["master_seed"]),
            entries=list(raw.get("entries", [])),
            gaps=list(raw.get("gaps", [])),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "BenchmarkManifest":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def checksums(self) -> dict[tuple[str, str, int], str]:
        return {(e["video_id"], e["ctype"], e["level"]): e["checksum"] for e in self.entries}


def _build_one(record, frames_path: Path, out_dir: Path, ctype: CorruptionType, level: int, master_seed: int):
    seq = read_fseq(frames_path, fps=record.fps)
    spec = CorruptionSpec(
        ctype=ctype,
        severity=SeverityLevel(level),
        placement=PlacementPolicy.center_of_action(),
        seed=derive_seed(master_seed, record.id, ctype, level),
    )
    corrupted, clog = corrupt_video(record, seq, spec)
    rel = output_relpath(record.id, ctype, level)
    dest = out_dir / rel
    dest.parent.mkdir(parents=True, exist_ok=True)
    payload = corrupted.to_bytes()
    dest.write_bytes(payload)
    entry = {
        "video_id": record.id,
        "ctype": ctype.value,
        "level": level,
        "seed": spec.seed,
        "path": rel,
        "bytes": len(payload),
        "checksum": file_checksum(dest),
    }
    return entry, clog


def build_benchmark(
    dataset: Dataset,
    frames_root: str | Path,
    grid: Iterable[GridCell],
    master_seed: int,
    out_dir: str | Path,
    jobs: int = 1,
) -> BenchmarkManifest:
    """Write one corrupted ``.fseq`` per (video, grid cell) plus the manifest.

    Missing source containers are recorded in ``manifest.gaps`` and the build
    carries on with the remaining videos.
    """
    frames_root = Path(frames_root)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = [(CorruptionType(t), int(lvl)) for t, lvl in grid]
    manifest = BenchmarkManifest(dataset.name, grid, int(master_seed) & MASK64)

    tasks = []
    for record in dataset.videos:
        src = frames_root / f"{record.id}.fseq"
        if not src.is_file():
            log.warning("missing frame container for %s at %s", record.id, src)
            manifest.gaps.append({"video_id": record.id, "error": f"missing frame container {src.name}"})
            continue
        for ctype, level in grid:
            tasks.append((record, src, ctype, level))

    def run(task):
        record, src, ctype, level = task
        try:
            return _build_one(record, src, out_dir, ctype, level, master_seed)
        except Exception as exc:  # collected per video, the build continues
            return {"video_id": record.id, "ctype": ctype.value, "level": level, "error": str(exc)}, None

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]

    order = {t: i for i, t in enumerate(c for c, _ in grid)}
    results.sort(key=lambda r: (r[0]["video_id"], order[CorruptionType(r[0]["ctype"])], r[0]["level"]))
    full_log = CorruptionLog()
    for entry, clog in results:
        if clog is None:
            manifest.gaps.append(entry)
            continue
        manifest.entries.append(entry)
        full_log.extend(clog)

    (out_dir / LOG_NAME).write_text(full_log.to_jsonl(), encoding="utf-8")
    manifest.save(out_dir / MANIFEST_NAME)
    return manifest


@dataclass
class VerificationReport:
    matches: list[str] = field(default_factory=list)
    mismatches: list[dict] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.mismatches and not self.missing

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "matches": self.matches,
            "mismatches": self.mismatches,
            "missing": self.missing,
        }


def verify_manifest(manifest: BenchmarkManifest, root: str | Path) -> VerificationReport:
    """Recompute every entry's size and checksum under ``root``."""
    root = Path(root)
    report = VerificationReport()
    for e in manifest.entries:
        path = root / e["path"]
        if not path.is_file():
            report.missing.append(e["path"])
            continue
        size = path.stat().st_size
        if size != e["bytes"]:
            report.mismatches.append({"path": e["path"], "reason": "size mismatch", "expected": e["bytes"], "actual": size})
            continue
        actual = file_checksum(path)
        if actual != e["checksum"]:
            report.mismatches.append(
                {"path": e["path"], "reason": "checksum mismatch", "expected": e["checksum"], "actual": actual}
            )
            continue
        report.matches.append(e["path"])
    return report
