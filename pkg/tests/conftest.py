from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from tadrobust.data import ActionInstance, Dataset, FrameSequence, VideoRecord, save_annotations, write_fseq


def make_frame_fixture(root: Path, n_videos: int = 5, frames: int = 60, size: int = 64, seed: int = 0) -> tuple[Dataset, Path, Path]:
    """Small random-pixel videos with one or two actions each, written as .fseq files."""
    rng = np.random.default_rng(seed)
    frames_dir = root / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    videos = []
    for i in range(n_videos):
        vid = f"v{i}"
        fps = 10.0
        anns = [ActionInstance(1.0, 3.0, "jump")]
        if i % 2:
            anns.append(ActionInstance(3.5, 5.5, "run"))
        videos.append(VideoRecord(vid, fps, frames, frames / fps, tuple(anns)))
        write_fseq(FrameSequence(rng.integers(0, 256, (frames, size, size, 3), dtype=np.uint8), fps), frames_dir / f"{vid}.fseq")
    ds = Dataset("fixture", ("jump", "run"), tuple(videos))
    ann = root / "ann.json"
    save_annotations(ds, ann)
    return ds, frames_dir, ann


@pytest.fixture
def frame_fixture(tmp_path):
    return make_frame_fixture(tmp_path)


# Acceptance criteria report their verdicts here; printed in the terminal summary.
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
