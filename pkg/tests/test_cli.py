import csv
import json

import pytest

from conftest import make_frame_fixture
from tadrobust.cli import run
from tadrobust.data import ActionInstance, Dataset, Prediction, VideoRecord, save_annotations, save_predictions


def _ap_fixture(tmp_path):
    v = VideoRecord("v", 1.0, 60, 60.0, (ActionInstance(0, 10, "a"), ActionInstance(20, 30, "a")))
    ann = tmp_path / "ann.json"
    save_annotations(Dataset("fx", ("a",), (v,)), ann)
    preds = tmp_path / "preds.json"
    save_predictions([Prediction("v", 0, 9, "a", 0.9), Prediction("v", 21, 30, "a", 0.8), Prediction("v", 40, 50, "a", 0.7)], preds)
    return ann, preds


def test_no_arguments_is_usage_error(capsys):
    assert run([]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand_and_flag(capsys):
    assert run(["frobnicate"]) == 1
    assert run(["eval", "--nope"]) == 1
    assert "usage" in capsys.readouterr().err


def test_help_exits_zero():
    assert run(["--help"]) == 0


def test_mutually_exclusive_protocol(tmp_path):
    ann, preds = _ap_fixture(tmp_path)
    assert run(["eval", "--dataset", str(ann), "--preds", str(preds), "--protocol", "anet", "--tiou", "0.5", "--out", str(tmp_path)]) == 1


def test_missing_input_is_validation_error(tmp_path, capsys):
    assert run(["eval", "--dataset", str(tmp_path / "nope.json"), "--preds", "x", "--out", str(tmp_path / "o")]) == 1
    assert "not found" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_eval_fixture_gives_100(tmp_path):
    ann, preds = _ap_fixture(tmp_path)
    assert run(["eval", "--dataset", str(ann), "--preds", str(preds), "--protocol", "thumos", "--out", str(tmp_path / "o")]) == 0
    rows = list(csv.reader(open(tmp_path / "o" / "eval.csv")))
    assert rows[0] == ["tiou", "mAP"]
    assert ["0.50", "100.0000"] in rows
    assert json.loads((tmp_path / "o" / "eval.json").read_text())["aggregate"] == 100.0


def test_build_twice_same_checksums_and_verify(tmp_path):
    _, frames, ann = make_frame_fixture(tmp_path / "fx")
    args = ["build", "--dataset", str(ann), "--frames", str(frames), "--grid", "core", "--seed", "11"]
    assert run(args + ["--out", str(tmp_path / "a")]) == 0
    assert run(args + ["--out", str(tmp_path / "b"), "--jobs", "3"]) == 0
    a = (tmp_path / "a" / "manifest.json").read_bytes()
    assert a == (tmp_path / "b" / "manifest.json").read_bytes()
    assert json.loads(a)["master_seed"] == 11
    assert run(["verify", "--manifest", str(tmp_path / "a" / "manifest.json")]) == 0
    target = next((tmp_path / "a" / "occlusion").rglob("*.fseq"))
    target.write_bytes(target.read_bytes()[:-3])
    assert run(["verify", "--manifest", str(tmp_path / "a" / "manifest.json"), "--out", str(tmp_path / "v.json")]) == 1
    rep = json.loads((tmp_path / "v.json").read_text())
    assert rep["mismatches"][0]["reason"] == "size mismatch"


def test_report_and_profile(tmp_path):
    ann, preds = _ap_fixture(tmp_path)
    grid = tmp_path / "grid"
    for ctype in ("black_frame", "occlusion"):
        for lvl in (1, 2, 3):
            (grid / ctype).mkdir(parents=True, exist_ok=True)
            (grid / ctype / f"level{lvl}.json").write_bytes(preds.read_bytes())
    out = tmp_path / "rep"
    assert run(["report", "--dataset", str(ann), "--clean-preds", str(preds), "--grid-preds", str(grid), "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["gamma_overall"] == 100.0
    assert len(rep["missing"]) == 9
    assert (out / "report.svg").read_text().lstrip().startswith("<?xml")
    first = (out / "report.svg").read_bytes()
    assert run(["report", "--dataset", str(ann), "--clean-preds", str(preds), "--grid-preds", str(grid), "--out", str(out)]) == 0
    assert (out / "report.svg").read_bytes() == first

    assert run(["profile", "--dataset", str(ann), "--preds", str(preds), "--thr", "0.5", "--out", str(tmp_path / "prof")]) == 0
    rows = {r[0]: r for r in csv.reader(open(tmp_path / "prof" / "profile.csv"))}
    assert rows["tp"][1] == "2" and rows["background"][1] == "1"
    assert (tmp_path / "prof" / "profile.svg").exists()


def test_sweep_constant_predictions_is_flat(tmp_path):
    ds, frames, ann = make_frame_fixture(tmp_path / "fx")
    preds = tmp_path / "preds.json"
    save_predictions([Prediction(v.id, a.start_sec, a.end_sec, a.label, 0.9) for v in ds.videos for a in v.annotations], preds)
    out = tmp_path / "sw"
    assert run(["sweep", "--dataset", str(ann), "--frames", str(frames), "--clean-preds", str(preds), "--out", str(out)]) == 0
    rows = list(csv.reader(open(out / "sweep.csv")))[1:]
    assert len(rows) == 10 and rows[0][0] == "clean"
    assert len({r[1] for r in rows}) == 1
    assert (out / "sweep.svg").exists()


def test_train_and_eval_toy(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"synthetic": {"num_videos": 12, "T": 64, "max_length": 12}, "train": {"epochs": 2}}))
    model = tmp_path / "m.bin"
    args = ["train-toy", "--config", str(cfg), "--seed", "3", "--framedrop", "--trc", "K=4,loss=trc,sampling=center", "--out", str(model)]
    assert run(args) == 0
    first = model.read_bytes()
    log_rows = list(csv.reader(open(tmp_path / "m.log.csv")))
    assert log_rows[0] == ["epoch", "det_loss", "trc_loss"] and len(log_rows) == 3
    assert json.loads((tmp_path / "m.json").read_text())["seed"] == 3
    assert run(args) == 0
    assert model.read_bytes() == first
    out = tmp_path / "ev"
    assert run(["eval-toy", "--model", str(model), "--config", str(cfg), "--seed", "3", "--sweep", "--out", str(out)]) == 0
    payload = json.loads((out / "eval_toy.json").read_text())
    assert payload["seed"] == 3 and len(payload["sweep"]) == 9
    assert (out / "sweep_toy.svg").exists()


def test_bad_config_key(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"train": {"epochz": 2}}))
    assert run(["train-toy", "--config", str(cfg), "--seed", "0", "--out", str(tmp_path / "m.bin")]) == 1


def test_runtime_failure_exit_code(tmp_path):
    bad = tmp_path / "m.bin"
    bad.write_bytes(b"TADM\x09\x00\x00\x00")
    assert run(["eval-toy", "--model", str(bad), "--seed", "0", "--out", str(tmp_path / "o")]) == 2
