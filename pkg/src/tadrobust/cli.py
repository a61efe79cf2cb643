"""``bench``: build corrupted benchmarks, evaluate, profile, sweep and train the toy model.

Exit codes: 0 success, 1 usage or input validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path
from typing import Sequence

from .benchmark import BenchmarkManifest, build_benchmark, make_grid, verify_manifest
from .corruption import CorruptionType
from .data import AnnotationFormatError, ValidationError, load_annotations, load_predictions
from .metrics import EvalProtocol, RobustnessReport, mean_ap
from .plotting import bar_chart

log = logging.getLogger("bench")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    """Bad flags or inputs detected before any work starts."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse exits 2 by default
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- helpers


def _existing_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p


def _existing_dir(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"{what} is not a directory: {path}")
    return p


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _protocol(args) -> EvalProtocol:
    if getattr(args, "tiou", None) is not None:
        return EvalProtocol.single(args.tiou)
    return EvalProtocol.by_name(args.protocol or "thumos")


def _add_protocol(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--protocol", choices=("thumos", "anet"), help="threshold set and aggregation (default thumos)")
    g.add_argument("--tiou", type=float, help="evaluate at a single tIoU threshold instead")


def _fmt(x: float) -> str:
    return f"{x:.4f}"


# ---------------------------------------------------------------- subcommands


def cmd_build(args) -> int:
    ann = _existing_file(args.dataset, "annotation file")
    frames = _existing_dir(args.frames, "frames directory")
    dataset = load_annotations(ann)
    manifest = build_benchmark(dataset, frames, make_grid(args.grid), args.seed, args.out, jobs=args.jobs)
    print(f"seed={args.seed} grid={args.grid} entries={len(manifest.entries)} gaps={len(manifest.gaps)} out={args.out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    mpath = _existing_file(args.manifest, "manifest")
    manifest = BenchmarkManifest.load(mpath)
    report = verify_manifest(manifest, args.root or mpath.parent)
    payload = report.to_dict() | {"master_seed": manifest.master_seed}
    if args.out:
        _write_json(Path(args.out), payload)
    for m in report.mismatches:
        print(f"{m['path']}: {m['reason']}")
    for m in report.missing:
        print(f"{m}: missing")
    print(f"verified {len(report.matches)}/{len(manifest.entries)} entries")
    return EXIT_OK if report.ok else EXIT_USAGE


def cmd_eval(args) -> int:
    dataset = load_annotations(_existing_file(args.dataset, "annotation file"))
    preds = load_predictions(_existing_file(args.preds, "predictions file"))
    protocol = _protocol(args)
    res = mean_ap(preds, dataset, protocol)
    out = Path(args.out)
    rows = [[f"{t:.2f}", _fmt(m)] for t, m in zip(res.thresholds, res.per_threshold)]
    rows.append(["aggregate", _fmt(res.aggregate)])
    _write_csv(out / "eval.csv", ["tiou", "mAP"], rows)
    _write_json(
        out / "eval.json",
        {
            "protocol": protocol.name,
            "thresholds": list(res.thresholds),
            "per_threshold": [round(m, 4) for m in res.per_threshold],
            "aggregate": round(res.aggregate, 4),
            "per_class": {c: [round(100 * a, 4) for a in v] for c, v in sorted(res.per_class.items())},
        },
    )
    print(f"{protocol.name} mAP = {res.aggregate:.2f}")
    return EXIT_OK


def cmd_report(args) -> int:
    dataset = load_annotations(_existing_file(args.dataset, "annotation file"))
    clean = load_predictions(_existing_file(args.clean_preds, "clean predictions"))
    grid_dir = _existing_dir(args.grid_preds, "grid predictions directory")
    protocol = _protocol(args)
    cells = make_grid(args.grid)
    m_clean = mean_ap(clean, dataset, protocol).aggregate
    grid = {}
    for ctype, level in cells:
        path = grid_dir / ctype.value / f"level{level}.json"
        if not path.is_file():
            log.warning("no predictions for %s level %d", ctype.value, level)
            continue
        grid[(ctype, level)] = mean_ap(load_predictions(path), dataset, protocol).aggregate
    report = RobustnessReport.from_maps(m_clean, grid, expected=cells)
    out = Path(args.out)
    payload = report.to_dict() | {"protocol": protocol.name}
    _write_json(out / "report.json", payload)
    rows = [[k, _fmt(report.grid[c]), f"{report.gamma_grid[c]:.2f}"] for c, k in _cell_keys(report)]
    _write_csv(out / "report.csv", ["cell", "mAP", "relative_robustness"], rows)
    bar_chart(
        [k for _, k in _cell_keys(report)],
        [report.gamma_grid[c] for c, _ in _cell_keys(report)],
        out / "report.svg",
        ylabel="relative robustness (%)",
        reference=report.gamma_overall,
    )
    print(f"clean {m_clean:.2f}  corrupted {report.mean_corrupted:.2f}  relative robustness {report.gamma_overall:.2f}")
    return EXIT_OK


def _cell_keys(report: RobustnessReport):
    order = list(CorruptionType)
    cells = sorted(report.grid, key=lambda c: (order.index(c[0]), c[1]))
    return [(c, f"{c[0].value}@{c[1]}") for c in cells]


def cmd_profile(args) -> int:
    from .profiler import FPCategory, classify_false_positives, category_counts, error_impact

    dataset = load_annotations(_existing_file(args.dataset, "annotation file"))
    preds = load_predictions(_existing_file(args.preds, "predictions file"))
    protocol = _protocol(args)
    tags = classify_false_positives(preds, dataset, args.thr, args.background_tiou)
    counts = category_counts(tags)
    impact = {c.value: error_impact(preds, dataset, protocol, c, args.background_tiou) for c in FPCategory}
    out = Path(args.out)
    _write_csv(out / "profile.csv", ["category", "count", "impact"], [[k, counts[k], _fmt(impact[k]) if k in impact else ""] for k in counts])
    _write_json(
        out / "profile.json",
        {"threshold": args.thr, "background_tiou": args.background_tiou, "protocol": protocol.name, "counts": counts,
         "impact": {k: round(v, 4) for k, v in impact.items()}},
    )
    bar_chart(list(impact), list(impact.values()), out / "profile.svg", ylabel="mAP gain when removed (points)")
    for k, v in impact.items():
        print(f"{k:18s} {counts[k]:6d}  +{v:.2f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .sweep import FRACTIONS, sweep_position, write_sweep

    dataset = load_annotations(_existing_file(args.dataset, "annotation file"))
    frames = _existing_dir(args.frames, "frames directory")
    clean_path = _existing_file(args.clean_preds, "clean predictions")
    fractions = FRACTIONS if args.fractions is None else tuple(args.fractions)
    templ = args.preds_template
    sources = {None: clean_path}
    for f in fractions:
        sources[f] = _existing_file(templ.format(fraction=f"{f:.1f}"), f"predictions for fraction {f:.1f}") if templ else clean_path

    def provider(fraction, _sequences):
        return load_predictions(sources[fraction])

    rows = sweep_position(dataset, frames, provider, fractions, _protocol(args))
    write_sweep(rows, args.out)
    for label, v in rows:
        print(f"{label:>6s} {v:.2f}")
    return EXIT_OK


# ---------------------------------------------------------------- toy model


def _toy_config(path: str | None) -> dict:
    if path is None:
        return {}
    raw = json.loads(_existing_file(path, "config").read_text(encoding="utf-8"))
    unknown = set(raw) - {"synthetic", "model", "train", "data_seed"}
    if unknown:
        raise UsageError(f"unknown config sections: {sorted(unknown)}")
    return raw


def _only_known(cls, raw: dict, what: str) -> dict:
    names = {f.name for f in fields(cls)}
    bad = set(raw) - names
    if bad:
        raise UsageError(f"unknown {what} keys: {sorted(bad)}")
    return raw


def _toy_data(cfg: dict, seed: int):
    from .training.synthetic import SyntheticConfig, generate_synthetic_dataset

    syn = SyntheticConfig(**_only_known(SyntheticConfig, cfg.get("synthetic", {}), "synthetic"))
    return generate_synthetic_dataset(syn, seed=int(cfg.get("data_seed", seed)))


def cmd_train_toy(args) -> int:
    from .training.model import ToyModelConfig, save_model
    from .training.trainer import TrainOptions, train_toy_model
    from .training.trc import TRCConfig

    cfg = _toy_config(args.config)
    trc = TRCConfig.parse(args.trc) if args.trc is not None else None
    train = _only_known(TrainOptions, dict(cfg.get("train", {})), "train")
    train.update(framedrop=args.framedrop or train.get("framedrop", False), trc=trc, seed=args.seed)
    opts = TrainOptions(**train)
    data = _toy_data(cfg, args.seed)
    model_raw = {"in_dim": data.config.D, "num_classes": data.config.C} | cfg.get("model", {})
    mcfg = ToyModelConfig(**(_only_known(ToyModelConfig, model_raw, "model") | {"seed": args.seed}))
    model, trlog = train_toy_model(data, mcfg, opts)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    log_path = Path(args.log) if args.log else out.with_suffix(".log.csv")
    trlog.to_csv(log_path)
    meta = {
        "seed": args.seed,
        "data_seed": int(cfg.get("data_seed", args.seed)),
        "framedrop": opts.framedrop,
        "trc": asdict(trc) if trc else None,
        "epochs": opts.epochs,
        "model": asdict(mcfg),
    }
    _write_json(out.with_suffix(".json"), meta)
    print(f"seed={args.seed} epochs={opts.epochs} model={out} log={log_path}")
    return EXIT_OK


def cmd_eval_toy(args) -> int:
    from .training.model import load_model
    from .training.trainer import evaluate_model, position_sweep

    model = load_model(_existing_file(args.model, "model file"))
    cfg = _toy_config(args.config)
    data = _toy_data(cfg, args.seed)
    ev = evaluate_model(model, data)
    out = Path(args.out)
    rows = [["clean", _fmt(ev["clean"])]] + [[f"black_frame@{k}", _fmt(v)] for k, v in ev["per_level"].items()]
    rows.append(["corrupted_mean", _fmt(ev["corrupted"])])
    _write_csv(out / "eval_toy.csv", ["split", "mAP@0.5"], rows)
    payload = {
        "seed": args.seed,
        "data_seed": int(cfg.get("data_seed", args.seed)),
        "clean": round(ev["clean"], 4),
        "corrupted": round(ev["corrupted"], 4),
        "per_level": {str(k): round(v, 4) for k, v in ev["per_level"].items()},
    }
    if args.sweep:
        from .sweep import write_sweep

        sw = position_sweep(model, data)
        write_sweep([("clean", ev["clean"])] + [(f"{f:.1f}", v) for f, v in sw.items()], out, stem="sweep_toy")
        payload["sweep"] = {f"{f:.1f}": round(v, 4) for f, v in sw.items()}
    _write_json(out / "eval_toy.json", payload)
    print(f"seed={args.seed} clean {ev['clean']:.2f} corrupted {ev['corrupted']:.2f}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bench", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("build", help="write a corrupted benchmark and its manifest")
    p.add_argument("--dataset", required=True, help="annotation JSON")
    p.add_argument("--frames", required=True, help="directory of <video_id>.fseq files")
    p.add_argument("--grid", choices=("core", "extended"), default="core")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("verify", help="re-check sizes and checksums of a built benchmark")
    p.add_argument("--manifest", required=True)
    p.add_argument("--root", help="benchmark root (default: the manifest's directory)")
    p.add_argument("--out", help="write the verification report JSON here")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("eval", help="per-threshold mAP of a predictions file")
    p.add_argument("--dataset", required=True)
    p.add_argument("--preds", required=True)
    _add_protocol(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="relative robustness over a corruption grid")
    p.add_argument("--dataset", required=True)
    p.add_argument("--clean-preds", required=True)
    p.add_argument("--grid-preds", required=True, help="directory holding <ctype>/level<n>.json")
    p.add_argument("--grid", choices=("core", "extended"), default="core")
    _add_protocol(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("profile", help="false-positive categories and their mAP impact")
    p.add_argument("--dataset", required=True)
    p.add_argument("--preds", required=True)
    p.add_argument("--thr", type=float, default=0.5)
    p.add_argument("--background-tiou", type=float, default=0.1)
    _add_protocol(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("sweep", help="mAP as a black-frame window slides across actions")
    p.add_argument("--dataset", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--clean-preds", required=True)
    p.add_argument("--preds-template", help="per-fraction predictions, e.g. preds/{fraction}.json")
    p.add_argument("--fractions", type=float, nargs="+")
    _add_protocol(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train-toy", help="train the toy detector on synthetic features")
    p.add_argument("--config", help="JSON with optional synthetic/model/train sections and data_seed")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--framedrop", action="store_true")
    p.add_argument("--trc", nargs="?", const="", help="enable the consistency loss, e.g. K=16,loss=trc,sampling=center")
    p.add_argument("--out", required=True, help="model binary path")
    p.add_argument("--log", help="training log CSV (default: next to the model)")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("eval-toy", help="clean and black-frame mAP of a toy model")
    p.add_argument("--model", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, required=True, help="data seed used for training")
    p.add_argument("--sweep", action="store_true", help="also run the position sweep")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval_toy)
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, AnnotationFormatError, ValidationError) as exc:
        print(f"bench {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        log.debug("runtime failure", exc_info=True)
        print(f"bench {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
