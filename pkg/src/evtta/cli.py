"""Command-line harness: ``evtta gen-data | train-source | adapt | sweep-samples | denoise-eval``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .denoise import FormulaMode, RatioStats
from .engine import AnchorPolicy, BaselineMode
from .experiment import (
    PRESETS,
    DatasetError,
    ExperimentConfig,
    RunReport,
    SPLITS,
    denoise_eval,
    generate_split,
    metrics_csv,
    read_dataset,
    run_grid,
    sweep_csv,
    sweep_samples,
    train_source_model,
    write_dataset,
)
from .nn import Model
from .representations import RepKind

log = logging.getLogger("evtta")

DATA_ENV = "EVTTA_DATA_DIR"


def _global_flags() -> argparse.ArgumentParser:
    # SUPPRESS keeps a flag given before the subcommand from being reset by the subparser
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--config", type=Path, help="JSON experiment config; flags override its values")
    p.add_argument("--seed", type=int, action="append", help="adaptation seed (repeatable); replaces the seed list")
    p.add_argument("--threads", type=int, help="worker threads for independent grid cells")
    p.add_argument("--limit-samples", type=int, help="adapt on a stratified subset of this many target samples")
    p.add_argument("--denoise-mode", choices=["off", *[m.value for m in FormulaMode]],
                   help="disable denoising or pick the ratio-transform formula")
    p.add_argument("--representation", choices=[k.value for k in RepKind])
    p.add_argument("--anchor-policy", choices=[a.value for a in AnchorPolicy])
    p.add_argument("--baseline", choices=[b.value for b in BaselineMode], help="run only this baseline")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--data-dir", type=Path, help=f"dataset root (fallback: ${DATA_ENV}, then <out>/data)")
    p.add_argument("--out", type=Path, help="output directory (default: config output_dir)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="evtta", description="Test-time adaptation experiments on synthetic event data.",
                                     parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="synthesise source train/val and target datasets")
    sub.add_parser("train-source", parents=[common], help="train the source model and fit ratio statistics")
    sub.add_parser("adapt", parents=[common], help="run the baseline x protocol x seed grid")
    sw = sub.add_parser("sweep-samples", parents=[common], help="adaptation accuracy versus target sample count")
    sw.add_argument("--counts", required=True, help="comma-separated sample counts, e.g. 100,250,500")
    sub.add_parser("denoise-eval", parents=[common], help="mask precision/recall and burst-detection confusion")
    return parser


_OPTIONS = ("config", "seed", "threads", "limit_samples", "denoise_mode", "representation", "anchor_policy",
            "baseline", "preset", "data_dir", "out", "verbose", "counts")


def _fill_defaults(args):
    for name in _OPTIONS:
        if not hasattr(args, name):
            setattr(args, name, None)
    args.threads = args.threads or 1
    return args


def resolve_config(args) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    kw = {}
    if args.seed:
        kw["seeds"] = tuple(args.seed)
    if args.limit_samples is not None:
        kw["limit_samples"] = args.limit_samples
    if args.representation:
        kw["representation"] = args.representation
    if args.baseline:
        kw["baselines"] = (args.baseline,)
    if args.preset:
        kw["preset"] = args.preset
    if args.out:
        kw["output_dir"] = str(args.out)
    adapt = config.adapt
    if args.anchor_policy:
        adapt = adapt.with_(anchor_policy=args.anchor_policy)
    if args.denoise_mode == "off":
        adapt = adapt.with_(denoise=False)
    elif args.denoise_mode:
        adapt = adapt.with_(denoise=True, hypothesis=replace(adapt.hypothesis, formula_mode=FormulaMode(args.denoise_mode)))
    kw["adapt"] = adapt
    return config.with_(**kw)


def data_root(args, config: ExperimentConfig) -> Path:
    if args.data_dir:
        return args.data_dir
    if os.environ.get(DATA_ENV):
        return Path(os.environ[DATA_ENV])
    return Path(config.output_dir) / "data"


def _checkpoint(config: ExperimentConfig) -> Path:
    return Path(config.output_dir) / f"source_{config.representation.value}"


def _load_source(config: ExperimentConfig):
    ck = _checkpoint(config)
    if not ck.with_suffix(".json").is_file():
        raise DatasetError(f"no checkpoint at {ck.with_suffix('.json')}; run train-source first")
    model = Model.load(ck)
    stats = RatioStats.from_json(ck.with_name(ck.name + ".stats.json").read_text())
    meta = json.loads(ck.with_name(ck.name + ".meta.json").read_text())
    return model, stats, meta.get("source_val")


def cmd_gen_data(args, config: ExperimentConfig) -> int:
    root = data_root(args, config)
    for split in SPLITS:
        ds = generate_split(config, split)
        write_dataset(ds, root / split)
        print(f"{split}: {len(ds)} streams -> {root / split}")
    return 0


def cmd_train_source(args, config: ExperimentConfig) -> int:
    root = data_root(args, config)
    train, val = read_dataset(root / "source_train"), read_dataset(root / "source_val")
    src = train_source_model(config, train, val)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ck = _checkpoint(config)
    src.model.save(ck)
    ck.with_name(ck.name + ".stats.json").write_text(src.stats.to_json())
    ck.with_name(ck.name + ".meta.json").write_text(json.dumps({"source_val": src.val_metric}, indent=2))
    metric = "accuracy" if config.task == "classification" else "rmse"
    print(f"source val {metric}: {src.val_metric:.4f}")
    print(f"checkpoint: {ck.with_suffix('.json')}")
    return 0


def _write_report(config: ExperimentConfig, report: RunReport, rows, name: str):
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.json").write_text(report.to_json())
    (out / f"{name}_metrics.csv").write_text(metrics_csv(rows))
    return out / f"{name}.json"


def cmd_adapt(args, config: ExperimentConfig) -> int:
    model, stats, source_val = _load_source(config)
    target = read_dataset(data_root(args, config) / "target")
    report, rows = run_grid(config, model, stats, target, source_val, threads=args.threads)
    path = _write_report(config, report, rows, "report")
    for baseline, cells in report.accuracy.items():
        for protocol, scores in cells.items():
            print(f"{baseline:>6} {protocol:>7}: {sum(scores) / len(scores):.4f}  seeds={scores}")
    for baseline, scores in report.rmse.items():
        print(f"{baseline:>6} rmse: {sum(scores) / len(scores):.4f}")
    print(f"report: {path}")
    return 0


def cmd_sweep_samples(args, config: ExperimentConfig) -> int:
    try:
        counts = [int(c) for c in args.counts.split(",") if c.strip()]
    except ValueError:
        raise DatasetError(f"--counts must be comma-separated integers, got {args.counts!r}") from None
    model, stats, _ = _load_source(config)
    target = read_dataset(data_root(args, config) / "target")
    baseline = args.baseline or "evtta"
    rows = sweep_samples(config, model, stats, target, counts, baseline=baseline)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(sweep_csv(rows))
    print((out / "sweep.csv").read_text(), end="")
    return 0


def cmd_denoise_eval(args, config: ExperimentConfig) -> int:
    _, stats, _ = _load_source(config)
    target = read_dataset(data_root(args, config) / "target")
    result = denoise_eval(config, stats, target)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "denoise.json").write_text(json.dumps(result, indent=2, sort_keys=True))
    px = result["pixels"]
    print(f"recall {px['recall']:.4f}  precision {px['precision']:.4f}  signal retention {px['signal_retention']:.4f}")
    for mode, d in result["detection"].items():
        if "error" in d:
            print(f"{mode}: failed: {d['error']}")
        else:
            print(f"{mode}: {d['verdicts']} (expected {result['expected_verdict']})")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-source": cmd_train_source,
    "adapt": cmd_adapt,
    "sweep-samples": cmd_sweep_samples,
    "denoise-eval": cmd_denoise_eval,
}


def main(argv=None) -> int:
    args = _fill_defaults(build_parser().parse_args(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = resolve_config(args)
        return COMMANDS[args.command](args, config)
    except (DatasetError, ValueError, OSError) as exc:
        print(f"evtta {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
