"""Command-line entry point: ``spectronet {featurize,train,transfer,ablate,report}``."""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig
from .data import CLIP_SECONDS, TASKS, load_dataset
from .experiments import Report, feature_store, run_ablation, run_crossval, run_transfer
from .models import ModelSpecError
from .report import emit_report
from .store import write_manifest

log = logging.getLogger("spectronet")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _words(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run configuration")
    common.add_argument("--seed", type=int, help="seed for every random choice in the run")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--jobs", type=int, help="parallel worker processes")
    common.add_argument("--desk", action="store_true", help="desk-scale profile: tiny presets, short schedules")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="spectronet", description="Spectrogram classifiers: featurize audio, run experiments, emit reports.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{featurize,train,transfer,ablate,report}")

    p = sub.add_parser("featurize", parents=[common], help="compute and cache mel spectrograms")
    p.add_argument("--dataset", choices=TASKS, required=True)
    p.add_argument("--root", required=True, help="dataset root directory")

    p = sub.add_parser("train", parents=[common], help="10-fold cross-validation on UrbanSound8K")
    p.add_argument("--root", help="UrbanSound8K root (overrides data.us8k_root)")

    for name, helptext in (("transfer", "UrbanSound8K -> Speech Commands transfer sweep"), ("ablate", "training-data fraction ablation")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--us8k-root", help="source dataset root (for pre-training)")
        p.add_argument("--sc-root", help="Speech Commands root")
        if name == "transfer":
            p.add_argument("--tasks", type=_words, help="comma-separated subset of sc_lr2,sc_core20,sc_all30")
            p.add_argument("--epochs", type=int)
        else:
            p.add_argument("--task", help="target task")
            p.add_argument("--fractions", type=_floats, help="e.g. 0.25,0.5,0.75,1.0")
            p.add_argument("--iterations", type=int)

    p = sub.add_parser("report", help="re-emit JSON and CSV from a saved report")
    p.add_argument("input", type=Path, help="report.json to read")
    p.add_argument("--out", type=Path, required=True)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = str(args.out)
    if args.jobs is not None:
        cfg.jobs = args.jobs
    if args.desk:
        cfg.desk = True
    cmd = args.command
    if cmd == "train" and args.root:
        cfg.data.us8k_root = args.root
    if cmd in ("transfer", "ablate"):
        if args.us8k_root:
            cfg.data.us8k_root = args.us8k_root
        if args.sc_root:
            cfg.data.sc_root = args.sc_root
    if cmd == "transfer":
        if args.tasks:
            cfg.transfer.tasks = args.tasks
        if args.epochs is not None:
            cfg.transfer.epochs = args.epochs
    if cmd == "ablate":
        if args.task:
            cfg.ablation.task = args.task
        if args.fractions:
            cfg.ablation.fractions = args.fractions
        if args.iterations is not None:
            cfg.ablation.iterations = args.iterations
    return cfg.resolved()


def run_dir(base: Path, command: str, seed: int) -> Path:
    stamp = dt.datetime.now().strftime("%Y%m%d-%H%M%S")
    path = base / f"{command}-{stamp}-seed{seed}"
    k = 1
    while path.exists():
        k += 1
        path = base / f"{command}-{stamp}-seed{seed}-{k}"
    path.mkdir(parents=True)
    return path


def _featurize(cfg: RunConfig, args) -> Path:
    root = Path(args.root)
    ds = load_dataset(args.dataset, root)
    cfg.features.cache_dir = str(cfg.out_dir)
    store = feature_store(cfg, args.dataset)
    paths = store.ensure(ds.examples, cfg.jobs)
    out = Path(cfg.out_dir)
    cfg.save(out / "config.toml")
    write_manifest(
        paths,
        out,
        {"task": args.dataset, "root": str(root), "clip_seconds": CLIP_SECONDS[args.dataset], "features": store.config.to_dict()},
    )
    print(f"cached {len(paths)} spectrograms under {out}")
    return out


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    if args.command == "report":
        try:
            report = Report.from_json(args.input.read_text())
            for path in emit_report(report, args.out):
                print(path)
        except (OSError, ValueError, KeyError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        return EXIT_OK

    try:
        cfg = resolve_config(args)
    except (ConfigError, ModelSpecError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"cannot read configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        if args.command == "featurize":
            _featurize(cfg, args)
            return EXIT_OK
        driver = {"train": run_crossval, "transfer": run_transfer, "ablate": run_ablation}[args.command]
        report = driver(cfg)
        out = run_dir(Path(cfg.out_dir), args.command, cfg.seed)
        cfg.save(out / "config.toml")
        json_path, csv_path = emit_report(report, out)
        print(json.dumps({"report": str(json_path), "csv": str(csv_path), "summary": report.summary}, default=str))
    except (ConfigError, ModelSpecError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        log.debug("run failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
