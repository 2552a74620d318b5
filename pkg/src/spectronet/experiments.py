"""Experiment drivers: fold cross-validation, transfer sweep, data-fraction ablation.

Each driver returns a :class:`Report`. Independent runs (folds, sweep
conditions, ablation cells) are self-contained tasks that can be farmed out to
worker processes with ``config.jobs``; results are merged in a fixed order.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .config import RunConfig
from .data import CLIP_SECONDS, Dataset, Example, load_dataset, make_fold_plan, stratified_fraction
from .models import Model, ModelSpec, build_model, load_model, replace_head, save_model
from .store import FeatureStore
from .training import (
    SGD,
    Split,
    evaluate,
    fit_with_early_stopping,
    head_body_groups,
    single_group,
    train_epoch,
    train_fixed_epochs,
)

log = logging.getLogger(__name__)

WALL_CLOCK_KEYS = frozenset({"duration_s", "started_at"})


class ExperimentError(RuntimeError):
    pass


@dataclass
class Report:
    experiment: str
    config: dict
    seed: int
    class_names: list[str]
    conditions: list[dict]
    summary: dict = field(default_factory=dict)
    duration_s: float = 0.0

    def __post_init__(self) -> None:
        for c in self.conditions:
            acc = c.get("test_acc")
            if acc is not None and not 0.0 <= acc <= 1.0:
                raise ValueError(f"test accuracy {acc} outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "config": self.config,
            "seed": self.seed,
            "class_names": self.class_names,
            "conditions": self.conditions,
            "summary": self.summary,
            "duration_s": self.duration_s,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "Report":
        return cls(
            experiment=obj["experiment"],
            config=obj["config"],
            seed=obj["seed"],
            class_names=obj.get("class_names", []),
            conditions=obj["conditions"],
            summary=obj.get("summary", {}),
            duration_s=obj.get("duration_s", 0.0),
        )

    @classmethod
    def from_json(cls, text: str) -> "Report":
        return cls.from_dict(json.loads(text))


def strip_wall_clock(obj):
    """Drop timing fields so reports can be compared for determinism."""
    if isinstance(obj, dict):
        return {k: strip_wall_clock(v) for k, v in obj.items() if k not in WALL_CLOCK_KEYS}
    if isinstance(obj, list):
        return [strip_wall_clock(v) for v in obj]
    return obj


def run_tasks(fn: Callable, tasks: Sequence, jobs: int = 1) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(min(jobs, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def feature_store(cfg: RunConfig, task: str) -> FeatureStore:
    root = Path(cfg.features.cache_dir) if cfg.features.cache_dir else Path(cfg.out_dir) / "cache"
    return FeatureStore(root, cfg.features.feature_config(), CLIP_SECONDS[task])


def _dataset_root(cfg: RunConfig, task: str) -> str:
    root = cfg.data.us8k_root if task == "us8k" else cfg.data.sc_root
    if not root:
        raise ExperimentError(f"no dataset root configured for task {task}")
    return root


def _make_splits(store: FeatureStore, train: list[Example], others: Sequence[list[Example]], use_std: bool):
    norm = store.fit_normalizer(train, use_std=use_std)
    return [store.split(train, norm)] + [store.split(ex, norm) for ex in others]


# ---------------------------------------------------------------------------
# Cross-validation with early stopping
# ---------------------------------------------------------------------------


@dataclass
class FoldTask:
    test_fold: int
    val_fold: int
    spec: ModelSpec
    train: Split
    val: Split
    test: Split
    lr: float
    momentum: float
    weight_decay: float
    batch_size: int
    patience: int
    max_epochs: int
    seed: int
    checkpoint_path: str = ""


def _run_fold(task: FoldTask) -> dict:
    start = time.perf_counter()
    model = build_model(task.spec, seed=task.seed)
    opt = SGD(single_group(model, task.lr, task.weight_decay, task.momentum))
    rng = np.random.default_rng(task.seed)
    fit = fit_with_early_stopping(
        model,
        lambda _: train_epoch(model, task.train, opt, task.batch_size, rng),
        lambda _: evaluate(model, task.val, task.batch_size).accuracy,
        task.patience,
        task.max_epochs,
    )
    if task.checkpoint_path:
        save_model(model, task.checkpoint_path)
    test = evaluate(model, task.test, task.batch_size)
    return {
        "condition": f"fold{task.test_fold}",
        "test_fold": task.test_fold,
        "val_fold": task.val_fold,
        "best_epoch": fit.best_epoch,
        "stopped_epoch": fit.stopped_epoch,
        "early_stopped": fit.early_stopped,
        "epochs": [{k: e[k] for k in ("train_loss", "train_acc", "val_acc")} for e in fit.history],
        "test_acc": test.accuracy,
        "duration_s": time.perf_counter() - start,
    }


def run_crossval(cfg: RunConfig, dataset: Dataset | None = None) -> Report:
    """Ten-fold protocol: 8 folds train, the next fold validates, the held-out fold tests."""
    cfg = cfg.resolved()
    start = time.perf_counter()
    ds = dataset or load_dataset("us8k", _dataset_root(cfg, "us8k"))
    store = feature_store(cfg, "us8k")
    store.ensure(ds.examples, cfg.jobs)
    spec = cfg.model.spec(ds.num_classes)
    out = Path(cfg.out_dir)

    tasks = []
    for k in cfg.train.test_folds:
        plan = make_fold_plan(k)
        parts = [ds.folds(plan.train_folds), ds.folds([plan.val_fold]), ds.folds([plan.test_fold])]
        for name, part in zip(("train", "validation", "test"), parts):
            if not part:
                raise ExperimentError(f"test fold {k}: {name} partition is empty")
        train, val, test = _make_splits(store, parts[0], parts[1:], cfg.features.normalize_std)
        ckpt = ""
        if cfg.train.save_checkpoints:
            out.mkdir(parents=True, exist_ok=True)
            ckpt = str(out / f"fold{k}.spnw")
        tasks.append(
            FoldTask(
                k, plan.val_fold, spec, train, val, test,
                cfg.train.lr, cfg.train.momentum, cfg.train.weight_decay, cfg.train.batch_size,
                cfg.train.patience, cfg.train.max_epochs, cfg.seed + k, ckpt,
            )
        )
    conditions = run_tasks(_run_fold, tasks, cfg.jobs)
    accs = [c["test_acc"] for c in conditions]
    return Report(
        "crossval",
        cfg.to_dict(),
        cfg.seed,
        ds.class_names,
        conditions,
        {"model": spec.name, "mean_test_acc": float(np.mean(accs)), "fold_test_acc": accs},
        time.perf_counter() - start,
    )


# ---------------------------------------------------------------------------
# Source pre-training and transfer
# ---------------------------------------------------------------------------


def pretrain_source(cfg: RunConfig, use_multiscale: bool, path: Path, dataset: Dataset | None = None) -> Path:
    """Train a source model on UrbanSound8K (folds 1-9 train, fold 10 validates) and save it."""
    ds = dataset or load_dataset("us8k", _dataset_root(cfg, "us8k"))
    store = feature_store(cfg, "us8k")
    store.ensure(ds.examples, cfg.jobs)
    train, val = _make_splits(store, ds.folds(range(1, 10)), [ds.folds([10])], cfg.features.normalize_std)
    spec = cfg.model.spec(ds.num_classes, use_multiscale)
    model = build_model(spec, seed=cfg.seed)
    opt = SGD(single_group(model, cfg.train.lr, cfg.train.weight_decay, cfg.train.momentum))
    rng = np.random.default_rng(cfg.seed)
    fit_with_early_stopping(
        model,
        lambda _: train_epoch(model, train, opt, cfg.train.batch_size, rng),
        lambda _: evaluate(model, val, cfg.train.batch_size).accuracy,
        cfg.train.patience,
        cfg.train.max_epochs,
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, path)
    return path


def _source_key(cfg: RunConfig) -> str:
    """Hash of every setting that shapes a pre-trained source model."""
    d = cfg.to_dict()
    payload = {k: d[k] for k in ("seed", "features", "model", "train")}
    payload["us8k_root"] = str(Path(cfg.data.us8k_root).resolve()) if cfg.data.us8k_root else ""
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:12]


def source_checkpoints(cfg: RunConfig, flags: Sequence[bool], source_dataset: Dataset | None = None) -> dict[bool, str]:
    """Checkpoint path per multiscale flag, pre-training any that are not configured."""
    out = {}
    for ms in sorted(set(flags)):
        given = cfg.transfer.source_checkpoint_multiscale if ms else cfg.transfer.source_checkpoint_plain
        if given:
            out[ms] = given
        else:
            target = Path(cfg.out_dir) / "sources" / f"source-{'multiscale' if ms else 'plain'}-{_source_key(cfg)}.spnw"
            if not target.exists():
                log.info("pre-training source model (multiscale=%s)", ms)
                pretrain_source(cfg, ms, target, source_dataset)
            out[ms] = str(target)
    return out


def prepare_transfer_model(
    spec: ModelSpec, pretrained: bool, source: str | None, seed: int, reset_bn_stats: bool = False
) -> Model:
    """Fresh model for ``spec``, or the source checkpoint with its head replaced."""
    if not pretrained:
        return build_model(spec, seed=seed)
    if not source:
        raise ExperimentError("pretrained condition needs a source checkpoint")
    model = load_model(source)
    src = model.spec
    if (src.family, src.preset, src.use_multiscale, src.per_branch_channels, src.pool_kind) != (
        spec.family,
        spec.preset,
        spec.use_multiscale,
        spec.per_branch_channels,
        spec.pool_kind,
    ):
        from .autograd import CheckpointMismatchError

        raise CheckpointMismatchError(f"source checkpoint is {src.name}, condition needs {spec.name}")
    replace_head(model, spec.num_classes, seed=seed)
    if reset_bn_stats:
        from .models import BatchNorm2d

        for _, mod in model.named_modules():
            if isinstance(mod, BatchNorm2d):
                mod.reset_running_stats()
    return model


@dataclass
class TransferTask:
    fields: dict
    spec: ModelSpec
    pretrained: bool
    source: str | None
    train: Split
    val: Split
    test: Split
    epochs: int
    batch_size: int
    head_lr: float
    head_wd: float
    body_lr: float
    body_wd: float
    momentum: float
    reset_bn_stats: bool
    model_seed: int
    shuffle_seed: int


def _run_transfer_task(task: TransferTask) -> dict:
    start = time.perf_counter()
    model = prepare_transfer_model(task.spec, task.pretrained, task.source, task.model_seed, task.reset_bn_stats)
    opt = SGD(head_body_groups(model, task.head_lr, task.head_wd, task.body_lr, task.body_wd, task.momentum))
    rng = np.random.default_rng(task.shuffle_seed)
    history = train_fixed_epochs(model, opt, task.train, task.epochs, task.batch_size, rng, task.val)
    test = evaluate(model, task.test, task.batch_size)
    return {
        **task.fields,
        "n_train": len(task.train),
        "n_test": len(task.test),
        "n_epochs": task.epochs,
        "epochs": [{k: e[k] for k in ("train_loss", "train_acc", "val_acc")} for e in history],
        "test_acc": test.accuracy,
        "duration_s": time.perf_counter() - start,
    }


def _condition_label(task: str, pretrained: bool, multiscale: bool) -> str:
    return f"{task}/{'pretrained' if pretrained else 'fresh'}/{'multiscale' if multiscale else 'plain'}"


def transfer_conditions(cfg: RunConfig) -> list[tuple[str, bool, bool]]:
    """(task, multiscale, pretrained) for every sweep cell, in report order."""
    t = cfg.transfer
    return list(itertools.product(t.tasks, t.multiscale, t.pretrained))


def _transfer_task(cfg, fields, spec, pretrained, source, train, val, test, shuffle_seed) -> TransferTask:
    t = cfg.transfer
    return TransferTask(
        fields, spec, pretrained, source, train, val, test, t.epochs, t.batch_size,
        t.head_lr, t.head_weight_decay, t.body_lr, t.body_weight_decay, t.momentum,
        t.reset_bn_stats, cfg.seed, shuffle_seed,
    )


def _sc_data(cfg: RunConfig, task: str, datasets: dict | None):
    ds = (datasets or {}).get(task) or load_dataset(task, _dataset_root(cfg, task))
    store = feature_store(cfg, task)
    store.ensure(ds.examples, cfg.jobs)
    return ds, store


def run_transfer(cfg: RunConfig, datasets: dict[str, Dataset] | None = None) -> Report:
    """Fresh vs pre-trained, with vs without multiscale input, for each target task.

    Every condition trains for a fixed number of epochs with the head/body
    parameter groups. ``datasets`` may pre-supply loaded datasets by task name
    (``"us8k"`` for the source).
    """
    cfg = cfg.resolved()
    start = time.perf_counter()
    conds = transfer_conditions(cfg)
    needs_source = [ms for _, ms, pre in conds if pre]
    sources = source_checkpoints(cfg, needs_source, (datasets or {}).get("us8k")) if needs_source else {}

    tasks = []
    class_names = {}
    for task_name in cfg.transfer.tasks:
        ds, store = _sc_data(cfg, task_name, datasets)
        class_names[task_name] = ds.class_names
        train, val, test = _make_splits(store, ds.split("train"), [ds.split("val"), ds.split("test")], cfg.features.normalize_std)
        if not len(test):
            raise ExperimentError(f"{task_name}: empty test split")
        for t2, ms, pre in conds:
            if t2 != task_name:
                continue
            spec = cfg.model.spec(ds.num_classes, ms)
            fields = {
                "condition": _condition_label(task_name, pre, ms),
                "task": task_name,
                "pretrained": pre,
                "multiscale": ms,
                "fraction": 1.0,
                "iteration": 0,
            }
            tasks.append(_transfer_task(cfg, fields, spec, pre, sources.get(ms), train, val, test, cfg.seed))
    conditions = run_tasks(_run_transfer_task, tasks, cfg.jobs)
    summary = {c["condition"]: c["test_acc"] for c in conditions}
    names = class_names[cfg.transfer.tasks[0]] if len(class_names) == 1 else []
    report = Report("transfer", cfg.to_dict(), cfg.seed, names, conditions, {"test_acc": summary})
    report.summary["class_names"] = class_names
    report.duration_s = time.perf_counter() - start
    return report


# ---------------------------------------------------------------------------
# Target data-size ablation
# ---------------------------------------------------------------------------


def run_ablation(cfg: RunConfig, datasets: dict[str, Dataset] | None = None) -> Report:
    """Train on stratified fractions of the target training split, test on the full test split.

    Iteration ``i`` draws its subset and shuffle order from ``seed_base + i``;
    model initialization uses the run seed, so at fraction 1.0 iterations differ
    only in shuffle order.
    """
    cfg = cfg.resolved()
    start = time.perf_counter()
    a = cfg.ablation
    conds = list(itertools.product(a.multiscale, a.pretrained))
    needs_source = [ms for ms, pre in conds if pre]
    sources = source_checkpoints(cfg, needs_source, (datasets or {}).get("us8k")) if needs_source else {}

    ds, store = _sc_data(cfg, a.task, datasets)
    full_train, val_ex, test_ex = ds.split("train"), ds.split("val"), ds.split("test")
    if not test_ex:
        raise ExperimentError(f"{a.task}: empty test split")
    tasks = []
    for ms, pre in conds:
        spec = cfg.model.spec(ds.num_classes, ms)
        for fraction in a.fractions:
            if not 0 < fraction <= 1:
                raise ValueError(f"fraction must be in (0, 1], got {fraction}")
            for it in range(a.iterations):
                seed = cfg.ablation_seed_base + it
                subset = stratified_fraction(full_train, fraction, seed)
                train, val, test = _make_splits(store, subset, [val_ex, test_ex], cfg.features.normalize_std)
                fields = {
                    "condition": _condition_label(a.task, pre, ms),
                    "task": a.task,
                    "pretrained": pre,
                    "multiscale": ms,
                    "fraction": float(fraction),
                    "iteration": it,
                    "subset_seed": seed,
                    "train_ids": [e.id for e in subset],
                }
                tasks.append(_transfer_task(cfg, fields, spec, pre, sources.get(ms), train, val, test, seed))
    runs = run_tasks(_run_transfer_task, tasks, cfg.jobs)

    summary: dict[str, Any] = {}
    for r in runs:
        cell = summary.setdefault(r["condition"], {}).setdefault(str(r["fraction"]), {"test_acc": []})
        cell["test_acc"].append(r["test_acc"])
    for cond in summary.values():
        for cell in cond.values():
            cell["mean_test_acc"] = float(np.mean(cell["test_acc"]))
    return Report("ablation", cfg.to_dict(), cfg.seed, ds.class_names, runs, summary, time.perf_counter() - start)
