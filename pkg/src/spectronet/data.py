"""Dataset manifests, task subsets, fold plans and stratified subsampling."""

from __future__ import annotations

import csv
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

US8K_CLASSES = (
    "air_conditioner",
    "car_horn",
    "children_playing",
    "dog_bark",
    "drilling",
    "engine_idling",
    "gun_shot",
    "jackhammer",
    "siren",
    "street_music",
)
N_FOLDS = 10

SC_COMMANDS = ("yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go")
SC_DIGITS = ("zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine")
SC_AUXILIARY = ("bed", "bird", "cat", "dog", "happy", "house", "marvin", "sheila", "tree", "wow")
SC_TASK_WORDS = {
    "sc_lr2": frozenset({"left", "right"}),
    "sc_core20": frozenset(SC_COMMANDS + SC_DIGITS),
    "sc_all30": frozenset(SC_COMMANDS + SC_DIGITS + SC_AUXILIARY),
}
TASKS = ("us8k",) + tuple(SC_TASK_WORDS)

# Published corpus sizes, used to validate full downloads.
EXPECTED_COUNTS = {"us8k": 8732, "sc_all30": 64721, "sc_core20": 47348}
CLIP_SECONDS = {"us8k": 4.0, "sc_lr2": 1.0, "sc_core20": 1.0, "sc_all30": 1.0}


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Example:
    id: str
    audio_path: str
    label: int
    fold: int | None = None
    split: str | None = None


@dataclass
class Dataset:
    examples: list[Example]
    class_names: list[str]
    task: str

    def __post_init__(self) -> None:
        if len(set(self.class_names)) != len(self.class_names):
            raise ManifestError("class names must be unique")
        k = len(self.class_names)
        for ex in self.examples:
            if not 0 <= ex.label < k:
                raise ManifestError(f"{ex.id}: label {ex.label} outside [0, {k})")

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def split(self, name: str) -> list[Example]:
        return [e for e in self.examples if e.split == name]

    def folds(self, folds: Sequence[int]) -> list[Example]:
        wanted = set(folds)
        return [e for e in self.examples if e.fold in wanted]


@dataclass(frozen=True)
class FoldPlan:
    test_fold: int
    val_fold: int
    train_folds: tuple[int, ...] = field(default_factory=tuple)


def load_urbansound_manifest(csv_path: str | os.PathLike, audio_root: str | os.PathLike) -> Dataset:
    """Read the UrbanSound8K metadata CSV; audio lives at ``<audio_root>/fold<k>/<file>``.

    The salience column, if present, is ignored.
    """
    audio_root = Path(audio_root)
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = set(reader.fieldnames or ())
        missing = {"slice_file_name", "fold", "classID"} - cols
        if missing:
            raise ManifestError(f"{csv_path}: missing columns {sorted(missing)}")
        examples = []
        for row_no, row in enumerate(reader, start=2):
            try:
                fold, class_id = int(row["fold"]), int(row["classID"])
            except ValueError as exc:
                raise ManifestError(f"{csv_path}:{row_no}: non-integer fold or classID") from exc
            if not 1 <= fold <= N_FOLDS:
                raise ManifestError(f"{csv_path}:{row_no}: fold {fold} outside 1-{N_FOLDS} ({row['slice_file_name']})")
            if not 0 <= class_id < len(US8K_CLASSES):
                raise ManifestError(f"{csv_path}:{row_no}: unknown classID {class_id} ({row['slice_file_name']})")
            name = row["slice_file_name"]
            examples.append(Example(name, str(audio_root / f"fold{fold}" / name), class_id, fold=fold))
    examples.sort(key=lambda e: e.id)
    return Dataset(examples, list(US8K_CLASSES), "us8k")


def find_urbansound_csv(root: str | os.PathLike) -> tuple[Path, Path]:
    """Locate (metadata csv, audio root) in a standard UrbanSound8K tree."""
    root = Path(root)
    for csv_path in (root / "metadata" / "UrbanSound8K.csv", root / "UrbanSound8K.csv"):
        if csv_path.exists():
            return csv_path, root / "audio"
    raise ManifestError(f"{root}: no UrbanSound8K.csv found")


def _read_list(path: Path) -> set[str]:
    if not path.exists():
        raise ManifestError(f"missing list file {path}")
    return {ln.strip() for ln in path.read_text().splitlines() if ln.strip()}


def load_speech_commands(root: str | os.PathLike, task: str) -> Dataset:
    """Scan ``<root>/<word>/*.wav``; splits come from the corpus list files.

    Classes are the task's words that exist under ``root``, sorted
    alphabetically. Directories starting with ``_`` are skipped.
    """
    if task not in SC_TASK_WORDS:
        raise ManifestError(f"unknown speech-commands task {task!r}")
    root = Path(root)
    val_ids = _read_list(root / "validation_list.txt")
    test_ids = _read_list(root / "testing_list.txt")
    words = sorted(
        d.name for d in root.iterdir() if d.is_dir() and not d.name.startswith("_") and d.name in SC_TASK_WORDS[task]
    )
    if not words:
        raise ManifestError(f"{root}: no word directories for task {task}")
    examples = []
    for label, word in enumerate(words):
        files = sorted(p.name for p in (root / word).iterdir() if p.suffix.lower() == ".wav")
        if not files:
            raise ManifestError(f"{root / word}: empty class directory")
        for name in files:
            rel = f"{word}/{name}"
            split = "test" if rel in test_ids else "val" if rel in val_ids else "train"
            examples.append(Example(rel, str(root / word / name), label, split=split))
    examples.sort(key=lambda e: e.id)
    return Dataset(examples, words, task)


def load_dataset(task: str, root: str | os.PathLike) -> Dataset:
    if task == "us8k":
        return load_urbansound_manifest(*find_urbansound_csv(root))
    return load_speech_commands(root, task)


def check_full_corpus(ds: Dataset) -> None:
    """Raise if a full-corpus load does not match the published example count."""
    expected = EXPECTED_COUNTS.get(ds.task)
    if expected is not None and len(ds) != expected:
        raise ManifestError(f"{ds.task}: {len(ds)} examples, published corpus has {expected}")


def make_fold_plan(test_fold: int) -> FoldPlan:
    """Validation is the next fold cyclically; the other eight train."""
    if not 1 <= test_fold <= N_FOLDS:
        raise ValueError(f"test_fold must be in 1-{N_FOLDS}, got {test_fold}")
    val = test_fold % N_FOLDS + 1
    train = tuple(f for f in range(1, N_FOLDS + 1) if f not in (test_fold, val))
    return FoldPlan(test_fold, val, train)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stratified_fraction(examples: Sequence[Example], fraction: float, seed: int) -> list[Example]:
    """Keep ``round(fraction * n_c)`` examples of each class (and split), at least one.

    Selection is uniform without replacement, deterministic in ``seed``, and
    returned in the input order.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1:
        return list(examples)
    rng = np.random.default_rng(seed)
    groups: dict[tuple, list[int]] = defaultdict(list)
    for i, ex in enumerate(examples):
        groups[(ex.split, ex.label)].append(i)
    keep: set[int] = set()
    for key in sorted(groups, key=lambda k: (str(k[0]), k[1])):
        idx = groups[key]
        n = max(1, _round_half_up(fraction * len(idx)))
        keep.update(idx[j] for j in rng.choice(len(idx), size=n, replace=False))
    return [ex for i, ex in enumerate(examples) if i in keep]

