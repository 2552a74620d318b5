"""Content-addressed cache of per-file spectrograms."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from .audio import FeatureConfig, Normalizer, apply_normalizer, featurize_file, fit_normalizer, read_feature_cache, write_feature_cache
from .data import Example
from .training import Split

log = logging.getLogger(__name__)


class MissingFeatureError(FileNotFoundError):
    pass


def _compute(args) -> None:
    audio_path, cache_path, config, seconds = args
    write_feature_cache(featurize_file(audio_path, config, seconds), cache_path)


class FeatureStore:
    """Maps audio files to cached spectrograms under ``root``.

    The cache key hashes the resolved audio path, the feature settings and the
    clip duration, so changing any of them never reuses stale features.
    """

    def __init__(self, root: str | os.PathLike, config: FeatureConfig, seconds: float | None) -> None:
        self.root = Path(root)
        self.config = config
        self.seconds = seconds

    def key(self, audio_path: str | os.PathLike) -> str:
        payload = json.dumps(
            {"path": str(Path(audio_path).resolve()), "features": self.config.to_dict(), "seconds": self.seconds},
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:24]

    def path_for(self, ex: Example) -> Path:
        return self.root / f"{self.key(ex.audio_path)}.melf"

    def ensure(self, examples: Sequence[Example], jobs: int = 1) -> dict[str, Path]:
        """Compute missing caches; returns {example id: cache path}."""
        self.root.mkdir(parents=True, exist_ok=True)
        paths = {ex.id: self.path_for(ex) for ex in examples}
        todo = [(ex.audio_path, paths[ex.id], self.config, self.seconds) for ex in examples if not paths[ex.id].exists()]
        if todo:
            log.info("featurizing %d of %d files", len(todo), len(examples))
            if jobs > 1:
                with ProcessPoolExecutor(jobs) as pool:
                    list(pool.map(_compute, todo))
            else:
                for item in todo:
                    _compute(item)
        return paths

    def load(self, ex: Example):
        path = self.path_for(ex)
        if not path.exists():
            raise MissingFeatureError(f"no cached features for {ex.id} (expected {path})")
        return read_feature_cache(path)

    def fit_normalizer(self, examples: Sequence[Example], *, use_std: bool = False) -> Normalizer:
        return fit_normalizer((self.load(ex) for ex in examples), self.config.epsilon, use_std=use_std)

    def split(self, examples: Sequence[Example], norm: Normalizer | None) -> Split:
        """Stack normalized spectrograms into a model-ready :class:`Split`."""
        if not examples:
            return Split(np.zeros((0, 1, 1, self.config.n_mels), dtype=np.float32), np.zeros(0, dtype=np.int64))
        specs = [self.load(ex) for ex in examples]
        if norm is not None:
            specs = [apply_normalizer(norm, s) for s in specs]
        x = np.stack([s.data for s in specs])[:, None].astype(np.float32)
        return Split(x, np.array([ex.label for ex in examples]), [ex.id for ex in examples])


def write_manifest(paths: dict[str, Path], out: str | os.PathLike, extra: dict | None = None) -> Path:
    out = Path(out)
    doc = dict(extra or {})
    doc["entries"] = {k: str(v) for k, v in sorted(paths.items())}
    target = out / "manifest.json"
    tmp = target.with_name(target.name + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True))
    os.replace(tmp, target)
    return target
