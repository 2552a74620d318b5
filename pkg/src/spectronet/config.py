"""Run configuration: one TOML table per section, unknown keys rejected.

Precedence, lowest to highest: dataclass defaults, the config file, command
line flags. The resolved configuration is written next to every run's outputs.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .audio import FeatureConfig
from .models import ModelSpec


class ConfigError(ValueError):
    pass


@dataclass
class FeaturesSection:
    sample_rate: int = 22050
    frame_length: int = 1024
    hop_length: int = 512
    n_mels: int = 64
    fmin: float = 0.0
    fmax: float = 0.0  # 0 means Nyquist
    epsilon: float = 1e-8
    log_compress: bool = False
    normalize_std: bool = False
    cache_dir: str = ""

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(
            sample_rate=self.sample_rate,
            frame_length=self.frame_length,
            hop_length=self.hop_length,
            n_mels=self.n_mels,
            fmin=self.fmin,
            fmax=self.fmax or None,
            epsilon=self.epsilon,
            log_compress=self.log_compress,
        )


@dataclass
class ModelSection:
    family: str = "densenet"
    preset: str = "121"
    use_multiscale: bool = False
    per_branch_channels: int = 8
    global_pool_kind: str = "auto"

    def spec(self, num_classes: int, use_multiscale: bool | None = None) -> ModelSpec:
        return ModelSpec(
            family=self.family,
            preset=self.preset,
            use_multiscale=self.use_multiscale if use_multiscale is None else use_multiscale,
            num_classes=num_classes,
            per_branch_channels=self.per_branch_channels,
            global_pool_kind=None if self.global_pool_kind == "auto" else self.global_pool_kind,
        )


@dataclass
class DataSection:
    us8k_root: str = ""
    sc_root: str = ""


@dataclass
class TrainSection:
    """Cross-validation optimization settings."""

    batch_size: int = 64
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0
    patience: int = 10
    max_epochs: int = 500
    test_folds: list[int] = field(default_factory=lambda: list(range(1, 11)))
    save_checkpoints: bool = False


@dataclass
class TransferSection:
    tasks: list[str] = field(default_factory=lambda: ["sc_lr2", "sc_core20", "sc_all30"])
    pretrained: list[bool] = field(default_factory=lambda: [False, True])
    multiscale: list[bool] = field(default_factory=lambda: [False, True])
    epochs: int = 100
    batch_size: int = 64
    head_lr: float = 0.005
    head_weight_decay: float = 1e-4
    body_lr: float = 0.001
    body_weight_decay: float = 0.0
    momentum: float = 0.9
    reset_bn_stats: bool = False
    source_checkpoint_plain: str = ""
    source_checkpoint_multiscale: str = ""


@dataclass
class AblationSection:
    task: str = "sc_lr2"
    fractions: list[float] = field(default_factory=lambda: [0.25, 0.5, 0.75, 1.0])
    iterations: int = 5
    seed_base: int = -1  # -1 means use the run seed
    pretrained: list[bool] = field(default_factory=lambda: [False])
    multiscale: list[bool] = field(default_factory=lambda: [True])


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs"
    jobs: int = 1
    desk: bool = False
    features: FeaturesSection = field(default_factory=FeaturesSection)
    model: ModelSection = field(default_factory=ModelSection)
    data: DataSection = field(default_factory=DataSection)
    train: TrainSection = field(default_factory=TrainSection)
    transfer: TransferSection = field(default_factory=TransferSection)
    ablation: AblationSection = field(default_factory=AblationSection)

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "RunConfig":
        return _build(cls, obj, "")

    @classmethod
    def from_toml(cls, text: str) -> "RunConfig":
        try:
            return cls.from_dict(tomllib.loads(text))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_toml(Path(path).read_text())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_toml())

    # -- resolution --------------------------------------------------------
    def resolved(self) -> "RunConfig":
        """Apply the desk-scale profile (if set) and validate.

        Desk scale shrinks deep presets to their ``tiny`` variants and cuts
        epoch budgets so the whole pipeline runs on fixtures in minutes. The
        returned config has ``desk = False`` and the scaled values baked in.
        """
        cfg = RunConfig.from_dict(self.to_dict())
        if cfg.desk:
            if cfg.model.family != "sbcnn":
                cfg.model.preset = "tiny"
            cfg.train.max_epochs = max(2, cfg.train.max_epochs // 100)
            cfg.train.patience = max(1, cfg.train.patience // 5)
            cfg.transfer.epochs = max(1, cfg.transfer.epochs // 50)
            cfg.desk = False
        cfg.validate()
        return cfg

    def validate(self) -> None:
        from .data import SC_TASK_WORDS

        try:
            self.features.feature_config()
            self.model.spec(num_classes=2)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        for t in self.transfer.tasks:
            if t not in SC_TASK_WORDS:
                raise ConfigError(f"unknown transfer task {t!r}")
        if self.ablation.task not in SC_TASK_WORDS:
            raise ConfigError(f"unknown ablation task {self.ablation.task!r}")
        if not all(0 < f <= 1 for f in self.ablation.fractions):
            raise ConfigError("ablation fractions must lie in (0, 1]")
        if self.ablation.iterations < 1:
            raise ConfigError("ablation iterations must be >= 1")
        if any(not 1 <= f <= 10 for f in self.train.test_folds):
            raise ConfigError("test folds must lie in 1-10")
        for name, v in (("train.batch_size", self.train.batch_size), ("transfer.batch_size", self.transfer.batch_size)):
            if v < 1:
                raise ConfigError(f"{name} must be >= 1")

    @property
    def ablation_seed_base(self) -> int:
        return self.seed if self.ablation.seed_base < 0 else self.ablation.seed_base


def _check_type(value, annotation: str, where: str):
    kinds = {
        "int": int,
        "float": (int, float),
        "bool": bool,
        "str": str,
    }
    if annotation in kinds:
        if annotation != "bool" and isinstance(value, bool):
            raise ConfigError(f"{where}: expected {annotation}, got bool")
        if not isinstance(value, kinds[annotation]):
            raise ConfigError(f"{where}: expected {annotation}, got {type(value).__name__}")
        return float(value) if annotation == "float" else value
    if annotation.startswith("list["):
        inner = annotation[5:-1]
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list")
        return [_check_type(v, inner, f"{where}[{i}]") for i, v in enumerate(value)]
    raise ConfigError(f"{where}: unsupported field type {annotation}")


def _build(cls, obj: dict, prefix: str):
    if not isinstance(obj, dict):
        raise ConfigError(f"{prefix or 'config'}: expected a table")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(obj) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) in {prefix or 'top level'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in obj.items():
        f = fields[name]
        where = f"{prefix}{name}"
        if dataclasses.is_dataclass(f.default_factory if f.default_factory is not dataclasses.MISSING else None):
            kwargs[name] = _build(f.default_factory, value, f"{where}.")
        else:
            kwargs[name] = _check_type(value, str(f.type), where)
    return cls(**kwargs)
