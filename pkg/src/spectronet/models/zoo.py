from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from ..autograd import checkpoint
from ..autograd.tensor import Tensor, no_grad
from . import architectures as arch
from .layers import Linear, Module, Sequential

# (block, stage counts, base width, large stem)
RESNET_PRESETS = {
    "18": ("basic", (2, 2, 2, 2), 64, True),
    "34": ("basic", (3, 4, 6, 3), 64, True),
    "50": ("bottleneck", (3, 4, 6, 3), 64, True),
    "tiny": ("basic", (2, 2), 16, False),
}

# (growth, stage layer counts, initial features, large stem)
DENSENET_PRESETS = {
    "121": (32, (6, 12, 24, 16), 64, True),
    "161": (48, (6, 12, 36, 24), 96, True),
    "169": (32, (6, 12, 32, 32), 64, True),
    "desk": (12, (3, 6, 12, 8), 24, True),
    "tiny": (8, (2, 2), 16, False),
}

FAMILIES = ("sbcnn", "resnet", "densenet")
DEFAULT_POOL = {"sbcnn": "max", "resnet": "avg", "densenet": "avg"}
HEAD_PREFIX = "head."


class ModelSpecError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """Declarative architecture description.

    ``input_channels`` is what the stem convolution consumes: 1 for a raw
    spectrogram, or the adapter's stacked channel count. Left as ``None`` it is
    derived from ``use_multiscale``.
    """

    family: str = "densenet"
    preset: str = "121"
    use_multiscale: bool = False
    num_classes: int = 10
    per_branch_channels: int = 8
    global_pool_kind: str | None = None
    input_channels: int | None = None

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ModelSpecError(f"unknown family {self.family!r}")
        presets = {"resnet": RESNET_PRESETS, "densenet": DENSENET_PRESETS, "sbcnn": {"base": None}}[self.family]
        if self.preset not in presets:
            raise ModelSpecError(f"unknown {self.family} preset {self.preset!r}; choose from {sorted(presets)}")
        if self.num_classes < 2:
            raise ModelSpecError("num_classes must be >= 2")
        if self.per_branch_channels < 1:
            raise ModelSpecError("per_branch_channels must be >= 1")
        if self.global_pool_kind not in (None, "avg", "max"):
            raise ModelSpecError(f"unknown pool kind {self.global_pool_kind!r}")

    @property
    def pool_kind(self) -> str:
        return self.global_pool_kind or DEFAULT_POOL[self.family]

    @property
    def stem_channels(self) -> int:
        return 4 * self.per_branch_channels if self.use_multiscale else 1

    @property
    def name(self) -> str:
        suffix = "+ms" if self.use_multiscale else ""
        return f"{self.family}-{self.preset}{suffix}"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelSpec":
        return cls(**obj)


class Model(Module):
    """Optional multiscale adapter, a feature body, and a single affine head."""

    def __init__(self, spec: ModelSpec, adapter: Module | None, body: Sequential, head: Linear) -> None:
        super().__init__()
        self.spec = spec
        if adapter is not None:
            self.adapter = adapter
        else:
            object.__setattr__(self, "adapter", None)
        self.body = body
        self.head = head

    def features(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 1:
            raise ValueError(f"expected a [N, 1, frames, mels] batch, got {x.shape}")
        if self.adapter is not None:
            x = self.adapter(x)
        return self.body(x)

    def forward(self, x: Tensor) -> Tensor:
        return self.head(self.features(x))

    def head_names(self) -> list[str]:
        return [n for n, _ in self.named_parameters() if n.startswith(HEAD_PREFIX)]

    def parameter_groups(self) -> dict[str, list[tuple[str, object]]]:
        """Partition of the trainable parameters into ``head`` and ``body``."""
        groups: dict[str, list] = {"head": [], "body": []}
        for name, p in self.named_parameters():
            groups["head" if name.startswith(HEAD_PREFIX) else "body"].append((name, p))
        return groups


def build_model(spec: ModelSpec, seed: int = 0) -> Model:
    """Instantiate ``spec`` with fan-in scaled normal weights drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    adapter = None
    stem_in = 1
    if spec.use_multiscale:
        adapter = arch.MultiscaleAdapter(1, spec.per_branch_channels, rng=rng)
        stem_in = adapter.out_channels
    if spec.input_channels is not None and spec.input_channels != stem_in:
        raise ModelSpecError(
            f"stem would receive {stem_in} channels but the ModelSpec declares input_channels={spec.input_channels}"
        )

    if spec.family == "sbcnn":
        body, n_features = arch.sbcnn_body(stem_in, spec.pool_kind, rng)
    elif spec.family == "resnet":
        kind, stages, width, large = RESNET_PRESETS[spec.preset]
        block = arch.BasicBlock if kind == "basic" else arch.Bottleneck
        body, n_features = arch.resnet_body(stem_in, block, stages, width, large, spec.pool_kind, rng)
    else:
        growth, stages, init, large = DENSENET_PRESETS[spec.preset]
        body, n_features = arch.densenet_body(stem_in, growth, stages, init, large, spec.pool_kind, rng)
    head = Linear(n_features, spec.num_classes, rng=rng)
    return Model(spec, adapter, body, head)


def replace_head(model: Model, num_classes: int, seed: int = 0) -> Model:
    """Swap in a freshly initialized head for ``num_classes``; body untouched."""
    rng = np.random.default_rng(seed)
    model.head = Linear(model.head.in_features, num_classes, rng=rng)
    object.__setattr__(model, "spec", replace(model.spec, num_classes=num_classes))
    return model


def forward_classify(model: Model, batch: Tensor | np.ndarray, *, train: bool = False) -> Tensor:
    """Logits for a [N, 1, frames, mels] batch. Eval mode unless ``train``."""
    model.train(train)
    x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch, dtype=np.float32))
    if train:
        return model(x)
    with no_grad():
        return model(x)


def parameter_checksum(model: Module, names=None) -> str:
    """SHA-256 over the raw bytes of the selected parameters and buffers."""
    h = hashlib.sha256()
    for name, arr in model.state_dict().items():
        if names is None or name in names:
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def body_state(model: Model) -> dict[str, np.ndarray]:
    return {n: a for n, a in model.state_dict().items() if not n.startswith(HEAD_PREFIX)}


def save_model(model: Model, path: str | os.PathLike) -> None:
    """Parameter checkpoint plus a ``.json`` sidecar holding the ModelSpec."""
    path = Path(path)
    checkpoint.save_checkpoint(model.state_dict(), path)
    sidecar = path.with_suffix(path.suffix + ".json")
    tmp = sidecar.with_name(sidecar.name + ".tmp")
    tmp.write_text(json.dumps(model.spec.to_dict(), indent=2, sort_keys=True))
    os.replace(tmp, sidecar)


def load_model(path: str | os.PathLike, expected: ModelSpec | None = None) -> Model:
    path = Path(path)
    sidecar = path.with_suffix(path.suffix + ".json")
    spec = ModelSpec.from_dict(json.loads(sidecar.read_text()))
    if expected is not None and spec != expected:
        raise checkpoint.CheckpointMismatchError(f"checkpoint spec {spec} does not match expected {expected}")
    model = build_model(spec)
    model.load_state_dict(checkpoint.load_checkpoint(path))
    return model
