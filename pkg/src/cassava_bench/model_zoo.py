"""Backbone registry, pretrained initialisation and 5-way softmax head adaptation."""

from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from torch import nn
from torchvision import models

from .errors import (
    ChecksumMismatchError,
    InvalidClassCountError,
    ShapeMismatchError,
    UnknownArchitectureError,
    WeightsUnavailableError,
)

log = logging.getLogger(__name__)

WEIGHTS_ENV = "CASSAVA_BENCH_WEIGHTS"
OFFLINE_ENV = "CASSAVA_BENCH_OFFLINE"
IMAGENET_CLASSES = 1000


@dataclass(frozen=True)
class ArchitectureSpec:
    name: str
    input_size: int
    approx_params_millions: float
    pretrained_source: str
    weights_file: str | None = None

    @property
    def slug(self) -> str:
        return self.name.lower().replace("-", "_")


_BENCH_SPECS = (
    ArchitectureSpec(
        "EfficientNet-B3", 300, 12, "torchvision:EfficientNet_B3_Weights.IMAGENET1K_V1",
        "efficientnet_b3_rwightman-b3899882.pth",
    ),
    ArchitectureSpec(
        "InceptionV3", 299, 23.8, "torchvision:Inception_V3_Weights.IMAGENET1K_V1",
        "inception_v3_google-0cc3c7bd.pth",
    ),
    ArchitectureSpec(
        "ResNet50", 224, 25.6, "torchvision:ResNet50_Weights.IMAGENET1K_V1",
        "resnet50-0676ba61.pth",
    ),
    ArchitectureSpec(
        "VGG16", 224, 138, "torchvision:VGG16_Weights.IMAGENET1K_V1",
        "vgg16-397923af.pth",
    ),
)

_DESK_SPECS = (ArchitectureSpec("TinyCNN", 64, 0.089, "none"),)

_SPECS = {s.name: s for s in _BENCH_SPECS + _DESK_SPECS}


def registry() -> list[ArchitectureSpec]:
    """The four benchmarked backbones."""
    return list(_BENCH_SPECS)


def get_spec(name: str) -> ArchitectureSpec:
    """Look up a benchmarked backbone or a reduced desk-scale one."""
    try:
        return _SPECS[name]
    except KeyError:
        raise UnknownArchitectureError(
            f"unknown architecture {name!r}; known: {', '.join(_SPECS)}"
        ) from None


def known_architectures() -> list[str]:
    return list(_SPECS)


class TinyCNN(nn.Module):
    """Small conv net shaped like the big backbones: features, pool, 1000-way fc."""

    def __init__(self, num_classes: int = IMAGENET_CLASSES, width: int = 16):
        super().__init__()

        def block(cin, cout):
            return nn.Sequential(
                nn.Conv2d(cin, cout, 3, padding=1, bias=False),
                nn.BatchNorm2d(cout),
                nn.ReLU(inplace=True),
                nn.MaxPool2d(2),
            )

        self.features = nn.Sequential(block(3, width), block(width, 2 * width), block(2 * width, 4 * width))
        self.avgpool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(4 * width, num_classes)

    def forward(self, x):
        return self.fc(torch.flatten(self.avgpool(self.features(x)), 1))


# name -> (constructor, attribute path of the final 1000-way Linear)
_BUILDERS: dict[str, tuple[Callable[[], nn.Module], tuple]] = {
    "EfficientNet-B3": (lambda: models.efficientnet_b3(weights=None), ("classifier", 1)),
    "InceptionV3": (
        lambda: models.inception_v3(weights=None, aux_logits=False, init_weights=True, transform_input=False),
        ("fc",),
    ),
    "ResNet50": (lambda: models.resnet50(weights=None), ("fc",)),
    "VGG16": (lambda: models.vgg16(weights=None), ("classifier", 6)),
    "TinyCNN": (lambda: TinyCNN(), ("fc",)),
}


def _get(module: nn.Module, path: tuple) -> nn.Module:
    for key in path:
        module = module[key] if isinstance(key, int) else getattr(module, key)
    return module


def _set(module: nn.Module, path: tuple, value: nn.Module) -> None:
    parent = _get(module, path[:-1])
    if isinstance(path[-1], int):
        parent[path[-1]] = value
    else:
        setattr(parent, path[-1], value)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


class ModelHandle(nn.Module):
    """Backbone (final classification layer removed) plus a linear head.

    ``forward`` returns pre-softmax scores for the loss; ``probabilities`` is
    the public softmax output.
    """

    def __init__(self, backbone: nn.Module, head: nn.Linear, spec: ArchitectureSpec, head_path: tuple):
        super().__init__()
        self.backbone = backbone
        self.head = head
        self.spec = spec
        self.head_path = head_path

    @property
    def num_classes(self) -> int:
        return self.head.out_features

    @property
    def in_features(self) -> int:
        return self.head.in_features

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.backbone(x))

    @torch.no_grad()
    def probabilities(self, x: torch.Tensor) -> torch.Tensor:
        was_training = self.training
        self.eval()
        try:
            return torch.softmax(self.forward(x), dim=1)
        finally:
            self.train(was_training)

    def backbone_parameters(self) -> int:
        return count_parameters(self.backbone)


def _weights_dir(cache_dir: str | os.PathLike | None) -> Path:
    if cache_dir is not None:
        return Path(cache_dir)
    if os.environ.get(WEIGHTS_ENV):
        return Path(os.environ[WEIGHTS_ENV])
    return Path(torch.hub.get_dir()) / "checkpoints"


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def resolve_weights(spec: ArchitectureSpec, cache_dir=None) -> tuple[Path, str] | None:
    """Find a cached checkpoint for ``spec`` and the digest it must match.

    Two layouts are recognised: the torch hub file name, whose suffix is a
    sha256 prefix, and ``<slug>.pth`` with a ``<slug>.pth.sha256`` sidecar.
    """
    root = _weights_dir(cache_dir)
    if spec.weights_file and (root / spec.weights_file).is_file():
        prefix = spec.weights_file.rsplit("-", 1)[-1].split(".")[0]
        return root / spec.weights_file, prefix
    local = root / f"{spec.slug}.pth"
    sidecar = root / f"{spec.slug}.pth.sha256"
    if local.is_file():
        if not sidecar.is_file():
            raise ChecksumMismatchError(f"{local} has no {sidecar.name} digest file")
        return local, sidecar.read_text().split()[0].strip().lower()
    return None


def write_weights(state_dict: dict, cache_dir, spec: ArchitectureSpec) -> Path:
    """Store a state dict in the sidecar layout understood by :func:`resolve_weights`."""
    root = Path(cache_dir)
    root.mkdir(parents=True, exist_ok=True)
    path = root / f"{spec.slug}.pth"
    torch.save(state_dict, path)
    (root / f"{spec.slug}.pth.sha256").write_text(_sha256(path) + "\n")
    return path


def _fetch_torchvision(spec: ArchitectureSpec) -> dict:
    enum_name, member = spec.pretrained_source.split(":", 1)[1].split(".")
    weights = getattr(models, enum_name)[member]
    return weights.get_state_dict(progress=False, check_hash=True)


def _offline_default() -> bool:
    return os.environ.get(OFFLINE_ENV, "").lower() in ("1", "true", "yes")


def load_pretrained(
    spec: ArchitectureSpec,
    cache_dir: str | os.PathLike | None = None,
    offline: bool | None = None,
    pretrained: bool = True,
    seed: int = 0,
) -> ModelHandle:
    """Build ``spec``'s network and initialise it from its 1000-class checkpoint.

    ``pretrained=False`` (or a spec without a pretrained source) keeps the seeded
    random initialisation.
    """
    builder, head_path = _BUILDERS[spec.name]
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = builder()

    if pretrained and spec.pretrained_source != "none":
        offline = _offline_default() if offline is None else offline
        found = resolve_weights(spec, cache_dir)
        if found is not None:
            path, expected = found
            actual = _sha256(path)
            if not actual.startswith(expected):
                raise ChecksumMismatchError(f"{path}: sha256 {actual[:16]}... does not match {expected}")
            state = torch.load(path, map_location="cpu", weights_only=True)
        elif offline:
            raise WeightsUnavailableError(
                f"no cached weights for {spec.name} in {_weights_dir(cache_dir)} and offline mode is on"
            )
        else:
            try:
                state = _fetch_torchvision(spec)
            except Exception as exc:
                raise WeightsUnavailableError(f"could not fetch weights for {spec.name}: {exc}") from exc
        state = {k: v for k, v in state.items() if not k.startswith("AuxLogits.")}
        net.load_state_dict(state)

    head = _get(net, head_path)
    _set(net, head_path, nn.Identity())
    return ModelHandle(net, head, spec, head_path)


def adapt_head(
    model: ModelHandle,
    num_classes: int = 5,
    seed: int | None = 0,
    freeze_backbone: bool = False,
) -> ModelHandle:
    """Replace the 1000-way layer with a fresh ``num_classes``-way dense layer."""
    if num_classes < 2:
        raise InvalidClassCountError(f"need at least 2 classes, got {num_classes}")
    with torch.random.fork_rng(devices=[]):
        if seed is not None:
            torch.manual_seed(seed)
        model.head = nn.Linear(model.in_features, num_classes)
    for p in model.backbone.parameters():
        p.requires_grad = not freeze_backbone
    for p in model.head.parameters():
        p.requires_grad = True
    return model


def argmax_class(probabilities) -> int:
    """Index of the largest probability; ties resolve to the lowest class id."""
    probs = np.asarray(probabilities, dtype=np.float64).ravel()
    return int(np.argmax(probs))


def predict_class(model: ModelHandle, img) -> int:
    """Class id for one preprocessed ``(H, W, 3)`` image or ``(3, H, W)`` tensor."""
    x = torch.as_tensor(np.asarray(img, dtype=np.float32))
    size = model.spec.input_size
    if x.shape == (size, size, 3):
        x = x.permute(2, 0, 1)
    if tuple(x.shape) != (3, size, size):
        raise ShapeMismatchError(
            f"{model.spec.name} expects {size}x{size}x3 input, got {tuple(img.shape)}"
        )
    probs = model.probabilities(x.unsqueeze(0))[0]
    return argmax_class(probs.numpy())

