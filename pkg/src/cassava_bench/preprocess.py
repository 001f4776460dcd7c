"""Per-architecture resizing, pixel normalization and train-time augmentation.

Images travel as float32 ``(H, W, 3)`` arrays. Raw pixels are rescaled to
``[0, 1]`` before anything else touches them.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import InvalidConfigError, NonFiniteInputError, UnknownArchitectureError

RESIZE_POLICY: dict[str, tuple[int, int]] = {
    "EfficientNet-B3": (300, 300),
    "InceptionV3": (299, 299),
    "ResNet50": (224, 224),
    "VGG16": (224, 224),
}

# Reduced backbones for CPU-scale runs; kept apart so RESIZE_POLICY covers the four benchmarked backbones.
DESK_RESIZE_POLICY: dict[str, tuple[int, int]] = {
    "TinyCNN": (64, 64),
}

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


def target_size(arch: str) -> tuple[int, int]:
    if arch in RESIZE_POLICY:
        return RESIZE_POLICY[arch]
    if arch in DESK_RESIZE_POLICY:
        return DESK_RESIZE_POLICY[arch]
    raise UnknownArchitectureError(f"unknown architecture {arch!r}")


@dataclass(frozen=True)
class NormalizationSpec:
    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD

    def __post_init__(self):
        if len(self.mean) != 3 or len(self.std) != 3:
            raise InvalidConfigError("normalization needs three channel values")
        if any(not s > 0 for s in self.std):
            raise InvalidConfigError(f"std must be positive per channel: {self.std}")


@dataclass(frozen=True)
class AugmentationConfig:
    rotation_deg: float = 20.0
    shift_frac: float = 0.1
    shear_deg: float = 10.0
    zoom_frac: float = 0.1
    hflip_prob: float = 0.5
    brightness_range: tuple[float, float] = (0.8, 1.2)

    def __post_init__(self):
        mags = (self.rotation_deg, self.shift_frac, self.shear_deg, self.zoom_frac)
        if any(not (m >= 0 and math.isfinite(m)) for m in mags):
            raise InvalidConfigError(f"augmentation magnitudes must be finite and >= 0: {mags}")
        if self.zoom_frac >= 1:
            raise InvalidConfigError("zoom_frac must be < 1")
        if self.shear_deg >= 90:
            raise InvalidConfigError("shear_deg must be < 90")
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise InvalidConfigError(f"hflip_prob must lie in [0, 1]: {self.hflip_prob}")
        lo, hi = self.brightness_range
        if not 0 <= lo <= hi:
            raise InvalidConfigError(f"brightness_range must satisfy 0 <= low <= high: {self.brightness_range}")

    @classmethod
    def identity(cls) -> "AugmentationConfig":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, (1.0, 1.0))


def to_float_image(img) -> np.ndarray:
    """PIL image or array -> float32 (H, W, 3) in [0, 1]."""
    if isinstance(img, Image.Image):
        img = np.asarray(img.convert("RGB"))
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        return arr.astype(np.float32) / np.float32(255.0)
    return arr.astype(np.float32, copy=False)


def resize(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of a float image to ``(h, w)``."""
    h, w = size
    if img.shape[:2] == (h, w):
        return img
    channels = []
    for c in range(img.shape[2]):
        band = Image.fromarray(np.ascontiguousarray(img[:, :, c], dtype=np.float32))
        channels.append(np.asarray(band.resize((w, h), Image.BILINEAR)))
    return np.stack(channels, axis=2).astype(np.float32, copy=False)


def normalize(img: np.ndarray, spec: NormalizationSpec) -> np.ndarray:
    img = np.asarray(img, dtype=np.float32)
    if not np.isfinite(img).all():
        raise NonFiniteInputError("image contains NaN or infinite values")
    mean = np.asarray(spec.mean, dtype=np.float32)
    std = np.asarray(spec.std, dtype=np.float32)
    return (img - mean) / std


def _affine_matrix(
    h: int, w: int, angle: float, tx: float, ty: float, shear: float, zoom: float
) -> np.ndarray:
    """Forward homogeneous map in (row, col) coordinates about the image centre.

    Composition order: rotate, then shift, then shear, then zoom.
    """
    a = math.radians(angle)
    s = math.radians(shear)
    rot = np.array([[math.cos(a), math.sin(a), 0], [-math.sin(a), math.cos(a), 0], [0, 0, 1]])
    shift = np.array([[1, 0, ty], [0, 1, tx], [0, 0, 1]])
    shr = np.array([[1, 0, 0], [-math.tan(s), 1, 0], [0, 0, 1]])
    zm = np.array([[zoom, 0, 0], [0, zoom, 0], [0, 0, 1]])
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    to_c = np.array([[1, 0, -cy], [0, 1, -cx], [0, 0, 1]])
    from_c = np.array([[1, 0, cy], [0, 1, cx], [0, 0, 1]])
    return from_c @ zm @ shr @ shift @ rot @ to_c


def augment(img: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    """Random rotation, shift, shear, zoom, horizontal flip and brightness, in that order.

    Every draw is taken on every call so the generator advances identically
    regardless of which transforms are active.
    """
    if not isinstance(cfg, AugmentationConfig):
        raise InvalidConfigError(f"expected AugmentationConfig, got {type(cfg).__name__}")
    img = np.asarray(img, dtype=np.float32)
    h, w = img.shape[:2]

    angle = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg)
    tx = rng.uniform(-cfg.shift_frac, cfg.shift_frac) * w
    ty = rng.uniform(-cfg.shift_frac, cfg.shift_frac) * h
    shear = rng.uniform(-cfg.shear_deg, cfg.shear_deg)
    zoom = rng.uniform(1.0 - cfg.zoom_frac, 1.0 + cfg.zoom_frac)
    flip = rng.random() < cfg.hflip_prob
    brightness = rng.uniform(*cfg.brightness_range)

    out = img
    forward = _affine_matrix(h, w, angle, tx, ty, shear, zoom)
    if not np.array_equal(forward, np.eye(3)):
        inverse = np.linalg.inv(forward)
        out = np.stack(
            [
                ndimage.affine_transform(img[:, :, c], inverse, order=1, mode="reflect")
                for c in range(img.shape[2])
            ],
            axis=2,
        ).astype(np.float32, copy=False)
    if flip:
        out = out[:, ::-1, :]
    if brightness != 1.0:
        out = np.clip(out * np.float32(brightness), 0.0, 1.0)
    return np.ascontiguousarray(out, dtype=np.float32)


def derive_rng(seed: int, image_id: str, epoch: int = 0) -> np.random.Generator:
    """Per-image generator so workers can augment in any order and agree."""
    digest = hashlib.sha256(image_id.encode("utf-8")).digest()
    return np.random.default_rng([seed, epoch, int.from_bytes(digest[:8], "little")])


class Pipeline:
    """Callable transform: raw image -> float32 (H, W, 3) model input."""

    def __init__(self, arch: str, split_kind: str, cfg: AugmentationConfig, norm: NormalizationSpec):
        self.size = target_size(arch)
        self.arch = arch
        self.split_kind = split_kind
        self.cfg = cfg
        self.norm = norm
        if split_kind == "train":
            self.stages: tuple[str, ...] = ("resize", "augment", "normalize")
        else:
            self.stages = ("resize", "normalize")

    @property
    def deterministic(self) -> bool:
        return "augment" not in self.stages

    def __call__(self, img, rng: np.random.Generator | None = None) -> np.ndarray:
        out = resize(to_float_image(img), self.size)
        if "augment" in self.stages:
            if rng is None:
                raise ValueError("train pipeline needs an explicit rng")
            out = augment(out, self.cfg, rng)
        return normalize(out, self.norm)

    def __repr__(self):
        return f"Pipeline({self.arch!r}, {self.split_kind!r}, stages={'->'.join(self.stages)})"


def build_pipeline(
    arch: str,
    split_kind: str,
    cfg: AugmentationConfig | None = None,
    norm: NormalizationSpec | None = None,
) -> Callable:
    if split_kind not in ("train", "val", "test"):
        raise ValueError(f"split_kind must be train, val or test, got {split_kind!r}")
    return Pipeline(arch, split_kind, cfg or AugmentationConfig(), norm or NormalizationSpec())
