"""Desk-scale stand-in for the leaf images: class-coded colour and motif plus noise."""

from __future__ import annotations

import errno
import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import CASSAVA_REGISTRY, DatasetManifest, write_manifest
from .errors import DiskFullError, InvalidSpecError
from .splitter import largest_remainder

# Test-set supports of the reference evaluation, normalised: CMD ~0.615, CBB ~0.05.
REFERENCE_SUPPORTS = (217, 438, 477, 2632, 516)
DEFAULT_CLASS_FRACTIONS = tuple(s / sum(REFERENCE_SUPPORTS) for s in REFERENCE_SUPPORTS)

_CLASS_COLOURS = np.array(
    [
        [0.85, 0.25, 0.20],
        [0.55, 0.35, 0.15],
        [0.65, 0.90, 0.45],
        [0.95, 0.85, 0.20],
        [0.10, 0.45, 0.15],
    ],
    dtype=np.float64,
)


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    n_samples: int = 500
    image_side: int = 64
    class_fractions: tuple[float, ...] = DEFAULT_CLASS_FRACTIONS
    pattern_strength: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 5:
            raise InvalidSpecError("n_samples must be >= 5")
        if self.image_side < 8:
            raise InvalidSpecError("image_side must be >= 8")
        if len(self.class_fractions) != len(CASSAVA_REGISTRY):
            raise InvalidSpecError(f"need {len(CASSAVA_REGISTRY)} class fractions")
        if any(f < 0 for f in self.class_fractions) or abs(sum(self.class_fractions) - 1.0) > 1e-9:
            raise InvalidSpecError(f"class fractions must be >= 0 and sum to 1: {self.class_fractions}")
        if not 0.0 <= self.pattern_strength <= 1.0:
            raise InvalidSpecError("pattern_strength must lie in [0, 1]")

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> "SyntheticDatasetSpec":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidSpecError(f"unknown keys in {path}: {sorted(unknown)}")
        if "class_fractions" in raw:
            raw["class_fractions"] = tuple(raw["class_fractions"])
        return cls(**raw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["class_fractions"] = list(self.class_fractions)
        return d


def class_counts(spec: SyntheticDatasetSpec) -> list[int]:
    return largest_remainder(spec.n_samples, spec.class_fractions)


def _motif(class_id: int, side: int, rng: np.random.Generator) -> np.ndarray:
    """Binary-ish pattern in [0, 1] with a random phase so no two images match."""
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    period = side / 6.0
    phase = rng.uniform(0, 2 * np.pi)
    if class_id == 0:
        m = np.sin(2 * np.pi * yy / period + phase)
    elif class_id == 1:
        m = np.sin(2 * np.pi * xx / period + phase)
    elif class_id == 2:
        cy, cx = rng.uniform(0.4, 0.6, size=2) * side
        m = np.where(np.hypot(yy - cy, xx - cx) < side * 0.28, 1.0, -1.0)
    elif class_id == 3:
        m = np.sign(np.sin(2 * np.pi * yy / period + phase) * np.sin(2 * np.pi * xx / period + phase))
    else:
        m = np.sin(2 * np.pi * (xx + yy) / (period * 1.4) + phase)
    return 0.5 + 0.5 * m


def render_image(class_id: int, side: int, strength: float, rng: np.random.Generator) -> np.ndarray:
    """uint8 (side, side, 3) image; ``strength`` 0 yields class-independent noise."""
    background = rng.uniform(0.3, 0.7, size=3)[None, None, :] * np.ones((side, side, 3))
    signal = _CLASS_COLOURS[class_id][None, None, :] * (0.4 + 0.6 * _motif(class_id, side, rng))[:, :, None]
    img = (1.0 - strength) * background + strength * signal
    img = img + rng.normal(0.0, 0.05, size=img.shape)
    return np.round(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)


def generate_synthetic(spec: SyntheticDatasetSpec, out_dir: str | os.PathLike) -> tuple[list[Path], DatasetManifest]:
    """Write ``<out>/images/*.png`` and ``<out>/manifest.csv``."""
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    counts = class_counts(spec)
    labels = np.repeat(np.arange(len(counts)), counts)
    rng = np.random.default_rng(spec.seed)
    labels = labels[rng.permutation(labels.size)]

    ids, paths = [], []
    try:
        image_dir.mkdir(parents=True, exist_ok=True)
        for i, label in enumerate(labels):
            image_id = f"synth_{i:05d}.png"
            img_rng = np.random.default_rng([spec.seed, i])
            path = image_dir / image_id
            Image.fromarray(render_image(int(label), spec.image_side, spec.pattern_strength, img_rng)).save(path)
            ids.append(image_id)
            paths.append(path)
        manifest = DatasetManifest(tuple(ids), tuple(int(x) for x in labels), image_dir)
        write_manifest(manifest, out_dir / "manifest.csv")
        (out_dir / "synth_spec.json").write_text(json.dumps(spec.to_dict(), indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        if exc.errno == errno.ENOSPC:
            raise DiskFullError(f"disk full while writing {out_dir}") from exc
        raise
    return paths, manifest
