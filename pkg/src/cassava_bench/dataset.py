"""Manifest ingestion, validation and class-distribution statistics."""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import (
    BadLabelError,
    DuplicateIdError,
    EmptyManifestError,
    MissingFileError,
    RootUnavailableError,
)

MANIFEST_HEADER = ("image_id", "label")


@dataclass(frozen=True)
class ClassEntry:
    class_id: int
    code: str
    long_name: str


@dataclass(frozen=True)
class ClassRegistry:
    entries: tuple[ClassEntry, ...]

    def __post_init__(self):
        ids = [e.class_id for e in self.entries]
        codes = [e.code for e in self.entries]
        if ids != list(range(len(ids))):
            raise ValueError(f"class ids must be 0..{len(ids) - 1} in order, got {ids}")
        if len(set(codes)) != len(codes):
            raise ValueError(f"duplicate class codes: {codes}")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def codes(self) -> list[str]:
        return [e.code for e in self.entries]

    def code(self, class_id: int) -> str:
        return self.entries[class_id].code

    def id_of(self, code: str) -> int:
        for e in self.entries:
            if e.code == code:
                return e.class_id
        raise KeyError(code)


# Competition convention; the ids are not negotiable because saved manifests depend on them.
CASSAVA_REGISTRY = ClassRegistry(
    (
        ClassEntry(0, "CBB", "Cassava Bacterial Blight"),
        ClassEntry(1, "CBSD", "Cassava Brown Streak Disease"),
        ClassEntry(2, "CGM", "Cassava Green Mottle"),
        ClassEntry(3, "CMD", "Cassava Mosaic Disease"),
        ClassEntry(4, "HEALTHY", "Healthy"),
    )
)


@dataclass(frozen=True)
class DatasetManifest:
    image_ids: tuple[str, ...]
    labels: tuple[int, ...]
    root: Path | None = None
    registry: ClassRegistry = field(default=CASSAVA_REGISTRY, compare=False)

    def __post_init__(self):
        if len(self.image_ids) != len(self.labels):
            raise ValueError("image_ids and labels differ in length")
        if not self.image_ids:
            raise EmptyManifestError("manifest has no records")
        seen = set()
        for image_id in self.image_ids:
            if image_id in seen:
                raise DuplicateIdError(f"duplicate image_id {image_id!r}")
            seen.add(image_id)
        n = len(self.registry)
        for image_id, label in zip(self.image_ids, self.labels):
            if not 0 <= label < n:
                raise BadLabelError(f"label {label} of {image_id!r} outside 0..{n - 1}")

    def __len__(self) -> int:
        return len(self.image_ids)

    @property
    def records(self) -> list[tuple[str, int]]:
        return list(zip(self.image_ids, self.labels))

    def label_array(self) -> np.ndarray:
        return np.asarray(self.labels, dtype=np.int64)

    def image_path(self, image_id: str) -> Path:
        if self.root is None:
            raise RootUnavailableError("manifest has no image root")
        return Path(self.root) / image_id


@dataclass(frozen=True)
class ClassDistribution:
    counts: tuple[int, ...]
    fractions: tuple[float, ...]

    @property
    def total(self) -> int:
        return sum(self.counts)


def load_manifest(
    path: str | os.PathLike,
    registry: ClassRegistry = CASSAVA_REGISTRY,
    root: str | os.PathLike | None = None,
) -> DatasetManifest:
    """Read a comma-delimited ``image_id,label`` file.

    ``root`` defaults to an ``images/`` directory next to the manifest when one
    exists, otherwise the manifest's own directory.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"manifest not found: {path}")
    text = path.read_text(encoding="utf-8")
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        raise EmptyManifestError(f"{path} is empty")
    header = [h.strip() for h in header]
    if header[:2] != list(MANIFEST_HEADER):
        raise ValueError(f"{path}: expected header 'image_id,label', got {','.join(header)!r}")

    ids, labels = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        image_id, raw = row[0].strip(), row[1].strip() if len(row) > 1 else ""
        try:
            label = int(raw)
        except ValueError:
            raise BadLabelError(f"{path}:{lineno}: label {raw!r} is not an integer") from None
        ids.append(image_id)
        labels.append(label)
    if not ids:
        raise EmptyManifestError(f"{path} has a header but no data rows")

    if root is None:
        root = path.parent / "images" if (path.parent / "images").is_dir() else path.parent
    return DatasetManifest(tuple(ids), tuple(labels), Path(root), registry)


def write_manifest(manifest: DatasetManifest, path: str | os.PathLike) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        writer.writerows(manifest.records)
    return path


def distribution_from_counts(counts: Sequence[int]) -> ClassDistribution:
    counts = tuple(int(c) for c in counts)
    total = sum(counts)
    if total <= 0:
        raise ValueError("cannot build a distribution from zero samples")
    return ClassDistribution(counts, tuple(c / total for c in counts))


def class_distribution(manifest: DatasetManifest) -> ClassDistribution:
    counts = np.bincount(manifest.label_array(), minlength=len(manifest.registry))
    return distribution_from_counts(counts)


def _is_bad_image(path: Path) -> bool:
    try:
        with Image.open(path) as im:
            im.verify()
        return False
    except Exception:
        return True


def verify_images(manifest: DatasetManifest, workers: int = 4) -> list[str]:
    """Return ids whose image file is missing or cannot be decoded, sorted."""
    root = manifest.root
    if root is None or not Path(root).is_dir():
        raise RootUnavailableError(f"image root unavailable: {root}")
    paths = [Path(root) / i for i in manifest.image_ids]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        bad = list(pool.map(_is_bad_image, paths))
    return sorted(i for i, b in zip(manifest.image_ids, bad) if b)


def format_distribution(dist: ClassDistribution, registry: ClassRegistry = CASSAVA_REGISTRY) -> str:
    lines = [f"{'class':<8} {'count':>7} {'fraction':>9}"]
    for entry, n, f in zip(registry, dist.counts, dist.fractions):
        lines.append(f"{entry.code:<8} {n:>7d} {f:>9.4f}")
    lines.append(f"{'total':<8} {dist.total:>7d} {sum(dist.fractions):>9.4f}")
    return "\n".join(lines)
