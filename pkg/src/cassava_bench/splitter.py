"""Seeded stratified train/val/test partitioning."""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import ClassDistribution, DatasetManifest, distribution_from_counts
from .errors import EmptyClassError, IndexOutOfRangeError, InvalidSpecError

log = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)
    seed: int = 0

    def __post_init__(self):
        if len(self.fractions) != 3:
            raise InvalidSpecError(f"need three fractions, got {self.fractions}")
        if any(not 0.0 < f < 1.0 for f in self.fractions):
            raise InvalidSpecError(f"each fraction must lie in (0, 1): {self.fractions}")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise InvalidSpecError(f"fractions must sum to 1: {self.fractions}")


@dataclass(frozen=True)
class SplitAssignment:
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]
    spec: SplitSpec = field(default_factory=SplitSpec)

    def __getitem__(self, name: str) -> tuple[int, ...]:
        if name not in SPLIT_NAMES:
            raise KeyError(name)
        return getattr(self, name)

    def items(self):
        return [(name, self[name]) for name in SPLIT_NAMES]


def largest_remainder(total: int, fractions: Sequence[float]) -> list[int]:
    """Apportion ``total`` seats by floor plus largest remainder.

    Remainder ties go to the earlier position. Fractions are read through their
    decimal representation so that e.g. 0.7 * 5 is exactly 3.5.
    """
    exact = [Fraction(repr(float(f))) * total for f in fractions]
    seats = [math.floor(q) for q in exact]
    left = total - sum(seats)
    order = sorted(range(len(exact)), key=lambda i: (-(exact[i] - seats[i]), i))
    for i in order[: max(left, 0)]:
        seats[i] += 1
    return seats


def _class_seed(seed: int, class_id: int) -> np.random.Generator:
    return np.random.default_rng([seed, class_id])


def stratified_split(
    manifest: DatasetManifest, spec: SplitSpec, strict: bool = False
) -> SplitAssignment:
    """Split each class independently and preserve class proportions.

    Within a class, image ids are sorted first, then permuted by a generator
    keyed on ``(seed, class_id)``, so row order of the manifest is irrelevant.
    """
    if not isinstance(spec, SplitSpec):
        raise InvalidSpecError(f"expected SplitSpec, got {type(spec).__name__}")
    labels = manifest.label_array()
    ids = manifest.image_ids
    parts: dict[str, list[int]] = {name: [] for name in SPLIT_NAMES}

    for class_id in range(len(manifest.registry)):
        members = np.flatnonzero(labels == class_id)
        if members.size == 0:
            msg = f"class {manifest.registry.code(class_id)} has no records"
            if strict:
                raise EmptyClassError(msg)
            log.warning(msg)
            continue
        members = sorted(members.tolist(), key=lambda i: ids[i])
        perm = _class_seed(spec.seed, class_id).permutation(len(members))
        shuffled = [members[j] for j in perm]
        sizes = largest_remainder(len(members), spec.fractions)
        if 0 in sizes[1:]:
            log.warning(
                "class %s (%d records) leaves a split empty: sizes %s",
                manifest.registry.code(class_id), len(members), sizes,
            )
        start = 0
        for name, size in zip(SPLIT_NAMES, sizes):
            parts[name].extend(shuffled[start : start + size])
            start += size

    return SplitAssignment(
        *(tuple(sorted(parts[name])) for name in SPLIT_NAMES), spec=spec
    )


@dataclass(frozen=True)
class SplitReport:
    distributions: dict[str, ClassDistribution | None]
    empty: tuple[tuple[str, int], ...]
    """(split, class_id) pairs where a class present in the manifest got no samples."""

    def format(self, codes: Sequence[str]) -> str:
        head = f"{'class':<8}" + "".join(f"{name:>16}" for name in SPLIT_NAMES)
        lines = [head]
        for c, code in enumerate(codes):
            cells = []
            for name in SPLIT_NAMES:
                d = self.distributions[name]
                cells.append(f"{'-':>16}" if d is None else f"{d.counts[c]:>7d} ({d.fractions[c]:.3f})")
            lines.append(f"{code:<8}" + "".join(f"{cell:>16}" for cell in cells))
        for name, c in self.empty:
            lines.append(f"WARNING: class {codes[c]} has no samples in {name}")
        return "\n".join(lines)


def split_report(assignment: SplitAssignment, manifest: DatasetManifest) -> SplitReport:
    labels = manifest.label_array()
    n_classes = len(manifest.registry)
    present = np.bincount(labels, minlength=n_classes) > 0
    dists: dict[str, ClassDistribution | None] = {}
    empty = []
    for name, idx in assignment.items():
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= len(manifest)):
            raise IndexOutOfRangeError(f"{name} split references indices outside the manifest")
        counts = np.bincount(labels[idx], minlength=n_classes)
        dists[name] = distribution_from_counts(counts) if idx.size else None
        empty.extend((name, c) for c in range(n_classes) if present[c] and counts[c] == 0)
    return SplitReport(dists, tuple(empty))


def write_split(
    assignment: SplitAssignment,
    manifest: DatasetManifest,
    out_dir: str | os.PathLike,
    config_hash: str | None = None,
) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, idx in assignment.items():
        ids = sorted(manifest.image_ids[i] for i in idx)
        (out_dir / f"{name}.txt").write_text("".join(f"{i}\n" for i in ids), encoding="utf-8")
    provenance = {
        "fractions": list(assignment.spec.fractions),
        "seed": assignment.spec.seed,
        "sizes": {name: len(idx) for name, idx in assignment.items()},
        "config_hash": config_hash,
    }
    (out_dir / "split.json").write_text(json.dumps(provenance, indent=2) + "\n", encoding="utf-8")
    return out_dir


def read_split(out_dir: str | os.PathLike, manifest: DatasetManifest) -> SplitAssignment:
    out_dir = Path(out_dir)
    provenance = json.loads((out_dir / "split.json").read_text(encoding="utf-8"))
    position = {image_id: i for i, image_id in enumerate(manifest.image_ids)}
    parts = []
    for name in SPLIT_NAMES:
        lines = (out_dir / f"{name}.txt").read_text(encoding="utf-8").split()
        try:
            parts.append(tuple(sorted(position[i] for i in lines)))
        except KeyError as exc:
            raise IndexOutOfRangeError(f"{name}.txt lists unknown image_id {exc.args[0]!r}") from None
    spec = SplitSpec(tuple(provenance["fractions"]), int(provenance["seed"]))
    return SplitAssignment(*parts, spec=spec)
