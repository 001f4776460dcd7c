"""Config-driven runs: split, train, evaluate, report, compare."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
from PIL import Image

from . import plots
from .dataset import CASSAVA_REGISTRY, DatasetManifest, class_distribution, load_manifest
from .errors import ConfigInvalidError, NoRunsError, UnknownArchitectureError
from .metrics import ClassificationReport, ConfusionMatrix, classification_report, confusion_matrix
from .model_zoo import ModelHandle, adapt_head, count_parameters, get_spec, load_pretrained
from .preprocess import AugmentationConfig, NormalizationSpec, Pipeline, build_pipeline, derive_rng
from .splitter import SplitAssignment, SplitSpec, read_split, split_report, stratified_split, write_split
from .train_engine import EpochLog, TrainingConfig, evaluate, run_training

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat run description; every key maps one-to-one to the JSON file."""

    manifest: str
    image_root: str | None = None
    out: str = "runs"
    seed: int = 0
    architectures: tuple[str, ...] = ("EfficientNet-B3", "InceptionV3", "ResNet50", "VGG16")
    split_fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)
    strict_classes: bool = False
    # training
    batch_size: int = 32
    initial_lr: float = 1e-3
    max_epochs: int = 50
    es_patience: int = 5
    plateau_patience: int = 2
    plateau_factor: float = 0.1
    min_delta: float = 0.0
    freeze_backbone: bool = False
    # weights
    pretrained: bool = True
    weights_cache: str | None = None
    offline: bool = False
    # augmentation
    rotation_deg: float = 20.0
    shift_frac: float = 0.1
    shear_deg: float = 10.0
    zoom_frac: float = 0.1
    hflip_prob: float = 0.5
    brightness_range: tuple[float, float] = (0.8, 1.2)
    # normalisation
    norm_mean: tuple[float, float, float] = (0.485, 0.456, 0.406)
    norm_std: tuple[float, float, float] = (0.229, 0.224, 0.225)
    plots: bool = True

    def __post_init__(self):
        for name in self.architectures:
            try:
                get_spec(name)
            except UnknownArchitectureError as exc:
                raise ConfigInvalidError(str(exc)) from None
        try:
            self.split_spec()
            self.training()
            self.augmentation()
            self.normalization()
        except ValueError as exc:
            raise ConfigInvalidError(str(exc)) from exc

    # --- views onto the per-module config types
    def split_spec(self) -> SplitSpec:
        return SplitSpec(tuple(self.split_fractions), self.seed)

    def training(self) -> TrainingConfig:
        return TrainingConfig(
            self.batch_size, self.initial_lr, self.max_epochs, self.es_patience, self.plateau_patience,
            self.plateau_factor, self.min_delta, self.seed, self.freeze_backbone,
        )

    def augmentation(self) -> AugmentationConfig:
        return AugmentationConfig(
            self.rotation_deg, self.shift_frac, self.shear_deg, self.zoom_frac, self.hflip_prob,
            tuple(self.brightness_range),
        )

    def normalization(self) -> NormalizationSpec:
        return NormalizationSpec(tuple(self.norm_mean), tuple(self.norm_std))

    # --- serialisation
    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @property
    def config_hash(self) -> str:
        """Digest of everything that affects results (the output location does not)."""
        d = self.to_dict()
        d.pop("out")
        d.pop("plots")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    @classmethod
    def from_dict(cls, raw: dict, base_dir: str | os.PathLike | None = None) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigInvalidError(f"unknown config keys: {sorted(unknown)}")
        if "manifest" not in raw:
            raise ConfigInvalidError("config needs a 'manifest' key")
        raw = dict(raw)
        for key, value in raw.items():
            if isinstance(value, list):
                raw[key] = tuple(value)
        if base_dir is not None:
            for key in ("manifest", "image_root", "weights_cache", "out"):
                if raw.get(key) is not None and not os.path.isabs(raw[key]):
                    raw[key] = str(Path(base_dir) / raw[key])
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigInvalidError(str(exc)) from exc


def load_config(path: str | os.PathLike, **overrides) -> ExperimentConfig:
    """Read a JSON config; relative paths resolve against the file's directory."""
    path = Path(path)
    if not path.is_file():
        raise ConfigInvalidError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigInvalidError(f"{path}: {exc}") from exc
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(raw, base_dir=path.parent)


class ImageSamples:
    """Lazily decoded images pushed through a pipeline, returned channel-first."""

    def __init__(self, manifest: DatasetManifest, indices: Sequence[int], pipeline: Pipeline, seed: int = 0):
        self.manifest = manifest
        self.indices = list(indices)
        self.pipeline = pipeline
        self.seed = seed
        self.epoch = 0

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def __len__(self) -> int:
        return len(self.indices)

    def __getitem__(self, i: int) -> tuple[np.ndarray, int]:
        idx = self.indices[i]
        image_id = self.manifest.image_ids[idx]
        with Image.open(self.manifest.image_path(image_id)) as im:
            raw = np.asarray(im.convert("RGB"))
        rng = None if self.pipeline.deterministic else derive_rng(self.seed, image_id, self.epoch)
        x = self.pipeline(raw, rng)
        return np.ascontiguousarray(x.transpose(2, 0, 1)), self.manifest.labels[idx]


@dataclass
class RunArtifacts:
    arch: str
    run_dir: Path
    config_hash: str
    split: SplitAssignment
    history: list[EpochLog]
    checkpoint: Path
    report: ClassificationReport
    confusion: ConfusionMatrix
    row: "ComparisonRow"
    plots: list[Path] = field(default_factory=list)

    @property
    def files(self) -> dict[str, Path]:
        d = self.run_dir
        names = ["train.txt", "val.txt", "test.txt", "split.json", "history.csv",
                 f"{self.arch}__best.ckpt", f"{self.arch}__best.json",
                 "report.txt", "report.csv", "confusion.txt", "summary.json"]
        return {n: d / n for n in names}


@dataclass(frozen=True)
class ComparisonRow:
    architecture: str
    params_millions: float
    accuracy: float
    precision: float
    recall: float
    f1: float
    config_hash: str | None = None


COMPARISON_COLUMNS = ("architecture", "params_m", "accuracy", "precision", "recall", "f1")


def _check_arch(config: ExperimentConfig, arch: str):
    try:
        return get_spec(arch)
    except UnknownArchitectureError as exc:
        raise ConfigInvalidError(str(exc)) from None


def _prepare(config: ExperimentConfig, arch: str):
    spec = _check_arch(config, arch)
    manifest = load_manifest(config.manifest, CASSAVA_REGISTRY, config.image_root)
    run_dir = Path(config.out) / arch
    return spec, manifest, run_dir


def make_split(config: ExperimentConfig, arch: str) -> tuple[DatasetManifest, SplitAssignment, Path]:
    """Compute and persist the stratified split under ``<out>/<arch>/``."""
    _, manifest, run_dir = _prepare(config, arch)
    assignment = stratified_split(manifest, config.split_spec(), strict=config.strict_classes)
    write_split(assignment, manifest, run_dir, config.config_hash)
    report = split_report(assignment, manifest)
    (run_dir / "split_report.txt").write_text(report.format(manifest.registry.codes) + "\n", encoding="utf-8")
    return manifest, assignment, run_dir


def _samples(config, arch, manifest, assignment):
    aug, norm = config.augmentation(), config.normalization()
    return {
        name: ImageSamples(manifest, idx, build_pipeline(arch, name, aug, norm), config.seed)
        for name, idx in assignment.items()
    }


def _build_model(config: ExperimentConfig, arch: str, pretrained: bool) -> ModelHandle:
    spec = get_spec(arch)
    model = load_pretrained(
        spec, cache_dir=config.weights_cache, offline=config.offline, pretrained=pretrained, seed=config.seed
    )
    return adapt_head(model, len(CASSAVA_REGISTRY), seed=config.seed, freeze_backbone=config.freeze_backbone)


def _write_reports(config, arch, run_dir, model, manifest, test_set, history, checkpoint, assignment):
    _, y_true, y_pred = evaluate(model, test_set, config.batch_size)
    cm = confusion_matrix(y_true, y_pred, len(CASSAVA_REGISTRY))
    report = classification_report(cm, CASSAVA_REGISTRY)
    h = config.config_hash
    (run_dir / "report.txt").write_text(
        f"{arch} test report (config {h})\n\n" + report.render_text(), encoding="utf-8"
    )
    (run_dir / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    cm.save(run_dir / "confusion.txt")

    spec = get_spec(arch)
    s = report.summary
    row = ComparisonRow(arch, float(spec.approx_params_millions), s.overall_accuracy,
                        s.weighted_precision, s.weighted_recall, s.weighted_f1, h)
    summary = {
        **asdict(row),
        "macro_precision": s.macro_precision,
        "macro_recall": s.macro_recall,
        "macro_f1": s.macro_f1,
        "weighted_f1_of_means": s.weighted_f1_of_means,
        "mean_binary_accuracy": s.mean_binary_accuracy,
        "counted_params": count_parameters(model),
        "epochs": len(history),
        "stopped_early": bool(history) and history[-1].stopped_early,
        "test_samples": int(cm.total),
    }
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")

    written = []
    if config.plots:
        written = plots.emit_plots(
            run_dir / "plots", class_distribution(manifest), manifest, cm, CASSAVA_REGISTRY,
            title=f"{arch} confusion matrix", seed=config.seed,
        )
    artifacts = RunArtifacts(arch, run_dir, h, assignment, history, checkpoint, report, cm, row, written)
    index = {name: h for name, p in artifacts.files.items() if p.exists()}
    index.update({str(p.relative_to(run_dir)): h for p in written})
    (run_dir / "artifacts.json").write_text(
        json.dumps({"config_hash": h, "files": index}, indent=2) + "\n", encoding="utf-8"
    )
    return artifacts


def _seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % (2**32))
    torch.use_deterministic_algorithms(True, warn_only=True)


def run(config: ExperimentConfig, arch: str, val_loss_hook=None) -> RunArtifacts:
    """Split, train, evaluate on the test split and write every artifact under ``<out>/<arch>/``."""
    _check_arch(config, arch)
    _seed_everything(config.seed)
    manifest, assignment, run_dir = make_split(config, arch)
    sets = _samples(config, arch, manifest, assignment)
    model = _build_model(config, arch, pretrained=config.pretrained)
    ckpt = run_dir / f"{arch}__best.ckpt"
    result = run_training(
        model, sets["train"], sets["val"], config.training(), ckpt,
        history_path=run_dir / "history.csv",
        checkpoint_meta={"config_hash": config.config_hash, "architecture": arch},
        val_loss_hook=val_loss_hook,
    )
    return _write_reports(config, arch, run_dir, result.model, manifest, sets["test"],
                          result.history, ckpt, assignment)


def evaluate_run(config: ExperimentConfig, arch: str) -> RunArtifacts:
    """Re-score a trained checkpoint on its saved test split."""
    from .train_engine import read_history

    _, manifest, run_dir = _prepare(config, arch)
    ckpt = run_dir / f"{arch}__best.ckpt"
    if not ckpt.is_file():
        raise ConfigInvalidError(f"no checkpoint at {ckpt}; run 'train' first")
    assignment = read_split(run_dir, manifest)
    sets = _samples(config, arch, manifest, assignment)
    model = _build_model(config, arch, pretrained=False)
    model.load_state_dict(torch.load(ckpt, map_location="cpu", weights_only=True))
    model.eval()
    hist_path = run_dir / "history.csv"
    history = read_history(hist_path) if hist_path.is_file() else []
    return _write_reports(config, arch, run_dir, model, manifest, sets["test"], history, ckpt, assignment)


# ---------------------------------------------------------------- comparison


@dataclass(frozen=True)
class ComparisonTable:
    rows: tuple[ComparisonRow, ...]

    def render_text(self) -> str:
        head = f"{'Architecture':<16} {'Params (M)':>10} {'Accuracy':>9} {'Precision':>9} {'Recall':>9} {'F1':>9}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            lines.append(
                f"{r.architecture:<16} {r.params_millions:>10g} {r.accuracy:>9.3f} {r.precision:>9.3f} "
                f"{r.recall:>9.3f} {r.f1:>9.3f}"
            )
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COMPARISON_COLUMNS)
        for r in self.rows:
            writer.writerow([r.architecture, repr(r.params_millions), repr(r.accuracy), repr(r.precision),
                             repr(r.recall), repr(r.f1)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ComparisonTable":
        rows = [
            ComparisonRow(d["architecture"], float(d["params_m"]), float(d["accuracy"]), float(d["precision"]),
                          float(d["recall"]), float(d["f1"]))
            for d in csv.DictReader(io.StringIO(text))
        ]
        return cls(tuple(rows))


def compare(rows: Iterable[ComparisonRow]) -> ComparisonTable:
    """One row per architecture, best weighted F1 first; ties fall back to name order."""
    rows = list(rows)
    if not rows:
        raise NoRunsError("nothing to compare")
    return ComparisonTable(tuple(sorted(rows, key=lambda r: (-r.f1, r.architecture))))


def load_rows(run_dirs: Sequence[str | os.PathLike]) -> list[ComparisonRow]:
    """Collect ``summary.json`` rows from run directories or their parents."""
    found: list[Path] = []
    for d in map(Path, run_dirs):
        if (d / "summary.json").is_file():
            found.append(d / "summary.json")
        elif d.is_dir():
            found.extend(sorted(d.glob("*/summary.json")))
    if not found:
        raise NoRunsError(f"no completed runs under {', '.join(map(str, run_dirs))}")
    keys = {f.name for f in fields(ComparisonRow)}
    return [
        ComparisonRow(**{k: v for k, v in json.loads(p.read_text(encoding="utf-8")).items() if k in keys})
        for p in found
    ]
