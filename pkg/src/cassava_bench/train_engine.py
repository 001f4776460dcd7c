"""Training loop with early stopping, plateau LR reduction and best-checkpointing.

The three controllers are pure state machines over the validation loss so a
recorded loss sequence can be replayed outside of any training run.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import (
    DivergedLossError,
    EmptySplitError,
    InvalidConfigError,
    InvalidDistributionError,
    PersistFailureError,
)

log = logging.getLogger(__name__)

HISTORY_HEADER = ("epoch", "train_loss", "val_loss", "lr", "stopped_early")
CE_EPS = 1e-12


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 32
    initial_lr: float = 1e-3
    max_epochs: int = 50
    es_patience: int = 5
    plateau_patience: int = 2
    plateau_factor: float = 0.1
    min_delta: float = 0.0
    seed: int = 0
    freeze_backbone: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidConfigError("batch_size must be >= 1")
        if not 0 < self.plateau_factor < 1:
            raise InvalidConfigError("plateau_factor must lie in (0, 1)")
        if self.es_patience < 1 or self.plateau_patience < 1:
            raise InvalidConfigError("patiences must be >= 1")
        if self.max_epochs < 1:
            raise InvalidConfigError("max_epochs must be >= 1")
        if not self.initial_lr > 0:
            raise InvalidConfigError("initial_lr must be positive")
        if self.min_delta < 0:
            raise InvalidConfigError("min_delta must be >= 0")


# ---------------------------------------------------------------- controllers


@dataclass(frozen=True)
class EarlyStopperState:
    best_loss: float | None = None
    epochs_since_improve: int = 0


@dataclass(frozen=True)
class PlateauState:
    current_lr: float
    best_loss: float | None = None
    epochs_since_improve: int = 0
    reductions: int = 0


def _improved(best: float | None, loss: float, min_delta: float) -> bool:
    return best is None or loss < best - min_delta


def _check_finite(val_loss: float) -> None:
    if not math.isfinite(val_loss):
        raise DivergedLossError(f"validation loss is not finite: {val_loss}")


def early_stop_step(
    state: EarlyStopperState, val_loss: float, patience: int = 5, min_delta: float = 0.0
) -> tuple[EarlyStopperState, bool]:
    _check_finite(val_loss)
    if _improved(state.best_loss, val_loss, min_delta):
        return EarlyStopperState(val_loss, 0), False
    count = state.epochs_since_improve + 1
    return EarlyStopperState(state.best_loss, count), count >= patience


def plateau_step(
    state: PlateauState, val_loss: float, patience: int = 2, factor: float = 0.1, min_delta: float = 0.0
) -> PlateauState:
    """Cut the LR by ``factor`` after ``patience`` epochs without improvement.

    The counter restarts after each cut; the best loss is kept.
    """
    _check_finite(val_loss)
    if _improved(state.best_loss, val_loss, min_delta):
        return replace(state, best_loss=val_loss, epochs_since_improve=0)
    count = state.epochs_since_improve + 1
    if count >= patience:
        return replace(
            state,
            current_lr=state.current_lr * factor,
            epochs_since_improve=0,
            reductions=state.reductions + 1,
        )
    return replace(state, epochs_since_improve=count)


@dataclass(frozen=True)
class CheckpointRecord:
    best_epoch: int | None = None
    best_val_loss: float | None = None
    weights_path: Path | None = None


def atomic_save(obj, path: str | os.PathLike) -> Path:
    """torch.save to a temp file in the target directory, then rename."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
        try:
            with os.fdopen(fd, "wb") as fh:
                torch.save(obj, fh)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise PersistFailureError(f"could not write checkpoint {path}: {exc}") from exc
    return path


def checkpoint_update(
    record: CheckpointRecord,
    epoch: int,
    val_loss: float,
    weights,
    path: str | os.PathLike | None = None,
    metadata: dict | None = None,
) -> CheckpointRecord:
    """Persist ``weights`` and return a new record iff ``val_loss`` beats the best so far.

    ``weights`` may be a state dict or a zero-argument callable producing one,
    so callers only pay for the copy when it is needed.
    """
    _check_finite(val_loss)
    if record.best_val_loss is not None and not val_loss < record.best_val_loss:
        return record
    target = Path(path) if path is not None else record.weights_path
    if target is not None:
        state = weights() if callable(weights) else weights
        atomic_save(state, target)
        meta = {"epoch": epoch, "val_loss": val_loss, **(metadata or {})}
        meta_path = target.with_suffix(".json")
        try:
            meta_path.write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
        except OSError as exc:
            raise PersistFailureError(f"could not write {meta_path}: {exc}") from exc
    return CheckpointRecord(epoch, val_loss, target)


# ---------------------------------------------------------------- losses


def cross_entropy(probabilities: Sequence[float], true_label: int, eps: float = CE_EPS) -> float:
    """-log p[true_label] with p clamped to [eps, 1]."""
    p = np.asarray(probabilities, dtype=np.float64)
    if p.ndim != 1 or not 0 <= true_label < p.size:
        raise InvalidDistributionError(f"label {true_label} invalid for a length-{p.size} distribution")
    if (p < 0).any() or (p > 1).any() or abs(p.sum() - 1.0) > 1e-6:
        raise InvalidDistributionError(f"not a probability distribution (sum={p.sum()!r})")
    return float(-math.log(min(max(p[true_label], eps), 1.0)))


def batch_cross_entropy(probabilities, labels, eps: float = CE_EPS) -> float:
    """Mean of :func:`cross_entropy` over rows."""
    probs = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[0] != labels.size or probs.shape[0] == 0:
        raise InvalidDistributionError("need a non-empty (n, k) matrix with n labels")
    return float(np.mean([cross_entropy(row, int(y), eps) for row, y in zip(probs, labels)]))


def num_batches(n_samples: int, batch_size: int) -> int:
    if n_samples < 0 or batch_size < 1:
        raise ValueError("n_samples must be >= 0 and batch_size >= 1")
    return -(-n_samples // batch_size)


# ---------------------------------------------------------------- loop


class SampleSet(Protocol):
    """Indexable source of ``(chw float32 array, label)`` pairs."""

    def __len__(self) -> int: ...

    def __getitem__(self, i: int) -> tuple[np.ndarray, int]: ...


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    stopped_early: bool = False


@dataclass
class TrainingResult:
    model: torch.nn.Module
    history: list[EpochLog]
    checkpoint: CheckpointRecord
    plateau: PlateauState
    stopper: EarlyStopperState = field(default_factory=EarlyStopperState)

    @property
    def stopped_early(self) -> bool:
        return bool(self.history) and self.history[-1].stopped_early


def iter_batches(samples: SampleSet, order: Sequence[int], batch_size: int):
    """Yield stacked ``(x, y)`` tensors; the last partial batch is kept."""
    for start in range(0, len(order), batch_size):
        items = [samples[i] for i in order[start : start + batch_size]]
        x = torch.from_numpy(np.stack([a for a, _ in items]))
        y = torch.as_tensor([int(label) for _, label in items], dtype=torch.long)
        yield x, y


def set_epoch(samples: SampleSet, epoch: int) -> None:
    hook = getattr(samples, "set_epoch", None)
    if hook is not None:
        hook(epoch)


@torch.no_grad()
def evaluate(model: torch.nn.Module, samples: SampleSet, batch_size: int = 32):
    """Mean cross-entropy, true labels and argmax predictions over ``samples``."""
    if len(samples) == 0:
        raise EmptySplitError("cannot evaluate an empty split")
    model.eval()
    total, y_true, y_pred = 0.0, [], []
    for x, y in iter_batches(samples, range(len(samples)), batch_size):
        logits = model(x)
        total += float(F.cross_entropy(logits, y, reduction="sum"))
        y_true.extend(y.tolist())
        y_pred.extend(torch.argmax(logits, dim=1).tolist())
    return total / len(samples), np.asarray(y_true), np.asarray(y_pred)


def write_history(history: Sequence[EpochLog], path: str | os.PathLike) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_HEADER)
        for e in history:
            writer.writerow([e.epoch, repr(e.train_loss), repr(e.val_loss), repr(e.lr), int(e.stopped_early)])
    return path


def read_history(path: str | os.PathLike) -> list[EpochLog]:
    with open(path, encoding="utf-8", newline="") as fh:
        return [
            EpochLog(int(r["epoch"]), float(r["train_loss"]), float(r["val_loss"]), float(r["lr"]),
                     bool(int(r["stopped_early"])))
            for r in csv.DictReader(fh)
        ]


def run_training(
    model: torch.nn.Module,
    train_set: SampleSet,
    val_set: SampleSet,
    config: TrainingConfig,
    checkpoint_path: str | os.PathLike,
    history_path: str | os.PathLike | None = None,
    checkpoint_meta: dict | None = None,
    val_loss_hook: Callable[[int, float], float] | None = None,
) -> TrainingResult:
    """Fit ``model`` with Adam and return it restored to its best-validation weights.

    ``val_loss_hook(epoch, loss)`` may substitute the measured validation loss;
    it exists so controller behaviour can be driven from tests.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise EmptySplitError(f"train has {len(train_set)} samples, val has {len(val_set)}")
    torch.manual_seed(config.seed)
    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(params, lr=config.initial_lr)

    stopper = EarlyStopperState()
    plateau = PlateauState(config.initial_lr)
    record = CheckpointRecord(weights_path=Path(checkpoint_path))
    history: list[EpochLog] = []
    if history_path is not None:
        write_history(history, history_path)

    for epoch in range(1, config.max_epochs + 1):
        lr = plateau.current_lr
        for group in optimizer.param_groups:
            group["lr"] = lr
        set_epoch(train_set, epoch)
        order = np.random.default_rng([config.seed, epoch]).permutation(len(train_set))

        model.train()
        running, seen = 0.0, 0
        for x, y in iter_batches(train_set, order, config.batch_size):
            optimizer.zero_grad(set_to_none=True)
            loss = F.cross_entropy(model(x), y)
            if not torch.isfinite(loss):
                raise DivergedLossError(f"training loss diverged at epoch {epoch}")
            loss.backward()
            optimizer.step()
            running += loss.item() * y.numel()
            seen += y.numel()
        train_loss = running / seen

        val_loss, _, _ = evaluate(model, val_set, config.batch_size)
        if val_loss_hook is not None:
            val_loss = float(val_loss_hook(epoch, val_loss))
        _check_finite(val_loss)

        record = checkpoint_update(
            record, epoch, val_loss,
            lambda: {k: v.detach().clone() for k, v in model.state_dict().items()},
            metadata=checkpoint_meta,
        )
        plateau = plateau_step(plateau, val_loss, config.plateau_patience, config.plateau_factor, config.min_delta)
        stopper, stop = early_stop_step(stopper, val_loss, config.es_patience, config.min_delta)

        entry = EpochLog(epoch, train_loss, val_loss, lr, stop)
        history.append(entry)
        if history_path is not None:
            with open(history_path, "a", encoding="utf-8", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(
                    [epoch, repr(train_loss), repr(val_loss), repr(lr), int(stop)]
                )
        log.info(
            "epoch %d  train %.4f  val %.4f  lr %.1e%s",
            epoch, train_loss, val_loss, lr, "  (early stop)" if stop else "",
        )
        if stop:
            break

    state = torch.load(record.weights_path, map_location="cpu", weights_only=True)
    model.load_state_dict(state)
    model.eval()
    return TrainingResult(model, history, record, plateau, stopper)


def training_config_dict(config: TrainingConfig) -> dict:
    return asdict(config)
