"""Acceptance suite: one PASS/FAIL line per criterion.

Lines are printed as each check runs (visible with ``-s``) and repeated in the
terminal summary of every pytest run.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest
import torch

from cassava_bench.dataset import DatasetManifest, load_manifest
from cassava_bench.experiment import ExperimentConfig, run
from cassava_bench.metrics import PerClassMetrics, aggregate, confusion_matrix, per_class_metrics
from cassava_bench.model_zoo import adapt_head, load_pretrained, registry
from cassava_bench.preprocess import AugmentationConfig, build_pipeline
from cassava_bench.splitter import SplitSpec, stratified_split
from cassava_bench.synthetic import DEFAULT_CLASS_FRACTIONS, SyntheticDatasetSpec, generate_synthetic
from cassava_bench.train_engine import (
    CheckpointRecord,
    EarlyStopperState,
    PlateauState,
    checkpoint_update,
    cross_entropy,
    early_stop_step,
    plateau_step,
)
from reference import CMD, TABLE1, TABLE2_ROWS, TABLE2_SUPPORTS, majority_labels

RESULTS: list[str] = []


def verdict(number: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  criterion {number}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def test_criterion_1_table_aggregate():
    t0 = time.perf_counter()
    rows = [PerClassMetrics(c, p, r, f, n) for c, (p, r, f, n) in enumerate(TABLE2_ROWS)]
    agg = aggregate(rows, "weighted")
    elapsed = time.perf_counter() - t0
    _, p, r, f = TABLE1["EfficientNet-B3"][1:]
    diffs = (abs(agg.precision - p), abs(agg.recall - r), abs(agg.f1 - f))
    ok = max(diffs) <= 0.0015 and elapsed < 1.0
    verdict(1, ok, f"weighted P/R/F1 = {agg.precision:.5f}/{agg.recall:.5f}/{agg.f1:.5f} "
                   f"vs {p}/{r}/{f} (max |diff| {max(diffs):.5f} <= 0.0015), {elapsed * 1e3:.1f} ms")


def test_criterion_2_majority_predictor():
    t0 = time.perf_counter()
    y_true, y_pred = majority_labels()
    agg = aggregate(per_class_metrics(confusion_matrix(y_true, y_pred)), "weighted")
    elapsed = time.perf_counter() - t0
    acc, p, r, f = TABLE1["VGG16"][1:]
    got = (agg.accuracy, agg.precision, agg.recall, agg.f1)
    diffs = [abs(g - e) for g, e in zip(got, (acc, p, r, f))]
    share = Fraction(TABLE2_SUPPORTS[CMD], sum(TABLE2_SUPPORTS))
    ok = max(diffs) <= 0.001 and Fraction(agg.accuracy) == Fraction(float(share)) and elapsed < 1.0
    verdict(2, ok, "acc/P/R/F1 = " + "/".join(f"{g:.4f}" for g in got)
            + f" vs {acc}/{p}/{r}/{f} (max |diff| {max(diffs):.4f} <= 0.001); "
              f"accuracy equals majority share {float(share):.4f}; {elapsed * 1e3:.1f} ms")


def _brute(y_true, y_pred):
    out = []
    for c in range(5):
        tp = sum(1 for t, q in zip(y_true, y_pred) if t == c and q == c)
        fp = sum(1 for t, q in zip(y_true, y_pred) if t != c and q == c)
        fn = sum(1 for t, q in zip(y_true, y_pred) if t == c and q != c)
        prec = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
        rec = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
        f = 2 * prec * rec / (prec + rec) if prec + rec else Fraction(0)
        out.append((prec, rec, f))
    return out


def test_criterion_3_metric_equivalence():
    rng = np.random.default_rng(2024)
    mismatches = identity_breaks = 0
    for _ in range(1000):
        n = int(rng.integers(1, 201))
        y_true = rng.integers(0, 5, n).tolist()
        y_pred = rng.integers(0, 5, n).tolist()
        rows = per_class_metrics(confusion_matrix(y_true, y_pred))
        if [m.exact() for m in rows] != _brute(y_true, y_pred):
            mismatches += 1
        agg = aggregate(rows)
        accuracy = sum(t == q for t, q in zip(y_true, y_pred)) / n
        if not (agg.weighted_recall == agg.overall_accuracy == accuracy):
            identity_breaks += 1
    verdict(3, mismatches == 0 and identity_breaks == 0,
            f"1000 random pairs: {mismatches} metric mismatches vs per-sample oracle, "
            f"{identity_breaks} weighted-recall != accuracy")


def test_criterion_4_stratification():
    rng = np.random.default_rng(7)
    spec_fracs = (0.7, 0.1, 0.2)
    worst, failures = 0.0, 0
    for k in range(500):
        counts = rng.integers(0, 80, 5)
        if counts.sum() == 0:
            counts[3] = 1
        labels = np.repeat(np.arange(5), counts)
        rng.shuffle(labels)
        ids = tuple(f"m{k}_{i:04d}" for i in range(labels.size))
        manifest = DatasetManifest(ids, tuple(int(v) for v in labels))
        spec = SplitSpec(spec_fracs, seed=int(rng.integers(0, 2**31)))
        a = stratified_split(manifest, spec)
        everything = sorted(a.train + a.val + a.test)
        covering = everything == list(range(labels.size))
        deterministic = a == stratified_split(manifest, spec)
        for name, f in zip(("train", "val", "test"), spec_fracs):
            per = np.bincount(labels[list(a[name])], minlength=5)
            worst = max(worst, float(np.max(np.abs(per - f * counts))))
        if not (covering and deterministic):
            failures += 1
    verdict(4, failures == 0 and worst <= 1.0,
            f"500 manifests: max per-class deviation {worst:.3f} samples (<= 1); "
            f"{failures} disjointness/coverage/determinism failures")


def test_criterion_5_controllers():
    t0 = time.perf_counter()
    es, stop_epoch = EarlyStopperState(), None
    for epoch, loss in enumerate([1.00, 0.90, 0.95, 0.96, 0.97, 0.98, 0.99], start=1):
        es, stop = early_stop_step(es, loss, 5)
        if stop and stop_epoch is None:
            stop_epoch = epoch
    pl, lrs = PlateauState(1e-3), []
    for loss in (0.50, 0.60, 0.70):
        pl = plateau_step(pl, loss, 2, 0.1)
        lrs.append(pl.current_lr)
    rec = CheckpointRecord()
    for epoch, loss in enumerate([0.9, 0.7, 0.8], start=1):
        rec = checkpoint_update(rec, epoch, loss, {})
    traces_ok = stop_epoch == 7 and lrs == [1e-3, 1e-3, 1e-3 * 0.1] and rec.best_epoch == 2

    rng = np.random.default_rng(5)
    violations = 0
    for _ in range(10_000):
        n = int(rng.integers(1, 60))
        losses = rng.random(n) * rng.choice([0.1, 1.0, 10.0])
        es, pl = EarlyStopperState(), PlateauState(1e-3)
        for loss in losses:
            pl = plateau_step(pl, float(loss), 2, 0.1)
            es, stop = early_stop_step(es, float(loss), 5)
            expected = 1e-3
            for _ in range(pl.reductions):
                expected *= 0.1
            if (pl.current_lr != expected or not 0 <= pl.epochs_since_improve < 2
                    or not 0 <= es.epochs_since_improve or stop != (es.epochs_since_improve >= 5)):
                violations += 1
    elapsed = time.perf_counter() - t0
    verdict(5, traces_ok and violations == 0 and elapsed < 10.0,
            f"early stop at epoch {stop_epoch}, LR trace {lrs}, checkpoint epoch {rec.best_epoch}; "
            f"10000 random sequences with {violations} violations; {elapsed:.2f} s (< 10 s)")


@pytest.mark.slow
def test_criterion_6_head_adaptation():
    worst_sum, shapes_ok, sizes = 0.0, True, {}
    for spec in registry():
        model = adapt_head(load_pretrained(spec, pretrained=False, seed=0), 5, seed=0)
        size = spec.input_size
        sizes[spec.name] = size
        gen = torch.Generator().manual_seed(0)
        for _ in range(10):
            probs = model.probabilities(torch.randn(10, 3, size, size, generator=gen)).double()
            shapes_ok &= probs.shape == (10, 5) and bool((probs >= 0).all() and (probs <= 1).all())
            worst_sum = max(worst_sum, float((probs.sum(dim=1) - 1).abs().max()))
        del model
    ce = abs(cross_entropy([0.2] * 5, 0) - math.log(5))
    ok = shapes_ok and worst_sum <= 1e-6 and ce <= 1e-9 and sorted(sizes.values()) == [224, 224, 299, 300]
    verdict(6, ok, f"4 architectures x 100 inputs at {sizes}: max |row sum - 1| = {worst_sum:.2e} (<= 1e-6); "
                   f"|CE(uniform) - ln 5| = {ce:.1e} (<= 1e-9)")


@pytest.mark.slow
def test_criterion_7_desk_end_to_end(tmp_path):
    t0 = time.perf_counter()
    spec = SyntheticDatasetSpec(500, 64, DEFAULT_CLASS_FRACTIONS, 0.8, 0)
    generate_synthetic(spec, tmp_path / "synth")
    cfg = ExperimentConfig(
        manifest=str(tmp_path / "synth/manifest.csv"), out=str(tmp_path / "runs"),
        architectures=("TinyCNN",), pretrained=False, plots=False,
    )
    art = run(cfg, "TinyCNN")
    elapsed = time.perf_counter() - t0
    f1 = art.report.summary.weighted_f1
    epochs = len(art.history)
    stopped = art.history[-1].stopped_early
    n_images = len(load_manifest(cfg.manifest))
    ok = f1 >= 0.90 and stopped and epochs < 50 and elapsed < 15 * 60
    verdict(7, ok, f"{n_images} synthetic 64x64 images, TinyCNN: test weighted F1 {f1:.3f} (>= 0.90), "
                   f"early stop at epoch {epochs} (< 50), {elapsed:.0f} s (< 900 s)")


def test_criterion_8_augmentation_scoping():
    rng = np.random.default_rng(11)
    identity = AugmentationConfig.identity()
    eval_ok = collapse_ok = True
    for i in range(100):
        arch = ("EfficientNet-B3", "InceptionV3", "ResNet50", "VGG16")[i % 4]
        h, w = (int(v) for v in rng.integers(32, 320, 2))
        raw = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
        for kind in ("val", "test"):
            p = build_pipeline(arch, kind)
            eval_ok &= np.array_equal(p(raw), p(raw))
        train = build_pipeline(arch, "train", identity)
        val = build_pipeline(arch, "val", identity)
        collapse_ok &= np.array_equal(train(raw, np.random.default_rng(i)), val(raw))
    verdict(8, eval_ok and collapse_ok,
            f"val/test pipelines bitwise deterministic: {eval_ok}; "
            f"identity-config train == val on 100 random images: {collapse_ok}")
