import logging
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cassava_bench.dataset import DatasetManifest
from cassava_bench.errors import EmptyClassError, IndexOutOfRangeError, InvalidSpecError
from cassava_bench.splitter import (
    SplitAssignment,
    SplitSpec,
    largest_remainder,
    read_split,
    split_report,
    stratified_split,
    write_split,
)


def manifest_from_counts(counts, prefix="r"):
    labels = [c for c, n in enumerate(counts) for _ in range(n)]
    return DatasetManifest(tuple(f"{prefix}{i:05d}" for i in range(len(labels))), tuple(labels))


def sizes_by_class(assign, manifest):
    labels = manifest.label_array()
    return {name: np.bincount(labels[list(idx)], minlength=5) for name, idx in assign.items()}


@pytest.mark.parametrize(
    "total, expected",
    [(10, [7, 1, 2]), (5, [4, 0, 1]), (0, [0, 0, 0]), (1, [1, 0, 0]), (3, [2, 0, 1])],
)
def test_largest_remainder(total, expected):
    assert largest_remainder(total, (0.7, 0.1, 0.2)) == expected


def test_single_class_of_ten():
    m = manifest_from_counts((0, 0, 10, 0, 0))
    a = stratified_split(m, SplitSpec())
    assert (len(a.train), len(a.val), len(a.test)) == (7, 1, 2)


def test_class_of_five_tie_goes_to_train():
    m = manifest_from_counts((5, 0, 0, 0, 0))
    a = stratified_split(m, SplitSpec())
    assert (len(a.train), len(a.val), len(a.test)) == (4, 0, 1)


def test_empty_class_warns_or_raises(caplog):
    m = manifest_from_counts((10, 10, 0, 10, 10))
    with caplog.at_level(logging.WARNING):
        stratified_split(m, SplitSpec())
    assert "CGM" in caplog.text
    with pytest.raises(EmptyClassError):
        stratified_split(m, SplitSpec(), strict=True)


@pytest.mark.parametrize("fractions", [(0.5, 0.5), (0.7, 0.2, 0.2), (1.0, 0.0, 0.0), (0.8, -0.1, 0.3)])
def test_invalid_spec(fractions):
    with pytest.raises(InvalidSpecError):
        SplitSpec(fractions)


def test_balanced_report_is_symmetric():
    m = manifest_from_counts((50,) * 5)
    r = split_report(stratified_split(m, SplitSpec()), m)
    for name in ("train", "val", "test"):
        assert r.distributions[name].fractions == pytest.approx((0.2,) * 5)
    assert r.empty == ()


def test_adversarial_report_flags_empty_val():
    m = manifest_from_counts((1, 1, 1, 1, 96))
    r = split_report(stratified_split(m, SplitSpec()), m)
    flagged = {c for split, c in r.empty if split == "val"}
    assert flagged == {0, 1, 2, 3}
    assert "WARNING" in r.format(m.registry.codes)


def test_report_rejects_bad_indices():
    m = manifest_from_counts((2, 2, 2, 2, 2))
    with pytest.raises(IndexOutOfRangeError):
        split_report(SplitAssignment((0, 99), (), ()), m)


def test_reference_scale_test_fraction():
    counts = (1087, 2189, 2386, 13158, 2577)
    m = manifest_from_counts(counts)
    a = stratified_split(m, SplitSpec())
    test = sizes_by_class(a, m)["test"]
    for c, n in enumerate(counts):
        assert abs(test[c] - 0.2 * n) <= 1
    r = split_report(a, m)
    for name in ("train", "val", "test"):
        assert r.distributions[name].fractions[3] == pytest.approx(13158 / sum(counts), abs=2e-3)


def test_permutation_stability():
    m = manifest_from_counts((13, 7, 22, 40, 9))
    order = list(range(len(m)))
    random.Random(3).shuffle(order)
    shuffled = DatasetManifest(tuple(m.image_ids[i] for i in order), tuple(m.labels[i] for i in order))
    a, b = stratified_split(m, SplitSpec(seed=5)), stratified_split(shuffled, SplitSpec(seed=5))
    for name in ("train", "val", "test"):
        assert {m.image_ids[i] for i in a[name]} == {shuffled.image_ids[i] for i in b[name]}


def test_seed_changes_membership():
    m = manifest_from_counts((40,) * 5)
    a, b = stratified_split(m, SplitSpec(seed=0)), stratified_split(m, SplitSpec(seed=1))
    assert a.test != b.test


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(0, 60), min_size=5, max_size=5).filter(lambda c: sum(c) > 0), st.integers(0, 2**31))
def test_disjoint_covering_deterministic(counts, seed):
    m = manifest_from_counts(counts)
    spec = SplitSpec(seed=seed)
    a = stratified_split(m, spec)
    all_idx = a.train + a.val + a.test
    assert sorted(all_idx) == list(range(len(m)))
    assert a == stratified_split(m, spec)
    per = sizes_by_class(a, m)
    for c, n in enumerate(counts):
        for name, f in zip(("train", "val", "test"), spec.fractions):
            assert abs(per[name][c] - f * n) < 1


def test_write_read_round_trip(tmp_path):
    m = manifest_from_counts((6, 8, 10, 30, 9))
    a = stratified_split(m, SplitSpec(seed=2))
    write_split(a, m, tmp_path, "abc")
    assert read_split(tmp_path, m) == a
    lines = (tmp_path / "test.txt").read_text().split()
    assert lines == sorted(lines)
