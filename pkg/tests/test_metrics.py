from __future__ import annotations

import csv
import io
import json
import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import pairwise_auc
from sqlconf.metrics import (
    EmptyInput, LabeledScore, Undefined, auc_roc, auc_trapezoid, bin_index, calibration_bins,
    calibration_report, ece, ece_from_bins, heaviness_bin, length_bin, report_rows,
    report_to_json, reports_to_csv, stratify,
)


def L(score, correct, **strata):
    return LabeledScore(score, correct, strata)


def test_ece_single_item():
    assert ece([L(0.9, True)]) == pytest.approx(0.1, abs=1e-15)


def test_ece_three_separate_bins():
    assert ece([L(0.3, False), L(0.8, False), L(0.9, True)]) == pytest.approx(0.4, abs=1e-15)


def test_ece_perfectly_calibrated():
    scores = [L(0.5, True), L(0.5, False), L(0.5, True), L(0.5, False), L(1.0, True), L(1.0, True)]
    assert ece(scores) == 0.0


def test_ece_empty_raises():
    with pytest.raises(EmptyInput):
        ece([])


def test_bin_edges_go_to_lower_bin():
    assert bin_index(0.0, 10) == 1
    assert bin_index(0.1, 10) == 1
    assert bin_index(0.1000001, 10) == 2
    assert bin_index(0.3, 10) == 3
    assert bin_index(1.0, 10) == 10
    assert bin_index(0.7, 10) == 7


def test_bins_sum_to_n_and_ece_recomputes():
    rng = random.Random(3)
    scores = [L(rng.random(), rng.random() < 0.5) for _ in range(97)]
    report = calibration_report(scores, 7)
    assert sum(b.count for b in report.bins) == report.n == 97
    assert ece_from_bins(report.bins) == report.ece


def test_auc_examples():
    assert auc_roc([L(0.9, True), L(0.1, False)]) == 1.0
    assert auc_roc([L(0.9, True), L(0.7, False), L(0.7, True), L(0.2, False)]) == 0.875
    assert auc_roc([L(0.4, True), L(0.4, False), L(0.4, False)]) == 0.5


def test_auc_single_class_undefined():
    with pytest.raises(Undefined):
        auc_roc([L(0.2, True), L(0.9, True)])
    with pytest.raises(Undefined):
        auc_trapezoid([L(0.2, False)])


def test_auc_matches_trapezoid_and_pairwise():
    rng = random.Random(11)
    for _ in range(200):
        n = rng.randint(2, 50)
        scores = [L(round(rng.random(), rng.choice([1, 2, 6])), rng.random() < 0.5) for _ in range(n)]
        if len({s.correct for s in scores}) < 2:
            continue
        assert abs(auc_roc(scores) - auc_trapezoid(scores)) <= 1e-12
        assert abs(auc_roc(scores) - pairwise_auc(scores)) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=2, max_size=30))
def test_auc_invariant_under_monotone_transform(pairs):
    scores = [L(s, c) for s, c in pairs]
    if len({c for _, c in pairs}) < 2:
        return
    squashed = [L(s.score ** 3, s.correct) for s in scores]
    # cubing can collapse distinct tiny floats to equal values; only compare when order is kept
    if len({s.score for s in scores}) == len({s.score for s in squashed}):
        assert auc_roc(squashed) == pytest.approx(auc_roc(scores), abs=1e-12)


def test_ece_flip_symmetry_even_bins():
    rng = random.Random(5)
    for _ in range(50):
        # scores on a 1/1000 grid offset from bin edges, so 1 - s is exact enough to keep bins mirrored
        scores = [L((rng.randrange(1000) + 0.5) / 1000, rng.random() < 0.5) for _ in range(40)]
        flipped = [L(1 - s.score, not s.correct) for s in scores]
        assert ece(flipped, 10) == pytest.approx(ece(scores, 10), abs=1e-12)


def test_ece_matches_exact_rational_computation():
    rng = random.Random(8)
    scores = [L(rng.random(), rng.random() < 0.3) for _ in range(60)]
    groups: dict[int, list] = {}
    for s in scores:
        i = max(1, math.ceil(Fraction(repr(s.score)) * 10))
        groups.setdefault(i, []).append(s)
    exact = sum(Fraction(len(g), len(scores)) * abs(sum(Fraction(s.score) for s in g) / len(g)
                                                     - Fraction(sum(s.correct for s in g), len(g)))
                for g in groups.values())
    assert ece(scores) == pytest.approx(float(exact), abs=1e-15)


def test_length_and_heaviness_bins():
    assert [length_bin(n) for n in (0, 15, 16, 25, 26, 80)] == ["Short", "Short", "Medium", "Medium", "Long", "Long"]
    assert [heaviness_bin(n) for n in (0, 5, 6, 9, 10, 30)] == ["Low", "Low", "Moderate", "Moderate", "High", "High"]


def test_stratify_counts_lexemes_and_links():
    # SELECT name FROM singer WHERE age > 30 : 8 significant lexemes; links: singer, name, age, 30
    s = stratify("SELECT name FROM singer WHERE age > 30", "simple")
    assert s == {"difficulty": "simple", "length_bin": "Short", "heaviness_bin": "Low"}
    assert stratify("SELECT 1")["difficulty"] == "unknown"


def test_stratify_ignores_comments_and_whitespace():
    a = stratify("SELECT a FROM t")
    b = stratify("SELECT   a -- note\n /* more */ FROM\tt")
    assert a == b


def test_report_rows_and_csv_columns():
    scores = [L(0.9, True, difficulty="simple"), L(0.2, False, difficulty="simple"),
              L(0.6, True, difficulty="hard")]
    report = calibration_report(scores, 10, axes=["difficulty"])
    rows = report_rows("SAC", "Average", report)
    text = reports_to_csv(rows)
    parsed = list(csv.DictReader(io.StringIO(text)))
    assert text.splitlines()[0] == "method,aggregation,stratum,n,auc,ece"
    assert [r["stratum"] for r in parsed] == ["all", "difficulty=hard", "difficulty=simple"]
    assert parsed[1]["auc"] == ""  # single-class stratum
    assert report.per_stratum["difficulty=simple"]["n"] == 2


def test_report_json_has_header_and_bins():
    report = calibration_report([L(0.9, True), L(0.1, False)], 4)
    data = json.loads(report_to_json(report, {"seed": 3}))
    assert data["seed"] == 3 and data["auc"] == 1.0 and len(data["bins"]) == 4


def test_labeled_score_range():
    with pytest.raises(ValueError):
        L(1.5, True)


def test_calibration_bins_rejects_zero_bins():
    with pytest.raises(ValueError):
        calibration_bins([L(0.5, True)], 0)
