"""Calibration metrics: ECE, AUC-ROC, and stratified breakdowns."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from sqlconf.lexer import TRIVIA, lex_sql
from sqlconf.schema_link import extract_from_lexemes

DEFAULT_BINS = 10

LENGTH_BINS = (("Short", 0, 15), ("Medium", 16, 25), ("Long", 26, None))
HEAVINESS_BINS = (("Low", 0, 5), ("Moderate", 6, 9), ("High", 10, None))
STRATA_AXES = ("difficulty", "length_bin", "heaviness_bin")
REPORT_CSV_COLUMNS = ("method", "aggregation", "stratum", "n", "auc", "ece")


class EmptyInput(ValueError):
    pass


class Undefined(ValueError):
    """AUC is undefined when only one class is present."""


@dataclass(frozen=True)
class LabeledScore:
    score: float
    correct: bool
    strata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score out of [0, 1]: {self.score!r}")


@dataclass(frozen=True)
class CalibrationBin:
    lower: float
    upper: float
    count: int
    mean_confidence: float
    accuracy: float


@dataclass
class CalibrationReport:
    ece: float
    auc: float | None
    n: int
    bins: list[CalibrationBin]
    per_stratum: dict[str, dict[str, float | int | None]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "ece": self.ece,
            "auc": self.auc,
            "n": self.n,
            "bins": [asdict(b) for b in self.bins],
            "per_stratum": self.per_stratum,
        }


def bin_index(score: float, num_bins: int) -> int:
    """1-based bin of ``score`` with bins ((i-1)/B, i/B]; 0 goes to bin 1.

    The score is read as its shortest decimal form (``repr``) and binned with
    exact rationals, so a score written as 0.1 sits on the 1/10 edge and
    lands in the lower bin.
    """
    i = math.ceil(Fraction(repr(float(score))) * num_bins)
    return min(max(i, 1), num_bins)


def calibration_bins(scores: Sequence[LabeledScore], num_bins: int = DEFAULT_BINS) -> list[CalibrationBin]:
    if num_bins < 1:
        raise ValueError("num_bins must be >= 1")
    buckets: list[list[LabeledScore]] = [[] for _ in range(num_bins)]
    for s in scores:
        buckets[bin_index(s.score, num_bins) - 1].append(s)
    out = []
    for i, bucket in enumerate(buckets):
        count = len(bucket)
        mean_conf = math.fsum(s.score for s in bucket) / count if count else 0.0
        acc = sum(s.correct for s in bucket) / count if count else 0.0
        out.append(CalibrationBin(i / num_bins, (i + 1) / num_bins, count, mean_conf, acc))
    return out


def ece_from_bins(bins: Sequence[CalibrationBin]) -> float:
    n = sum(b.count for b in bins)
    if n == 0:
        raise EmptyInput("no scores")
    return math.fsum(b.count / n * abs(b.mean_confidence - b.accuracy) for b in bins if b.count)


def ece(scores: Sequence[LabeledScore], num_bins: int = DEFAULT_BINS) -> float:
    """Expected calibration error over equal-width bins."""
    if not scores:
        raise EmptyInput("ECE of an empty score list")
    return ece_from_bins(calibration_bins(scores, num_bins))


def auc_roc(scores: Sequence[LabeledScore]) -> float:
    """Mann-Whitney AUC: P(score of a correct query > score of an incorrect one).

    Ties count one half.  Computed from mid-ranks in O(n log n).
    """
    n_pos = sum(1 for s in scores if s.correct)
    n_neg = len(scores) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise Undefined("AUC needs both correct and incorrect examples")
    order = sorted(range(len(scores)), key=lambda i: scores[i].score)
    rank_sum = Fraction(0)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and scores[order[j + 1]].score == scores[order[i]].score:
            j += 1
        mid_rank = Fraction(i + j + 2, 2)
        rank_sum += mid_rank * sum(1 for k in range(i, j + 1) if scores[order[k]].correct)
        i = j + 1
    u = rank_sum - Fraction(n_pos * (n_pos + 1), 2)
    return float(u / (n_pos * n_neg))


def roc_curve(scores: Sequence[LabeledScore]) -> list[tuple[float, float]]:
    """(false positive rate, true positive rate) points sweeping the threshold downwards."""
    n_pos = sum(1 for s in scores if s.correct)
    n_neg = len(scores) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise Undefined("ROC needs both classes")
    points = [(0.0, 0.0)]
    tp = fp = 0
    ordered = sorted(scores, key=lambda s: -s.score)
    i = 0
    while i < len(ordered):
        threshold = ordered[i].score
        while i < len(ordered) and ordered[i].score == threshold:
            if ordered[i].correct:
                tp += 1
            else:
                fp += 1
            i += 1
        points.append((fp / n_neg, tp / n_pos))
    return points


def auc_trapezoid(scores: Sequence[LabeledScore]) -> float:
    pts = roc_curve(scores)
    return math.fsum((x1 - x0) * (y0 + y1) / 2 for (x0, y0), (x1, y1) in zip(pts, pts[1:]))


def _bin_label(value: int, bins) -> str:
    for name, lo, hi in bins:
        if value >= lo and (hi is None or value <= hi):
            return name
    return bins[-1][0]


def length_bin(length: int) -> str:
    return _bin_label(length, LENGTH_BINS)


def heaviness_bin(heaviness: int) -> str:
    return _bin_label(heaviness, HEAVINESS_BINS)


def stratify(sql: str, difficulty: str | None = None) -> dict[str, str]:
    """Difficulty, query-length and schema-heaviness strata of one query.

    Length counts non-whitespace, non-comment lexemes; heaviness counts
    schema links (tables + columns + values).
    """
    lexemes = lex_sql(sql)
    length = sum(1 for lx in lexemes if lx.kind not in TRIVIA)
    heavy = extract_from_lexemes(lexemes).heaviness
    return {
        "difficulty": difficulty or "unknown",
        "length_bin": length_bin(length),
        "heaviness_bin": heaviness_bin(heavy),
    }


def _safe_auc(scores: Sequence[LabeledScore]) -> float | None:
    try:
        return auc_roc(scores)
    except Undefined:
        return None


def calibration_report(scores: Sequence[LabeledScore], num_bins: int = DEFAULT_BINS,
                       axes: Iterable[str] = STRATA_AXES) -> CalibrationReport:
    if not scores:
        raise EmptyInput("no scores to report")
    bins = calibration_bins(scores, num_bins)
    report = CalibrationReport(
        ece=ece_from_bins(bins), auc=_safe_auc(scores), n=len(scores), bins=bins
    )
    for axis in axes:
        groups: dict[str, list[LabeledScore]] = {}
        for s in scores:
            if axis in s.strata:
                groups.setdefault(s.strata[axis], []).append(s)
        for value in sorted(groups):
            group = groups[value]
            report.per_stratum[f"{axis}={value}"] = {
                "ece": ece(group, num_bins),
                "auc": _safe_auc(group),
                "n": len(group),
            }
    return report


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def report_rows(method: str, aggregation: str, report: CalibrationReport) -> list[dict[str, str]]:
    rows = [{"method": method, "aggregation": aggregation, "stratum": "all",
             "n": str(report.n), "auc": _fmt(report.auc), "ece": _fmt(report.ece)}]
    for stratum, vals in report.per_stratum.items():
        rows.append({"method": method, "aggregation": aggregation, "stratum": stratum,
                     "n": str(vals["n"]), "auc": _fmt(vals["auc"]), "ece": _fmt(vals["ece"])})
    return rows


def reports_to_csv(rows: Iterable[Mapping[str, str]]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=REPORT_CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row[k] for k in REPORT_CSV_COLUMNS})
    return buf.getvalue()


def report_to_json(report: CalibrationReport, header: Mapping | None = None) -> str:
    payload = dict(header or {})
    payload.update(report.to_dict())
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
