"""Scoring with relation-classification conventions.

Micro-F1 over all classes equals accuracy for single-label data.  When a
designated negative ("no relation") class is excluded, micro precision is
correct-positive-predictions / all-positive-predictions and micro recall is
correct-positive-predictions / all-positive-golds, the usual convention for
datasets with a negative class.  Macro-F1 averages per-class F1, scoring
absent classes (zero gold, zero predicted) as 0 rather than skipping them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .data_model import LabelVocab
from .errors import ValidationError


@dataclass(frozen=True)
class ClassScore:
    label_id: int
    name: str
    precision: float
    recall: float
    f1: float
    gold_count: int
    predicted_count: int
    train_count: int | None = None


@dataclass(frozen=True)
class EvalReport:
    confusion: np.ndarray  # (C, C) int64, gold x predicted
    micro_precision: float
    micro_recall: float
    micro_f1: float
    macro_f1: float
    per_class: tuple[ClassScore, ...]
    excluded_negative: bool
    absent_classes: int
    total: int
    vocab: LabelVocab

    def __post_init__(self) -> None:
        self.confusion.setflags(write=False)


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def micro_scores_from_confusion(
    confusion: np.ndarray, negative_label: int | None, exclude_negative: bool
) -> tuple[float, float, float]:
    """(precision, recall, f1) under the configured negative-class handling."""
    total = int(confusion.sum())
    if not exclude_negative:
        correct = int(np.trace(confusion))
        acc = correct / total if total else 0.0
        return acc, acc, _f1(acc, acc) if total else 0.0
    n = negative_label
    positive = [c for c in range(confusion.shape[0]) if c != n]
    correct_pos = int(confusion[positive, positive].sum())
    predicted_pos = int(confusion[:, positive].sum())
    gold_pos = int(confusion[positive, :].sum())
    precision = correct_pos / predicted_pos if predicted_pos else 1.0
    recall = correct_pos / gold_pos if gold_pos else 0.0
    return precision, recall, _f1(precision, recall)


def confusion_from_arrays(
    gold: np.ndarray, predicted: np.ndarray, num_labels: int
) -> np.ndarray:
    flat = gold * num_labels + predicted
    counts = np.bincount(flat, minlength=num_labels * num_labels)
    return counts.reshape(num_labels, num_labels)


def micro_f1_from_arrays(
    gold: np.ndarray,
    predicted: np.ndarray,
    num_labels: int,
    negative_label: int | None = None,
    exclude_negative: bool = False,
) -> float:
    """Fast micro-F1 used by tuning sweeps; matches `evaluate` exactly."""
    confusion = confusion_from_arrays(gold, predicted, num_labels)
    return micro_scores_from_confusion(confusion, negative_label, exclude_negative)[2]


def evaluate(
    gold: Mapping[str, int],
    predicted: Mapping[str, int],
    vocab: LabelVocab,
    exclude_negative: bool = False,
    train_counts: Mapping[int, int] | None = None,
) -> EvalReport:
    """Score predictions against gold labels over identical record sets."""
    if set(gold) != set(predicted):
        missing = sorted(set(gold) - set(predicted))[:5]
        extra = sorted(set(predicted) - set(gold))[:5]
        raise ValidationError(
            f"gold/predicted record sets differ (missing: {missing}, extra: {extra})"
        )
    if exclude_negative and vocab.negative_label is None:
        raise ValidationError(
            "exclude_negative requested but the vocabulary has no negative label"
        )
    num_labels = len(vocab)
    ids = list(gold)
    gold_arr = np.fromiter((gold[r] for r in ids), dtype=np.int64, count=len(ids))
    pred_arr = np.fromiter((predicted[r] for r in ids), dtype=np.int64, count=len(ids))
    for arr, which in ((gold_arr, "gold"), (pred_arr, "predicted")):
        if len(arr) and (arr.min() < 0 or arr.max() >= num_labels):
            raise ValidationError(f"{which} label id outside vocabulary range")
    confusion = confusion_from_arrays(gold_arr, pred_arr, num_labels)

    per_class = []
    f1_pool = []
    absent = 0
    for c in range(num_labels):
        tp = int(confusion[c, c])
        gold_c = int(confusion[c, :].sum())
        pred_c = int(confusion[:, c].sum())
        precision = tp / pred_c if pred_c else 0.0
        recall = tp / gold_c if gold_c else 0.0
        f1 = _f1(precision, recall)
        per_class.append(
            ClassScore(
                label_id=c,
                name=vocab.name_of(c),
                precision=precision,
                recall=recall,
                f1=f1,
                gold_count=gold_c,
                predicted_count=pred_c,
                train_count=None if train_counts is None else int(train_counts.get(c, 0)),
            )
        )
        if exclude_negative and c == vocab.negative_label:
            continue
        f1_pool.append(f1)
        if gold_c == 0 and pred_c == 0:
            absent += 1
    micro_p, micro_r, micro = micro_scores_from_confusion(
        confusion, vocab.negative_label, exclude_negative
    )
    return EvalReport(
        confusion=confusion,
        micro_precision=micro_p,
        micro_recall=micro_r,
        micro_f1=micro,
        macro_f1=float(np.mean(f1_pool)) if f1_pool else 0.0,
        per_class=tuple(per_class),
        excluded_negative=exclude_negative,
        absent_classes=absent,
        total=len(ids),
        vocab=vocab,
    )


@dataclass(frozen=True)
class LongtailRow:
    label_id: int
    name: str
    train_count: int
    gold_count: int
    baseline_f1: float
    system_f1: float
    delta: float


def longtail_report(
    report: EvalReport,
    baseline: EvalReport,
    train_counts: Mapping[int, int],
    threshold: int,
) -> tuple[LongtailRow, ...]:
    """Per-class comparison over classes with few training examples.

    Rows cover classes whose train count is <= threshold, sorted by
    descending train count (ties by label id).
    """
    if report.confusion.shape != baseline.confusion.shape:
        raise ValidationError("reports cover different vocabularies")
    if report.total != baseline.total:
        raise ValidationError(
            f"reports cover different test sets ({report.total} vs {baseline.total})"
        )
    missing = [c for c in range(len(report.vocab)) if c not in train_counts]
    if missing:
        names = [report.vocab.name_of(c) for c in missing[:5]]
        raise ValidationError(f"missing train counts for classes: {names}")
    rows = []
    for score, base_score in zip(report.per_class, baseline.per_class):
        count = int(train_counts[score.label_id])
        if count > threshold:
            continue
        rows.append(
            LongtailRow(
                label_id=score.label_id,
                name=score.name,
                train_count=count,
                gold_count=score.gold_count,
                baseline_f1=base_score.f1,
                system_f1=score.f1,
                delta=score.f1 - base_score.f1,
            )
        )
    rows.sort(key=lambda r: (-r.train_count, r.label_id))
    return tuple(rows)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def report_to_dict(report: EvalReport) -> dict:
    return {
        "total": report.total,
        "micro_precision": report.micro_precision,
        "micro_recall": report.micro_recall,
        "micro_f1": report.micro_f1,
        "macro_f1": report.macro_f1,
        "excluded_negative": report.excluded_negative,
        "absent_classes": report.absent_classes,
        "confusion": report.confusion.tolist(),
        "per_class": [
            {
                "label_id": s.label_id,
                "name": s.name,
                "precision": s.precision,
                "recall": s.recall,
                "f1": s.f1,
                "gold_count": s.gold_count,
                "predicted_count": s.predicted_count,
                "train_count": s.train_count,
            }
            for s in report.per_class
        ],
    }


def report_to_json(report: EvalReport) -> str:
    return json.dumps(report_to_dict(report), indent=2) + "\n"


def format_report(report: EvalReport) -> str:
    lines = [
        f"examples        {report.total}",
        f"micro precision {report.micro_precision:.4f}",
        f"micro recall    {report.micro_recall:.4f}",
        f"micro F1        {report.micro_f1:.4f}",
        f"macro F1        {report.macro_f1:.4f}",
        f"negative class  {'excluded' if report.excluded_negative else 'included'}",
        f"absent classes  {report.absent_classes}",
        "",
        f"{'label':<24} {'prec':>7} {'recall':>7} {'f1':>7} {'gold':>6} {'pred':>6}",
    ]
    for s in report.per_class:
        lines.append(
            f"{s.name:<24} {s.precision:>7.4f} {s.recall:>7.4f} {s.f1:>7.4f} "
            f"{s.gold_count:>6d} {s.predicted_count:>6d}"
        )
    return "\n".join(lines) + "\n"


def format_longtail(rows: tuple[LongtailRow, ...]) -> str:
    lines = [
        f"{'label':<24} {'train':>6} {'test':>6} {'baseline':>9} {'system':>8} {'delta':>8}"
    ]
    for r in rows:
        lines.append(
            f"{r.name:<24} {r.train_count:>6d} {r.gold_count:>6d} "
            f"{r.baseline_f1:>9.4f} {r.system_f1:>8.4f} {r.delta:>+8.4f}"
        )
    return "\n".join(lines) + "\n"
