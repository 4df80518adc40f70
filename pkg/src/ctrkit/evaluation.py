"""Evaluation of predicted vs annotated CTR values.

Classification metrics use the fixed 0.5 cutoff on both sides; detection
failures are counted separately and excluded from the confusion table
(treating them as negatives would corrupt specificity). Ratios stay full
precision internally and are rounded to 4 decimals only when a report is
written out.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass

import numpy as np

from .core import CtrError, binary_label


class EmptyEvaluation(CtrError):
    """No pairs to evaluate."""


class NoSuccessfulPairs(CtrError):
    """Every prediction failed; regression metrics are undefined."""


@dataclass(frozen=True)
class EvalPair:
    """One image: annotated CTR and predicted CTR (None = failed detection)."""

    image_id: str
    annotated_ctr: float
    predicted_ctr: float | None


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int
    failures: int = 0


@dataclass(frozen=True)
class EvalReport:
    counts: ConfusionCounts
    sensitivity: float | None
    specificity: float | None
    f1: float | None
    mae: float | None
    rmse: float | None
    pairs: tuple[EvalPair, ...]


def confusion(pairs) -> ConfusionCounts:
    """Confusion counts with cardiomegaly (CTR > 0.5) as the positive class."""
    pairs = list(pairs)
    if not pairs:
        raise EmptyEvaluation("no pairs to evaluate")
    tp = fp = tn = fn = failures = 0
    for p in pairs:
        if p.predicted_ctr is None:
            failures += 1
            continue
        actual = binary_label(p.annotated_ctr)
        predicted = binary_label(p.predicted_ctr)
        if actual and predicted:
            tp += 1
        elif actual and not predicted:
            fn += 1
        elif not actual and predicted:
            fp += 1
        else:
            tn += 1
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn, failures=failures)


def classification_metrics(counts: ConfusionCounts):
    """(sensitivity, specificity, f1); None where a denominator is zero."""
    tp, fp, tn, fn = counts.tp, counts.fp, counts.tn, counts.fn
    sensitivity = tp / (tp + fn) if tp + fn > 0 else None
    specificity = tn / (tn + fp) if tn + fp > 0 else None
    f1 = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn > 0 else None
    return sensitivity, specificity, f1


def regression_metrics(pairs):
    """(mae, rmse) of predicted vs annotated CTR over successful pairs."""
    errors = [
        p.predicted_ctr - p.annotated_ctr for p in pairs if p.predicted_ctr is not None
    ]
    if not errors:
        raise NoSuccessfulPairs("no successful predictions to score")
    mae = sum(abs(e) for e in errors) / len(errors)
    rmse = math.sqrt(sum(e * e for e in errors) / len(errors))
    return mae, rmse


def build_report(pairs) -> EvalReport:
    pairs = tuple(pairs)
    counts = confusion(pairs)
    sensitivity, specificity, f1 = classification_metrics(counts)
    try:
        mae, rmse = regression_metrics(pairs)
    except NoSuccessfulPairs:
        mae = rmse = None
    return EvalReport(
        counts=counts,
        sensitivity=sensitivity,
        specificity=specificity,
        f1=f1,
        mae=mae,
        rmse=rmse,
        pairs=pairs,
    )


SCATTER_COLUMNS = (
    "id",
    "annotated_ctr",
    "predicted_ctr",
    "annotated_label",
    "predicted_label",
    "abs_error",
)


def scatter_rows(pairs) -> list[dict]:
    """One row per pair, input order preserved; failures leave the
    prediction columns empty."""
    rows = []
    for p in pairs:
        row = {
            "id": p.image_id,
            "annotated_ctr": repr(float(p.annotated_ctr)),
            "annotated_label": int(binary_label(p.annotated_ctr)),
        }
        if p.predicted_ctr is None:
            row.update(predicted_ctr="", predicted_label="", abs_error="")
        else:
            row.update(
                predicted_ctr=repr(float(p.predicted_ctr)),
                predicted_label=int(binary_label(p.predicted_ctr)),
                abs_error=repr(abs(float(p.predicted_ctr) - float(p.annotated_ctr))),
            )
        rows.append(row)
    return rows


def scatter_csv_text(pairs) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SCATTER_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(scatter_rows(pairs))
    return buf.getvalue()


def parse_scatter_csv(text: str) -> list[EvalPair]:
    """Read pairs back from an emitted scatter CSV (round-trip exact)."""
    pairs = []
    for row in csv.DictReader(io.StringIO(text)):
        predicted = None if row["predicted_ctr"] == "" else float(row["predicted_ctr"])
        pairs.append(
            EvalPair(
                image_id=row["id"],
                annotated_ctr=float(row["annotated_ctr"]),
                predicted_ctr=predicted,
            )
        )
    return pairs


def _fmt(value) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def report_text(report: EvalReport) -> str:
    """Key-value report; ratios rounded to 4 decimals at this boundary."""
    c = report.counts
    lines = [
        f"pairs = {len(report.pairs)}",
        f"tp = {c.tp}",
        f"fp = {c.fp}",
        f"tn = {c.tn}",
        f"fn = {c.fn}",
        f"failures = {c.failures}",
        f"sensitivity = {_fmt(report.sensitivity)}",
        f"specificity = {_fmt(report.specificity)}",
        f"f1 = {_fmt(report.f1)}",
        f"mae = {_fmt(report.mae)}",
        f"rmse = {_fmt(report.rmse)}",
    ]
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, report_path, scatter_path) -> None:
    for path, text in ((report_path, report_text(report)), (scatter_path, scatter_csv_text(report.pairs))):
        path = os.fspath(path)
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)


def dice_coefficient(a, b) -> float:
    """Overlap 2|A∩B| / (|A|+|B|) between two binary masks; 1.0 if both empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    total = a.sum() + b.sum()
    if total == 0:
        return 1.0
    return 2.0 * np.logical_and(a, b).sum() / float(total)
