"""Confusion matrices, agreement metrics and per-fold report files."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import N_CLASSES, STAGES

METRIC_COLUMNS = ["fold", "acc", "mf1", "kappa"] + [f"f1_{s}" for s in STAGES]


@dataclass
class ConfusionMatrix:
    """Counts with rows = actual stage and columns = predicted stage."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (N_CLASSES, N_CLASSES):
            raise ValueError(f"confusion matrix must be {N_CLASSES}x{N_CLASSES}, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise ValueError("confusion counts must be non-negative")

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)


@dataclass
class MetricsReport:
    acc: float
    mf1: float
    kappa: float
    per_class_f1: np.ndarray
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    p_e: float
    n: int

    def row(self, fold) -> dict:
        out = {"fold": str(fold), "acc": self.acc, "mf1": self.mf1, "kappa": self.kappa}
        out.update({f"f1_{s}": float(v) for s, v in zip(STAGES, self.per_class_f1)})
        return out

    def to_dict(self) -> dict:
        return {
            "acc": self.acc,
            "mf1": self.mf1,
            "kappa": self.kappa,
            "p_e": self.p_e,
            "n": self.n,
            "per_class_f1": dict(zip(STAGES, map(float, self.per_class_f1))),
            "per_class_precision": dict(zip(STAGES, map(float, self.per_class_precision))),
            "per_class_recall": dict(zip(STAGES, map(float, self.per_class_recall))),
        }


def confusion(preds: Sequence[int], labels: Sequence[int]) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise ValueError(f"{preds.size} predictions for {labels.size} labels")
    for name, arr in (("prediction", preds), ("label", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= N_CLASSES):
            raise ValueError(f"{name} outside the {N_CLASSES}-stage set")
    counts = np.bincount(labels * N_CLASSES + preds, minlength=N_CLASSES * N_CLASSES)
    return ConfusionMatrix(counts.reshape(N_CLASSES, N_CLASSES))


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """Elementwise num/den with 0/0 (and x/0) mapped to 0."""
    out = np.zeros(num.shape, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def compute_metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Accuracy, per-class precision/recall/F1, macro F1 and Cohen's kappa."""
    c = cm.counts.astype(np.float64)
    n = c.sum()
    if n == 0:
        raise ValueError("cannot score an empty confusion matrix")
    tp = np.diag(c)
    predicted = c.sum(axis=0)
    actual = c.sum(axis=1)
    precision = _ratio(tp, predicted)
    recall = _ratio(tp, actual)
    f1 = _ratio(2 * precision * recall, precision + recall)
    acc = tp.sum() / n
    p_e = float((actual * predicted).sum() / (n * n))
    kappa = (acc - p_e) / (1.0 - p_e) if p_e < 1.0 else (1.0 if acc == 1.0 else 0.0)
    return MetricsReport(
        acc=float(acc),
        mf1=float(f1.mean()),
        kappa=float(kappa),
        per_class_f1=f1,
        per_class_precision=precision,
        per_class_recall=recall,
        p_e=p_e,
        n=int(n),
    )


def pool(matrices: Sequence[ConfusionMatrix]) -> ConfusionMatrix:
    if not matrices:
        raise ValueError("need at least one confusion matrix to pool")
    total = ConfusionMatrix(np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64))
    for m in matrices:
        total = total + m
    return total


# ---------------------------------------------------------------------------
# files


@dataclass
class FoldResult:
    """What one fold contributes to a report: its confusion matrix and optional hypnograms."""

    fold: int
    cm: ConfusionMatrix
    hypnograms: Dict[str, Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)  # id -> (true, pred)


def write_metrics_csv(rows: List[dict], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for row in rows:
            writer.writerow([row["fold"]] + [repr(float(row[c])) for c in METRIC_COLUMNS[1:]])
    return path


def read_metrics_csv(path) -> Dict[str, dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != METRIC_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        return {row["fold"]: {c: float(row[c]) for c in METRIC_COLUMNS[1:]} for row in reader}


def write_confusion_csv(cm: ConfusionMatrix, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([""] + list(STAGES))
        for stage, row in zip(STAGES, cm.counts):
            writer.writerow([stage] + [int(v) for v in row])
    return path


def read_confusion_csv(path) -> ConfusionMatrix:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0][1:] != list(STAGES) or [r[0] for r in rows[1:]] != list(STAGES):
        raise ValueError(f"{path}: stage headers missing or out of order")
    return ConfusionMatrix([[int(v) for v in r[1:]] for r in rows[1:]])


def render_report(results: Sequence[FoldResult], out_dir, plots: bool = True) -> Dict[str, Path]:
    """Write metrics.csv/json, confusion CSVs and (optionally) SVG plots.

    The aggregate row ("all") scores the confusion counts pooled over folds.
    """
    if not results:
        raise ValueError("render_report needs at least one fold result")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out}: {exc}") from exc
    ordered = sorted(results, key=lambda r: r.fold)
    reports = [(r.fold, compute_metrics(r.cm)) for r in ordered]
    pooled = pool([r.cm for r in ordered])
    total = compute_metrics(pooled)

    files = {
        "metrics_csv": write_metrics_csv([rep.row(f) for f, rep in reports] + [total.row("all")],
                                         out / "metrics.csv"),
        "confusion_csv": write_confusion_csv(pooled, out / "confusion.csv"),
    }
    for fold, r in zip([f for f, _ in reports], ordered):
        write_confusion_csv(r.cm, out / f"confusion_fold{fold}.csv")
    doc = {
        "folds": {str(f): dict(rep.to_dict(), confusion=r.cm.counts.tolist())
                  for (f, rep), r in zip(reports, ordered)},
        "aggregate": dict(total.to_dict(), confusion=pooled.counts.tolist()),
    }
    files["metrics_json"] = out / "metrics.json"
    files["metrics_json"].write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    if plots:
        from . import plotting

        files["confusion_svg"] = plotting.save_confusion_heatmap(pooled.counts, out / "confusion.svg")
        hyp = next(((sid, tp) for r in ordered for sid, tp in sorted(r.hypnograms.items())), None)
        if hyp is not None:
            sid, (true, pred) = hyp
            files["hypnogram_svg"] = plotting.save_hypnogram(true, pred, out / "hypnogram.svg", title=sid)
    return files
