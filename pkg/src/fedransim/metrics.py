"""Confusion matrix, macro-averaged classification metrics, trial reports.

Averaging convention: precision/recall/F1 are macro-averaged (unweighted
mean over classes, one-vs-rest), because minority-class behavior is the
quantity of interest and micro-averaging would mask it. Classes with zero
predicted (or zero true) instances contribute 0 to the respective average.
This convention is printed in every report header so the numbers are never
misread as comparable to other averaging modes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .nn import ModelParameters

SCENARIOS = ("balanced_standard", "imbalanced_standard", "imbalanced_weighted")


class EvalError(ValueError):
    pass


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray, num_classes: int) -> np.ndarray:
    """Q x Q counts, rows = true class, cols = predicted class."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if len(y_true) == 0:
        raise EvalError("empty evaluation set")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def evaluate(model: ModelParameters, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Argmax-of-softmax predictions; ties break toward the lowest class index
    (np.argmax's behavior)."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise EvalError("empty evaluation set")
    probs = nn.forward(model, features)
    preds = probs.argmax(axis=1)
    return confusion_matrix(labels, preds, model.output_dim)


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


def per_class_stats(cm: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(precision, recall, f1) per class, zero where undefined."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    pred_totals = cm.sum(axis=0)
    true_totals = cm.sum(axis=1)
    precision = np.divide(tp, pred_totals, out=np.zeros_like(tp), where=pred_totals > 0)
    recall = np.divide(tp, true_totals, out=np.zeros_like(tp), where=true_totals > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return precision, recall, f1


def metrics_from_confusion(cm: np.ndarray) -> Metrics:
    cm = np.asarray(cm)
    total = cm.sum()
    if total <= 0:
        raise EvalError("confusion matrix is empty")
    precision, recall, f1 = per_class_stats(cm)
    return Metrics(
        accuracy=float(np.trace(cm) / total),
        precision=float(precision.mean()),
        recall=float(recall.mean()),
        f1=float(f1.mean()),
    )


@dataclass
class MetricsReport:
    """Global + per-client metric rows for one scenario, averaged over trials.

    rows maps model name ("global", "client_1", ...) to Metrics; per_trial
    retains the raw per-trial values for dispersion analysis.
    """

    scenario: str
    task: str
    trials: int
    rows: dict
    per_trial: list = field(default_factory=list)  # one {model: Metrics-dict} per trial

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise EvalError(f"unknown scenario {self.scenario!r}")
        if self.trials < 1:
            raise EvalError("trials must be >= 1")


def aggregate_trials(reports: list[MetricsReport]) -> MetricsReport:
    """Arithmetic mean per cell across single-trial reports.

    Callers that need byte-identical aggregates must pass the reports in a
    fixed order (trial index); float summation order matters at the last ulp.
    """
    if not reports:
        raise EvalError("no trial reports to aggregate")
    first = reports[0]
    for r in reports[1:]:
        if r.scenario != first.scenario or r.task != first.task:
            raise EvalError("cannot aggregate reports from mixed scenarios")
        if set(r.rows) != set(first.rows):
            raise EvalError("cannot aggregate reports with different model rows")
    mean_rows = {}
    for name in first.rows:
        mean_rows[name] = Metrics(
            **{
                k: float(np.mean([r.rows[name].as_dict()[k] for r in reports]))
                for k in ("accuracy", "precision", "recall", "f1")
            }
        )
    per_trial = []
    for r in reports:
        per_trial.extend(
            r.per_trial
            if r.per_trial
            else [{name: m.as_dict() for name, m in r.rows.items()}]
        )
    return MetricsReport(
        scenario=first.scenario,
        task=first.task,
        trials=sum(r.trials for r in reports),
        rows=mean_rows,
        per_trial=per_trial,
    )


_ROW_TITLES = {"global": "Global"}


def _row_title(name: str) -> str:
    if name in _ROW_TITLES:
        return _ROW_TITLES[name]
    if name.startswith("client_"):
        return "Client " + name.split("_", 1)[1]
    return name


def render_table(report: MetricsReport) -> str:
    """Human-readable table: Global plus one row per client, percentages to
    two decimals."""
    lines = [
        f"Scenario: {report.scenario} ({report.task}), averaged over {report.trials} trial(s)",
        "Averaging: macro precision/recall/F1 (not comparable to micro/weighted modes)",
        "Client rows are each client's post-final-round local model.",
        "",
        f"{'Model':<10} {'Acc.':>8} {'Prec.':>8} {'Recall':>8} {'F1':>8}",
    ]
    order = ["global"] + sorted(n for n in report.rows if n != "global")
    for name in order:
        m = report.rows[name]
        lines.append(
            f"{_row_title(name):<10} "
            f"{100 * m.accuracy:>7.2f}% {100 * m.precision:>7.2f}% "
            f"{100 * m.recall:>7.2f}% {100 * m.f1:>7.2f}%"
        )
    return "\n".join(lines) + "\n"


def report_to_json(report: MetricsReport) -> str:
    """Machine-readable form; deterministic bytes for identical inputs."""
    doc = {
        "scenario": report.scenario,
        "task": report.task,
        "trials": report.trials,
        "averaging": "macro",
        "rows": {name: m.as_dict() for name, m in report.rows.items()},
        "per_trial": report.per_trial,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def report_from_json(text: str) -> MetricsReport:
    doc = json.loads(text)
    return MetricsReport(
        scenario=doc["scenario"],
        task=doc["task"],
        trials=doc["trials"],
        rows={name: Metrics(**vals) for name, vals in doc["rows"].items()},
        per_trial=doc.get("per_trial", []),
    )
