"""Classification metrics and experiment running.

The positive class is malicious. Samples whose pipeline outcome is ``error``
are excluded from the confusion matrix and reported in their own column,
mirroring how unparseable model responses are accounted for. Every 0/0 ratio
is defined as 0 so empty-class corpora stay well-defined.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, asdict
from typing import Callable, Sequence

from .ingest import PackageRecord
from .verdict import Outcome


class LengthMismatch(Exception):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0
    errors: int = 0

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.tn, self.fn, self.errors) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn + self.errors


@dataclass(frozen=True)
class MetricsReport:
    precision_benign: float
    recall_benign: float
    f1_benign: float
    precision_malicious: float
    recall_malicious: float
    f1_malicious: float
    accuracy: float
    balanced_accuracy: float
    support_benign: int
    support_malicious: int
    errors: int
    name: str = ""
    config_fingerprint: str = ""
    seed: int | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def _as_outcome(prediction) -> Outcome:
    return prediction if isinstance(prediction, Outcome) else Outcome(str(prediction))


def confusion(predictions: Sequence, labels: Sequence[int]) -> ConfusionMatrix:
    """Count a prediction/label pairing; error predictions go to the error column."""
    if len(predictions) != len(labels):
        raise LengthMismatch(
            f"{len(predictions)} predictions vs {len(labels)} labels"
        )
    tp = fp = tn = fn = errors = 0
    for prediction, label in zip(predictions, labels):
        if label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {label!r}")
        outcome = _as_outcome(prediction)
        if outcome is Outcome.ERROR:
            errors += 1
        elif outcome is Outcome.MALICIOUS:
            tp, fp = (tp + 1, fp) if label == 1 else (tp, fp + 1)
        else:
            tn, fn = (tn + 1, fn) if label == 0 else (tn, fn + 1)
    return ConfusionMatrix(tp, fp, tn, fn, errors)


def _ratio(numerator: int, denominator: int) -> float:
    return numerator / denominator if denominator else 0.0


def _f1(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall else 0.0


def metrics(
    cm: ConfusionMatrix,
    name: str = "",
    config_fingerprint: str = "",
    seed: int | None = None,
) -> MetricsReport:
    """Per-class precision/recall/F1, accuracy, and balanced accuracy."""
    precision_mal = _ratio(cm.tp, cm.tp + cm.fp)
    recall_mal = _ratio(cm.tp, cm.tp + cm.fn)
    precision_ben = _ratio(cm.tn, cm.tn + cm.fn)
    recall_ben = _ratio(cm.tn, cm.tn + cm.fp)
    return MetricsReport(
        precision_benign=precision_ben,
        recall_benign=recall_ben,
        f1_benign=_f1(precision_ben, recall_ben),
        precision_malicious=precision_mal,
        recall_malicious=recall_mal,
        f1_malicious=_f1(precision_mal, recall_mal),
        accuracy=_ratio(cm.tp + cm.tn, cm.tp + cm.tn + cm.fp + cm.fn),
        balanced_accuracy=(recall_mal + recall_ben) / 2,
        support_benign=cm.tn + cm.fp,
        support_malicious=cm.tp + cm.fn,
        errors=cm.errors,
        name=name,
        config_fingerprint=config_fingerprint,
        seed=seed,
    )


def run_experiment(
    corpus: Sequence[PackageRecord],
    seed: int,
    pipeline: Callable[[PackageRecord], dict],
    name: str = "",
    config_fingerprint: str = "",
) -> tuple[MetricsReport, list[dict]]:
    """Scan a labeled corpus under one configuration.

    ``pipeline`` maps a package to at least ``{"outcome": ...}``; each result
    row is recorded alongside the label. Per-package failures are expected to
    surface as error outcomes inside the pipeline, not as exceptions. The
    corpus is shuffled by seed before scanning; records come back sorted by
    package name so reports are order-independent.
    """
    if not corpus:
        raise ValueError("corpus must be non-empty")
    if any(p.label is None for p in corpus):
        raise ValueError("every corpus package needs a ground-truth label")

    shuffled = sorted(corpus, key=lambda p: p.name)
    random.Random(seed).shuffle(shuffled)

    records = []
    for package in shuffled:
        result = pipeline(package)
        records.append({"package": package.name, "label": package.label, **result})
    records.sort(key=lambda r: r["package"])

    cm = confusion([r["outcome"] for r in records], [r["label"] for r in records])
    report = metrics(cm, name=name, config_fingerprint=config_fingerprint, seed=seed)
    return report, records


_METRIC_ROWS = (
    ("Precision", "precision_benign", "precision_malicious"),
    ("Recall", "recall_benign", "recall_malicious"),
    ("F1-score", "f1_benign", "f1_malicious"),
)


def render_table(reports: Sequence[MetricsReport]) -> str:
    """Two-decimal comparison table: one metric block, one row per config."""
    if not reports:
        raise ValueError("need at least one report")
    names = [r.name or f"config-{i}" for i, r in enumerate(reports, 1)]
    name_width = max(len("Config"), *(len(n) for n in names))
    lines = [f"{'Metric':<10} | {'Config':<{name_width}} | Benign | Malicious"]
    lines.append("-" * len(lines[0]))
    for metric_name, benign_field, malicious_field in _METRIC_ROWS:
        for report, name in zip(reports, names):
            benign = getattr(report, benign_field)
            malicious = getattr(report, malicious_field)
            lines.append(
                f"{metric_name:<10} | {name:<{name_width}} | {benign:6.2f} | {malicious:9.2f}"
            )
    lines.append("-" * len(lines[0]))
    for report, name in zip(reports, names):
        lines.append(
            f"{'Accuracy':<10} | {name:<{name_width}} | "
            f"{report.accuracy:.2f} (balanced {report.balanced_accuracy:.2f}, "
            f"errors {report.errors})"
        )
    return "\n".join(lines)
