"""ICBHI specificity / sensitivity / Score and seed aggregation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.metrics import make_scorer

from .exceptions import ConfigError, DataError

N_CLASSES = 4


@dataclass
class IcbhiMetrics:
    """Percentages derived from a 4x4 confusion matrix (rows true, cols predicted)."""

    confusion: np.ndarray
    sp: float
    se: float
    score: float

    @classmethod
    def from_confusion(cls, confusion):
        c = np.asarray(confusion, dtype=np.int64)
        if c.shape != (N_CLASSES, N_CLASSES):
            raise DataError(f"confusion must be 4x4, got {c.shape}")
        n_normal = c[0].sum()
        n_abnormal = c[1:].sum()
        sp = 100.0 * c[0, 0] / n_normal if n_normal else float("nan")
        se = 100.0 * (c[1, 1] + c[2, 2] + c[3, 3]) / n_abnormal if n_abnormal else float("nan")
        return cls(c, sp, se, (sp + se) / 2.0)

    def as_row(self):
        return {"sp": self.sp, "se": self.se, "score": self.score}

    def to_dict(self):
        return {"confusion": self.confusion.tolist(), **self.as_row()}

    def __str__(self):
        return f"Sp={fmt2(self.sp)} Se={fmt2(self.se)} Score={fmt2(self.score)}"


def fmt2(x):
    """Two-decimal display; internal values are never rounded."""
    return f"{x:.2f}"


def confusion_matrix(y_true, y_pred):
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise DataError("y_true and y_pred differ in length")
    for name, arr in (("y_true", y_true), ("y_pred", y_pred)):
        if arr.size and (arr.min() < 0 or arr.max() >= N_CLASSES):
            raise DataError(f"{name} has labels outside 0..3")
    c = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(c, (y_true, y_pred), 1)
    return c


def icbhi_metrics(y_true, y_pred):
    return IcbhiMetrics.from_confusion(confusion_matrix(y_true, y_pred))


def icbhi_score(y_true, y_pred):
    return icbhi_metrics(y_true, y_pred).score


icbhi_scorer = make_scorer(icbhi_score)


def evaluate(predictions, records):
    """Metrics of a ``sample_id -> class`` map over a split.

    An abnormal cycle only counts towards Se when the exact abnormal class
    (crackle, wheeze or both) is predicted.
    """
    y_true, y_pred = [], []
    for r in records:
        try:
            y_pred.append(int(predictions[r.sample_id]))
        except KeyError:
            raise DataError(f"no prediction for sample {r.sample_id!r}") from None
        y_true.append(r.label)
    return icbhi_metrics(y_true, y_pred)


@dataclass
class SeedAggregate:
    runs: list = field(default_factory=list)
    mean: dict = field(default_factory=dict)
    std: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(self.runs)

    def __str__(self):
        return "  ".join(f"{k}={fmt2(self.mean[k])}±{fmt2(self.std[k])}" for k in ("sp", "se", "score"))


def aggregate(metrics_list):
    """Mean and sample standard deviation (n - 1) of Sp, Se and Score."""
    runs = list(metrics_list)
    if not runs:
        raise ConfigError("cannot aggregate an empty metrics list")
    mean, std = {}, {}
    for key in ("sp", "se", "score"):
        vals = np.array([getattr(m, key) for m in runs], dtype=np.float64)
        mean[key] = float(vals.mean())
        std[key] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
    return SeedAggregate(runs, mean, std)
