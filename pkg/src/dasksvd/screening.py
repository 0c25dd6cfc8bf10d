"""Record-level AHI estimates, severity classes, screening metrics and ROC analysis."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError, DegenerateCohortError

SEVERITY_LABELS = ("normal", "mild", "moderate", "severe")
SEVERITY_EDGES = (5.0, 15.0, 30.0)
EVENT_CLASSES = frozenset({"A", "H", "A+H"})
MERGED = "A+H"


def estimate_ahi(predictions: Iterable[str], duration_hours: float) -> float:
    """Segments predicted as an event class, per hour of recording."""
    if not duration_hours > 0:
        raise DataError(f"record duration must be positive, got {duration_hours}")
    events = sum(1 for p in predictions if p in EVENT_CLASSES)
    return events / float(duration_hours)


def severity(ahi: float) -> str:
    """Band lookup on ``[0,5) [5,15) [15,30) [30,inf)``."""
    if not ahi >= 0:
        raise DataError(f"AHI must be nonnegative, got {ahi}")
    return SEVERITY_LABELS[int(np.searchsorted(SEVERITY_EDGES, ahi, side="right"))]


def merge_ah(labels):
    """Map A and H to the merged event class; N is unchanged."""
    mapping = {"A": MERGED, "H": MERGED, "N": "N", MERGED: MERGED}
    try:
        return np.array([mapping[l] for l in np.asarray(labels).tolist()], dtype=str)
    except KeyError as exc:
        raise DataError(f"unknown label {exc.args[0]!r}") from None


# --- confusion matrix -------------------------------------------------------

@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are known classes, columns predicted classes."""

    counts: np.ndarray
    classes: tuple = ()

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] == 0:
            raise DataError(f"confusion matrix must be square and nonempty, got shape {c.shape}")
        if np.any(c < 0) or not np.all(np.isfinite(c)):
            raise DataError("confusion counts must be finite and nonnegative")
        object.__setattr__(self, "counts", c)
        classes = tuple(self.classes) or tuple(str(i) for i in range(c.shape[0]))
        if len(classes) != c.shape[0]:
            raise DataError(f"{len(classes)} class names for a {c.shape[0]}-class matrix")
        object.__setattr__(self, "classes", classes)

    @classmethod
    def from_labels(cls, known, predicted, classes: Sequence[str]) -> "ConfusionMatrix":
        index = {c: i for i, c in enumerate(classes)}
        counts = np.zeros((len(classes), len(classes)))
        try:
            for a, b in zip(np.asarray(known).tolist(), np.asarray(predicted).tolist()):
                counts[index[a], index[b]] += 1
        except KeyError as exc:
            raise DataError(f"label {exc.args[0]!r} not in classes {tuple(classes)}") from None
        return cls(counts, tuple(classes))

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    def normalized(self) -> np.ndarray:
        """Rows in percent; empty rows stay zero."""
        totals = self.counts.sum(axis=1, keepdims=True)
        out = np.zeros_like(self.counts)
        np.divide(100.0 * self.counts, totals, out=out, where=totals > 0)
        return out

    def save_csv(self, path, normalized: bool = False) -> None:
        m = self.normalized() if normalized else self.counts
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["known\\predicted", *self.classes])
            for name, row in zip(self.classes, m):
                writer.writerow([name, *(_fmt(v) for v in row)])


def _fmt(v: float) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


@dataclass(frozen=True)
class ClassMetrics:
    label: str
    sensitivity: float
    specificity: float
    precision: float


@dataclass(frozen=True)
class Metrics:
    per_class: tuple
    accuracy: float

    def __getitem__(self, label) -> ClassMetrics:
        for m in self.per_class:
            if m.label == label:
                return m
        raise KeyError(label)

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["class", "sensitivity", "specificity", "precision"])
            for m in self.per_class:
                writer.writerow([m.label, repr(m.sensitivity), repr(m.specificity), repr(m.precision)])
            writer.writerow(["overall_accuracy", repr(self.accuracy), "", ""])


def _div(a, b):
    return float(a) / float(b) if b > 0 else float("nan")


def class_metrics(cm: ConfusionMatrix) -> Metrics:
    """One-vs-rest sensitivity, specificity and precision as fractions.

    Precision is NaN for a class that is never predicted.  Accuracy is
    ``trace / total``.
    """
    c = cm.counts
    total = c.sum()
    if total <= 0:
        raise DataError("confusion matrix is empty")
    out = []
    for i, name in enumerate(cm.classes):
        tp = c[i, i]
        fn = c[i].sum() - tp
        fp = c[:, i].sum() - tp
        tn = total - tp - fn - fp
        out.append(ClassMetrics(name, _div(tp, tp + fn), _div(tn, tn + fp), _div(tp, tp + fp)))
    return Metrics(tuple(out), float(np.trace(c) / total))


# --- ROC --------------------------------------------------------------------

@dataclass(frozen=True)
class RocCurve:
    """Operating points sorted by threshold (verdict is ``score > threshold``)."""

    thresholds: np.ndarray
    sensitivity: np.ndarray
    specificity: np.ndarray
    auc: float
    optimal_cutoff: float
    optimal_index: int

    @property
    def points(self):
        return list(zip(self.thresholds.tolist(), self.sensitivity.tolist(), self.specificity.tolist()))

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["threshold", "sensitivity", "specificity"])
            for t, se, sp in self.points:
                writer.writerow([repr(t), repr(se), repr(sp)])

    def save_svg(self, path, title: str = "ROC") -> None:
        with open(path, "w") as fh:
            fh.write(roc_svg(self, title))


def roc(scores, positive, thresholds=None) -> RocCurve:
    """ROC curve of ``score > threshold`` against the known ``positive`` flags.

    The default sweep uses the sorted unique scores plus infinite
    sentinels, so the curve runs from (0, 0) to (1, 1).  The optimal
    cut-off maximises ``Se + Sp``, preferring the lower threshold on ties.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(positive, dtype=bool).ravel()
    if s.size != y.size:
        raise DataError(f"{s.size} scores but {y.size} labels")
    if not np.all(np.isfinite(s)):
        raise DataError("scores must be finite")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateCohortError("ROC analysis needs at least one positive and one negative record")
    if thresholds is None:
        t = np.concatenate([[-np.inf], np.unique(s), [np.inf]])
    else:
        t = np.unique(np.asarray(thresholds, dtype=np.float64))
    pos_sorted = np.sort(s[y])
    neg_sorted = np.sort(s[~y])
    # counts of scores strictly above each threshold
    tp = pos_sorted.size - np.searchsorted(pos_sorted, t, side="right")
    fp = neg_sorted.size - np.searchsorted(neg_sorted, t, side="right")
    se = tp / n_pos
    sp = (n_neg - fp) / n_neg
    x = 1.0 - sp
    # points run right to left as the threshold rises
    auc = float(np.sum((x[:-1] - x[1:]) * (se[:-1] + se[1:]) / 2.0))
    youden = se + sp
    best = int(np.flatnonzero(youden == youden.max())[0])
    return RocCurve(t, se, sp, auc, float(t[best]), best)


def mann_whitney_auc(scores, positive) -> float:
    """Pairwise AUC: P(score_pos > score_neg) + P(tie) / 2."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(positive, dtype=bool)
    sp, sn = s[y][:, None], s[~y][None, :]
    return float(np.mean((sp > sn) + 0.5 * (sp == sn)))


def roc_svg(curve: RocCurve, title: str = "ROC", size: int = 400) -> str:
    """A standalone SVG drawing of the curve and the chance line."""
    pad = 50
    span = size - 2 * pad

    def xy(fpr, tpr):
        return pad + fpr * span, size - pad - tpr * span

    pts = " ".join("%.3f,%.3f" % xy(1 - sp, se) for se, sp in zip(curve.sensitivity, curve.specificity))
    ox, oy = xy(1 - curve.specificity[curve.optimal_index], curve.sensitivity[curve.optimal_index])
    x0, y0 = xy(0, 0)
    x1, y1 = xy(1, 1)
    ticks = []
    for v in (0.0, 0.25, 0.5, 0.75, 1.0):
        tx, _ = xy(v, 0)
        _, ty = xy(0, v)
        ticks.append(f'<text x="{tx:.1f}" y="{y0 + 18:.1f}" font-size="11" text-anchor="middle">{v:g}</text>')
        ticks.append(f'<text x="{x0 - 8:.1f}" y="{ty + 4:.1f}" font-size="11" text-anchor="end">{v:g}</text>')
    return "\n".join([
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect x="0" y="0" width="{size}" height="{size}" fill="white"/>',
        f'<rect x="{x0:.1f}" y="{y1:.1f}" width="{span}" height="{span}" fill="none" stroke="black"/>',
        f'<line x1="{x0:.1f}" y1="{y0:.1f}" x2="{x1:.1f}" y2="{y1:.1f}" stroke="gray" stroke-dasharray="4 4"/>',
        f'<polyline points="{pts}" fill="none" stroke="#1f77b4" stroke-width="2"/>',
        f'<circle cx="{ox:.3f}" cy="{oy:.3f}" r="4" fill="#d62728"/>',
        *ticks,
        f'<text x="{size / 2:.1f}" y="{pad - 20}" font-size="14" text-anchor="middle">{title} (AUC = {curve.auc:.4f})</text>',
        f'<text x="{size / 2:.1f}" y="{size - 12}" font-size="12" text-anchor="middle">1 - specificity</text>',
        f'<text x="14" y="{size / 2:.1f}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 14 {size / 2:.1f})">sensitivity</text>',
        "</svg>",
        "",
    ])


# --- screening --------------------------------------------------------------

@dataclass(frozen=True)
class ScreeningResult:
    record_id: str
    ahi_est: float
    severity: str
    verdict: bool


def screen(record_id: str, predictions: Iterable[str], duration_hours: float,
           threshold: float = 15.0) -> ScreeningResult:
    """Positive when the estimated AHI is strictly above ``threshold``."""
    if not np.isfinite(threshold) or threshold < 0:
        raise ConfigError(f"screening threshold must be a nonnegative number, got {threshold}")
    ahi = estimate_ahi(predictions, duration_hours)
    return ScreeningResult(record_id, ahi, severity(ahi), bool(ahi > threshold))


def screen_batch(items, threshold: float = 15.0) -> list[ScreeningResult]:
    """``items`` yields ``(record_id, predictions, duration_hours)``."""
    return [screen(rid, preds, hours, threshold) for rid, preds, hours in items]


def save_screening_csv(results: Sequence[ScreeningResult], path, true_ahi: dict | None = None,
                       threshold: float = 15.0) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ["id", "ahi_est", "severity", "verdict"]
        if true_ahi is not None:
            header += ["true_ahi", "true_severity", "true_positive"]
        writer.writerow(header)
        for r in results:
            row = [r.record_id, repr(r.ahi_est), r.severity, int(r.verdict)]
            if true_ahi is not None:
                t = true_ahi.get(r.record_id)
                row += ["", "", ""] if t is None else [repr(t), severity(t), int(t > threshold)]
            writer.writerow(row)
