"""End-to-end composition of the pipeline stages (used by the CLI)."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import PipelineConfig
from .errors import ConfigError, QuotaError
from .mlp import MlpModel, featurize, predict, train
from .screening import MERGED, ScreeningResult, merge_ah, screen
from .selection import das_ksvd, mdas, mdcs
from .signal import CLASSES, Record, SegmentMatrix, prepare_record

log = logging.getLogger(__name__)

METHODS = ("das-ksvd", "mdcs-bc", "mdcs-mc", "mdas-bc", "mdas-mc")
BINARY_CLASSES = ("N", MERGED)


def classes_for(method: str) -> tuple:
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")
    return BINARY_CLASSES if method.endswith("-bc") else CLASSES


def prepare_segments(records: Sequence[Record], cfg: PipelineConfig) -> SegmentMatrix:
    seg = cfg.segmentation
    out = []
    for rec in records:
        out.extend(prepare_record(rec, seg.length, seg.overlap, seg.baseline_window))
    return SegmentMatrix.from_segments(out, CLASSES)


def as_classes(X: SegmentMatrix, classes: Sequence[str]) -> SegmentMatrix:
    """Relabel to the binary problem when ``classes`` asks for it."""
    classes = tuple(classes)
    if classes == X.classes:
        return X
    if classes == BINARY_CLASSES:
        Y = X.subset(np.arange(X.n))
        Y.labels = merge_ah(X.labels)
        Y.classes = classes
        return Y
    raise ConfigError(f"cannot map classes {X.classes} onto {classes}")


def split_balanced(X: SegmentMatrix, train_per_class: int, val_per_class: int, seed: int):
    """Disjoint, shuffled, class-balanced training and validation sets."""
    rng = np.random.default_rng(seed)
    tr, va = [], []
    for c in X.classes:
        idx = np.flatnonzero(X.labels == c)
        need = train_per_class + val_per_class
        if idx.size < need:
            raise QuotaError(c, int(idx.size), need)
        idx = rng.permutation(idx)
        tr.append(idx[:train_per_class])
        va.append(idx[train_per_class:need])
    tr, va = np.concatenate(tr), np.concatenate(va)
    return X.subset(tr[rng.permutation(tr.size)]), X.subset(va[rng.permutation(va.size)])


def training_sets(X: SegmentMatrix, method: str, cfg: PipelineConfig):
    X = as_classes(X, classes_for(method))
    return split_balanced(X, cfg.data.train_per_class, cfg.data.val_per_class, cfg.seed)


def learn(method: str, X_train: SegmentMatrix, cfg: PipelineConfig):
    """Dictionary artifact for ``method`` from a balanced training set."""
    classes_for(method)
    if method == "das-ksvd":
        return das_ksvd(X_train, cfg.das_config())
    measure = "dcaf" if method.endswith("-bc") else "combined"
    scfg = cfg.selection_config(measure)
    return mdcs(X_train, scfg) if method.startswith("mdcs") else mdas(X_train, scfg)


def artifact_classes(artifact) -> tuple:
    return tuple(artifact.classes)


def fit_classifier(artifact, X_train: SegmentMatrix, X_val: SegmentMatrix, cfg: PipelineConfig):
    q = cfg.ksvd.sparsity
    classes = artifact_classes(artifact)
    X_train, X_val = as_classes(X_train, classes), as_classes(X_val, classes)
    F = featurize(X_train, artifact, q)
    Fv = featurize(X_val, artifact, q)
    return train(F, X_train.labels, Fv, X_val.labels, cfg.train_config(), classes=classes)


def classify(artifact, model: MlpModel, X: SegmentMatrix, cfg: PipelineConfig):
    """``(predicted class names, scores)`` for every column of ``X``."""
    idx, scores = predict(model, featurize(X, artifact, cfg.ksvd.sparsity))
    return np.array(model.classes, dtype=str)[idx], scores


@dataclass
class RecordOutcome:
    result: ScreeningResult
    true_ahi: float
    n_segments: int


def screen_records(records: Sequence[Record], artifact, model: MlpModel, cfg: PipelineConfig,
                   threshold: float | None = None) -> list[RecordOutcome]:
    """Screen each record; the reference AHI comes from its annotations."""
    thr = cfg.screen.threshold if threshold is None else threshold
    seg = cfg.segmentation
    out = []
    for rec in records:
        segs = prepare_record(rec, seg.length, seg.overlap, seg.baseline_window)
        if segs:
            X = SegmentMatrix.from_segments(segs, CLASSES)
            labels, _ = classify(artifact, model, X, cfg)
        else:
            labels = np.zeros(0, dtype=str)
        res = screen(rec.id, labels.tolist(), rec.duration_hours, thr)
        out.append(RecordOutcome(res, len(rec.events) / rec.duration_hours, len(segs)))
    return out
