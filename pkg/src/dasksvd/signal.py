"""Oximetry record ingestion: repair, baseline removal and segmentation.

File formats
------------
Record CSV
    header ``t_sec,spo2``; one row per second, an empty ``spo2`` cell marks
    a missing sample.
Annotation CSV
    header ``start_sec,end_sec,label`` with ``label`` in ``{A, H}``.
Segment-set CSV
    first row holds the labels, each following row one sample index
    (so each segment is a column).  An optional ``<name>.index.csv``
    sidecar keeps ``source_id,start_sec`` per column.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.ndimage import uniform_filter1d

from .errors import (
    DataError,
    QuotaError,
    ShapeError,
    ShortRecordError,
    UnrecoverableRecordError,
)

log = logging.getLogger(__name__)

CLASSES = ("N", "A", "H")
EVENT_LABELS = ("A", "H")
VALID_RANGE = (50.0, 100.0)
DISCONNECT_SECONDS = 60
BASELINE_WINDOW = 512
SEGMENT_LENGTH = 128
OVERLAP = 0.75
MIN_EVENT_OVERLAP = 10


@dataclass(frozen=True)
class Event:
    start_sec: int
    end_sec: int
    label: str

    @property
    def duration(self) -> int:
        return self.end_sec - self.start_sec


@dataclass(frozen=True)
class Record:
    """One full-night 1 Hz oximetry signal (NaN marks a missing sample)."""

    id: str
    samples: np.ndarray
    events: tuple = ()
    disconnections: tuple = ()

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64, copy=True).ravel()
        if samples.size == 0:
            raise DataError(f"record {self.id!r} is empty")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        events = tuple(e if isinstance(e, Event) else Event(int(e[0]), int(e[1]), str(e[2]))
                       for e in self.events)
        for e in events:
            if e.label not in EVENT_LABELS:
                raise DataError(f"record {self.id!r}: unknown event label {e.label!r}")
            if not 0 <= e.start_sec < e.end_sec <= samples.size:
                raise DataError(
                    f"record {self.id!r}: event [{e.start_sec}, {e.end_sec}) outside [0, {samples.size}]"
                )
        object.__setattr__(self, "events", events)
        object.__setattr__(self, "disconnections",
                           tuple((int(s), int(e)) for s, e in self.disconnections))

    @property
    def duration_hours(self) -> float:
        return self.samples.size / 3600.0

    def __len__(self):
        return self.samples.size


@dataclass
class Segment:
    values: np.ndarray
    label: str
    source_id: str = ""
    start_sec: int = 0


@dataclass
class SegmentMatrix:
    """Column-stacked segments with aligned labels.

    ``origin`` optionally maps each column back to a column of the matrix
    it was drawn from.
    """

    values: np.ndarray
    labels: np.ndarray
    classes: tuple = CLASSES
    source_ids: np.ndarray | None = None
    starts: np.ndarray | None = None
    origin: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeError(f"segment matrix must be 2-D, got shape {self.values.shape}")
        self.labels = np.asarray(self.labels, dtype=str).reshape(-1)
        if self.labels.size != self.values.shape[1]:
            raise ShapeError(f"{self.values.shape[1]} columns but {self.labels.size} labels")
        self.classes = tuple(self.classes)
        unknown = set(self.labels.tolist()) - set(self.classes)
        if unknown:
            raise DataError(f"labels {sorted(unknown)} not in classes {self.classes}")

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def n_features(self) -> int:
        return self.values.shape[0]

    @property
    def class_counts(self) -> dict:
        return {c: int(np.sum(self.labels == c)) for c in self.classes}

    @property
    def label_index(self) -> np.ndarray:
        lookup = {c: i for i, c in enumerate(self.classes)}
        return np.array([lookup[l] for l in self.labels], dtype=np.intp)

    def subset(self, idx) -> "SegmentMatrix":
        idx = np.asarray(idx, dtype=np.intp)
        pick = lambda a: None if a is None else a[idx]
        return SegmentMatrix(self.values[:, idx], self.labels[idx], self.classes,
                             pick(self.source_ids), pick(self.starts), idx)

    def by_class(self, label) -> "SegmentMatrix":
        return self.subset(np.flatnonzero(self.labels == label))

    def relabel(self, mapping: dict, classes: Sequence[str]) -> "SegmentMatrix":
        labels = np.array([mapping.get(l, l) for l in self.labels], dtype=str)
        return replace(self, labels=labels, classes=tuple(classes))

    @classmethod
    def from_segments(cls, segments: Sequence[Segment], classes=CLASSES) -> "SegmentMatrix":
        if not segments:
            return cls(np.zeros((SEGMENT_LENGTH, 0)), np.array([], dtype=str), classes,
                       np.array([], dtype=str), np.array([], dtype=np.int64))
        return cls(
            np.column_stack([s.values for s in segments]),
            np.array([s.label for s in segments], dtype=str),
            classes,
            np.array([s.source_id for s in segments], dtype=str),
            np.array([s.start_sec for s in segments], dtype=np.int64),
        )

    def save_csv(self, path) -> None:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.labels.tolist())
            for row in self.values:
                writer.writerow([repr(float(v)) for v in row])
        if self.source_ids is not None and self.starts is not None:
            with open(_index_path(path), "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["source_id", "start_sec"])
                for sid, st in zip(self.source_ids, self.starts):
                    writer.writerow([sid, int(st)])

    @classmethod
    def load_csv(cls, path, classes=CLASSES) -> "SegmentMatrix":
        path = Path(path)
        try:
            with open(path, newline="") as fh:
                rows = list(csv.reader(fh))
        except OSError as exc:
            raise DataError(f"cannot read segment set {path}: {exc}") from exc
        if not rows:
            raise DataError(f"segment set {path} is empty")
        labels = np.array(rows[0], dtype=str)
        try:
            values = np.array([[float(v) for v in row] for row in rows[1:]], dtype=np.float64)
        except ValueError as exc:
            raise DataError(f"segment set {path}: {exc}") from exc
        if values.size == 0:
            values = values.reshape(0, labels.size)
        source_ids = starts = None
        index = _index_path(path)
        if index.exists():
            with open(index, newline="") as fh:
                reader = csv.reader(fh)
                next(reader)
                meta = list(reader)
            source_ids = np.array([m[0] for m in meta], dtype=str)
            starts = np.array([int(m[1]) for m in meta], dtype=np.int64)
        return cls(values, labels, classes, source_ids, starts)


def _index_path(path: Path) -> Path:
    return path.with_name(path.stem + ".index.csv")


def _runs(mask: np.ndarray):
    """Yield ``(start, stop)`` for each run of True values."""
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def repair(record: Record, valid_range=VALID_RANGE,
           disconnect_seconds: int = DISCONNECT_SECONDS) -> Record:
    """Interpolate missing and implausible samples.

    Samples that are missing or outside ``valid_range`` are replaced by
    linear interpolation between the nearest valid neighbours (edges are
    extended).  Invalid runs longer than ``disconnect_seconds`` are added
    to ``record.disconnections`` as ``(start, stop)`` half-open intervals.
    """
    x = record.samples
    lo, hi = valid_range
    with np.errstate(invalid="ignore"):
        invalid = ~np.isfinite(x) | (x < lo) | (x > hi)
    if invalid.all():
        raise UnrecoverableRecordError(f"record {record.id!r} has no valid samples")
    gaps = [(s, e) for s, e in _runs(invalid) if e - s > disconnect_seconds]
    fixed = x.copy()
    if invalid.any():
        idx = np.arange(x.size)
        fixed[invalid] = np.interp(idx[invalid], idx[~invalid], x[~invalid])
    disconnections = tuple(sorted(set(record.disconnections) | set(gaps)))
    return replace(record, samples=fixed, disconnections=disconnections)


def baseline_filter(record: Record, window: int = BASELINE_WINDOW) -> Record:
    """Remove the slow baseline with a centred moving average.

    The baseline is an order-``window`` moving average with symmetric
    edge padding; the result is then shifted to zero mean.  Units stay in
    percent saturation.
    """
    x = record.samples
    if x.size < window:
        raise ShortRecordError(
            f"record {record.id!r} has {x.size} samples, shorter than the {window}-sample filter"
        )
    if not np.all(np.isfinite(x)):
        raise DataError(f"record {record.id!r} must be repaired before filtering")
    detrended = x - uniform_filter1d(x, size=window, mode="reflect")
    detrended -= detrended.mean()
    return replace(record, samples=detrended)


def _overlap(a0, a1, b0, b1) -> int:
    return max(0, min(a1, b1) - max(a0, b0))


def label_window(start: int, stop: int, events: Iterable[Event],
                 min_overlap: int = MIN_EVENT_OVERLAP) -> str:
    """A if >= ``min_overlap`` s overlap apneas, else H likewise, else N."""
    totals = {"A": 0, "H": 0}
    for e in events:
        totals[e.label] += _overlap(start, stop, e.start_sec, e.end_sec)
    if totals["A"] >= min_overlap:
        return "A"
    if totals["H"] >= min_overlap:
        return "H"
    return "N"


def segment(record: Record, length: int = SEGMENT_LENGTH,
            overlap_fraction: float = OVERLAP) -> list[Segment]:
    """Cut a record into overlapping labelled windows.

    Windows intersecting a disconnection interval, or holding non-finite
    samples, are dropped.  A record shorter than ``length`` yields ``[]``.
    """
    if not 0.0 <= overlap_fraction < 1.0:
        raise DataError(f"overlap fraction must lie in [0, 1), got {overlap_fraction}")
    if length < 1:
        raise DataError(f"segment length must be positive, got {length}")
    stride = max(1, int(round(length * (1.0 - overlap_fraction))))
    x = record.samples
    out = []
    for start in range(0, x.size - length + 1, stride):
        stop = start + length
        if any(start < e and s < stop for s, e in record.disconnections):
            continue
        values = x[start:stop]
        if not np.all(np.isfinite(values)):
            continue
        out.append(Segment(values.copy(), label_window(start, stop, record.events),
                           record.id, start))
    return out


def prepare_record(record: Record, length: int = SEGMENT_LENGTH,
                   overlap_fraction: float = OVERLAP,
                   window: int = BASELINE_WINDOW) -> list[Segment]:
    return segment(baseline_filter(repair(record), window), length, overlap_fraction)


def assemble(segments, per_class_quota: int, seed: int = 0,
             classes: Sequence[str] = CLASSES) -> SegmentMatrix:
    """Draw a balanced, shuffled set of ``per_class_quota`` segments per class."""
    mat = segments if isinstance(segments, SegmentMatrix) else SegmentMatrix.from_segments(segments, classes)
    rng = np.random.default_rng(seed)
    picked = []
    for c in classes:
        idx = np.flatnonzero(mat.labels == c)
        if idx.size < per_class_quota:
            raise QuotaError(c, int(idx.size), per_class_quota)
        picked.append(rng.choice(idx, size=per_class_quota, replace=False))
    order = np.concatenate(picked) if picked else np.zeros(0, dtype=np.intp)
    order = order[rng.permutation(order.size)]
    out = mat.subset(order)
    out.classes = tuple(classes)
    return out


# --- record files -----------------------------------------------------------

def write_record(record: Record, path, annotation_path=None) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t_sec", "spo2"])
        for t, v in enumerate(record.samples):
            writer.writerow([t, "" if not np.isfinite(v) else repr(float(v))])
    if annotation_path is not None:
        with open(annotation_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["start_sec", "end_sec", "label"])
            for e in record.events:
                writer.writerow([e.start_sec, e.end_sec, e.label])


def read_record(path, annotation_path=None, record_id: str | None = None) -> Record:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["t_sec", "spo2"]:
                raise DataError(f"{path}: expected header t_sec,spo2, got {header}")
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"cannot read record {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: no samples")
    try:
        t = np.array([int(r[0]) for r in rows])
        v = np.array([float(r[1]) if r[1].strip() else np.nan for r in rows])
    except (ValueError, IndexError) as exc:
        raise DataError(f"{path}: malformed row ({exc})") from exc
    if t.min() < 0:
        raise DataError(f"{path}: negative t_sec")
    samples = np.full(int(t.max()) + 1, np.nan)
    samples[t] = v
    events = []
    if annotation_path is not None and Path(annotation_path).exists():
        events = read_annotations(annotation_path)
    return Record(record_id or path.stem, samples, tuple(events))


def read_annotations(path) -> list[Event]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["start_sec", "end_sec", "label"]:
            raise DataError(f"{path}: expected header start_sec,end_sec,label, got {header}")
        try:
            return [Event(int(r[0]), int(r[1]), r[2].strip()) for r in reader if r]
        except (ValueError, IndexError) as exc:
            raise DataError(f"{path}: malformed annotation ({exc})") from exc


def annotation_path_for(record_path) -> Path:
    p = Path(record_path)
    return p.with_name(p.stem + ".events.csv")


def load_records(directory, ids: Iterable[str] | None = None) -> list[Record]:
    """Load every ``<id>.csv`` (plus ``<id>.events.csv``) in a directory."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"records directory {directory} does not exist")
    wanted = None if ids is None else set(ids)
    records = []
    for p in sorted(directory.glob("*.csv")):
        if p.name.endswith(".events.csv"):
            continue
        if wanted is not None and p.stem not in wanted:
            continue
        records.append(read_record(p, annotation_path_for(p)))
    if not records:
        raise DataError(f"no records found in {directory}")
    return records
