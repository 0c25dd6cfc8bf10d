"""Synthetic oximetry cohorts with known events and AHI.

Normal breathing is a slow oscillation around a 96 % baseline.  Apneas
carve deep, regular desaturation troughs; hypopneas carve shallow troughs
whose depth and shape vary from event to event.  The generator is a test
fixture, not a physiological model.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import SpecError
from .signal import Event, Record, annotation_path_for, write_record

SEVERITY_BANDS = ((0.0, 5.0), (5.0, 15.0), (15.0, 30.0), (30.0, 50.0))
BASELINE = 96.0
CLEAN_RANGE = (50.0, 100.0)


@dataclass(frozen=True)
class CohortSpec:
    n_records: int = 120
    duration_hours: float = 8.0
    # target AHI is drawn uniformly inside the band; bands are cycled over records
    ahi_bands: tuple = SEVERITY_BANDS
    apnea_fraction: float = 0.5
    apnea_depth: float = 6.0
    apnea_jitter: float = 0.1
    hypopnea_depth: float = 3.0
    hypopnea_jitter: float = 0.5
    fall_tau: float = 6.0
    recovery_tau: float = 5.0
    event_duration: tuple = (10, 40)
    min_gap: int = 20
    breathing_amplitude: float = 0.4
    breathing_period: float = 40.0
    noise_std: float = 0.25
    missing_fraction: float = 0.0
    train_fraction: float = 0.7
    seed: int = 0

    def validate(self) -> None:
        if int(self.n_records) != self.n_records or self.n_records < 1:
            raise SpecError(f"n_records must be a positive integer, got {self.n_records}")
        if self.duration_hours <= 0:
            raise SpecError(f"duration_hours must be positive, got {self.duration_hours}")
        if not self.ahi_bands:
            raise SpecError("need at least one AHI band")
        for lo, hi in self.ahi_bands:
            if not 0 <= lo <= hi:
                raise SpecError(f"bad AHI band ({lo}, {hi})")
        lo, hi = self.event_duration
        if not 10 <= lo <= hi:
            raise SpecError(f"event durations must satisfy 10 <= min <= max, got {self.event_duration}")
        if self.apnea_depth <= 0 or self.hypopnea_depth <= 0:
            raise SpecError("desaturation depths must be positive")
        if self.hypopnea_depth >= self.apnea_depth:
            raise SpecError("hypopnea depth must be smaller than apnea depth")
        for name in ("apnea_jitter", "hypopnea_jitter", "apnea_fraction", "missing_fraction"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise SpecError(f"{name} must lie in [0, 1], got {v}")
        if self.apnea_jitter >= 1 or self.hypopnea_jitter >= 1:
            raise SpecError("depth jitter must be below 1 to keep depths positive")
        if self.fall_tau <= 0 or self.recovery_tau <= 0 or self.breathing_period <= 0:
            raise SpecError("time constants must be positive")
        if self.noise_std < 0 or self.breathing_amplitude < 0 or self.min_gap < 0:
            raise SpecError("noise, oscillation amplitude and gap must be nonnegative")
        if not 0 < self.train_fraction <= 1:
            raise SpecError(f"train_fraction must lie in (0, 1], got {self.train_fraction}")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_hours * 3600))

    def to_json(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_json(cls, obj: dict) -> "CohortSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise SpecError(f"unknown cohort fields: {sorted(unknown)}")
        obj = dict(obj)
        if "ahi_bands" in obj:
            obj["ahi_bands"] = tuple(tuple(float(v) for v in b) for b in obj["ahi_bands"])
        if "event_duration" in obj:
            obj["event_duration"] = tuple(int(v) for v in obj["event_duration"])
        spec = cls(**obj)
        spec.validate()
        return spec


@dataclass
class SyntheticRecord:
    record: Record
    true_ahi: float
    split: str


def place_events(n_events: int, n_samples: int, durations: np.ndarray, gap: int, rng) -> np.ndarray:
    """Start times for non-overlapping events separated by at least ``gap``.

    The spare time is split at uniformly random points, which gives
    Poisson-like spacing conditioned on the event count.
    """
    need = int(durations.sum()) + gap * max(n_events - 1, 0)
    slack = n_samples - need
    if slack < 0:
        raise SpecError(
            f"{n_events} events need {need} s but the record is only {n_samples} s long"
        )
    if n_events == 0:
        return np.zeros(0, dtype=int)
    cuts = np.sort(rng.integers(0, slack + 1, size=n_events))
    offsets = np.concatenate([[0], np.cumsum(durations[:-1] + gap)])
    return cuts + offsets


def _trough(n_samples, start, end, depth, fall_tau, recovery_tau, wiggle=None):
    t = np.arange(n_samples, dtype=np.float64)
    drop = np.zeros(n_samples)
    during = (t >= start) & (t < end)
    shape = 1.0 - np.exp(-(t[during] - start) / fall_tau)
    if wiggle is not None:
        shape = shape * wiggle
    drop[during] = depth * shape
    at_end = drop[end - 1] if end > start else 0.0
    after = t >= end
    drop[after] = at_end * np.exp(-(t[after] - end + 1) / recovery_tau)
    return drop


def generate_record(spec: CohortSpec, record_id: str, target_ahi: float, rng) -> tuple[Record, float]:
    n = spec.n_samples
    n_events = int(round(target_ahi * spec.duration_hours))
    lo, hi = spec.event_duration
    durations = rng.integers(lo, hi + 1, size=n_events)
    starts = place_events(n_events, n, durations, spec.min_gap, rng)
    is_apnea = rng.random(n_events) < spec.apnea_fraction

    t = np.arange(n, dtype=np.float64)
    phase = rng.uniform(0, 2 * np.pi)
    period = spec.breathing_period * rng.uniform(0.8, 1.2)
    clean = BASELINE + spec.breathing_amplitude * np.sin(2 * np.pi * t / period + phase)
    events = []
    for s, d, apnea in zip(starts, durations, is_apnea):
        s, e = int(s), int(s + d)
        # work on a local window to keep generation linear in record length
        w0, w1 = s, min(n, e + int(10 * spec.recovery_tau))
        if apnea:
            depth = spec.apnea_depth * (1 + rng.uniform(-spec.apnea_jitter, spec.apnea_jitter))
            drop = _trough(w1 - w0, 0, e - s, depth, spec.fall_tau, spec.recovery_tau)
        else:
            depth = spec.hypopnea_depth * (1 + rng.uniform(-spec.hypopnea_jitter, spec.hypopnea_jitter))
            knots = rng.uniform(0.4, 1.3, size=4)
            wiggle = np.interp(np.linspace(0, 3, e - s), np.arange(4), knots)
            drop = _trough(w1 - w0, 0, e - s, depth, spec.fall_tau * rng.uniform(0.5, 2.0),
                           spec.recovery_tau * rng.uniform(0.5, 2.0), wiggle)
        clean[w0:w1] -= drop
        events.append(Event(s, e, "A" if apnea else "H"))
    clean = np.clip(clean, *CLEAN_RANGE)
    samples = np.clip(clean + spec.noise_std * rng.standard_normal(n), 0.0, 100.0)
    samples = np.round(samples, 3)
    if spec.missing_fraction > 0:
        samples[rng.random(n) < spec.missing_fraction] = np.nan
    return Record(record_id, samples, tuple(events)), n_events / spec.duration_hours


def generate(spec: CohortSpec) -> list[SyntheticRecord]:
    """Generate the cohort; identical specs give identical cohorts."""
    spec.validate()
    root = np.random.SeedSequence(spec.seed)
    children = root.spawn(spec.n_records + 1)
    split_rng = np.random.default_rng(children[-1])
    n_train = int(round(spec.train_fraction * spec.n_records))
    train = set(split_rng.permutation(spec.n_records)[:n_train].tolist())
    width = max(3, len(str(spec.n_records - 1)))
    out = []
    for i in range(spec.n_records):
        rng = np.random.default_rng(children[i])
        lo, hi = spec.ahi_bands[i % len(spec.ahi_bands)]
        target = rng.uniform(lo, hi)
        rec, ahi = generate_record(spec, f"rec{i:0{width}d}", target, rng)
        out.append(SyntheticRecord(rec, ahi, "train" if i in train else "test"))
    return out


def write_cohort(cohort: list[SyntheticRecord], directory) -> None:
    """``records/<id>.csv`` + ``records/<id>.events.csv`` and ``cohort.csv``."""
    directory = Path(directory)
    rec_dir = directory / "records"
    rec_dir.mkdir(parents=True, exist_ok=True)
    for item in cohort:
        path = rec_dir / f"{item.record.id}.csv"
        write_record(item.record, path, annotation_path_for(path))
    with open(directory / "cohort.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "duration_hours", "true_ahi", "split"])
        for item in cohort:
            writer.writerow([item.record.id, repr(item.record.duration_hours), repr(item.true_ahi), item.split])


def read_cohort(path) -> dict:
    """``id -> (duration_hours, true_ahi, split)`` from a ``cohort.csv``."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out[row["id"]] = (float(row["duration_hours"]), float(row["true_ahi"]), row["split"])
    return out
