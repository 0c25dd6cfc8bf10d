"""Structured discriminant dictionaries: DAS-KSVD, MDCS and MDAS.

All three learn unsupervised KSVD dictionaries, score the atoms with the
class-conditional measures of :mod:`dasksvd.discriminant`, and keep the
best atoms for each class.  MDCS and MDAS select ``I`` atoms per class
from one dictionary; DAS-KSVD repeats a learn-and-pick-one-per-class step
``I`` times on re-sampled, progressively noisier data.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .coding import Dictionary, batch_encode, load_matrix
from .discriminant import ClassStats, check_weights, dcaf, score_atoms, stats_for
from .errors import ConfigError, DataError, InsufficientDataError
from .ksvd import KsvdConfig, ksvd_learn
from .signal import SegmentMatrix

log = logging.getLogger(__name__)

DUPLICATE_CORRELATION = 0.999
MEASURES = ("combined", "dcaf")

Learner = Callable[[SegmentMatrix, int], Dictionary]


class SelectionWarning(UserWarning):
    """A class won too few atoms and the least-bad fallback filled in."""


@dataclass(frozen=True)
class DasKsvdConfig:
    iterations: int = 20
    samples_per_class: int = 500
    tau1: float = 0.5
    tau2: float = 0.1
    alpha: float = 0.33
    beta: float = 0.17
    ksvd: KsvdConfig = KsvdConfig()
    seed: int = 0

    def validate(self) -> None:
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ConfigError(f"iterations must be a positive integer, got {self.iterations}")
        if int(self.samples_per_class) != self.samples_per_class or self.samples_per_class < 1:
            raise ConfigError(f"samples_per_class must be a positive integer, got {self.samples_per_class}")
        if not 0.0 <= self.tau1 < 1.0:
            raise ConfigError(f"tau1 must lie in [0, 1), got {self.tau1}")
        if not 0.0 <= self.tau2 < 1.0:
            raise ConfigError(f"tau2 must lie in [0, 1), got {self.tau2}")
        check_weights(self.alpha, self.beta)


@dataclass(frozen=True)
class SelectionConfig:
    """Settings shared by MDCS and MDAS."""

    per_class: int = 20
    measure: str = "combined"
    alpha: float = 0.33
    beta: float = 0.17
    ksvd: KsvdConfig = KsvdConfig()
    seed: int = 0

    def validate(self) -> None:
        if int(self.per_class) != self.per_class or self.per_class < 1:
            raise ConfigError(f"per_class must be a positive integer, got {self.per_class}")
        if self.measure not in MEASURES:
            raise ConfigError(f"measure must be one of {MEASURES}, got {self.measure!r}")
        check_weights(self.alpha, self.beta)


def _config_dict(cfg) -> dict:
    return json.loads(json.dumps(asdict(cfg)))


# --- artifacts --------------------------------------------------------------

@dataclass
class StructuredDictionary:
    """Class-blocked concatenation of per-class sub-dictionaries."""

    dictionary: Dictionary
    class_of_atom: np.ndarray
    iteration_of_atom: np.ndarray
    classes: tuple
    fallbacks: int = 0
    method: str = "das-ksvd"
    config: dict = field(default_factory=dict)

    @property
    def n_atoms(self) -> int:
        return self.dictionary.n_atoms

    def atoms_per_class(self) -> dict:
        return {c: int(np.sum(self.class_of_atom == c)) for c in self.classes}

    def sub_dictionary(self, label) -> Dictionary:
        return self.dictionary.select(np.flatnonzero(self.class_of_atom == label))

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.dictionary.save_csv(directory / "dictionary.csv")
        meta = {
            "kind": "structured",
            "method": self.method,
            "n": self.dictionary.n_features,
            "m": self.dictionary.n_atoms,
            "norm_mode": self.dictionary.norm_mode,
            "classes": list(self.classes),
            "class_of_atom": self.class_of_atom.tolist(),
            "iteration_of_atom": [int(i) for i in self.iteration_of_atom],
            "atoms_per_class": self.atoms_per_class(),
            "fallbacks": int(self.fallbacks),
            "config": self.config,
        }
        _write_json(directory / "dictionary.json", meta)


@dataclass
class MdasSelection:
    """Full dictionary plus the rows of its codes kept as features."""

    dictionary: Dictionary
    selected_rows: np.ndarray
    class_of_row: np.ndarray
    classes: tuple
    fallbacks: int = 0
    method: str = "mdas"
    config: dict = field(default_factory=dict)

    def __iter__(self):
        # unpacks as (dictionary, selected_rows)
        return iter((self.dictionary, self.selected_rows))

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.dictionary.save_csv(directory / "dictionary.csv")
        meta = {
            "kind": "mdas",
            "method": self.method,
            "n": self.dictionary.n_features,
            "m": self.dictionary.n_atoms,
            "norm_mode": self.dictionary.norm_mode,
            "classes": list(self.classes),
            "selected_rows": [int(r) for r in self.selected_rows],
            "class_of_row": self.class_of_row.tolist(),
            "fallbacks": int(self.fallbacks),
            "config": self.config,
        }
        _write_json(directory / "dictionary.json", meta)


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_artifact(directory):
    """Load a :class:`StructuredDictionary` or :class:`MdasSelection`."""
    directory = Path(directory)
    try:
        with open(directory / "dictionary.json") as fh:
            meta = json.load(fh)
        atoms = load_matrix(directory / "dictionary.csv")
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot load dictionary from {directory}: {exc}") from exc
    if atoms.shape != (meta["n"], meta["m"]):
        raise DataError(f"{directory}: dictionary shape {atoms.shape} disagrees with sidecar")
    d = Dictionary(atoms, meta.get("norm_mode", "unit_l2"))
    classes = tuple(meta["classes"])
    if meta["kind"] == "structured":
        return StructuredDictionary(d, np.array(meta["class_of_atom"], dtype=str),
                                    np.array(meta["iteration_of_atom"], dtype=int), classes,
                                    meta.get("fallbacks", 0), meta.get("method", ""), meta.get("config", {}))
    if meta["kind"] == "mdas":
        return MdasSelection(d, np.array(meta["selected_rows"], dtype=np.intp),
                             np.array(meta["class_of_row"], dtype=str), classes,
                             meta.get("fallbacks", 0), meta.get("method", ""), meta.get("config", {}))
    raise DataError(f"{directory}: unknown dictionary kind {meta['kind']!r}")


# --- re-sampling ------------------------------------------------------------

@dataclass(frozen=True)
class ResampleState:
    p: np.ndarray
    iteration: int = 0
    tau1: float = 0.5
    tau2: float = 0.1
    seed: int = 0

    @classmethod
    def uniform(cls, n: int, tau1=0.5, tau2=0.1, seed=0) -> "ResampleState":
        return cls(np.full(n, 1.0 / n), 0, tau1, tau2, seed)


def _draw(rng, idx, weights, t):
    w = weights[idx]
    pos = idx[w > 0]
    if pos.size >= t:
        return rng.choice(idx, size=t, replace=False, p=w / w.sum())
    rest = idx[w <= 0]
    extra = rng.choice(rest, size=t - pos.size, replace=False)
    return np.concatenate([pos, extra])


def sample_data(X_trn: SegmentMatrix, t: int, state: ResampleState):
    """Draw ``t`` segments per class and degrade them with Gaussian noise.

    Draws are weighted by ``state.p`` (renormalised within each class) and
    without replacement.  Each drawn copy gets noise of standard deviation
    ``iteration * tau2`` times its own sample standard deviation.  The
    drawn segments' probabilities are then multiplied by ``tau1`` and the
    whole vector renormalised.  Returns ``(X_lrn, next_state)``;
    ``X_lrn.origin`` indexes the drawn columns of ``X_trn``.
    """
    p = np.asarray(state.p, dtype=np.float64)
    if p.size != X_trn.n:
        raise DataError(f"state has {p.size} probabilities for {X_trn.n} segments")
    rng = np.random.default_rng([state.seed, state.iteration])
    drawn = []
    for c in X_trn.classes:
        idx = np.flatnonzero(X_trn.labels == c)
        if idx.size < t:
            raise InsufficientDataError(f"class {c!r} has {idx.size} segments, need {t}")
        drawn.append(_draw(rng, idx, p, t))
    drawn = np.concatenate(drawn)
    X_lrn = X_trn.subset(drawn)
    X_lrn.values = X_lrn.values.copy()
    scale = state.iteration * state.tau2
    if scale > 0:
        sigma = X_lrn.values.std(axis=0, ddof=1)
        X_lrn.values += rng.standard_normal(X_lrn.values.shape) * (scale * sigma)

    nxt = p.copy()
    nxt[drawn] *= state.tau1
    total = nxt.sum()
    nxt = nxt / total if total > 0 else np.full(p.size, 1.0 / p.size)
    return X_lrn, replace(state, p=nxt, iteration=state.iteration + 1)


# --- atom picking -----------------------------------------------------------

def _fallback_order(stats: ClassStats, c: int) -> np.ndarray:
    others = np.delete(stats.p, c, axis=0).max(axis=0)
    margin = stats.p[c] - others
    return np.lexsort((np.arange(margin.size), -margin))


def rank_for_class(measure: np.ndarray, winner: np.ndarray, c: int) -> np.ndarray:
    """Atoms won by class ``c`` with positive measure, best first (ties: lower index)."""
    cand = np.flatnonzero((winner == c) & (measure > 0))
    return cand[np.lexsort((cand, -measure[cand]))]


def get_atoms(stats: ClassStats, measure: np.ndarray, winner: np.ndarray, count: int,
              atoms: np.ndarray | None = None, saved: Sequence[Sequence[np.ndarray]] | None = None):
    """Pick ``count`` atoms per class.

    Returns ``(picks, fallbacks)`` where ``picks[c]`` lists atom indices for
    class ``c``.  When ``atoms`` and ``saved`` are given, an atom whose
    absolute correlation with an atom already saved for the same class
    exceeds ``DUPLICATE_CORRELATION`` is skipped.  Classes short of
    positively-scored atoms are filled by the largest activation margin
    ``p[c] - max_{other} p``.
    """
    k = stats.n_classes
    taken = set()
    picks, fallbacks = [], 0

    def duplicate(j, c):
        if atoms is None or saved is None or not saved[c]:
            return False
        prev = np.column_stack(saved[c])
        return bool(np.max(np.abs(prev.T @ atoms[:, j])) > DUPLICATE_CORRELATION)

    for c in range(k):
        chosen = []
        for j in rank_for_class(measure, winner, c):
            if len(chosen) == count:
                break
            if j in taken or duplicate(j, c):
                continue
            chosen.append(int(j))
            taken.add(int(j))
        if len(chosen) < count:
            name = stats.classes[c] if stats.classes else c
            missing = count - len(chosen)
            warnings.warn(f"class {name!r}: {missing} atom(s) picked by activation-margin fallback",
                          SelectionWarning, stacklevel=3)
            for j in _fallback_order(stats, c):
                if len(chosen) == count:
                    break
                if int(j) in taken or duplicate(j, c):
                    continue
                chosen.append(int(j))
                taken.add(int(j))
                fallbacks += 1
        picks.append(chosen)
    return picks, fallbacks


def _default_learner(ksvd_cfg: KsvdConfig, base_seed: int) -> Learner:
    def learn(X: SegmentMatrix, step: int) -> Dictionary:
        seed = int(np.random.SeedSequence([base_seed, step]).generate_state(1)[0])
        return ksvd_learn(X, replace(ksvd_cfg, seed=seed))
    return learn


def das_ksvd(X_trn: SegmentMatrix, cfg: DasKsvdConfig = DasKsvdConfig(),
             learner: Learner | None = None) -> StructuredDictionary:
    """Build a structured dictionary with ``cfg.iterations`` atoms per class."""
    cfg.validate()
    k = len(X_trn.classes)
    if k < 2:
        raise ConfigError("DAS-KSVD needs at least two classes")
    learn = learner or _default_learner(cfg.ksvd, cfg.seed)
    q = cfg.ksvd.sparsity
    state = ResampleState.uniform(X_trn.n, cfg.tau1, cfg.tau2, cfg.seed)
    saved = [[] for _ in range(k)]
    saved_iter = [[] for _ in range(k)]
    fallbacks = 0
    for step in range(cfg.iterations):
        X_lrn, state = sample_data(X_trn, cfg.samples_per_class, state)
        D = learn(X_lrn, step)
        codes = batch_encode(X_lrn, D, q)
        stats = stats_for(X_lrn, codes, D)
        scores = score_atoms(stats, cfg.alpha, cfg.beta)
        atoms = D.unit_l2()
        picks, fb = get_atoms(stats, scores.m_combined, scores.winner, 1, atoms, saved)
        fallbacks += fb
        for c, chosen in enumerate(picks):
            for j in chosen:
                saved[c].append(atoms[:, j].copy())
                saved_iter[c].append(step)
        log.info("DAS-KSVD iteration %d/%d: picked %s", step + 1, cfg.iterations,
                 [p[0] for p in picks])

    cols = [a for c in range(k) for a in saved[c]]
    return StructuredDictionary(
        Dictionary(np.column_stack(cols)),
        np.array([X_trn.classes[c] for c in range(k) for _ in saved[c]], dtype=str),
        np.array([i for c in range(k) for i in saved_iter[c]], dtype=int),
        tuple(X_trn.classes),
        fallbacks,
        "das-ksvd",
        _config_dict(cfg),
    )


def _rank_and_select(X: SegmentMatrix, cfg: SelectionConfig, learner: Learner | None):
    cfg.validate()
    k = len(X.classes)
    if cfg.measure == "dcaf" and k != 2:
        raise ConfigError(f"the dcaf measure needs exactly two classes, got {k}")
    if k < 2:
        raise ConfigError("atom selection needs at least two classes")
    learn = learner or _default_learner(cfg.ksvd, cfg.seed)
    D = learn(X, 0)
    codes = batch_encode(X, D, cfg.ksvd.sparsity)
    stats = stats_for(X, codes, D)
    scores = score_atoms(stats, cfg.alpha, cfg.beta)
    measure = dcaf(stats) if cfg.measure == "dcaf" else scores.m_combined
    picks, fallbacks = get_atoms(stats, measure, scores.winner, cfg.per_class)
    return D, picks, fallbacks


def mdcs(X_bal: SegmentMatrix, cfg: SelectionConfig = SelectionConfig(),
         learner: Learner | None = None) -> StructuredDictionary:
    """Top ``cfg.per_class`` atoms per class from a single KSVD dictionary."""
    D, picks, fallbacks = _rank_and_select(X_bal, cfg, learner)
    rows = [j for chosen in picks for j in chosen]
    k = len(X_bal.classes)
    return StructuredDictionary(
        Dictionary.from_columns(D.unit_l2()[:, rows]),
        np.array([X_bal.classes[c] for c in range(k) for _ in picks[c]], dtype=str),
        np.zeros(len(rows), dtype=int),
        tuple(X_bal.classes),
        fallbacks,
        "mdcs-bc" if cfg.measure == "dcaf" else "mdcs-mc",
        _config_dict(cfg),
    )


def mdas(X_bal: SegmentMatrix, cfg: SelectionConfig = SelectionConfig(),
         learner: Learner | None = None) -> MdasSelection:
    """Same ranking as :func:`mdcs`, but keeps the full dictionary.

    Features are the selected rows of codes computed against the full
    dictionary.
    """
    D, picks, fallbacks = _rank_and_select(X_bal, cfg, learner)
    k = len(X_bal.classes)
    return MdasSelection(
        D,
        np.array([j for chosen in picks for j in chosen], dtype=np.intp),
        np.array([X_bal.classes[c] for c in range(k) for _ in picks[c]], dtype=str),
        tuple(X_bal.classes),
        fallbacks,
        "mdas-bc" if cfg.measure == "dcaf" else "mdas-mc",
        _config_dict(cfg),
    )
