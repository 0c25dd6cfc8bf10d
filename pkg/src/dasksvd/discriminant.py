"""Class-conditional atom statistics and discriminant measures.

For atom ``j`` and class ``l`` (``n_l`` signals, codes ``A_l``):

* activation probability ``p[l, j]``: fraction of class-``l`` codes
  using atom ``j``;
* coefficient magnitude ``q[l, j] = |A_l[j, :]|_1 / n_l``;
* removal error ``r[l, j] = |X_l - sum_{i != j} phi_i A_l[i, :]|_F^2 / n_l``.

Classes are ranked per atom by activation probability into a winner and
a runner-up, and the measures compare the two.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .coding import ACTIVE_TOL, Dictionary
from .errors import ConfigError, EmptyClassError, ShapeError


@dataclass(frozen=True)
class ClassStats:
    p: np.ndarray  # (k, M)
    q: np.ndarray  # (k, M)
    r: np.ndarray  # (k, M)
    counts: np.ndarray  # (k,)
    activations: np.ndarray  # (k, M) integer activation counts
    classes: tuple = ()

    @property
    def n_classes(self) -> int:
        return self.p.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.p.shape[1]


def compute_stats(codes_by_class: Sequence, X_by_class: Sequence, dictionary: Dictionary,
                  classes: Sequence[str] = ()) -> ClassStats:
    """Per-class statistics from per-class codes and signals.

    ``codes_by_class[l]`` is an ``M x n_l`` coefficient array (or
    :class:`~dasksvd.coding.SparseCodes`) for the signals
    ``X_by_class[l]`` (``N x n_l``).  Removal errors come from the full
    residual with each atom's contribution added back, rather than from
    ``M`` separate re-syntheses.
    """
    if len(codes_by_class) != len(X_by_class):
        raise ShapeError("codes and signals must be given for the same classes")
    Phi = dictionary.atoms
    atom_sq = np.sum(Phi * Phi, axis=0)
    p, qs, rs, counts, eta = [], [], [], [], []
    for l, (A, X) in enumerate(zip(codes_by_class, X_by_class)):
        A = np.asarray(getattr(A, "coefficients", A), dtype=np.float64)
        X = np.asarray(getattr(X, "values", X), dtype=np.float64)
        n_l = A.shape[1]
        if n_l == 0:
            name = classes[l] if l < len(classes) else l
            raise EmptyClassError(f"class {name!r} has no signals")
        if A.shape[0] != dictionary.n_atoms or X.shape != (dictionary.n_features, n_l):
            raise ShapeError(
                f"class {l}: codes {A.shape} and signals {X.shape} do not match dictionary {Phi.shape}"
            )
        active = np.abs(A) > ACTIVE_TOL
        R = X - Phi @ A
        # |R + phi_j a_j|^2 = |R|^2 + 2 a_j . (phi_j^T R) + |phi_j|^2 |a_j|^2
        cross = np.sum(A * (Phi.T @ R), axis=1)
        removal = np.sum(R * R) + 2.0 * cross + atom_sq * np.sum(A * A, axis=1)
        eta.append(active.sum(axis=1))
        p.append(eta[-1] / n_l)
        qs.append(np.sum(np.abs(A) * active, axis=1) / n_l)
        rs.append(np.maximum(removal, 0.0) / n_l)
        counts.append(n_l)
    return ClassStats(np.array(p), np.array(qs), np.array(rs), np.array(counts),
                      np.array(eta), tuple(classes))


def stats_for(X, codes, dictionary: Dictionary) -> ClassStats:
    """Split a labelled :class:`SegmentMatrix` and its codes by class."""
    coef = np.asarray(getattr(codes, "coefficients", codes))
    by_A, by_X = [], []
    for c in X.classes:
        idx = np.flatnonzero(X.labels == c)
        by_A.append(coef[:, idx])
        by_X.append(X.values[:, idx])
    return compute_stats(by_A, by_X, dictionary, X.classes)


def rank_classes(stats: ClassStats, j: int):
    """``(winner, runner_up, tie)`` by activation probability of atom ``j``.

    Ties go to the smallest class index; ``tie`` flags a shared maximum.
    """
    if stats.n_classes < 2:
        raise ConfigError("ranking needs at least two classes")
    col = stats.p[:, j]
    order = np.argsort(-col, kind="stable")
    return int(order[0]), int(order[1]), bool(col[order[0]] == col[order[1]])


def _ratio(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den > 0)
    return out


@dataclass(frozen=True)
class AtomScores:
    """Vectorised per-atom scores; index ``j`` gives the record for atom ``j``."""

    winner: np.ndarray
    runner_up: np.ndarray
    winner_tie: np.ndarray
    m_af: np.ndarray
    m_cm: np.ndarray
    m_re: np.ndarray
    m_combined: np.ndarray
    raw_cm: np.ndarray
    raw_re: np.ndarray
    alpha: float
    beta: float

    def __len__(self):
        return self.winner.size

    def __getitem__(self, j) -> "AtomScore":
        return AtomScore(int(j), int(self.winner[j]), int(self.runner_up[j]),
                         float(self.m_af[j]), float(self.m_cm[j]), float(self.m_re[j]),
                         float(self.m_combined[j]), bool(self.winner_tie[j]))

    def save_csv(self, path, classes: Sequence[str] = ()) -> None:
        name = (lambda i: classes[i]) if classes else (lambda i: i)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["j", "winner", "runner_up", "m_af", "m_cm", "m_re", "m_combined",
                             "raw_cm", "raw_re"])
            for j in range(len(self)):
                writer.writerow([j, name(int(self.winner[j])), name(int(self.runner_up[j])),
                                 repr(float(self.m_af[j])), repr(float(self.m_cm[j])),
                                 repr(float(self.m_re[j])), repr(float(self.m_combined[j])),
                                 repr(float(self.raw_cm[j])), repr(float(self.raw_re[j]))])


@dataclass(frozen=True)
class AtomScore:
    atom_index: int
    winner: int
    runner_up: int
    m_af: float
    m_cm: float
    m_re: float
    m_combined: float
    winner_tie: bool


def check_weights(alpha: float, beta: float) -> None:
    if alpha < 0 or beta < 0 or alpha + beta > 1 + 1e-12:
        raise ConfigError(f"need alpha, beta >= 0 and alpha + beta <= 1, got ({alpha}, {beta})")


def score_atoms(stats: ClassStats, alpha: float = 0.33, beta: float = 0.17) -> AtomScores:
    """All measures for every atom at once.

    Zero denominators give 0, as does every measure of an atom that no
    class activates; the magnitude and error measures are clamped
    at 0 because the winner/runner-up ordering comes from activation
    probability and need not agree with theirs.  Unclamped values are kept
    in ``raw_cm`` / ``raw_re``.
    """
    check_weights(alpha, beta)
    if stats.n_classes < 2:
        raise ConfigError("scoring needs at least two classes")
    order = np.argsort(-stats.p, axis=0, kind="stable")
    win, run = order[0], order[1]
    cols = np.arange(stats.n_atoms)
    p_w, p_r = stats.p[win, cols], stats.p[run, cols]
    q_w, q_r = stats.q[win, cols], stats.q[run, cols]
    r_w, r_r = stats.r[win, cols], stats.r[run, cols]
    m_af = _ratio(p_w - p_r, p_w)
    raw_cm = _ratio(q_w - q_r, q_w)
    raw_re = _ratio(r_r - r_w, r_r)
    m_cm = np.clip(raw_cm, 0.0, 1.0)
    m_re = np.clip(raw_re, 0.0, 1.0)
    # an atom no class uses is non-discriminant under every measure
    dead = p_w == 0
    m_cm[dead] = 0.0
    m_re[dead] = 0.0
    m = alpha * m_af + beta * m_cm + (1.0 - alpha - beta) * m_re
    return AtomScores(win, run, p_w == p_r, m_af, m_cm, m_re, m, raw_cm, raw_re,
                      float(alpha), float(beta))


def measure_af(stats: ClassStats, j: int) -> float:
    return float(score_atoms(stats, 1.0, 0.0).m_af[j])


def measure_cm(stats: ClassStats, j: int) -> float:
    return float(score_atoms(stats, 0.0, 1.0).m_cm[j])


def measure_re(stats: ClassStats, j: int) -> float:
    return float(score_atoms(stats, 0.0, 0.0).m_re[j])


def measure_combined(stats: ClassStats, j: int, alpha: float, beta: float) -> float:
    return float(score_atoms(stats, alpha, beta).m_combined[j])


def combine(m_af: float, m_cm: float, m_re: float, alpha: float, beta: float) -> float:
    check_weights(alpha, beta)
    return alpha * m_af + beta * m_cm + (1.0 - alpha - beta) * m_re


def dcaf(stats: ClassStats, j=None):
    """``|p_1 - p_2|`` for a two-class problem (all atoms if ``j`` is None)."""
    if stats.n_classes != 2:
        raise ConfigError(f"DCAF is defined for two classes only, got {stats.n_classes}")
    d = np.abs(stats.p[0] - stats.p[1])
    return d if j is None else float(d[j])


def simplex_grid(step: float):
    """``(alpha, beta)`` pairs on the grid of spacing ``step`` with ``alpha + beta <= 1``."""
    if step <= 0:
        raise ConfigError(f"grid step must be positive, got {step}")
    n = int(np.floor(1.0 / step + 1e-9))
    pts = []
    for i in range(n + 1):
        for k in range(n + 1 - i):
            a, b = round(i * step, 12), round(k * step, 12)
            if a + b <= 1.0 + 1e-12:
                pts.append((a, b))
    return pts


def grid_search_alpha_beta(evaluate: Callable[[float, float], float], step: float = 0.01):
    """Grid maximiser of ``evaluate(alpha, beta)``; ties prefer smaller alpha, then beta."""
    best, best_val = None, -np.inf
    for a, b in simplex_grid(step):
        v = float(evaluate(a, b))
        if v > best_val:
            best, best_val = (a, b), v
    return best
