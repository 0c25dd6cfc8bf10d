"""Dictionaries, sparse codes and greedy sparse coding (OMP)."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConfigError, DataError, InvalidSignalError, ShapeError

NORM_MODES = ("unit_l2", "unit_l1")
NORM_TOL = 1e-9
RESIDUAL_FLOOR = 1e-9
COND_MAX = 1e12
ACTIVE_TOL = 1e-12
_CHUNK = 4096


def _column_norms(atoms: np.ndarray, mode: str) -> np.ndarray:
    if mode == "unit_l2":
        return np.sqrt(np.sum(atoms * atoms, axis=0))
    if mode == "unit_l1":
        return np.sum(np.abs(atoms), axis=0)
    raise ConfigError(f"unknown norm mode {mode!r}; expected one of {NORM_MODES}")


@dataclass(frozen=True)
class Dictionary:
    """An ``N x M`` matrix of atoms, one per column.

    ``norm_mode`` only fixes how the stored columns are scaled.  Encoding
    always works on l2-normalised copies and reports coefficients with
    respect to the stored columns, so ``atoms @ codes`` reconstructs the
    signal whichever mode is used.
    """

    atoms: np.ndarray
    norm_mode: str = "unit_l2"

    def __post_init__(self):
        atoms = np.array(self.atoms, dtype=np.float64, copy=True)
        if atoms.ndim != 2 or atoms.shape[1] == 0:
            raise ShapeError(f"dictionary must be a nonempty 2-D array, got shape {atoms.shape}")
        if not np.all(np.isfinite(atoms)):
            raise InvalidSignalError("dictionary contains non-finite entries")
        norms = _column_norms(atoms, self.norm_mode)
        if np.any(np.abs(norms - 1.0) > NORM_TOL):
            bad = int(np.argmax(np.abs(norms - 1.0)))
            raise ConfigError(
                f"atom {bad} has {self.norm_mode} norm {norms[bad]!r}; use Dictionary.from_columns to normalise"
            )
        atoms.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def from_columns(cls, columns, norm_mode: str = "unit_l2") -> "Dictionary":
        cols = np.asarray(columns, dtype=np.float64)
        if cols.ndim != 2:
            raise ShapeError(f"expected a 2-D array, got shape {cols.shape}")
        norms = _column_norms(cols, norm_mode)
        if np.any(norms == 0):
            raise InvalidSignalError(f"zero atom at column {int(np.argmin(norms))}")
        return cls(cols / norms, norm_mode)

    @property
    def n_features(self) -> int:
        return self.atoms.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[1]

    @property
    def l2_norms(self) -> np.ndarray:
        return np.sqrt(np.sum(self.atoms * self.atoms, axis=0))

    def unit_l2(self) -> np.ndarray:
        return self.atoms / self.l2_norms

    def with_norm(self, norm_mode: str) -> "Dictionary":
        return Dictionary.from_columns(self.atoms, norm_mode)

    def select(self, columns) -> "Dictionary":
        return Dictionary(self.atoms[:, list(columns)], self.norm_mode)

    def save_csv(self, path) -> None:
        _write_matrix(path, self.atoms)


def save_dictionary(dictionary: Dictionary, path, provenance: dict | None = None) -> None:
    """Write ``path`` (one column per atom) and a ``<stem>.json`` sidecar."""
    path = Path(path)
    dictionary.save_csv(path)
    meta = {"n": dictionary.n_features, "m": dictionary.n_atoms, "norm_mode": dictionary.norm_mode,
            "provenance": provenance or {}}
    with open(path.with_suffix(".json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dictionary(path) -> Dictionary:
    path = Path(path)
    try:
        with open(path.with_suffix(".json")) as fh:
            meta = json.load(fh)
        atoms = load_matrix(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot load dictionary {path}: {exc}") from exc
    if atoms.shape != (meta["n"], meta["m"]):
        raise DataError(f"{path}: shape {atoms.shape} disagrees with sidecar ({meta['n']}, {meta['m']})")
    return Dictionary(atoms, meta.get("norm_mode", "unit_l2"))


def _write_matrix(path, matrix: np.ndarray, header=None) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if header is not None:
            writer.writerow(header)
        for row in matrix:
            writer.writerow([repr(float(v)) for v in row])


def load_matrix(path, skip_header: bool = False) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if skip_header:
        rows = rows[1:]
    return np.array([[float(v) for v in row] for row in rows], dtype=np.float64)


@dataclass
class SparseCodes:
    """Coefficient matrix (``M x n``) produced by encoding ``n`` signals."""

    coefficients: np.ndarray
    sparsity: int
    residual_norms: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_signals(self) -> int:
        return self.coefficients.shape[1]

    def active(self, tol: float = ACTIVE_TOL) -> np.ndarray:
        return np.abs(self.coefficients) > tol

    def columns(self, idx) -> "SparseCodes":
        idx = np.asarray(idx)
        return SparseCodes(self.coefficients[:, idx], self.sparsity, self.residual_norms[idx])

    def to_triplets(self):
        rows, cols = np.nonzero(self.coefficients)
        order = np.lexsort((rows, cols))
        return [(int(rows[k]), int(cols[k]), float(self.coefficients[rows[k], cols[k]])) for k in order]

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["row", "col", "value"])
            for r, c, v in self.to_triplets():
                writer.writerow([r, c, repr(v)])

    @classmethod
    def load_csv(cls, path, shape, sparsity) -> "SparseCodes":
        coef = np.zeros(shape)
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for r, c, v in reader:
                coef[int(r), int(c)] = float(v)
        return cls(coef, sparsity, np.full(shape[1], np.nan))


def _check_budget(q, n_features):
    if int(q) != q or q < 1:
        raise ConfigError(f"sparsity budget must be a positive integer, got {q!r}")
    if q > n_features:
        raise ConfigError(f"sparsity budget {q} exceeds signal length {n_features}")


def batch_encode(X, dictionary: Dictionary, q: int) -> SparseCodes:
    """Encode every column of ``X`` with at most ``q`` atoms.

    ``X`` may be a :class:`~dasksvd.signal.SegmentMatrix` or an ``N x n``
    array.  Columns are independent, so results match per-column
    :func:`omp_encode` calls.
    """
    values = np.asarray(getattr(X, "values", X), dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    n_features = dictionary.n_features
    if values.shape[0] != n_features:
        raise ShapeError(
            f"signals have length {values.shape[0]} but dictionary atoms have length {n_features}"
        )
    _check_budget(q, n_features)
    q = int(q)
    if not np.all(np.isfinite(values)):
        raise InvalidSignalError("signal contains non-finite values")

    n = values.shape[1]
    m = dictionary.n_atoms
    coef = np.zeros((m, n))
    resid = np.zeros(n)
    if n == 0:
        return SparseCodes(coef, q, resid)

    scale = dictionary.l2_norms
    atoms_t = np.ascontiguousarray((dictionary.atoms / scale).T)
    gram = np.ascontiguousarray(atoms_t @ atoms_t.T)
    for start in range(0, n, _CHUNK):
        stop = min(start + _CHUNK, n)
        sig_t = np.ascontiguousarray(values[:, start:stop].T)
        corr0 = np.ascontiguousarray(sig_t @ atoms_t.T)
        support, c, rn = kernels.omp_batch(atoms_t, gram, sig_t, corr0, q, RESIDUAL_FLOOR, COND_MAX)
        rows, slots = np.nonzero(support >= 0)
        atom_idx = support[rows, slots]
        coef[atom_idx, start + rows] = c[rows, slots] / scale[atom_idx]
        resid[start:stop] = rn
    return SparseCodes(coef, q, resid)


def omp_encode(x, dictionary: Dictionary, q: int):
    """Encode a single signal; returns ``(coefficients, residual_norm)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected a 1-D signal, got shape {x.shape}")
    codes = batch_encode(x[:, None], dictionary, q)
    return codes.coefficients[:, 0], float(codes.residual_norms[0])
