"""Unsupervised dictionary learning by KSVD."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .coding import Dictionary, SparseCodes, batch_encode
from .errors import ConfigError, InsufficientDataError, InvalidSignalError

log = logging.getLogger(__name__)

POWER_TOL = 1e-10
POWER_MAX_ITER = 1000
UNDERUSE_FRACTION = 0.25
DUPLICATE_COHERENCE = 0.99
TRIAL_SWEEPS = 3
TRIAL_COOLDOWN = 5


@dataclass(frozen=True)
class KsvdConfig:
    redundancy_factor: float = 2.0
    sparsity: int = 4
    max_sweeps: int = 30
    seed: int = 0
    convergence_tol: float = 1e-4
    replace_weak_atoms: bool = True

    def n_atoms(self, n_features: int) -> int:
        return int(round(self.redundancy_factor * n_features))

    def validate(self, n_features: int) -> None:
        if self.redundancy_factor < 1.0:
            raise ConfigError(f"redundancy factor must be >= 1, got {self.redundancy_factor}")
        if int(self.sparsity) != self.sparsity or not 1 <= self.sparsity <= n_features:
            raise ConfigError(f"sparsity must be an integer in [1, {n_features}], got {self.sparsity}")
        if int(self.max_sweeps) != self.max_sweeps or self.max_sweeps < 1:
            raise ConfigError(f"max_sweeps must be a positive integer, got {self.max_sweeps}")
        if self.convergence_tol < 0:
            raise ConfigError(f"convergence_tol must be nonnegative, got {self.convergence_tol}")


@dataclass
class KsvdResult:
    dictionary: Dictionary
    codes: SparseCodes
    errors: list = field(default_factory=list)
    sweeps_run: int = 0


def _values(X) -> np.ndarray:
    values = np.asarray(getattr(X, "values", X), dtype=np.float64)
    if values.ndim != 2:
        raise InvalidSignalError(f"training data must be 2-D, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise InvalidSignalError("training data contains non-finite values")
    return values


def init_dictionary(X, n_atoms: int, seed: int = 0) -> Dictionary:
    """``n_atoms`` distinct random training columns, l2-normalised."""
    values = _values(X)
    nonzero = np.flatnonzero(np.any(values != 0, axis=0))
    if nonzero.size < n_atoms:
        raise InsufficientDataError(
            f"need {n_atoms} nonzero training columns to initialise the dictionary, have {nonzero.size}"
        )
    rng = np.random.default_rng(seed)
    pick = rng.choice(nonzero, size=n_atoms, replace=False)
    return Dictionary.from_columns(values[:, pick])


def dominant_singular_pair(E: np.ndarray, start=None, tol: float = POWER_TOL,
                           max_iter: int = POWER_MAX_ITER):
    """Leading singular triple ``(u, s, v)`` of ``E`` by power iteration.

    Iterates ``u <- E E^T u`` from ``start`` (falling back to the largest
    column of ``E`` if ``start`` is orthogonal to its range).
    """
    u = None
    if start is not None:
        u = np.asarray(start, dtype=np.float64).copy()
        if np.linalg.norm(E.T @ u) <= 1e-300:
            u = None
    if u is None:
        u = E[:, int(np.argmax(np.sum(E * E, axis=0)))].copy()
    nu = np.linalg.norm(u)
    if nu == 0:
        v = np.zeros(E.shape[1])
        u = np.zeros(E.shape[0])
        u[0] = 1.0
        return u, 0.0, v
    u /= nu
    for _ in range(max_iter):
        w = E @ (E.T @ u)
        nw = np.linalg.norm(w)
        if nw == 0:
            break
        w /= nw
        done = np.linalg.norm(w - u) <= tol
        u = w
        if done:
            break
    sv = E.T @ u
    s = float(np.linalg.norm(sv))
    v = sv / s if s > 0 else sv
    return u, s, v


def _encode_keep_better(values, D, A, q):
    """Re-encode with OMP, keeping each old code that represents its signal better."""
    current = np.sqrt(np.sum((values - D @ A) ** 2, axis=0))
    fresh = batch_encode(values, Dictionary(D), q)
    better = fresh.residual_norms <= current
    A = A.copy()
    A[:, better] = fresh.coefficients[:, better]
    return A


def _sweep(values, D, A, q, reencode=True):
    """One KSVD sweep; returns updated ``(D, A, R, err)`` without touching the inputs."""
    D = D.copy()
    A = _encode_keep_better(values, D, A, q) if reencode else A.copy()
    R = values - D @ A
    unused = []
    for j in range(D.shape[1]):
        omega = np.flatnonzero(A[j])
        if omega.size == 0:
            unused.append(j)
            continue
        E = R[:, omega] + np.outer(D[:, j], A[j, omega])
        u, _, _ = dominant_singular_pair(E, D[:, j])
        row = E.T @ u
        D[:, j] = u
        A[j, omega] = row
        R[:, omega] = E - np.outer(u, row)
    if unused:
        _replace_atoms(values, D, A, R, unused)
    return D, A, R, float(np.sum(R * R))


def _replace_atoms(values, D, A, R, atoms):
    """Overwrite ``atoms`` with the worst-represented training columns (in place)."""
    col_err = np.sum(R * R, axis=0)
    norms = np.sqrt(np.sum(values * values, axis=0))
    candidates = [i for i in np.argsort(-col_err, kind="stable") if norms[i] > 0]
    for j, i in zip(atoms, candidates):
        D[:, j] = values[:, i] / norms[i]
        A[j, :] = 0.0


def _weak_atoms(D, A):
    """Atoms used far less than average, or nearly parallel to an earlier atom."""
    usage = np.count_nonzero(A, axis=1)
    weak = set(np.flatnonzero((usage > 0) & (usage < UNDERUSE_FRACTION * usage.mean())).tolist())
    G = np.abs(D.T @ D)
    np.fill_diagonal(G, 0.0)
    weak |= set(np.flatnonzero(np.triu(G > DUPLICATE_COHERENCE).any(axis=0)).tolist())
    return sorted(weak)


def ksvd(X, cfg: KsvdConfig = KsvdConfig(), init: Dictionary | None = None) -> KsvdResult:
    """Run KSVD and return the dictionary, final codes and error trace.

    Each sweep re-encodes the data with OMP, keeping a signal's previous
    code whenever the new one represents it worse, then updates every atom
    and its coefficient row from the dominant singular pair of the
    restricted residual.  Atoms no signal uses are replaced by the
    worst-represented training columns.

    When ``cfg.replace_weak_atoms`` is set, under-used or duplicated atoms
    are also replaced, but only on a trial branch: the branch runs for up
    to ``TRIAL_SWEEPS`` sweeps and is adopted as soon as its error drops
    below that of the current iterate, otherwise it is discarded.  Every
    sweep, kept or discarded, counts against ``cfg.max_sweeps``.

    ``errors`` holds the total squared error of each adopted iterate and
    is therefore non-increasing.
    """
    values = _values(X)
    n_features, n = values.shape
    cfg.validate(n_features)
    m = cfg.n_atoms(n_features)
    if n < m:
        raise InsufficientDataError(f"KSVD with {m} atoms needs at least {m} training columns, got {n}")
    if init is None:
        init = init_dictionary(values, m, cfg.seed)
    elif init.n_atoms != m or init.n_features != n_features:
        raise ConfigError(f"initial dictionary has shape {init.atoms.shape}, expected {(n_features, m)}")
    q = int(cfg.sparsity)
    budget = int(cfg.max_sweeps)

    D = init.unit_l2().copy()
    A = batch_encode(values, Dictionary(D), q).coefficients
    D, A, R, err = _sweep(values, D, A, q, reencode=False)
    errors = [err]
    used = 1
    cooldown = 0
    while used < budget:
        weak = _weak_atoms(D, A) if cfg.replace_weak_atoms and cooldown == 0 else []
        if weak:
            Dt, At = D.copy(), A.copy()
            _replace_atoms(values, Dt, At, R, weak)
            adopted = False
            for _ in range(TRIAL_SWEEPS):
                if used >= budget:
                    break
                Dt, At, Rt, et = _sweep(values, Dt, At, q)
                used += 1
                if et < err:
                    D, A, R, err = Dt, At, Rt, et
                    errors.append(err)
                    adopted = True
                    break
            log.debug("trial replacing %d weak atoms %s", len(weak), "adopted" if adopted else "discarded")
            if not adopted:
                cooldown = TRIAL_COOLDOWN
            continue
        D, A, R, new_err = _sweep(values, D, A, q)
        used += 1
        cooldown = max(0, cooldown - 1)
        errors.append(new_err)
        converged = err - new_err <= cfg.convergence_tol * err
        err = new_err
        if converged and (not cfg.replace_weak_atoms or cooldown > 0 or not _weak_atoms(D, A)):
            break

    # renormalise against drift from repeated updates
    D /= np.sqrt(np.sum(D * D, axis=0))
    dictionary = Dictionary(D)
    codes = SparseCodes(A, q, np.sqrt(np.sum((values - D @ A) ** 2, axis=0)))
    return KsvdResult(dictionary, codes, errors, used)


def ksvd_learn(X, cfg: KsvdConfig = KsvdConfig()) -> Dictionary:
    return ksvd(X, cfg).dictionary
