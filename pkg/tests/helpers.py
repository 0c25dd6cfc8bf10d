"""Shared fixtures-as-functions: planted dictionaries and atom matching."""
import numpy as np


def incoherent_dictionary(rng, n, m, target, iters=500):
    """Random unit-norm ``n x m`` dictionary pushed below coherence ``target``.

    Alternates clipping the Gram matrix with a rank-``n`` projection.
    """
    D = rng.standard_normal((n, m))
    D /= np.linalg.norm(D, axis=0)
    for _ in range(iters):
        G = D.T @ D
        np.fill_diagonal(G, 0.0)
        if np.abs(G).max() <= target:
            break
        G = np.clip(G, -target, target)
        np.fill_diagonal(G, 1.0)
        w, V = np.linalg.eigh(G)
        w = np.clip(w, 0.0, None)
        top = np.argsort(w)[::-1][:n]
        D = (V[:, top] * np.sqrt(w[top])).T
        D /= np.linalg.norm(D, axis=0)
    return D


def planted_problem(seed, n=8, m=12, q=2, n_signals=600, coherence=0.5):
    """``(D, X)`` with every column of ``X`` an exact ``q``-sparse mix of atoms of ``D``."""
    rng = np.random.default_rng(seed)
    D = incoherent_dictionary(rng, n, m, coherence)
    A = np.zeros((m, n_signals))
    for i in range(n_signals):
        support = rng.choice(m, q, replace=False)
        A[support, i] = rng.standard_normal(q)
    return D, D @ A


def greedy_match(planted, learned):
    """Best |correlation| of each planted atom under a greedy one-to-one matching."""
    C = np.abs(planted.T @ learned)
    order = np.dstack(np.unravel_index(np.argsort(-C, axis=None, kind="stable"), C.shape))[0]
    used_p, used_l, best = set(), set(), {}
    for i, j in order:
        if i in used_p or j in used_l:
            continue
        used_p.add(i)
        used_l.add(j)
        best[i] = C[i, j]
    return np.array([best[i] for i in range(C.shape[0])])
