"""Compare the compiled and pure-Python batch OMP kernels.

    python3 benchmarks/bench_kernels.py [--signals 2000] [--repeat 3]
"""
import argparse
import time

import numpy as np

from dasksvd import _pykernels
from dasksvd.coding import COND_MAX, RESIDUAL_FLOOR

try:
    from dasksvd import _ckernels
except ImportError:
    _ckernels = None


def problem(n_features, n_atoms, n_signals, seed=0):
    rng = np.random.default_rng(seed)
    D = rng.standard_normal((n_features, n_atoms))
    D /= np.linalg.norm(D, axis=0)
    X = rng.standard_normal((n_features, n_signals))
    atoms_t = np.ascontiguousarray(D.T)
    gram = np.ascontiguousarray(atoms_t @ atoms_t.T)
    sig_t = np.ascontiguousarray(X.T)
    corr0 = np.ascontiguousarray(sig_t @ atoms_t.T)
    return atoms_t, gram, sig_t, corr0


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--signals", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    print(f"{'N':>4} {'M':>4} {'q':>2} {'python s':>10} {'cython s':>10} {'speedup':>8} {'max|diff|':>10}")
    for n_features, n_atoms, q in [(128, 256, 4), (128, 60, 4), (64, 128, 8), (8, 12, 2)]:
        atoms_t, gram, sig_t, corr0 = problem(n_features, n_atoms, args.signals)
        call = (atoms_t, gram, sig_t, corr0, q, RESIDUAL_FLOOR, COND_MAX)
        t_py, (s_py, c_py, _) = best_of(_pykernels.omp_batch, call, args.repeat)
        if _ckernels is None:
            print(f"{n_features:4d} {n_atoms:4d} {q:2d} {t_py:10.4f} {'n/a':>10}")
            continue
        t_c, (s_c, c_c, _) = best_of(_ckernels.omp_batch, call, args.repeat)
        assert np.array_equal(s_py, s_c), "kernels chose different supports"
        diff = float(np.max(np.abs(c_py - c_c)))
        print(f"{n_features:4d} {n_atoms:4d} {q:2d} {t_py:10.4f} {t_c:10.4f} {t_py / t_c:8.1f} {diff:10.2e}")


if __name__ == "__main__":
    main()
