"""Pure-Python reference kernels.

Used when the compiled extension is unavailable, and as the parity
reference for it in the test suite.
"""
import numpy as np


def omp_batch(atoms_t, gram, signals_t, corr0, q, res_tol, cond_max):
    """Gram-based orthogonal matching pursuit over a batch of signals.

    Parameters
    ----------
    atoms_t : (M, N) array
        Unit-norm atoms, one per row.
    gram : (M, M) array
        ``atoms_t @ atoms_t.T``.
    signals_t : (n, N) array
        Signals, one per row.
    corr0 : (n, M) array
        ``signals_t @ atoms_t.T``.
    q : int
        Maximum number of atoms per signal.
    res_tol : float
        Selection stops once the residual norm drops to this value.
    cond_max : float
        Selection stops before an atom that would push the estimated
        condition number of the support Gram matrix above this value.

    Returns
    -------
    support : (n, q) int array
        Selected atom indices in selection order, padded with -1.
    coef : (n, q) array
        Least-squares coefficients on the support, aligned with ``support``.
    resid : (n,) array
        Final residual norms.

    Notes
    -----
    The support Gram matrix is factored incrementally as ``L L^T``; each
    step costs one triangular solve for the new row plus two for the
    coefficients.  The residual is formed explicitly so the stopping test
    does not suffer from cancellation in ``|x|^2 - c^T corr``.
    """
    n, dim = signals_t.shape
    m = atoms_t.shape[0]
    support = np.full((n, q), -1, dtype=np.intp)
    coef = np.zeros((n, q))
    resid = np.zeros(n)
    chol = np.zeros((q, q))

    for i in range(n):
        x = signals_t[i]
        c0 = corr0[i]
        alpha = c0.copy()
        used = np.zeros(m, dtype=bool)
        rn = float(np.sqrt(x @ x))
        sel = []
        c = np.zeros(0)
        dmax = dmin = 0.0

        for k in range(q):
            if rn <= res_tol:
                break
            score = np.abs(alpha)
            score[used] = -1.0
            best = int(np.argmax(score))
            if score[best] <= 0.0:
                break

            w = np.zeros(k)
            for a in range(k):
                w[a] = (gram[sel[a], best] - chol[a, :a] @ w[:a]) / chol[a, a]
            d = gram[best, best] - w @ w
            if d <= 0.0:
                break
            diag = np.sqrt(d)
            if k == 0:
                dmax = dmin = diag
            else:
                hi, lo = max(dmax, diag), min(dmin, diag)
                if (hi / lo) ** 2 > cond_max:
                    break
                dmax, dmin = hi, lo
            chol[k, :k] = w
            chol[k, k] = diag
            sel.append(best)
            used[best] = True
            nsel = k + 1

            rhs = c0[sel]
            y = np.zeros(nsel)
            for a in range(nsel):
                y[a] = (rhs[a] - chol[a, :a] @ y[:a]) / chol[a, a]
            c = np.zeros(nsel)
            for a in range(nsel - 1, -1, -1):
                c[a] = (y[a] - chol[a + 1:nsel, a] @ c[a + 1:nsel]) / chol[a, a]

            r = x - c @ atoms_t[sel]
            rn = float(np.sqrt(r @ r))
            alpha = c0 - gram[:, sel] @ c

        support[i, :len(sel)] = sel
        coef[i, :len(sel)] = c
        resid[i] = rn

    return support, coef, resid
