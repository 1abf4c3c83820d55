import numpy as np


def nnls(A, b, maxiter=None, tol=None):
    """
    Solve ``argmin ||A x - b||_2`` subject to ``x >= 0``.

    Lawson-Hanson active-set method. Each passive-set subproblem is solved
    with ``lstsq``, which returns the minimum-norm solution when the passive
    columns are rank deficient.

    Parameters
    ----------
    A : (m, n) array
    b : (m,) array
    maxiter : int, optional
        Cap on inner iterations (default ``3 * n``).
    tol : float, optional
        Dual-feasibility tolerance on ``A^T (b - A x)``.

    Returns
    -------
    x : (n,) array
    rnorm : float
        Residual norm at the solution.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, n = A.shape
    if maxiter is None:
        maxiter = 3 * n
    if tol is None:
        tol = 10 * np.finfo(float).eps * max(m, n) * max(1.0, np.abs(A).max(initial=0.0)) \
            * max(1.0, np.abs(b).max(initial=0.0))

    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    w = A.T @ b
    outer = 0
    while not passive.all() and np.any(w[~passive] > tol) and outer < 4 * n:
        outer += 1
        j = int(np.argmax(np.where(passive, -np.inf, w)))
        passive[j] = True
        for _ in range(maxiter):
            z = np.zeros(n)
            z[passive] = np.linalg.lstsq(A[:, passive], b, rcond=None)[0]
            if np.all(z[passive] > 0):
                x = z
                break
            # step back towards x until the first passive variable hits zero
            neg = passive & (z <= 0)
            alpha = np.min(x[neg] / (x[neg] - z[neg]))
            x = x + alpha * (z - x)
            passive &= x > tol
            x[~passive] = 0.0
            if not passive.any():
                break
        w = A.T @ (b - A @ x)
    return x, float(np.linalg.norm(A @ x - b))
