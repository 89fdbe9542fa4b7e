"""Independent reference implementations used only to cross-check the library.

These deliberately avoid the code paths they verify: the eigenvalue oracle is
a cyclic Jacobi sweep (no power iteration), and the summation oracles are
plain Python loops.
"""

import numpy as np


def jacobi_eigenvalues(sym, sweeps: int = 50, tol: float = 1e-14):
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations."""
    a = np.array(sym, dtype=float)
    n = a.shape[0]
    for _ in range(sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off < tol * max(1.0, np.max(np.abs(np.diag(a)))):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if a[p, q] == 0.0:
                    continue
                theta = 0.5 * np.arctan2(2.0 * a[p, q], a[q, q] - a[p, p])
                c, s = np.cos(theta), np.sin(theta)
                rot = np.eye(n)
                rot[p, p] = c
                rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
    return np.sort(np.diag(a))


def sigma_max_oracle(mat) -> float:
    """Largest singular value via the Jacobi eigen-oracle on A^T A."""
    mat = np.asarray(mat, dtype=float)
    eigs = jacobi_eigenvalues(mat.T @ mat)
    return float(np.sqrt(max(eigs[-1], 0.0)))


def loop_mean_sq_norm(pred, target):
    """Plain-loop mean over rows of the squared error norm."""
    total = 0.0
    for p, t in zip(pred, target):
        total += sum((float(a) - float(b)) ** 2 for a, b in zip(p, t))
    return total / len(pred)


def random_orthogonal(n, rng):
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))
