"""Dense small-matrix kernels: finite-difference Jacobians, RK4, dominant singular value.

Matrices and vectors are plain float64 numpy arrays. Everything here is a pure
function, safe to call concurrently.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "EvaluationError",
    "central_difference_jacobian",
    "rk4_step",
    "largest_singular_value",
]

# Finite-difference step; per-coordinate it is scaled by max(1, |x_j|) to balance
# truncation against round-off in double precision.
DEFAULT_FD_STEP = 1e-5

POWER_ITER_MAX = 500
POWER_ITER_TOL = 1e-12


class EvaluationError(ValueError):
    """A model evaluation produced a non-finite value."""


def _as_vector(x) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {v.shape}")
    return v


def central_difference_jacobian(f, x, u=None, h: float = DEFAULT_FD_STEP) -> np.ndarray:
    """Second-order central-difference Jacobian of ``f`` w.r.t. ``x``.

    ``f(x, u)`` (or ``f(x)`` when ``u`` is None) must return a 1-d array.
    Entry (i, j) is (f(x + h_j e_j)_i - f(x - h_j e_j)_i) / (2 h_j) with
    h_j = h * max(1, |x_j|).
    """
    if h <= 0:
        raise ValueError("step size h must be positive")
    x = _as_vector(x)
    call = (lambda xx: f(xx)) if u is None else (lambda xx: f(xx, u))

    cols = []
    for j in range(x.size):
        hj = h * max(1.0, abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += hj
        xm[j] -= hj
        fp = np.asarray(call(xp), dtype=float)
        fm = np.asarray(call(xm), dtype=float)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise EvaluationError(f"non-finite evaluation while differencing coordinate {j}")
        cols.append((fp - fm) / (2.0 * hj))
    return np.column_stack(cols)


def rk4_step(f, x, u=None, dt: float = 0.1) -> np.ndarray:
    """Classical 4th-order Runge-Kutta update of ``x`` under ``f`` with ``u`` held."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    call = (lambda xx: np.asarray(f(xx), dtype=float)) if u is None else (
        lambda xx: np.asarray(f(xx, u), dtype=float))

    k1 = call(x)
    k2 = call(x + 0.5 * dt * k1)
    k3 = call(x + 0.5 * dt * k2)
    k4 = call(x + dt * k3)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise EvaluationError("non-finite intermediate in rk4 step")
    return out


def largest_singular_value(a) -> float:
    """Largest singular value of ``a`` by power iteration on A^T A.

    Deterministic: starts from the normalized all-ones vector (falling back to
    basis vectors if that start lands in the null space of A^T A), iterates at
    most 500 times to a 1e-12 relative tolerance.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")

    scale = np.max(np.abs(a))
    if scale == 0.0:
        return 0.0
    b = (a / scale).T @ (a / scale)  # pre-scaled to dodge overflow in A^T A
    n = b.shape[1]

    v = np.ones(n) / np.sqrt(n)
    # All-ones can sit exactly in the null space (e.g. a single row [1, -1]);
    # fall back to the basis vector with the largest diagonal weight.
    if np.linalg.norm(b @ v) <= 1e-300:
        v = np.zeros(n)
        v[int(np.argmax(np.diag(b)))] = 1.0

    lam = 0.0
    for _ in range(POWER_ITER_MAX):
        w = b @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        lam_next = float(v @ (b @ v))
        if abs(lam_next - lam) <= POWER_ITER_TOL * max(1.0, abs(lam_next)):
            lam = lam_next
            break
        lam = lam_next
    return float(scale * np.sqrt(max(lam, 0.0)))
