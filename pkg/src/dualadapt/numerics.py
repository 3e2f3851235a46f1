"""Small dense linear-algebra and integration primitives.

Everything here works on plain numpy arrays and is sized for the state
dimensions this package runs at (n <= 10 or so); no sparse paths, no
iterative solvers.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

__all__ = [
    "is_hurwitz",
    "solve_lyapunov",
    "min_eigen_sym",
    "rk4_step",
]


def is_hurwitz(a: np.ndarray, margin: float = 0.0) -> bool:
    """True when every eigenvalue of ``a`` has real part < -margin."""
    return bool(np.all(np.linalg.eigvals(np.asarray(a, dtype=float)).real < -margin))


def solve_lyapunov(a_m: np.ndarray, q_m: np.ndarray) -> np.ndarray:
    """Solve ``A_m^T P + P A_m + Q_m = 0`` for symmetric P.

    The equation is vectorized through the Kronecker sum,

        (I (x) A_m^T + A_m^T (x) I) vec(P) = -vec(Q_m),

    with column-major vec, and handed to a dense solver.  ``A_m`` must be
    Hurwitz (checked); the result is explicitly symmetrized and the residual
    of the original equation is verified before returning.
    """
    a_m = np.asarray(a_m, dtype=float)
    q_m = np.asarray(q_m, dtype=float)
    n = a_m.shape[0]
    if a_m.shape != (n, n) or q_m.shape != a_m.shape:
        raise ValueError("solve_lyapunov expects square matrices of matching size")
    eigs = np.linalg.eigvals(a_m)
    worst = eigs[np.argmax(eigs.real)]
    if worst.real >= 0.0:
        raise ValueError(
            f"A_m is not Hurwitz: eigenvalue {worst:.6g} has nonnegative real part"
        )
    eye = np.eye(n)
    lhs = np.kron(eye, a_m.T) + np.kron(a_m.T, eye)
    p = np.linalg.solve(lhs, -q_m.flatten(order="F")).reshape((n, n), order="F")
    p = 0.5 * (p + p.T)
    residual = a_m.T @ p + p @ a_m + q_m
    if np.linalg.norm(residual) > 1e-10 * max(np.linalg.norm(q_m), 1.0):
        raise ArithmeticError(
            "Lyapunov residual %.3e exceeds tolerance" % np.linalg.norm(residual)
        )
    return p


def min_eigen_sym(m: np.ndarray) -> float:
    """Smallest eigenvalue of a symmetric matrix.

    Symmetry is enforced (relative asymmetry above 1e-10 raises ValueError)
    rather than silently averaged, so callers cannot feed this a general
    matrix and get a plausible-looking number back.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("min_eigen_sym expects a square matrix")
    scale = max(float(np.linalg.norm(m)), 1e-30)
    if float(np.linalg.norm(m - m.T)) > 1e-10 * scale:
        raise ValueError("matrix is not symmetric to within 1e-10 relative tolerance")
    return float(np.linalg.eigvalsh(m)[0])


def _check_finite(dy: np.ndarray, t: float, label: str) -> None:
    if not np.all(np.isfinite(dy)):
        bad = int(np.flatnonzero(~np.isfinite(dy))[0])
        raise FloatingPointError(
            f"non-finite derivative at t={t:.9g} ({label}), state index {bad}"
        )


def rk4_step(
    deriv: Callable[[np.ndarray, float], np.ndarray],
    state: np.ndarray,
    t: float,
    dt: float,
) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step.

    ``deriv(state, t)`` must return an array of the same shape as ``state``.
    Each stage derivative is checked for NaN/inf; a non-finite entry aborts
    the step with the time and offending state index in the message.
    """
    if dt <= 0.0:
        raise ValueError("rk4_step requires dt > 0")
    k1 = deriv(state, t)
    _check_finite(k1, t, "stage 1")
    k2 = deriv(state + 0.5 * dt * k1, t + 0.5 * dt)
    _check_finite(k2, t + 0.5 * dt, "stage 2")
    k3 = deriv(state + 0.5 * dt * k2, t + 0.5 * dt)
    _check_finite(k3, t + 0.5 * dt, "stage 3")
    k4 = deriv(state + dt * k3, t + dt)
    _check_finite(k4, t + dt, "stage 4")
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
