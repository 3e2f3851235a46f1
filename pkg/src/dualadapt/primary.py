"""Tracking-error driven estimator for the adaptive term of the control law.

The raw drive combines the Lyapunov tracking term with a leakage that pulls
the tracking estimate toward the identification estimate W_hat_star (this is
what couples the two estimators):

    y = phi e^T P B - sigma (W_hat - W_hat_star)

and the update is the projected, gain-weighted version of y.  No function
here receives the true parameter.
"""

from __future__ import annotations

import numpy as np

from .controller import GainSet
from .projection import convex_f, gamma_projection


def drive_signal_y(
    phi: np.ndarray,
    e: np.ndarray,
    w_hat: np.ndarray,
    w_hat_star: np.ndarray,
    p: np.ndarray,
    b: np.ndarray,
    sigma: float,
) -> np.ndarray:
    """Raw (un-weighted) drive: phi e^T P B - sigma (W_hat - W_hat_star)."""
    # Evaluated as e @ (P @ B) so it reproduces primary_update bit for bit
    # (which uses the precomputed gains.PB).
    return np.outer(phi, e @ (p @ b)) - sigma * (w_hat - w_hat_star)


def primary_update(
    w_hat: np.ndarray,
    phi: np.ndarray,
    e: np.ndarray,
    w_hat_star: np.ndarray,
    gains: GainSet,
) -> np.ndarray:
    """Time derivative of W_hat (projected, gain-weighted)."""
    y = np.outer(phi, e @ gains.PB) - gains.sigma * (w_hat - w_hat_star)
    f, grad = convex_f(w_hat, gains.alpha, gains.epsilon)
    return gamma_projection(w_hat, y, f, grad, gains.Gamma_W)
