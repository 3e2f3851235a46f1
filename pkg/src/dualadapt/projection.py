"""Smooth projection operator keeping matrix estimates inside a ball.

The admissible set is described by the convex function

    f(Theta) = (tr(Theta^T Theta) - alpha^2) / (2 alpha eps + eps^2)

so f <= 0 is the ball of Frobenius radius alpha and f <= 1 the inflated ball
of radius alpha + eps.  Inside the boundary layer the raw update Gamma*y is
blended with its tangential component; the update never points out of the
inflated ball, which is what makes estimates stay bounded regardless of the
drive signal.
"""

from __future__ import annotations

import numpy as np


def convex_f(theta: np.ndarray, alpha: float, eps: float) -> tuple[float, np.ndarray]:
    """Return (f, grad f) at theta for radius alpha and layer width eps."""
    if alpha <= 0.0 or eps <= 0.0:
        raise ValueError("convex_f requires alpha > 0 and eps > 0")
    denom = 2.0 * alpha * eps + eps * eps
    f = (float(np.sum(theta * theta)) - alpha * alpha) / denom
    grad = (2.0 / denom) * theta
    return f, grad


def gamma_projection(
    theta: np.ndarray,
    y: np.ndarray,
    f: float,
    grad_f: np.ndarray,
    gamma: np.ndarray,
) -> np.ndarray:
    """Gain-weighted projection of the raw drive y at the point theta.

    Returns Gamma y unchanged while f <= 0 or while the drive points inward
    (tr(y^T Gamma grad_f) <= 0); otherwise subtracts the scaled outward
    component

        Gamma grad_f * f * tr(grad_f^T Gamma y) / tr(grad_f^T Gamma grad_f).

    The blend is continuous in theta and y across both switching surfaces.
    """
    gy = gamma @ y
    if f <= 0.0:
        return gy
    inner = float(np.sum(grad_f * gy))  # tr(grad_f^T Gamma y) for symmetric Gamma
    if inner <= 0.0:
        return gy
    g_grad = gamma @ grad_f
    denom = float(np.sum(grad_f * g_grad))
    if denom <= 0.0:
        # grad_f = 0 with f > 0 cannot happen for the ball set; defensive only
        raise ArithmeticError("degenerate projection gradient while outside the set")
    return gy - g_grad * (f * inner / denom)
