"""Feedback/feedforward gains and the adaptive control law.

u = K_x^T x + K_r^T r - u_ad   with   u_ad = W_hat^T phi(x).

K_x and K_r are not free design knobs here: they must satisfy the model
matching conditions A + B K_x^T = A_m and B K_r^T = B_m, and are solved for
(least squares, residual checked) rather than configured by hand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .plant import PlantConfig, regressor

MATCHING_TOL = 1e-10


@dataclass(frozen=True)
class GainSet:
    """Everything the controller and both estimators need at run time.

    ``alpha``/``alpha_star`` are the projection-set radii for the tracking
    and identification estimates; they are derived from the parameter bounds
    during config assembly and carried here so the update laws take no truth
    arguments.  ``P`` solves A_m^T P + P A_m = -Q_m.
    """

    K_x: np.ndarray  # (n, n_u)
    K_r: np.ndarray  # (n_r, n_u)
    Gamma_W: np.ndarray  # (n_w, n_w) SPD, tracking-estimator gain
    Gamma_W_star: np.ndarray  # (n_w, n_w) SPD, identification-estimator gain
    sigma: float  # leakage pulling W_hat toward W_hat_star
    gamma1: float  # first-layer drive weight
    gamma2: float  # second-layer drive weight
    gamma3: float  # frozen-excitation drive weight
    p_f: float  # first-layer filter pole
    p_ff: float  # second-layer filter pole
    epsilon: float  # projection boundary-layer width, tracking estimator
    epsilon_star: float  # projection boundary-layer width, identification
    Q_m: np.ndarray  # (n, n) SPD
    P: np.ndarray  # (n, n) SPD, Lyapunov solution
    PB: np.ndarray  # (n, n_u), P @ B precomputed for the tracking drive
    alpha: float  # projection radius, tracking estimator
    alpha_star: float  # projection radius, identification estimator


def matching_gains(
    A: np.ndarray, A_m: np.ndarray, B: np.ndarray, B_m: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Solve the matching conditions for (K_x, K_r).

    Finds K_x with B K_x^T = A_m - A and K_r with B K_r^T = B_m by least
    squares and rejects the pair if either residual exceeds 1e-10 in
    Frobenius norm (the conditions are then structurally unsatisfiable).
    """
    kx_t, *_ = np.linalg.lstsq(B, A_m - A, rcond=None)
    kr_t, *_ = np.linalg.lstsq(B, B_m, rcond=None)
    res_x = float(np.linalg.norm(B @ kx_t - (A_m - A)))
    res_r = float(np.linalg.norm(B @ kr_t - B_m))
    if res_x > MATCHING_TOL or res_r > MATCHING_TOL:
        raise ValueError(
            "matching conditions unsatisfiable: residuals "
            f"|B Kx^T-(A_m-A)|={res_x:.3e}, |B Kr^T-B_m|={res_r:.3e}"
        )
    return kx_t.T.copy(), kr_t.T.copy()


def control(
    x: np.ndarray,
    r: np.ndarray,
    w_hat: np.ndarray,
    gains: GainSet,
    plant_cfg: PlantConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Return (u, u_ad) for the current state, reference input and estimate."""
    u_ad = w_hat.T @ regressor(x, plant_cfg)
    u = gains.K_x.T @ x + gains.K_r.T @ r - u_ad
    return u, u_ad
