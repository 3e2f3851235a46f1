"""Identification estimator: filtered regression, excitation monitor, update.

A first filter layer turns the unmeasurable error derivative into an
algebraic relation.  With

    e_f'   = -p_f e_f   + e
    u_f'   = -p_f u_f   + u_ad
    phi_f' = -p_f phi_f + phi
    g(t)   = e - exp(-p_f (t - t0)) e(t0) - p_f e_f
    h      = B_bar (g - A_m e_f),   B_bar = (B^T B)^{-1} B^T

the filtered plant satisfies  W_star^T phi_f = h + u_f - Delta_f, where
Delta_f is the (unmeasurable) filtered parameter excursion.  A second layer
accumulates the outer products

    Phi_ff' = -p_ff Phi_ff + phi_f phi_f^T
    u_ff'   = -p_ff u_ff   + (h + u_f) phi_f^T

giving the batch relation u_ff = W_star^T Phi_ff + Delta_ff.  The estimator
descends the residuals of both relations, plus (after the excitation monitor
fires) the residual of a frozen snapshot of the second layer, which is what
keeps adaptation alive when the live signals have gone quiet.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .controller import GainSet
from .numerics import min_eigen_sym
from .projection import convex_f, gamma_projection


@dataclass
class FilterBank:
    """Filter states (owned by the simulator; this is the plain-array view)."""

    e_f: np.ndarray  # (n,)
    u_f: np.ndarray  # (n_u,)
    phi_f: np.ndarray  # (n_w,)
    Phi_ff: np.ndarray  # (n_w, n_w)
    u_ff: np.ndarray  # (n_u, n_w)
    e0: np.ndarray  # (n,), tracking error at t0 (enters g)
    t0: float = 0.0

    @classmethod
    def zeros(cls, n: int, n_u: int, n_w: int, e0: np.ndarray, t0: float = 0.0):
        return cls(
            e_f=np.zeros(n),
            u_f=np.zeros(n_u),
            phi_f=np.zeros(n_w),
            Phi_ff=np.zeros((n_w, n_w)),
            u_ff=np.zeros((n_u, n_w)),
            e0=np.asarray(e0, dtype=float).copy(),
            t0=t0,
        )


def left_pseudoinverse(b: np.ndarray) -> np.ndarray:
    """B_bar = (B^T B)^{-1} B^T for a full-column-rank B."""
    btb = b.T @ b
    if min_eigen_sym(0.5 * (btb + btb.T)) <= 1e-12:
        raise ValueError("B is rank deficient; left pseudoinverse undefined")
    return np.linalg.solve(btb, b.T)


def first_layer_derivs(
    bank: FilterBank,
    e: np.ndarray,
    u_ad: np.ndarray,
    phi: np.ndarray,
    p_f: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(e_f', u_f', phi_f')."""
    return (
        -p_f * bank.e_f + e,
        -p_f * bank.u_f + u_ad,
        -p_f * bank.phi_f + phi,
    )


def compute_g(
    e: np.ndarray,
    e0: np.ndarray,
    e_f: np.ndarray,
    t: float,
    t0: float,
    p_f: float,
) -> np.ndarray:
    """Filtered error derivative, reconstructed without differentiation."""
    return e - np.exp(-p_f * (t - t0)) * e0 - p_f * e_f


def compute_h(
    g: np.ndarray, e_f: np.ndarray, b_bar: np.ndarray, a_m: np.ndarray
) -> np.ndarray:
    """h = B_bar (g - A_m e_f): the filtered matched-channel content."""
    return b_bar @ (g - a_m @ e_f)


def second_layer_derivs(
    bank: FilterBank, h: np.ndarray, p_ff: float
) -> tuple[np.ndarray, np.ndarray]:
    """(Phi_ff', u_ff')."""
    d_phi_ff = -p_ff * bank.Phi_ff + np.outer(bank.phi_f, bank.phi_f)
    d_u_ff = -p_ff * bank.u_ff + np.outer(h + bank.u_f, bank.phi_f)
    return d_phi_ff, d_u_ff


@dataclass
class IEMonitor:
    """Watches lambda_min(Phi_ff) and latches the snapshot drive.

    policy "fixed_window": fire at the first completed step with
    t >= t0 + T_ie.  policy "online_threshold": fire at the first completed
    step with lambda_min(Phi_ff) >= gamma_ie.  Either way the flip happens at
    most once; (Phi_ff, u_ff) at that instant are copied and never refreshed.
    """

    policy: str  # "fixed_window" | "online_threshold"
    gamma_ie: float = 0.0  # threshold on lambda_min(Phi_ff)
    T_ie: float = 0.0  # window length for fixed_window
    t0: float = 0.0
    s: int = 0
    T: float | None = None
    snapshot_Phi: np.ndarray | None = None
    snapshot_u: np.ndarray | None = None
    lam_min: float = field(default=0.0)

    def __post_init__(self):
        if self.policy not in ("fixed_window", "online_threshold"):
            raise ValueError(f"unknown excitation policy {self.policy!r}")


def ie_monitor_step(mon: IEMonitor, bank: FilterBank, t: float) -> bool:
    """Advance the monitor after a completed integration step.

    Returns True exactly once, on the step where the drive activates.
    Phi_ff accumulates symmetric outer products, so a tiny asymmetry from
    integration roundoff is averaged away before the eigenvalue call.
    """
    phi_ff, u_ff = bank.Phi_ff, bank.u_ff
    mon.lam_min = min_eigen_sym(0.5 * (phi_ff + phi_ff.T))
    if mon.s:
        return False
    if mon.policy == "fixed_window":
        # tolerate accumulated t = k*dt roundoff just below the window edge
        fire = t >= mon.t0 + mon.T_ie - 1e-12
    else:
        fire = mon.lam_min >= mon.gamma_ie
    if fire:
        mon.s = 1
        mon.T = t
        mon.snapshot_Phi = np.asarray(phi_ff, dtype=float).copy()
        mon.snapshot_u = np.asarray(u_ff, dtype=float).copy()
        return True
    return False


def drive_signal_ystar(
    w_hat_star: np.ndarray,
    bank: FilterBank,
    mon: IEMonitor,
    h: np.ndarray,
    gamma1: float,
    gamma2: float,
    gamma3: float,
) -> np.ndarray:
    """Raw identification drive: live layers plus the latched snapshot term.

    C_l  = -phi_f (W_hat_star^T phi_f - (h + u_f))^T      (first layer)
    C_ll = -(W_hat_star^T Phi_ff - u_ff)^T                (second layer)
    C_ie = -(W_hat_star^T Phi_ff(T) - u_ff(T))^T          (only once s = 1)
    """
    c_l = -np.outer(bank.phi_f, w_hat_star.T @ bank.phi_f - (h + bank.u_f))
    c_ll = -(w_hat_star.T @ bank.Phi_ff - bank.u_ff).T
    y = gamma1 * c_l + gamma2 * c_ll
    if mon.s:
        y = y + gamma3 * -(w_hat_star.T @ mon.snapshot_Phi - mon.snapshot_u).T
    return y


def secondary_update(
    w_hat_star: np.ndarray, y_star: np.ndarray, gains: GainSet
) -> np.ndarray:
    """Time derivative of W_hat_star (projected, gain-weighted)."""
    f, grad = convex_f(w_hat_star, gains.alpha_star, gains.epsilon_star)
    return gamma_projection(w_hat_star, y_star, f, grad, gains.Gamma_W_star)
