"""Closed-loop integration and the trajectory log.

The full closed loop (plant, reference model, both estimators, the two
filter layers, and the oracle accumulators used only for verification) is
integrated as one flat ODE with fixed-step classical RK4.  The excitation
monitor is advanced once per completed step, so the snapshot drive is
piecewise-constant across steps and the right-hand side stays smooth inside
each step.

Two backends produce the trajectory: a compiled kernel (Cython) and a pure
Python loop composed directly from the module-level operations.  They share
the state layout and logging contract; selection is automatic at import with
overrides via the ``backend`` argument or the DUAL_ADAPT_BACKEND environment
variable (``auto`` | ``compiled`` | ``python``).
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .config import ScenarioConfig
from .controller import control
from .numerics import min_eigen_sym, rk4_step
from .plant import (
    plant_deriv,
    reference_deriv,
    reference_input,
    regressor,
    true_parameter,
)
from .primary import primary_update
from .projection import convex_f, gamma_projection
from .secondary import (
    FilterBank,
    IEMonitor,
    compute_g,
    compute_h,
    drive_signal_ystar,
    first_layer_derivs,
    ie_monitor_step,
    left_pseudoinverse,
    second_layer_derivs,
    secondary_update,
)

DIVERGENCE_NORM = 1e9


class DivergedError(RuntimeError):
    """The state norm blew past DIVERGENCE_NORM (or a derivative went NaN)."""

    def __init__(self, t: float, message: str | None = None):
        self.t = t
        super().__init__(message or f"trajectory diverged at t={t:.6g}")


class StateLayout:
    """Offsets of each block inside the flat ODE state vector."""

    def __init__(self, n: int, n_u: int, n_w: int):
        self.n, self.n_u, self.n_w = n, n_u, n_w
        names_sizes = [
            ("x", n),
            ("x_m", n),
            ("W_hat", n_w * n_u),
            ("W_hat_star", n_w * n_u),
            ("e_f", n),
            ("u_f", n_u),
            ("phi_f", n_w),
            ("Phi_ff", n_w * n_w),
            ("u_ff", n_u * n_w),
            ("Delta_f", n_u),
            ("Delta_ff", n_u * n_w),
        ]
        off = 0
        self.slices: dict[str, slice] = {}
        for name, size in names_sizes:
            self.slices[name] = slice(off, off + size)
            off += size
        self.size = off

    def view(self, y: np.ndarray, name: str) -> np.ndarray:
        """Slice (and for matrix blocks reshape, row-major) a flat state."""
        v = y[self.slices[name]]
        if name in ("W_hat", "W_hat_star"):
            return v.reshape(self.n_w, self.n_u)
        if name == "Phi_ff":
            return v.reshape(self.n_w, self.n_w)
        if name in ("u_ff", "Delta_ff"):
            return v.reshape(self.n_u, self.n_w)
        return v


@dataclass
class SimState:
    """Structured view of one instant of the closed loop."""

    t: float
    x: np.ndarray
    x_m: np.ndarray
    W_hat: np.ndarray
    W_hat_star: np.ndarray
    bank: FilterBank
    mon: IEMonitor
    Delta_f: np.ndarray
    Delta_ff: np.ndarray


def initial_state(cfg: ScenarioConfig) -> SimState:
    n, n_u, n_w = cfg.plant.n, cfg.plant.n_u, cfg.plant.n_w
    e0 = cfg.x0 - cfg.x_m0
    mon = IEMonitor(
        policy=cfg.ie_policy.kind,
        gamma_ie=cfg.ie_policy.gamma_ie,
        T_ie=cfg.ie_policy.T_ie,
        t0=cfg.t0,
    )
    return SimState(
        t=cfg.t0,
        x=cfg.x0.copy(),
        x_m=cfg.x_m0.copy(),
        W_hat=cfg.W_hat0.copy(),
        W_hat_star=cfg.W_hat_star0.copy(),
        bank=FilterBank.zeros(n, n_u, n_w, e0=e0, t0=cfg.t0),
        mon=mon,
        Delta_f=np.zeros(n_u),
        Delta_ff=np.zeros((n_u, n_w)),
    )


def pack_state(state: SimState, layout: StateLayout) -> np.ndarray:
    y = np.empty(layout.size)
    y[layout.slices["x"]] = state.x
    y[layout.slices["x_m"]] = state.x_m
    y[layout.slices["W_hat"]] = state.W_hat.ravel()
    y[layout.slices["W_hat_star"]] = state.W_hat_star.ravel()
    y[layout.slices["e_f"]] = state.bank.e_f
    y[layout.slices["u_f"]] = state.bank.u_f
    y[layout.slices["phi_f"]] = state.bank.phi_f
    y[layout.slices["Phi_ff"]] = state.bank.Phi_ff.ravel()
    y[layout.slices["u_ff"]] = state.bank.u_ff.ravel()
    y[layout.slices["Delta_f"]] = state.Delta_f
    y[layout.slices["Delta_ff"]] = state.Delta_ff.ravel()
    return y


def _flat_rhs(
    y: np.ndarray,
    t: float,
    cfg: ScenarioConfig,
    layout: StateLayout,
    mon: IEMonitor,
    e0: np.ndarray,
    b_bar: np.ndarray,
) -> np.ndarray:
    """Derivative of the flat state: a straight composition of module ops."""
    lo = layout
    gains, plant, ref, truth = cfg.gains, cfg.plant, cfg.reference, cfg.truth
    x = lo.view(y, "x")
    x_m = lo.view(y, "x_m")
    w_hat = lo.view(y, "W_hat")
    w_hat_star = lo.view(y, "W_hat_star")
    bank = FilterBank(
        e_f=lo.view(y, "e_f"),
        u_f=lo.view(y, "u_f"),
        phi_f=lo.view(y, "phi_f"),
        Phi_ff=lo.view(y, "Phi_ff"),
        u_ff=lo.view(y, "u_ff"),
        e0=e0,
        t0=cfg.t0,
    )
    delta_f = lo.view(y, "Delta_f")

    phi = regressor(x, plant)
    r = reference_input(ref, t)
    e = x - x_m
    u, u_ad = control(x, r, w_hat, gains, plant)
    w_true, _ = true_parameter(truth, t)

    dy = np.empty(layout.size)
    dy[lo.slices["x"]] = plant_deriv(x, u, w_true, plant)
    dy[lo.slices["x_m"]] = reference_deriv(x_m, r, ref)

    if cfg.disable_projection:
        raw = np.outer(phi, e @ gains.PB) - gains.sigma * (w_hat - w_hat_star)
        dy[lo.slices["W_hat"]] = (gains.Gamma_W @ raw).ravel()
    else:
        dy[lo.slices["W_hat"]] = primary_update(w_hat, phi, e, w_hat_star, gains).ravel()

    de_f, du_f, dphi_f = first_layer_derivs(bank, e, u_ad, phi, gains.p_f)
    dy[lo.slices["e_f"]] = de_f
    dy[lo.slices["u_f"]] = du_f
    dy[lo.slices["phi_f"]] = dphi_f

    g = compute_g(e, e0, bank.e_f, t, cfg.t0, gains.p_f)
    h = compute_h(g, bank.e_f, b_bar, ref.A_m)
    d_phi_ff, d_u_ff = second_layer_derivs(bank, h, gains.p_ff)
    dy[lo.slices["Phi_ff"]] = d_phi_ff.ravel()
    dy[lo.slices["u_ff"]] = d_u_ff.ravel()

    y_star = drive_signal_ystar(
        w_hat_star, bank, mon, h, gains.gamma1, gains.gamma2, gains.gamma3
    )
    if cfg.disable_projection:
        dy[lo.slices["W_hat_star"]] = (gains.Gamma_W_star @ y_star).ravel()
    else:
        dy[lo.slices["W_hat_star"]] = secondary_update(w_hat_star, y_star, gains).ravel()

    # Oracle accumulators: filtered images of the true parameter excursion.
    # These exist for verification only; nothing above reads them or w_true
    # (the plant is the physical system and legitimately evolves under it).
    delta = w_true - truth.W_star
    dy[lo.slices["Delta_f"]] = -gains.p_f * delta_f + delta.T @ phi
    dy[lo.slices["Delta_ff"]] = (
        -gains.p_ff * lo.view(y, "Delta_ff") + np.outer(delta_f, bank.phi_f)
    ).ravel()
    return dy


def assemble_derivative(state: SimState, cfg: ScenarioConfig) -> SimState:
    """Time derivative of a structured state (same composition as the loop).

    The returned SimState carries derivative values in every array slot
    (t slot holds 1.0; the monitor is shared, not differentiated).
    """
    layout = StateLayout(cfg.plant.n, cfg.plant.n_u, cfg.plant.n_w)
    b_bar = left_pseudoinverse(cfg.plant.B)
    y = pack_state(state, layout)
    dy = _flat_rhs(y, state.t, cfg, layout, state.mon, state.bank.e0, b_bar)
    lo = layout
    return SimState(
        t=1.0,
        x=lo.view(dy, "x").copy(),
        x_m=lo.view(dy, "x_m").copy(),
        W_hat=lo.view(dy, "W_hat").copy(),
        W_hat_star=lo.view(dy, "W_hat_star").copy(),
        bank=FilterBank(
            e_f=lo.view(dy, "e_f").copy(),
            u_f=lo.view(dy, "u_f").copy(),
            phi_f=lo.view(dy, "phi_f").copy(),
            Phi_ff=lo.view(dy, "Phi_ff").copy(),
            u_ff=lo.view(dy, "u_ff").copy(),
            e0=state.bank.e0,
            t0=state.bank.t0,
        ),
        mon=state.mon,
        Delta_f=lo.view(dy, "Delta_f").copy(),
        Delta_ff=lo.view(dy, "Delta_ff").copy(),
    )


# ---------------------------------------------------------------------------
# backends


def _integrate_python(cfg: ScenarioConfig):
    """Reference implementation: plain RK4 loop over the composed RHS."""
    layout = StateLayout(cfg.plant.n, cfg.plant.n_u, cfg.plant.n_w)
    state = initial_state(cfg)
    mon = state.mon
    e0 = state.bank.e0
    b_bar = left_pseudoinverse(cfg.plant.B)
    y = pack_state(state, layout)

    n_steps = cfg.n_steps
    every = cfg.log_every
    m = n_steps // every + 1
    t_log = np.empty(m)
    states = np.empty((m, layout.size))

    def deriv(yy: np.ndarray, tt: float) -> np.ndarray:
        return _flat_rhs(yy, tt, cfg, layout, mon, e0, b_bar)

    def bank_view(yy: np.ndarray) -> FilterBank:
        return FilterBank(
            e_f=layout.view(yy, "e_f"),
            u_f=layout.view(yy, "u_f"),
            phi_f=layout.view(yy, "phi_f"),
            Phi_ff=layout.view(yy, "Phi_ff"),
            u_ff=layout.view(yy, "u_ff"),
            e0=e0,
            t0=cfg.t0,
        )

    t = cfg.t0
    ie_monitor_step(mon, bank_view(y), t)  # harmless at t0: filters start at 0
    t_log[0] = t
    states[0] = y
    row = 1
    for k in range(1, n_steps + 1):
        t_prev = cfg.t0 + (k - 1) * cfg.dt
        y = rk4_step(deriv, y, t_prev, cfg.dt)
        t = cfg.t0 + k * cfg.dt
        if not np.all(np.isfinite(y)) or float(np.max(np.abs(y))) > DIVERGENCE_NORM:
            raise DivergedError(t)
        ie_monitor_step(mon, bank_view(y), t)
        if k % every == 0:
            t_log[row] = t
            states[row] = y
            row += 1
    assert row == m
    return t_log, states, mon


def _load_kernels():
    try:
        from . import _kernels  # type: ignore[attr-defined]

        return _kernels
    except ImportError:
        return None


def _integrate_compiled(cfg: ScenarioConfig):
    kern = _load_kernels()
    if kern is None:  # pragma: no cover - exercised only without the extension
        raise RuntimeError("compiled backend requested but the extension is missing")
    layout = StateLayout(cfg.plant.n, cfg.plant.n_u, cfg.plant.n_w)
    state = initial_state(cfg)
    y0 = pack_state(state, layout)
    e0 = state.bank.e0
    b_bar = left_pseudoinverse(cfg.plant.B)
    try:
        out = kern.integrate(cfg, y0, e0, b_bar)
    except kern.KernelDiverged as exc:
        raise DivergedError(exc.t) from None
    t_log, states, activated, t_fire, snap_phi, snap_u, lam_last = out
    mon = state.mon
    mon.lam_min = lam_last
    if activated:
        mon.s = 1
        mon.T = t_fire
        mon.snapshot_Phi = snap_phi
        mon.snapshot_u = snap_u
    return t_log, states, mon


_BACKENDS = ("auto", "compiled", "python")


def available_backends() -> tuple[str, ...]:
    return ("compiled", "python") if _load_kernels() else ("python",)


def _resolve_backend(requested: str | None) -> str:
    name = requested or os.environ.get("DUAL_ADAPT_BACKEND", "auto")
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; choose from {_BACKENDS}")
    if name == "auto":
        return "compiled" if _load_kernels() else "python"
    if name == "compiled" and _load_kernels() is None:
        raise RuntimeError(
            "compiled backend requested but the dualadapt._kernels extension is "
            "not built; install the package normally or set "
            "DUAL_ADAPT_BACKEND=python"
        )
    return name


def run_scenario(cfg: ScenarioConfig, backend: str | None = None) -> "TrajectoryLog":
    """Integrate the scenario and return the sampled trajectory."""
    chosen = _resolve_backend(backend)
    if chosen == "compiled":
        t_log, states, mon = _integrate_compiled(cfg)
    else:
        t_log, states, mon = _integrate_python(cfg)
    return TrajectoryLog(cfg=cfg, t=t_log, states=states, mon=mon, backend=chosen)


# ---------------------------------------------------------------------------
# trajectory log


def lyapunov_values(
    e: np.ndarray,
    w_hat: np.ndarray,
    w_hat_star: np.ndarray,
    w_true: np.ndarray,
    w_star: np.ndarray,
    p: np.ndarray,
    gamma_w: np.ndarray,
    gamma_w_star: np.ndarray,
) -> tuple[float, float]:
    """(V, V_star) for one sample.

    V       = e^T P e + tr(W~^T Gamma_W^-1 W~),        W~  = W_hat - W(t)
    V_star  = 0.5 tr(W*~^T Gamma_W*^-1 W*~),           W*~ = W_hat_star - W_star
    """
    w_t = w_hat - w_true
    w_ts = w_hat_star - w_star
    v = float(e @ p @ e + np.sum(w_t * np.linalg.solve(gamma_w, w_t)))
    v_star = 0.5 * float(np.sum(w_ts * np.linalg.solve(gamma_w_star, w_ts)))
    return v, v_star


class TrajectoryLog:
    """Sampled closed-loop trajectory plus everything derived from it.

    The backends log only time and the raw flat state; every reported
    channel (errors, inputs, Lyapunov values, filter residuals, the
    excitation spectrum floor) is derived here through the same module
    operations the simulator itself composes, so there is exactly one
    definition of each quantity.
    """

    def __init__(
        self,
        cfg: ScenarioConfig,
        t: np.ndarray,
        states: np.ndarray,
        mon: IEMonitor,
        backend: str,
    ):
        self.cfg = cfg
        self.t = t
        self.states = states
        self.mon = mon
        self.backend = backend
        self.layout = StateLayout(cfg.plant.n, cfg.plant.n_u, cfg.plant.n_w)
        self.e0 = cfg.x0 - cfg.x_m0

    # -- raw views ---------------------------------------------------------
    def _block(self, name: str) -> np.ndarray:
        lo = self.layout
        cols = self.states[:, lo.slices[name]]
        if name in ("W_hat", "W_hat_star"):
            return cols.reshape(-1, lo.n_w, lo.n_u)
        if name == "Phi_ff":
            return cols.reshape(-1, lo.n_w, lo.n_w)
        if name in ("u_ff", "Delta_ff"):
            return cols.reshape(-1, lo.n_u, lo.n_w)
        return cols

    @property
    def x(self) -> np.ndarray:
        return self._block("x")

    @property
    def x_m(self) -> np.ndarray:
        return self._block("x_m")

    @property
    def W_hat(self) -> np.ndarray:
        return self._block("W_hat")

    @property
    def W_hat_star(self) -> np.ndarray:
        return self._block("W_hat_star")

    @property
    def e_f(self) -> np.ndarray:
        return self._block("e_f")

    @property
    def u_f(self) -> np.ndarray:
        return self._block("u_f")

    @property
    def phi_f(self) -> np.ndarray:
        return self._block("phi_f")

    @property
    def Phi_ff(self) -> np.ndarray:
        return self._block("Phi_ff")

    @property
    def u_ff(self) -> np.ndarray:
        return self._block("u_ff")

    @property
    def Delta_f(self) -> np.ndarray:
        return self._block("Delta_f")

    @property
    def Delta_ff(self) -> np.ndarray:
        return self._block("Delta_ff")

    # -- derived channels ---------------------------------------------------
    @cached_property
    def e(self) -> np.ndarray:
        return self.x - self.x_m

    @cached_property
    def r(self) -> np.ndarray:
        ref = self.cfg.reference
        return np.stack([reference_input(ref, float(tt)) for tt in self.t])

    @cached_property
    def phi(self) -> np.ndarray:
        plant = self.cfg.plant
        return np.stack([regressor(xx, plant) for xx in self.x])

    @cached_property
    def W_true(self) -> np.ndarray:
        truth = self.cfg.truth
        return np.stack([true_parameter(truth, float(tt))[0] for tt in self.t])

    @cached_property
    def u(self) -> np.ndarray:
        out = np.empty((len(self.t), self.cfg.plant.n_u))
        for i in range(len(self.t)):
            out[i], _ = control(
                self.x[i], self.r[i], self.W_hat[i], self.cfg.gains, self.cfg.plant
            )
        return out

    @cached_property
    def u_ad(self) -> np.ndarray:
        out = np.empty((len(self.t), self.cfg.plant.n_u))
        for i in range(len(self.t)):
            _, out[i] = control(
                self.x[i], self.r[i], self.W_hat[i], self.cfg.gains, self.cfg.plant
            )
        return out

    @cached_property
    def s(self) -> np.ndarray:
        out = np.zeros(len(self.t))
        if self.mon.s and self.mon.T is not None:
            out[self.t >= self.mon.T - 1e-12] = 1.0
        return out

    @cached_property
    def lambda_min_Phi_ff(self) -> np.ndarray:
        phis = self.Phi_ff
        return np.array(
            [min_eigen_sym(0.5 * (p + p.T)) for p in phis]
        )

    @cached_property
    def V(self) -> np.ndarray:
        return self._lyapunov_series()[0]

    @cached_property
    def V_star(self) -> np.ndarray:
        return self._lyapunov_series()[1]

    def _lyapunov_series(self) -> tuple[np.ndarray, np.ndarray]:
        g = self.cfg.gains
        truth = self.cfg.truth
        m = len(self.t)
        v = np.empty(m)
        v_star = np.empty(m)
        for i in range(m):
            v[i], v_star[i] = lyapunov_values(
                self.e[i],
                self.W_hat[i],
                self.W_hat_star[i],
                self.W_true[i],
                truth.W_star,
                g.P,
                g.Gamma_W,
                g.Gamma_W_star,
            )
        self.__dict__["V"] = v
        self.__dict__["V_star"] = v_star
        return v, v_star

    @cached_property
    def h(self) -> np.ndarray:
        """Filtered matched-channel content at each sample."""
        g_ = self.cfg.gains
        b_bar = left_pseudoinverse(self.cfg.plant.B)
        a_m = self.cfg.reference.A_m
        out = np.empty((len(self.t), self.cfg.plant.n_u))
        for i, tt in enumerate(self.t):
            gv = compute_g(self.e[i], self.e0, self.e_f[i], float(tt), self.cfg.t0, g_.p_f)
            out[i] = compute_h(gv, self.e_f[i], b_bar, a_m)
        return out

    @cached_property
    def residual_layer1(self) -> np.ndarray:
        """|W_star^T phi_f + Delta_f - (h + u_f)| per sample (2-norm)."""
        w_star = self.cfg.truth.W_star
        res = (
            self.phi_f @ w_star
            + self.Delta_f
            - (self.h + self.u_f)
        )
        return np.linalg.norm(res, axis=1)

    @cached_property
    def residual_layer2(self) -> np.ndarray:
        """|u_ff - W_star^T Phi_ff - Delta_ff|_F per sample."""
        w_star = self.cfg.truth.W_star
        m = len(self.t)
        out = np.empty(m)
        for i in range(m):
            res = self.u_ff[i] - w_star.T @ self.Phi_ff[i] - self.Delta_ff[i]
            out[i] = float(np.linalg.norm(res))
        return out

    @cached_property
    def W_tilde(self) -> np.ndarray:
        return self.W_hat - self.W_true

    @cached_property
    def W_tilde_star(self) -> np.ndarray:
        return self.W_hat_star - self.cfg.truth.W_star[None, :, :]

    @cached_property
    def phi_bar(self) -> float:
        """Largest regressor norm seen along the trajectory."""
        return float(np.max(np.linalg.norm(self.phi, axis=1)))

    @property
    def activated(self) -> bool:
        return bool(self.mon.s)

    @property
    def T(self) -> float | None:
        return self.mon.T
