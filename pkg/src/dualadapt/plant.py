"""Plant, reference model, and the time-varying true parameter.

The plant is linear with a matched, parametrized uncertainty:

    x_dot = A x + B (u + W(t)^T phi(x))

where ``phi`` is one of a few fixed regressor families and ``W(t)`` is the
sum of a constant part and elementwise sinusoidal excursions.  The reference
model is x_m_dot = A_m x_m + B_m r with a configurable exogenous input r(t).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

REGRESSOR_KINDS = ("identity", "wing_rock_basis", "custom_polynomial")
REFERENCE_KINDS = ("step", "sum_of_sinusoids", "chirp")


@dataclass(frozen=True)
class PlantConfig:
    """Open-loop plant matrices plus the regressor family."""

    A: np.ndarray  # (n, n)
    B: np.ndarray  # (n, n_u), full column rank
    regressor_kind: str = "identity"
    # Exponent matrix for custom_polynomial, shape (n_w, n); row k gives the
    # monomial phi_k(x) = prod_j x_j ** exponents[k, j].
    exponents: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_w(self) -> int:
        if self.regressor_kind == "identity":
            return self.n
        if self.regressor_kind == "wing_rock_basis":
            return 6
        assert self.exponents is not None
        return self.exponents.shape[0]


@dataclass(frozen=True)
class ReferenceConfig:
    """Reference model matrices and the exogenous input r(t)."""

    A_m: np.ndarray  # (n, n), Hurwitz
    B_m: np.ndarray  # (n, n_r)
    kind: str = "step"
    # step: r_i(t) = amplitudes[i, 0] for t >= step_time, else 0.
    # sum_of_sinusoids: r_i(t) = sum_k amplitudes[i,k] sin(frequencies[i,k] t
    #                             + phases[i,k]); frequencies in rad/s.
    # chirp: r_i(t) = amplitudes[i,0] sin(frequencies[i,0] t
    #                             + 0.5 sweep_rates[i] t^2).
    amplitudes: np.ndarray = field(default_factory=lambda: np.zeros((1, 1)))
    frequencies: np.ndarray | None = None
    phases: np.ndarray | None = None
    sweep_rates: np.ndarray | None = None
    step_time: float = 0.0

    @property
    def n_r(self) -> int:
        return self.B_m.shape[1]


@dataclass(frozen=True)
class TrueParameter:
    """W(t) = W_star + delta(t), delta_ij(t) = amp_ij * sin(freq_ij * t).

    The bound fields are what the controller is allowed to know: a norm bound
    on the constant part and on the excursion and its rate.  They are inputs,
    not derived quantities, so that deliberately loose bounds can be studied;
    the config validator only rejects bounds that the configured truth
    actually violates.
    """

    W_star: np.ndarray  # (n_w, n_u)
    delta_amplitudes: np.ndarray  # (n_w, n_u)
    delta_frequencies: np.ndarray  # (n_w, n_u), rad/s
    w_bar: float
    delta_bar: float
    delta_dot_bar: float


def regressor(x: np.ndarray, cfg: PlantConfig) -> np.ndarray:
    """Evaluate the regressor phi(x) -> (n_w,)."""
    kind = cfg.regressor_kind
    if kind == "identity":
        return np.asarray(x, dtype=float)
    if kind == "wing_rock_basis":
        x1, x2 = float(x[0]), float(x[1])
        return np.array([1.0, x1, x2, abs(x1) * x2, abs(x2) * x2, x1**3])
    if kind == "custom_polynomial":
        assert cfg.exponents is not None
        # prod over state components of x_j ** E[k, j] for each row k
        return np.prod(np.asarray(x, dtype=float) ** cfg.exponents, axis=1)
    raise ValueError(f"unknown regressor kind {kind!r}")


def true_parameter(truth: TrueParameter, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Return (W(t), delta_dot(t)) at time t."""
    phase = truth.delta_frequencies * t
    delta = truth.delta_amplitudes * np.sin(phase)
    delta_dot = truth.delta_amplitudes * truth.delta_frequencies * np.cos(phase)
    return truth.W_star + delta, delta_dot


def plant_deriv(
    x: np.ndarray, u: np.ndarray, w: np.ndarray, cfg: PlantConfig
) -> np.ndarray:
    """x_dot = A x + B (u + W^T phi(x)) with W the instantaneous parameter."""
    phi = regressor(x, cfg)
    return cfg.A @ x + cfg.B @ (u + w.T @ phi)


def reference_input(cfg: ReferenceConfig, t: float) -> np.ndarray:
    """Evaluate r(t) -> (n_r,)."""
    if cfg.kind == "step":
        if t >= cfg.step_time:
            return cfg.amplitudes[:, 0].copy()
        return np.zeros(cfg.n_r)
    if cfg.kind == "sum_of_sinusoids":
        assert cfg.frequencies is not None
        phases = cfg.phases if cfg.phases is not None else np.zeros_like(cfg.amplitudes)
        return np.sum(
            cfg.amplitudes * np.sin(cfg.frequencies * t + phases), axis=1
        )
    if cfg.kind == "chirp":
        assert cfg.frequencies is not None and cfg.sweep_rates is not None
        return cfg.amplitudes[:, 0] * np.sin(
            cfg.frequencies[:, 0] * t + 0.5 * cfg.sweep_rates * t * t
        )
    raise ValueError(f"unknown reference kind {cfg.kind!r}")


def reference_deriv(x_m: np.ndarray, r: np.ndarray, cfg: ReferenceConfig) -> np.ndarray:
    """x_m_dot = A_m x_m + B_m r."""
    return cfg.A_m @ x_m + cfg.B_m @ r
