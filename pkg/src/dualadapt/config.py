"""Scenario configuration: JSON schema, validation, gain assembly.

A scenario is one self-contained JSON document with sections

    plant, reference, true_parameter, gains, integrator, ie_policy,
    initial, logging

plus optional ``name``, ``seed``, ``verify`` (expected outcomes for the
verifier), ``debug`` and ``sweep``.  ``from_dict`` validates everything it
can before any integration happens and raises ConfigError naming the
offending key; structural soft spots (e.g. a declared parameter bound that
makes the projection set too small for the true parameter) are collected as
warnings on the returned object instead.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .controller import GainSet, matching_gains
from .numerics import is_hurwitz, min_eigen_sym, solve_lyapunov
from .plant import (
    REFERENCE_KINDS,
    REGRESSOR_KINDS,
    PlantConfig,
    ReferenceConfig,
    TrueParameter,
)

_BOUND_SLACK = 1e-12  # forgiveness when a declared bound sits on the true value


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config error at {key!r}: {message}")


@dataclass(frozen=True)
class IEPolicy:
    kind: str  # "fixed_window" | "online_threshold"
    gamma_ie: float = 0.0
    T_ie: float = 0.0


@dataclass
class ScenarioConfig:
    name: str
    plant: PlantConfig
    reference: ReferenceConfig
    truth: TrueParameter
    gains: GainSet
    dt: float
    horizon: float
    t0: float
    ie_policy: IEPolicy
    x0: np.ndarray
    x_m0: np.ndarray
    W_hat0: np.ndarray
    W_hat_star0: np.ndarray
    log_every: int
    seed: int = 0
    # optional expected outcomes consumed by the verifier
    expect_activation: bool | None = None
    lambda_min_max: float | None = None
    # debug switches (not for production runs)
    disable_projection: bool = False
    warnings: list[str] = field(default_factory=list)
    raw: dict = field(default_factory=dict)  # echo of the source document

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


# ---------------------------------------------------------------------------
# parsing helpers


def _get(data: dict, key: str, path: str, required: bool = True, default=None):
    if key not in data:
        if required:
            raise ConfigError(f"{path}.{key}" if path else key, "missing required key")
        return default
    return data[key]


def _as_matrix(val: Any, key: str, shape: tuple[int, int] | None = None) -> np.ndarray:
    try:
        arr = np.array(val, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(key, f"not a numeric array: {exc}") from None
    if arr.ndim != 2:
        raise ConfigError(key, f"expected a 2-D array, got shape {arr.shape}")
    if shape is not None and arr.shape != shape:
        raise ConfigError(key, f"expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(key, "contains non-finite entries")
    return arr


def _as_vector(val: Any, key: str, length: int) -> np.ndarray:
    try:
        arr = np.array(val, dtype=float).reshape(-1)
    except (TypeError, ValueError) as exc:
        raise ConfigError(key, f"not a numeric vector: {exc}") from None
    if arr.size != length:
        raise ConfigError(key, f"expected length {length}, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(key, "contains non-finite entries")
    return arr


def _as_float(val: Any, key: str, positive: bool = False, nonneg: bool = False) -> float:
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(key, f"expected a number, got {type(val).__name__}")
    v = float(val)
    if not math.isfinite(v):
        raise ConfigError(key, "must be finite")
    if positive and v <= 0.0:
        raise ConfigError(key, f"must be > 0, got {v}")
    if nonneg and v < 0.0:
        raise ConfigError(key, f"must be >= 0, got {v}")
    return v


def _gain_matrix(val: Any, key: str, n: int) -> np.ndarray:
    """Accept a positive scalar (meaning scalar * identity) or an SPD matrix."""
    if isinstance(val, (int, float)) and not isinstance(val, bool):
        return _as_float(val, key, positive=True) * np.eye(n)
    m = _as_matrix(val, key, (n, n))
    try:
        lam = min_eigen_sym(m)
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from None
    if lam <= 0.0:
        raise ConfigError(key, f"must be positive definite (min eigenvalue {lam:.3e})")
    return m


# ---------------------------------------------------------------------------
# section parsers


def _parse_plant(data: dict) -> PlantConfig:
    a = _as_matrix(_get(data, "A", "plant"), "plant.A")
    n = a.shape[0]
    if a.shape != (n, n):
        raise ConfigError("plant.A", "must be square")
    b_raw = _get(data, "B", "plant")
    b = np.array(b_raw, dtype=float)
    if b.ndim == 1:
        b = b.reshape(-1, 1)
    b = _as_matrix(b.tolist(), "plant.B")
    if b.shape[0] != n:
        raise ConfigError("plant.B", f"row count must match A ({n}), got {b.shape[0]}")
    btb = b.T @ b
    if min_eigen_sym(0.5 * (btb + btb.T)) <= 1e-12:
        raise ConfigError("plant.B", "must have full column rank")
    kind = _get(data, "regressor", "plant", required=False, default="identity")
    if kind not in REGRESSOR_KINDS:
        raise ConfigError("plant.regressor", f"must be one of {REGRESSOR_KINDS}")
    exponents = None
    if kind == "wing_rock_basis" and n != 2:
        raise ConfigError("plant.regressor", "wing_rock_basis needs a 2-state plant")
    if kind == "custom_polynomial":
        exp_raw = _get(data, "exponents", "plant")
        exponents = _as_matrix(exp_raw, "plant.exponents")
        if exponents.shape[1] != n:
            raise ConfigError(
                "plant.exponents", f"column count must match the state dimension {n}"
            )
        if np.any(exponents < 0) or np.any(exponents != np.round(exponents)):
            raise ConfigError("plant.exponents", "entries must be nonnegative integers")
    return PlantConfig(A=a, B=b, regressor_kind=kind, exponents=exponents)


def _parse_reference(data: dict, n: int) -> ReferenceConfig:
    a_m = _as_matrix(_get(data, "A_m", "reference"), "reference.A_m", (n, n))
    if not is_hurwitz(a_m):
        eigs = np.linalg.eigvals(a_m)
        worst = eigs[np.argmax(eigs.real)]
        raise ConfigError(
            "reference.A_m", f"must be Hurwitz; eigenvalue {worst:.6g} is not stable"
        )
    b_m = np.array(_get(data, "B_m", "reference"), dtype=float)
    if b_m.ndim == 1:
        b_m = b_m.reshape(-1, 1)
    b_m = _as_matrix(b_m.tolist(), "reference.B_m")
    if b_m.shape[0] != n:
        raise ConfigError("reference.B_m", f"row count must be {n}")
    kind = _get(data, "kind", "reference", required=False, default="step")
    if kind not in REFERENCE_KINDS:
        raise ConfigError("reference.kind", f"must be one of {REFERENCE_KINDS}")
    n_r = b_m.shape[1]
    amps = _as_matrix(_get(data, "amplitudes", "reference"), "reference.amplitudes")
    if amps.shape[0] != n_r:
        raise ConfigError(
            "reference.amplitudes", f"row count must match B_m columns ({n_r})"
        )
    freqs = phases = sweeps = None
    step_time = 0.0
    if kind == "step":
        step_time = _as_float(
            _get(data, "step_time", "reference", required=False, default=0.0),
            "reference.step_time",
            nonneg=True,
        )
    if kind in ("sum_of_sinusoids", "chirp"):
        freqs = _as_matrix(
            _get(data, "frequencies", "reference"), "reference.frequencies", amps.shape
        )
    if kind == "sum_of_sinusoids":
        raw_ph = _get(data, "phases", "reference", required=False)
        if raw_ph is not None:
            phases = _as_matrix(raw_ph, "reference.phases", amps.shape)
    if kind == "chirp":
        sweeps = _as_vector(_get(data, "sweep_rates", "reference"), "reference.sweep_rates", n_r)
    return ReferenceConfig(
        A_m=a_m,
        B_m=b_m,
        kind=kind,
        amplitudes=amps,
        frequencies=freqs,
        phases=phases,
        sweep_rates=sweeps,
        step_time=step_time,
    )


def _parse_truth(data: dict, n_w: int, n_u: int, warn: list[str]) -> TrueParameter:
    shape = (n_w, n_u)
    w_star = _as_matrix(_get(data, "W_star", "true_parameter"), "true_parameter.W_star", shape)
    amps = _as_matrix(
        _get(data, "delta_amplitudes", "true_parameter"),
        "true_parameter.delta_amplitudes",
        shape,
    )
    freqs = _as_matrix(
        _get(data, "delta_frequencies", "true_parameter"),
        "true_parameter.delta_frequencies",
        shape,
    )
    w_bar = _as_float(_get(data, "w_bar", "true_parameter"), "true_parameter.w_bar", positive=True)
    delta_bar = _as_float(
        _get(data, "delta_bar", "true_parameter"), "true_parameter.delta_bar", nonneg=True
    )
    delta_dot_bar = _as_float(
        _get(data, "delta_dot_bar", "true_parameter"),
        "true_parameter.delta_dot_bar",
        nonneg=True,
    )
    norm_star = float(np.linalg.norm(w_star))
    if norm_star > w_bar + _BOUND_SLACK:
        raise ConfigError(
            "true_parameter.w_bar",
            f"||W_star||_F = {norm_star:.6g} exceeds the declared bound {w_bar:.6g}",
        )
    # worst case of ||delta(t)||_F: all sinusoids at peak simultaneously
    amp_norm = float(np.linalg.norm(amps))
    if amp_norm > delta_bar + _BOUND_SLACK:
        raise ConfigError(
            "true_parameter.delta_bar",
            f"excursion amplitude norm {amp_norm:.6g} exceeds the declared bound "
            f"{delta_bar:.6g}",
        )
    rate_norm = float(np.linalg.norm(amps * freqs))
    if rate_norm > delta_dot_bar + _BOUND_SLACK:
        raise ConfigError(
            "true_parameter.delta_dot_bar",
            f"excursion rate norm {rate_norm:.6g} exceeds the declared bound "
            f"{delta_dot_bar:.6g}",
        )
    if np.any(amps < 0):
        warn.append(
            "true_parameter.delta_amplitudes has negative entries; sign folds into "
            "the sinusoid and the bounds still apply"
        )
    return TrueParameter(
        W_star=w_star,
        delta_amplitudes=amps,
        delta_frequencies=freqs,
        w_bar=w_bar,
        delta_bar=delta_bar,
        delta_dot_bar=delta_dot_bar,
    )


_ALPHA_RULES = ("quadrature", "sum")


def _parse_gains(
    data: dict,
    plant: PlantConfig,
    ref: ReferenceConfig,
    truth: TrueParameter,
    warn: list[str],
) -> GainSet:
    n, n_u, n_w = plant.n, plant.n_u, plant.n_w
    try:
        k_x, k_r = matching_gains(plant.A, ref.A_m, plant.B, ref.B_m)
    except ValueError as exc:
        raise ConfigError("reference.A_m/B_m", str(exc)) from None
    gamma_w = _gain_matrix(_get(data, "Gamma_W", "gains"), "gains.Gamma_W", n_w)
    gamma_ws = _gain_matrix(_get(data, "Gamma_W_star", "gains"), "gains.Gamma_W_star", n_w)
    sigma = _as_float(_get(data, "sigma", "gains"), "gains.sigma", positive=True)
    g1 = _as_float(_get(data, "gamma1", "gains"), "gains.gamma1", positive=True)
    g2 = _as_float(_get(data, "gamma2", "gains"), "gains.gamma2", positive=True)
    g3 = _as_float(_get(data, "gamma3", "gains"), "gains.gamma3", positive=True)
    p_f = _as_float(_get(data, "p_f", "gains"), "gains.p_f", positive=True)
    p_ff = _as_float(_get(data, "p_ff", "gains"), "gains.p_ff", positive=True)
    q_raw = _get(data, "Q_m", "gains", required=False, default=1.0)
    q_m = _gain_matrix(q_raw, "gains.Q_m", n)
    try:
        p = solve_lyapunov(ref.A_m, q_m)
    except (ValueError, ArithmeticError) as exc:
        raise ConfigError("gains.Q_m", f"Lyapunov solve failed: {exc}") from None
    rule = _get(data, "alpha_rule", "gains", required=False, default="quadrature")
    if rule not in _ALPHA_RULES:
        raise ConfigError("gains.alpha_rule", f"must be one of {_ALPHA_RULES}")
    if rule == "quadrature":
        alpha = math.sqrt(truth.w_bar**2 + truth.delta_bar**2)
    else:
        alpha = truth.w_bar + truth.delta_bar
    alpha_star = truth.w_bar
    # boundary-layer widths default to a tenth of the respective set radius
    eps_raw = _get(data, "epsilon", "gains", required=False)
    eps = 0.1 * alpha if eps_raw is None else _as_float(eps_raw, "gains.epsilon", positive=True)
    eps_star_raw = _get(data, "epsilon_star", "gains", required=False)
    eps_star = (
        0.1 * alpha_star
        if eps_star_raw is None
        else _as_float(eps_star_raw, "gains.epsilon_star", positive=True)
    )
    reach = float(np.linalg.norm(truth.W_star)) + truth.delta_bar
    if reach > alpha + _BOUND_SLACK:
        warn.append(
            "gains.alpha_rule: the true parameter can reach Frobenius norm "
            f"{reach:.6g} but the projection radius is {alpha:.6g}; the estimate "
            "set may exclude W(t) at times (consider alpha_rule='sum')"
        )
    return GainSet(
        K_x=k_x,
        K_r=k_r,
        Gamma_W=gamma_w,
        Gamma_W_star=gamma_ws,
        sigma=sigma,
        gamma1=g1,
        gamma2=g2,
        gamma3=g3,
        p_f=p_f,
        p_ff=p_ff,
        epsilon=eps,
        epsilon_star=eps_star,
        Q_m=q_m,
        P=p,
        PB=p @ plant.B,
        alpha=alpha,
        alpha_star=alpha_star,
    )


def _parse_ie(data: dict) -> IEPolicy:
    kind = _get(data, "kind", "ie_policy")
    if kind not in ("fixed_window", "online_threshold"):
        raise ConfigError(
            "ie_policy.kind", "must be 'fixed_window' or 'online_threshold'"
        )
    if kind == "fixed_window":
        t_ie = _as_float(_get(data, "T_ie", "ie_policy"), "ie_policy.T_ie", positive=True)
        return IEPolicy(kind=kind, T_ie=t_ie)
    gamma_ie = _as_float(
        _get(data, "gamma_ie", "ie_policy"), "ie_policy.gamma_ie", positive=True
    )
    return IEPolicy(kind=kind, gamma_ie=gamma_ie)


def _parse_estimate(val: Any, key: str, n_w: int, n_u: int) -> np.ndarray:
    if isinstance(val, (int, float)) and not isinstance(val, bool):
        return float(val) * np.ones((n_w, n_u))
    return _as_matrix(val, key, (n_w, n_u))


# ---------------------------------------------------------------------------
# entry points


def from_dict(data: dict) -> ScenarioConfig:
    """Validate a parsed JSON document and assemble the scenario."""
    if not isinstance(data, dict):
        raise ConfigError("<root>", "document must be a JSON object")
    warn: list[str] = []
    name = data.get("name", "scenario")
    if not isinstance(name, str) or not name:
        raise ConfigError("name", "must be a non-empty string")

    plant = _parse_plant(_get(data, "plant", ""))
    ref = _parse_reference(_get(data, "reference", ""), plant.n)
    truth = _parse_truth(_get(data, "true_parameter", ""), plant.n_w, plant.n_u, warn)
    gains = _parse_gains(_get(data, "gains", ""), plant, ref, truth, warn)

    integ = _get(data, "integrator", "")
    dt = _as_float(_get(integ, "dt", "integrator"), "integrator.dt", positive=True)
    horizon = _as_float(
        _get(integ, "horizon", "integrator"), "integrator.horizon", positive=True
    )
    t0 = _as_float(
        _get(integ, "t0", "integrator", required=False, default=0.0), "integrator.t0"
    )
    if horizon < dt:
        raise ConfigError("integrator.horizon", "must cover at least one step")
    steps = horizon / dt
    if abs(steps - round(steps)) > 1e-6:
        raise ConfigError(
            "integrator.horizon", f"must be an integer number of steps (horizon/dt = {steps:.9g})"
        )

    ie = _parse_ie(_get(data, "ie_policy", ""))
    if ie.kind == "fixed_window" and ie.T_ie > horizon:
        warn.append(
            "ie_policy.T_ie exceeds the horizon; the snapshot drive never activates"
        )

    init = _get(data, "initial", "", required=False, default={})
    x0 = _as_vector(init.get("x", np.zeros(plant.n).tolist()), "initial.x", plant.n)
    x_m0 = _as_vector(
        init.get("x_m", np.zeros(plant.n).tolist()), "initial.x_m", plant.n
    )
    w_hat0 = _parse_estimate(init.get("W_hat", 0.0), "initial.W_hat", plant.n_w, plant.n_u)
    w_hat_star0 = _parse_estimate(
        init.get("W_hat_star", 0.0), "initial.W_hat_star", plant.n_w, plant.n_u
    )
    if float(np.linalg.norm(w_hat0)) > gains.alpha + gains.epsilon:
        raise ConfigError(
            "initial.W_hat", "starts outside the inflated projection set"
        )
    if float(np.linalg.norm(w_hat_star0)) > gains.alpha_star + gains.epsilon_star:
        raise ConfigError(
            "initial.W_hat_star", "starts outside the inflated projection set"
        )

    logging_sec = _get(data, "logging", "", required=False, default={})
    log_every = logging_sec.get("every", 10)
    if isinstance(log_every, bool) or not isinstance(log_every, int) or log_every < 1:
        raise ConfigError("logging.every", "must be a positive integer")

    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("seed", "must be an integer")

    verify_sec = data.get("verify", {}) or {}
    expect_activation = verify_sec.get("expect_activation")
    if expect_activation is not None and not isinstance(expect_activation, bool):
        raise ConfigError("verify.expect_activation", "must be a boolean")
    lambda_min_max = verify_sec.get("lambda_min_max")
    if lambda_min_max is not None:
        lambda_min_max = _as_float(lambda_min_max, "verify.lambda_min_max", nonneg=True)

    debug = data.get("debug", {}) or {}
    disable_projection = bool(debug.get("disable_projection", False))
    if disable_projection:
        warn.append("debug.disable_projection is set: estimates may leave the set")

    return ScenarioConfig(
        name=name,
        plant=plant,
        reference=ref,
        truth=truth,
        gains=gains,
        dt=dt,
        horizon=horizon,
        t0=t0,
        ie_policy=ie,
        x0=x0,
        x_m0=x_m0,
        W_hat0=w_hat0,
        W_hat_star0=w_hat_star0,
        log_every=log_every,
        seed=seed,
        expect_activation=expect_activation,
        lambda_min_max=lambda_min_max,
        disable_projection=disable_projection,
        warnings=warn,
        raw=copy.deepcopy(data),
    )


def parse_config(text: str) -> ScenarioConfig:
    """Parse a JSON document (text) into a validated ScenarioConfig."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<document>", f"invalid JSON: {exc}") from None
    return from_dict(data)


def load_config(path: str) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def apply_overrides(data: dict, assignments: list[str]) -> dict:
    """Apply ``KEY=VALUE`` overrides (dotted keys) to a raw config dict.

    Values are parsed as JSON when possible (so ``--set gains.gamma3=5`` is a
    number and ``--set plant.A=[[0,1],[0,0]]`` a matrix), falling back to the
    literal string.  Returns a new dict; the input is not modified.
    """
    out = copy.deepcopy(data)
    for item in assignments:
        if "=" not in item:
            raise ConfigError("--set", f"expected KEY=VALUE, got {item!r}")
        key, _, raw_val = item.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError("--set", f"empty key in {item!r}")
        try:
            value = json.loads(raw_val)
        except json.JSONDecodeError:
            value = raw_val
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            nxt = node.get(part)
            if not isinstance(nxt, dict):
                nxt = {}
                node[part] = nxt
            node = nxt
        node[parts[-1]] = value
    return out
