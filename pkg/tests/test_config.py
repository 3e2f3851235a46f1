"""Scenario parsing, validation diagnostics, defaults, and overrides."""

import json
import math

import numpy as np
import pytest

import dualadapt as da
from dualadapt import scenarios
from dualadapt.config import ConfigError

from conftest import GOLDEN_NAMES, config_with_overrides, load_scenario_dict


def test_bundled_scenarios_all_parse():
    for name in GOLDEN_NAMES:
        cfg = da.load_config(scenarios.path(name))
        assert cfg.n_steps == round(cfg.horizon / cfg.dt)
        assert cfg.plant.n == cfg.reference.A_m.shape[0]
        assert not cfg.disable_projection


def test_scenario_registry_aliases():
    assert set(GOLDEN_NAMES) <= set(scenarios.names()) or all(
        scenarios.path(n) for n in GOLDEN_NAMES
    )


def test_matching_holds_for_bundled_scenarios():
    for name in GOLDEN_NAMES:
        cfg = da.load_config(scenarios.path(name))
        a, b = cfg.plant.A, cfg.plant.B
        np.testing.assert_allclose(
            a + b @ cfg.gains.K_x.T, cfg.reference.A_m, atol=1e-12
        )
        np.testing.assert_allclose(
            b @ cfg.gains.K_r.T, cfg.reference.B_m, atol=1e-12
        )


def test_lyapunov_solution_is_wired_in(g2_dict):
    cfg = da.from_dict(g2_dict)
    res = cfg.reference.A_m.T @ cfg.gains.P + cfg.gains.P @ cfg.reference.A_m + cfg.gains.Q_m
    assert np.linalg.norm(res) <= 1e-10 * max(np.linalg.norm(cfg.gains.Q_m), 1.0)
    np.testing.assert_allclose(cfg.gains.PB, cfg.gains.P @ cfg.plant.B, atol=1e-15)


def test_alpha_quadrature_rule(g2_dict):
    g2_dict["true_parameter"]["delta_bar"] = 0.3
    g2_dict["true_parameter"]["delta_amplitudes"] = [[0.3], [0.0]]
    g2_dict["true_parameter"]["delta_frequencies"] = [[0.5], [0.0]]
    g2_dict["true_parameter"]["delta_dot_bar"] = 0.15
    cfg = da.from_dict(g2_dict)
    assert cfg.gains.alpha == pytest.approx(math.sqrt(1.0 + 0.09))
    assert cfg.gains.alpha_star == pytest.approx(1.0)


def test_alpha_sum_rule(g2_dict):
    g2_dict["gains"]["alpha_rule"] = "sum"
    g2_dict["true_parameter"]["delta_bar"] = 0.25
    cfg = da.from_dict(g2_dict)
    assert cfg.gains.alpha == pytest.approx(1.25)


def test_alpha_rule_rejects_unknown(g2_dict):
    g2_dict["gains"]["alpha_rule"] = "max"
    with pytest.raises(ConfigError) as err:
        da.from_dict(g2_dict)
    assert "gains.alpha_rule" in str(err.value)


def test_epsilon_defaults_to_tenth_of_radius(g2_dict):
    del g2_dict["gains"]["epsilon"]
    del g2_dict["gains"]["epsilon_star"]
    cfg = da.from_dict(g2_dict)
    assert cfg.gains.epsilon == pytest.approx(0.1 * cfg.gains.alpha)
    assert cfg.gains.epsilon_star == pytest.approx(0.1 * cfg.gains.alpha_star)


def test_membership_warning_when_radius_too_small(g2_dict):
    # reachable norm ||W*|| + delta_bar exceeds the quadrature radius
    g2_dict["true_parameter"]["W_star"] = [[0.9], [0.0]]
    g2_dict["true_parameter"]["delta_amplitudes"] = [[0.3], [0.0]]
    g2_dict["true_parameter"]["delta_frequencies"] = [[0.5], [0.0]]
    g2_dict["true_parameter"]["delta_bar"] = 0.3
    g2_dict["true_parameter"]["delta_dot_bar"] = 0.15
    cfg = da.from_dict(g2_dict)
    assert any("projection radius" in w for w in cfg.warnings)


def test_rejects_gamma_with_negative_eigenvalue(g2_dict):
    g2_dict["gains"]["Gamma_W"] = [[1.0, 2.0], [2.0, 1.0]]  # eigenvalues 3, -1
    with pytest.raises(ConfigError) as err:
        da.from_dict(g2_dict)
    assert "gains.Gamma_W" in str(err.value)


def test_rejects_non_hurwitz_reference(g2_dict):
    g2_dict["reference"]["A_m"] = [[0.0, 1.0], [4.0, 2.0]]
    g2_dict["reference"]["B_m"] = [[0.0], [2.0]]
    with pytest.raises(ConfigError) as err:
        da.from_dict(g2_dict)
    msg = str(err.value)
    assert "reference.A_m" in msg
    assert "eigenvalue" in msg.lower()


def test_rejects_rank_deficient_input_matrix(g2_dict):
    g2_dict["plant"]["B"] = [[0.0], [0.0]]
    with pytest.raises(ConfigError) as err:
        da.from_dict(g2_dict)
    assert "plant.B" in str(err.value)


def test_rejects_nominal_norm_above_declared_bound(g2_dict):
    g2_dict["true_parameter"]["W_star"] = [[1.2], [0.0]]  # w_bar stays 1.0
    with pytest.raises(ConfigError) as err:
        da.from_dict(g2_dict)
    assert "true_parameter.w_bar" in str(err.value)


def test_rejects_excursion_above_declared_bound(g2_dict):
    g2_dict["true_parameter"]["delta_amplitudes"] = [[0.5], [0.0]]
    g2_dict["true_parameter"]["delta_frequencies"] = [[1.0], [0.0]]
    # delta_bar stays 0.0
    with pytest.raises(ConfigError) as err:
        da.from_dict(g2_dict)
    assert "true_parameter.delta_bar" in str(err.value)


def test_rejects_fractional_step_count(g2_dict):
    g2_dict["integrator"]["horizon"] = 30.0005
    with pytest.raises(ConfigError) as err:
        da.from_dict(g2_dict)
    assert "horizon" in str(err.value)


def test_rejects_initial_estimate_outside_set(g2_dict):
    g2_dict["initial"]["W_hat"] = [[2.0], [0.0]]  # alpha + eps = 1.1
    with pytest.raises(ConfigError):
        da.from_dict(g2_dict)


def test_rejects_unknown_regressor(g2_dict):
    g2_dict["plant"]["regressor"] = "fourier"
    with pytest.raises(ConfigError) as err:
        da.from_dict(g2_dict)
    assert "plant.regressor" in str(err.value)


def test_rejects_bad_log_decimation(g2_dict):
    g2_dict["logging"]["every"] = 0
    with pytest.raises(ConfigError) as err:
        da.from_dict(g2_dict)
    assert "logging.every" in str(err.value)


def test_config_error_message_names_key():
    err = ConfigError("gains.sigma", "must be > 0")
    assert "gains.sigma" in str(err)
    assert "must be > 0" in str(err)


def test_override_scalar_precedence(g2_dict):
    data = da.apply_overrides(g2_dict, ["gains.sigma=0.5"])
    assert data["gains"]["sigma"] == 0.5
    cfg = da.from_dict(data)
    assert cfg.gains.sigma == 0.5


def test_override_parses_json_values(g2_dict):
    data = da.apply_overrides(
        g2_dict,
        [
            "true_parameter.W_star=[[0.2], [0.1]]",
            "ie_policy.kind=\"fixed_window\"",
            "ie_policy.T_ie=4.0",
            "verify.expect_activation=true",
        ],
    )
    cfg = da.from_dict(data)
    np.testing.assert_allclose(cfg.truth.W_star, [[0.2], [0.1]])
    assert cfg.ie_policy.kind == "fixed_window"
    assert cfg.ie_policy.T_ie == 4.0


def test_override_does_not_mutate_source(g2_dict):
    before = json.dumps(g2_dict, sort_keys=True)
    da.apply_overrides(g2_dict, ["gains.sigma=9.0"])
    assert json.dumps(g2_dict, sort_keys=True) == before


def test_override_rejects_malformed_pair(g2_dict):
    with pytest.raises(ConfigError):
        da.apply_overrides(g2_dict, ["gains.sigma"])


def test_disable_projection_flag_warns(g2_dict):
    cfg = config_with_overrides("g2", ["debug.disable_projection=true"])
    assert cfg.disable_projection
    assert any("disable_projection" in w for w in cfg.warnings)


def test_parse_config_text_roundtrip(g2_dict):
    cfg = da.parse_config(json.dumps(g2_dict))
    assert cfg.name == g2_dict["name"]
    assert cfg.dt == g2_dict["integrator"]["dt"]
