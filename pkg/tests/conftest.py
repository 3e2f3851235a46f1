"""Shared fixtures: the bundled scenarios are expensive enough to run once."""

import copy
import json

import pytest

import dualadapt as da
from dualadapt import scenarios
from dualadapt.verification import build_report

GOLDEN_NAMES = ("g1", "g2", "g3", "g4")


def load_scenario_dict(name):
    """Raw JSON document of a bundled scenario (deep-copied, safe to mutate)."""
    with open(scenarios.path(name), encoding="utf-8") as fh:
        return json.load(fh)


def config_with_overrides(name, pairs):
    """Bundled scenario with dotted-key overrides applied."""
    data = da.apply_overrides(load_scenario_dict(name), pairs)
    return da.from_dict(data)


@pytest.fixture(scope="session")
def golden_logs():
    """One default-backend run of every bundled scenario."""
    return {
        name: da.run_scenario(da.load_config(scenarios.path(name)))
        for name in GOLDEN_NAMES
    }


@pytest.fixture(scope="session")
def golden_reports(golden_logs):
    return {name: build_report(log) for name, log in golden_logs.items()}


@pytest.fixture()
def g2_dict():
    return copy.deepcopy(load_scenario_dict("g2"))
