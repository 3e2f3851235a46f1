"""Bundled benchmark scenarios.

Four closed-loop setups spanning the qualitative regimes the verifier
exercises: no uncertainty, constant parameter with rich excitation, slowly
drifting parameter, and a quiescent run with no excitation at all.  Each is
a plain JSON config; ``path(name)`` resolves a bundled name (with or without
the numbered prefix) to a filesystem path.
"""

from __future__ import annotations

import importlib.resources as _res

_FILES = {
    "g1_zero_uncertainty": "g1_zero_uncertainty.json",
    "g2_constant_parameter": "g2_constant_parameter.json",
    "g3_drifting_parameter": "g3_drifting_parameter.json",
    "g4_no_excitation": "g4_no_excitation.json",
}
_ALIASES = {"g1": "g1_zero_uncertainty", "g2": "g2_constant_parameter",
            "g3": "g3_drifting_parameter", "g4": "g4_no_excitation"}


def names() -> tuple[str, ...]:
    return tuple(_FILES)


def path(name: str) -> str:
    """Filesystem path of a bundled scenario (accepts g1..g4 shorthand)."""
    key = _ALIASES.get(name, name)
    if key not in _FILES:
        raise KeyError(f"no bundled scenario named {name!r}; have {names()}")
    return str(_res.files(__package__).joinpath(_FILES[key]))
