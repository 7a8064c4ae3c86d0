"""Scenario registry: named, runnable experiment specifications.

The catalog has seven entries; the which-path experiment contributes two
runnable cases (overlap and passed-through readings), so eight scenario
names resolve through `get_scenario`.
"""

from __future__ import annotations

from .catalog import (
    ScenarioSpec,
    born_measurement,
    eq44_reversed_roles,
    fig1_two_slit,
    fig3a_overlap,
    fig3b_swap,
    fig4_no_influence,
    protective_discriminate,
    protective_empty_wave,
)
from .engine import AssertionResult, ScenarioOutcome

__all__ = [
    "ScenarioSpec",
    "ScenarioOutcome",
    "AssertionResult",
    "CATALOG",
    "scenario_names",
    "get_scenario",
    "fig1_two_slit",
    "born_measurement",
    "fig3a_overlap",
    "fig3b_swap",
    "fig4_no_influence",
    "eq44_reversed_roles",
    "protective_discriminate",
    "protective_empty_wave",
]

_FACTORIES = {
    "fig1_two_slit": fig1_two_slit,
    "born_measurement": born_measurement,
    "fig3a_overlap": fig3a_overlap,
    "fig3b_swap": fig3b_swap,
    "fig4_no_influence": fig4_no_influence,
    "eq44_reversed_roles": eq44_reversed_roles,
    "protective_discriminate": protective_discriminate,
    "protective_empty_wave": protective_empty_wave,
}

# one entry per experiment family; the fig3 entry carries both cases
CATALOG = (
    {
        "names": ("fig1_two_slit",),
        "anchor": "fig1",
        "title": "Two-slit interference with an empty partner wave",
    },
    {
        "names": ("born_measurement",),
        "anchor": "eq2.1-2.2",
        "title": "Impulsive pointer measurement and occupancy frequencies",
    },
    {
        "names": ("fig3a_overlap", "fig3b_swap"),
        "anchor": "eq3.1-3.2",
        "title": "Which-path detection: overlap vs passed-through readings",
    },
    {
        "names": ("fig4_no_influence",),
        "anchor": "eq4.1-4.3",
        "title": "An empty branch cannot influence another system",
    },
    {
        "names": ("eq44_reversed_roles",),
        "anchor": "eq4.4",
        "title": "Reversed roles: a second detector after the crossing",
    },
    {
        "names": ("protective_discriminate",),
        "anchor": "eq5.1-5.2",
        "title": "Protective probe separates collapse from no-collapse",
    },
    {
        "names": ("protective_empty_wave",),
        "anchor": "eq5.3",
        "title": "Protective probe of an unoccupied path-detection branch",
    },
)


def scenario_names() -> tuple[str, ...]:
    return tuple(_FACTORIES)


def get_scenario(name: str, **overrides) -> ScenarioSpec:
    try:
        factory = _FACTORIES[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; known: {', '.join(_FACTORIES)}") from None
    return factory(**overrides)
