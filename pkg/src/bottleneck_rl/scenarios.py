"""The two lane-drop scenarios used for training and evaluation."""

from __future__ import annotations

from dataclasses import dataclass

from .sim import CorridorSpec


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    corridor: CorridorSpec
    inflow_rate: float  # veh/h
    total_vehicles: int
    cav_count: int
    horizon_steps: int | None  # None: run until empty (bounded by step_cap)
    step_cap: int = 2000

    def __post_init__(self):
        if self.cav_count > self.total_vehicles:
            raise ValueError("cav_count cannot exceed total_vehicles")
        if self.inflow_rate <= 0:
            raise ValueError("inflow_rate must be > 0")


def moderate_scenario() -> ScenarioSpec:
    """0.5 km corridor, 4 lanes dropping to 3 at 300 m and 2 at 400 m;
    1500 veh/h inflow, 50 vehicles per episode with 5 CAVs; the episode
    runs until the corridor empties (capped)."""
    return ScenarioSpec(
        name="moderate",
        corridor=CorridorSpec(
            total_length=500.0,
            segments=((0.0, 4), (300.0, 3), (400.0, 2)),
        ),
        inflow_rate=1500.0,
        total_vehicles=50,
        cav_count=5,
        horizon_steps=None,
    )


def severe_scenario() -> ScenarioSpec:
    """1 km corridor, 4 lanes dropping to 2 at 600 m and 1 at 800 m;
    2300 veh/h inflow, 140 vehicles per episode with 10 CAVs; fixed
    1500-step horizon."""
    return ScenarioSpec(
        name="severe",
        corridor=CorridorSpec(
            total_length=1000.0,
            segments=((0.0, 4), (600.0, 2), (800.0, 1)),
        ),
        inflow_rate=2300.0,
        total_vehicles=140,
        cav_count=10,
        horizon_steps=1500,
    )


SCENARIOS = {"moderate": moderate_scenario, "severe": severe_scenario}


def get_scenario(name: str) -> ScenarioSpec:
    try:
        return SCENARIOS[name]()
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None
