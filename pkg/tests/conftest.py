import numpy as np
import pytest

from bottleneck_rl.sim import (
    CAV,
    HDV,
    CorridorSpec,
    IdmParams,
    LaneChangeParams,
    Simulation,
    VehicleState,
)


def make_sim(
    corridor=None,
    inflow_rate=1500.0,
    total_vehicles=0,
    cav_count=0,
    idm=None,
    lc=None,
    seed=0,
):
    """Simulation with spawning disabled by default (vehicles injected by hand)."""
    corridor = corridor or CorridorSpec(total_length=500.0, segments=((0.0, 2),))
    return Simulation(
        corridor=corridor,
        inflow_rate=inflow_rate,
        total_vehicles=total_vehicles,
        cav_count=cav_count,
        idm=idm,
        lc=lc,
        seed=seed,
    )


def add_vehicle(sim, kind=HDV, lane=0, position=100.0, speed=20.0, length=5.0, idm=None):
    veh = VehicleState(
        id=sim._next_id,
        kind=kind,
        lane=lane,
        position=position,
        speed=speed,
        accel=0.0,
        length=length,
        idm=idm or sim.idm,
    )
    sim._next_id += 1
    sim.state.vehicles[veh.id] = veh
    sim.state.spawned_count += 1
    return veh


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
