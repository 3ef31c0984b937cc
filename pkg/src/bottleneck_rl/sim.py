"""Microscopic simulation of a multi-lane corridor with lane drops.

Human-driven vehicles follow the intelligent-driver car-following law
(IDM); connected autonomous vehicles (CAVs) take externally commanded
accelerations. Lane changing is rule based: mandatory merges ahead of a
lane drop plus discretionary changes driven by an acceleration
incentive and a follower-deceleration safety criterion.

Everything is deterministic given the seed: vehicle arrivals use a
fixed headway schedule with round-robin entry lanes, and integration is
semi-implicit Euler with a hard no-overlap guard.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

CAV = "CAV"
HDV = "HDV"

_WALL_EPS = 1e-6
_CONTACT_EPS = 1e-3  # residual gap left by the no-overlap guard
_GAP_TOL = 1e-9


class SimulationError(RuntimeError):
    """Raised when a physical invariant is violated (a simulator bug)."""


@dataclass(frozen=True)
class IdmParams:
    a_max: float = 1.0
    b_comfort: float = 1.5
    v0: float = 30.0
    delta: float = 4.0
    s0: float = 2.0
    t_headway: float = 1.0

    def __post_init__(self):
        for name in ("a_max", "b_comfort", "v0", "delta", "s0", "t_headway"):
            if getattr(self, name) <= 0:
                raise ValueError(f"IdmParams.{name} must be > 0")
        if self.delta < 1:
            raise ValueError("IdmParams.delta must be >= 1")


@dataclass(frozen=True)
class LaneChangeParams:
    safe_decel: float = 2.0
    incentive_threshold: float = 0.2
    mandatory_lookahead: float = 100.0
    cooldown: float = 2.0

    def __post_init__(self):
        for name in ("safe_decel", "incentive_threshold", "mandatory_lookahead", "cooldown"):
            if getattr(self, name) <= 0:
                raise ValueError(f"LaneChangeParams.{name} must be > 0")


@dataclass(frozen=True)
class CorridorSpec:
    """Corridor geometry: contiguous segments with non-increasing lane counts.

    Lane index 0 is the leftmost lane and exists everywhere; drops remove
    the rightmost lane(s).
    """

    total_length: float
    segments: tuple[tuple[float, int], ...]
    speed_limit: float = 30.0

    def __post_init__(self):
        if self.total_length <= 0 or self.speed_limit <= 0:
            raise ValueError("total_length and speed_limit must be > 0")
        if not self.segments or self.segments[0][0] != 0.0:
            raise ValueError("segments must start at position 0")
        prev_start, prev_count = -1.0, None
        for start, count in self.segments:
            if count < 1 or int(count) != count:
                raise ValueError("lane counts must be positive integers")
            if start <= prev_start:
                raise ValueError("segment starts must be strictly increasing")
            if prev_count is not None and count > prev_count:
                raise ValueError("lane counts must be non-increasing downstream")
            prev_start, prev_count = start, count
        if prev_start >= self.total_length:
            raise ValueError("segments must lie within [0, total_length)")

    def lane_count_at(self, position: float) -> int:
        count = self.segments[0][1]
        for start, c in self.segments:
            if position >= start:
                count = c
        return count

    def lane_end(self, lane: int) -> float | None:
        """Position at which `lane` ceases to exist, or None if it runs to the exit."""
        for start, count in self.segments:
            if count <= lane:
                return start
        return None

    def first_drop_position(self) -> float | None:
        """Start of the first segment whose lane count is below the entry count."""
        entry = self.segments[0][1]
        for start, count in self.segments:
            if count < entry:
                return start
        return None


@dataclass
class VehicleState:
    id: int
    kind: str
    lane: int
    position: float  # front bumper, meters
    speed: float
    accel: float
    length: float
    idm: IdmParams
    last_lane_change: float = -math.inf

    @property
    def rear(self) -> float:
        return self.position - self.length


@dataclass
class SimState:
    time: float
    vehicles: dict[int, VehicleState]
    spawned_count: int
    exited_count: int
    exit_log: list[float]
    rng: np.random.Generator


def desired_gap(v: float, dv: float, idm: IdmParams) -> float:
    """Equilibrium-plus-dynamic gap s*; dv = own speed minus leader speed.

    Clamped at zero as a whole when the dynamic term drives it negative.
    """
    if v < 0:
        raise ValueError("speed must be non-negative")
    s = idm.s0 + v * idm.t_headway + v * dv / (2.0 * math.sqrt(idm.a_max * idm.b_comfort))
    return max(0.0, s)


def idm_acceleration(
    v: float,
    gap: float,
    leader_speed: float,
    idm: IdmParams,
    b_emergency: float = 6.0,
) -> float:
    """IDM acceleration, clamped to [-b_emergency, a_max].

    Pass gap = +inf for a free road (no leader).
    """
    if math.isinf(gap):
        interaction = 0.0
    else:
        if gap <= 0:
            raise SimulationError(f"non-positive gap {gap} with a leader present")
        s_star = desired_gap(v, v - leader_speed, idm)
        interaction = (s_star / gap) ** 2
    acc = idm.a_max * (1.0 - (v / idm.v0) ** idm.delta - interaction)
    return min(idm.a_max, max(-b_emergency, acc))


@dataclass
class _Pending:
    spawn_index: int  # 1-based spawn order
    kind: str
    lane_ptr: int


class Simulation:
    """One corridor instance. Single-threaded; instances are independent."""

    def __init__(
        self,
        corridor: CorridorSpec,
        inflow_rate: float,
        total_vehicles: int,
        cav_count: int,
        idm: IdmParams | None = None,
        lc: LaneChangeParams | None = None,
        seed: int = 0,
        b_emergency: float = 6.0,
        vehicle_length: float = 5.0,
    ):
        if inflow_rate <= 0:
            raise ValueError("inflow_rate must be > 0")
        if cav_count > total_vehicles:
            raise ValueError("cav_count cannot exceed total_vehicles")
        self.corridor = corridor
        self.inflow_rate = inflow_rate
        self.total_vehicles = total_vehicles
        self.cav_count = cav_count
        self.idm = idm or IdmParams(v0=corridor.speed_limit)
        self.lc = lc or LaneChangeParams()
        self.b_emergency = b_emergency
        self.vehicle_length = vehicle_length
        self.cav_every = round(total_vehicles / cav_count) if cav_count else 0
        self.state = SimState(
            time=0.0,
            vehicles={},
            spawned_count=0,
            exited_count=0,
            exit_log=[],
            rng=np.random.default_rng(seed),
        )
        self._next_spawn_time = 0.0
        self._pending: deque[_Pending] = deque()
        self._queued = 0  # spawn attempts issued so far
        self._cavs_assigned = 0
        self._next_id = 0

    # ------------------------------------------------------------------ lanes

    def _per_lane(self) -> dict[int, list[VehicleState]]:
        lanes: dict[int, list[VehicleState]] = {}
        for veh in self.state.vehicles.values():
            lanes.setdefault(veh.lane, []).append(veh)
        for vehs in lanes.values():
            vehs.sort(key=lambda v: -v.position)
        return lanes

    def _neighbors(self, lane: int, position: float, exclude: int | None = None):
        """(leader, follower) in `lane` around `position`."""
        leader = follower = None
        for veh in self.state.vehicles.values():
            if veh.lane != lane or veh.id == exclude:
                continue
            if veh.position >= position:
                if leader is None or veh.position < leader.position:
                    leader = veh
            else:
                if follower is None or veh.position > follower.position:
                    follower = veh
        return leader, follower

    def _effective_gap(self, veh: VehicleState, leader: VehicleState | None):
        """Gap and leader speed, treating an upcoming lane end as a stopped wall."""
        gap, speed = math.inf, veh.speed
        if leader is not None:
            gap = leader.rear - veh.position
            speed = leader.speed
        wall = self.corridor.lane_end(veh.lane)
        if wall is not None and wall - veh.position < gap:
            gap, speed = wall - veh.position, 0.0
        return gap, speed

    # ------------------------------------------------------------------ spawn

    def spawn_inflow(self, dt: float) -> list[VehicleState]:
        """Queue arrivals on the fixed-headway schedule and insert any that fit.

        Arrivals that cannot enter safely stay pending and retry each
        substep, rotating across entry lanes.
        """
        headway = 3600.0 / self.inflow_rate
        entry_lanes = self.corridor.lane_count_at(0.0)
        while self.state.time >= self._next_spawn_time and self._queued < self.total_vehicles:
            self._queued += 1
            if (
                self.cav_every
                and self._queued % self.cav_every == 0
                and self._cavs_assigned < self.cav_count
            ):
                kind = CAV
                self._cavs_assigned += 1
            else:
                kind = HDV
            self._pending.append(_Pending(self._queued, kind, (self._queued - 1) % entry_lanes))
            self._next_spawn_time += headway

        inserted = []
        still_pending: deque[_Pending] = deque()
        for pend in self._pending:
            lane = pend.lane_ptr % entry_lanes
            veh = self._try_insert(pend, lane)
            if veh is None:
                pend.lane_ptr += 1
                still_pending.append(pend)
            else:
                inserted.append(veh)
        self._pending = still_pending
        return inserted

    def _try_insert(self, pend: _Pending, lane: int) -> VehicleState | None:
        leader, _ = self._neighbors(lane, 0.0)
        if leader is None:
            speed = self.corridor.speed_limit
        else:
            gap = leader.rear
            if gap <= self.idm.s0:
                return None
            speed = self._safe_entry_speed(gap, leader.speed)
        veh = VehicleState(
            id=self._next_id,
            kind=pend.kind,
            lane=lane,
            position=0.0,
            speed=speed,
            accel=0.0,
            length=self.vehicle_length,
            idm=self.idm,
        )
        self._next_id += 1
        self.state.vehicles[veh.id] = veh
        self.state.spawned_count += 1
        return veh

    def _safe_entry_speed(self, gap: float, leader_speed: float) -> float:
        """Largest speed <= limit whose desired gap fits the available gap."""
        vmax = self.corridor.speed_limit
        if desired_gap(vmax, vmax - leader_speed, self.idm) <= gap:
            return vmax
        lo, hi = 0.0, vmax
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            if desired_gap(mid, mid - leader_speed, self.idm) <= gap:
                lo = mid
            else:
                hi = mid
        return lo

    # ----------------------------------------------------------- lane changes

    def lane_change_decision(self, vehicle_id: int) -> int | None:
        """Target adjacent lane for `vehicle_id`, or None to stay put."""
        veh = self.state.vehicles.get(vehicle_id)
        if veh is None:
            raise KeyError(f"unknown vehicle id {vehicle_id}")
        if self.state.time - veh.last_lane_change < self.lc.cooldown:
            return None

        wall = self.corridor.lane_end(veh.lane)
        lanes_here = self.corridor.lane_count_at(veh.position)
        candidates = [veh.lane - 1, veh.lane + 1]
        candidates = [c for c in candidates if 0 <= c < lanes_here]

        if wall is not None and wall - veh.position <= self.lc.mandatory_lookahead:
            # Mandatory merge: left neighbor preferred; follower-deceleration
            # limit relaxes with urgency as the lane end approaches.
            urgency = 1.0 - (wall - veh.position) / self.lc.mandatory_lookahead
            allowed = max(self.lc.safe_decel, self.b_emergency * urgency)
            for target in candidates:  # left first
                if self._change_is_safe(veh, target, allowed):
                    return target
            return None

        # Discretionary: acceleration advantage over staying put.
        leader, _ = self._neighbors(veh.lane, veh.position, exclude=veh.id)
        gap, lspeed = self._effective_gap(veh, leader)
        a_stay = idm_acceleration(veh.speed, gap, lspeed, veh.idm, self.b_emergency)
        best: tuple[float, float, int] | None = None  # (advantage, lead gap, lane)
        for target in candidates:
            if not self._change_is_safe(veh, target, self.lc.safe_decel):
                continue
            new_leader, _ = self._neighbors(target, veh.position, exclude=veh.id)
            probe = VehicleState(
                id=-1, kind=veh.kind, lane=target, position=veh.position,
                speed=veh.speed, accel=0.0, length=veh.length, idm=veh.idm,
            )
            ngap, nspeed = self._effective_gap(probe, new_leader)
            a_go = idm_acceleration(veh.speed, ngap, nspeed, veh.idm, self.b_emergency)
            adv = a_go - a_stay
            if adv < self.lc.incentive_threshold:
                continue
            key = (adv, ngap, -target)  # ties: larger lead gap, then leftmost
            if best is None or key > (best[0], best[1], -best[2]):
                best = (adv, ngap, target)
        return best[2] if best else None

    def _change_is_safe(self, veh: VehicleState, target: int, allowed_decel: float) -> bool:
        if self.corridor.lane_count_at(veh.position) <= target:
            return False
        leader, follower = self._neighbors(target, veh.position, exclude=veh.id)
        if leader is not None and leader.rear - veh.position <= 0:
            return False
        if follower is not None:
            gap = veh.rear - follower.position
            if gap <= 0:
                return False
            induced = idm_acceleration(
                follower.speed, gap, veh.speed, follower.idm, self.b_emergency
            )
            if induced < -allowed_decel:
                return False
        return True

    # ------------------------------------------------------------------- step

    def step(
        self,
        cav_accels: dict[int, float] | None = None,
        dt: float = 0.1,
        lane_changes: bool = False,
    ) -> int:
        """Advance one substep; returns the number of vehicles that exited.

        Order: arrivals, accelerations, kinematic update with a hard
        no-overlap cap, optional lane changes, exit accounting,
        invariant verification.
        """
        if dt <= 0:
            raise ValueError("dt must be > 0")
        st = self.state
        cav_accels = cav_accels or {}
        for vid, a in cav_accels.items():
            veh = st.vehicles.get(vid)
            if veh is None or veh.kind != CAV:
                raise ValueError(f"commanded id {vid} is not a CAV in the simulation")
            if not -3.0 <= a <= 3.0:
                raise ValueError(f"commanded acceleration {a} outside [-3, 3]")

        self.spawn_inflow(dt)
        lanes = self._per_lane()

        for vehs in lanes.values():
            for i, veh in enumerate(vehs):
                leader = vehs[i - 1] if i > 0 else None
                gap, lspeed = self._effective_gap(veh, leader)
                if veh.kind == CAV and veh.id in cav_accels:
                    veh.accel = cav_accels[veh.id]
                else:
                    veh.accel = idm_acceleration(veh.speed, gap, lspeed, veh.idm, self.b_emergency)

        # Integrate leader-first so the displacement cap can use the
        # leader's updated rear. The cap is the emergency guard: it never
        # lets a follower overlap its leader or pass a lane end.
        for lane, vehs in lanes.items():
            wall = self.corridor.lane_end(lane)
            prev_rear = math.inf
            for veh in vehs:
                new_v = max(0.0, veh.speed + veh.accel * dt)
                new_v = min(new_v, self.corridor.speed_limit)
                new_x = veh.position + new_v * dt
                limit = prev_rear - _CONTACT_EPS
                if wall is not None:
                    limit = min(limit, wall - _WALL_EPS)
                if new_x > limit:
                    new_x = max(limit, veh.position)
                    new_v = (new_x - veh.position) / dt
                veh.speed, veh.position = new_v, new_x
                prev_rear = veh.rear

        st.time += dt

        if lane_changes:
            order = sorted(st.vehicles.values(), key=lambda v: -v.position)
            for veh in order:
                target = self.lane_change_decision(veh.id)
                if target is not None:
                    veh.lane = target
                    veh.last_lane_change = st.time

        exited = 0
        for vid in [v.id for v in st.vehicles.values() if v.position >= self.corridor.total_length]:
            del st.vehicles[vid]
            st.exit_log.append(st.time)
            st.exited_count += 1
            exited += 1

        self._verify_invariants()
        return exited

    def _verify_invariants(self) -> None:
        st = self.state
        if st.spawned_count != len(st.vehicles) + st.exited_count:
            raise SimulationError("vehicle conservation violated")
        for lane, vehs in self._per_lane().items():
            for leader, follower in zip(vehs, vehs[1:]):
                if leader.rear - follower.position < -_GAP_TOL:
                    raise SimulationError(
                        f"overlap in lane {lane}: vehicles {leader.id} and {follower.id} "
                        f"at t={st.time:.2f}"
                    )
            for veh in vehs:
                if veh.lane >= self.corridor.lane_count_at(veh.position):
                    raise SimulationError(
                        f"vehicle {veh.id} on nonexistent lane {veh.lane} at {veh.position:.1f} m"
                    )

    # ------------------------------------------------------------------ views

    def cav_ids(self) -> list[int]:
        return sorted(v.id for v in self.state.vehicles.values() if v.kind == CAV)

    @property
    def done_spawning(self) -> bool:
        return self.state.spawned_count >= self.total_vehicles and not self._pending
