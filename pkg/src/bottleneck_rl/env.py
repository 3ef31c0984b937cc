"""RL environment: episode lifecycle, reward, and termination.

One environment step spans one second of simulated time (ten 0.1 s
simulator substeps with held CAV accelerations, lane-change decisions
evaluated on the first substep). The reward is a throughput term (exits
over a sliding window, scaled to vehicles/hour) minus a speed-variance
penalty over the traffic upstream of the first lane drop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .obs import GraphObservation, ObsConfig, build_observation
from .scenarios import ScenarioSpec
from .sim import Simulation

RL_DT = 1.0
SUB_DT = 0.1
SUBSTEPS = round(RL_DT / SUB_DT)


class EpisodeOver(RuntimeError):
    """step() called after the episode terminated."""


@dataclass(frozen=True)
class RewardConfig:
    beta: float = 10.0
    window_T: float = 10.0

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.window_T <= 0:
            raise ValueError("window_T must be > 0")


@dataclass(frozen=True)
class StepOutcome:
    obs: GraphObservation
    reward: float
    done: bool
    r1: float
    r2: float
    exited_this_step: int
    mean_speed: float
    n_upstream: int


def throughput_reward(exit_log: list[float], now: float, cfg: RewardConfig) -> float:
    """Exits within the trailing window, scaled to vehicles/hour."""
    count = sum(1 for t in exit_log if now - cfg.window_T < t <= now)
    return 3600.0 * count / cfg.window_T


def variance_penalty(sim: Simulation, cfg: RewardConfig) -> float:
    """-beta * (population speed variance) / count over vehicles upstream
    of the first lane drop; zero when no vehicle is upstream."""
    drop = sim.corridor.first_drop_position()
    cutoff = drop if drop is not None else sim.corridor.total_length
    speeds = [v.speed for v in sim.state.vehicles.values() if v.position < cutoff]
    if not speeds:
        return 0.0
    var = float(np.var(speeds))
    return -cfg.beta * var / len(speeds)


class BottleneckEnv:
    """One rollout instance; independent of any other instance."""

    def __init__(
        self,
        scenario: ScenarioSpec,
        seed: int = 0,
        idm=None,
        lc=None,
        obs_cfg: ObsConfig | None = None,
        reward_cfg: RewardConfig | None = None,
        record: bool = False,
    ):
        self.scenario = scenario
        self.idm = idm
        self.lc = lc
        self.reward_cfg = reward_cfg or RewardConfig()
        base = obs_cfg or ObsConfig()
        # Derive corridor-dependent scales from the scenario.
        self.obs_cfg = ObsConfig(
            rho=base.rho,
            pos_scale=scenario.corridor.total_length,
            speed_scale=scenario.corridor.speed_limit,
            max_sensed=base.max_sensed,
            max_lanes=scenario.corridor.segments[0][1],
        )
        self.record = record
        self.trajectory: list[tuple[float, int, str, int, float, float]] = []
        self.sim: Simulation | None = None
        self.step_count = 0
        self.episode_reward = 0.0
        self._done = True
        self._seed = seed

    def reset(self, seed: int | None = None) -> GraphObservation:
        """Fresh simulation, advanced until the first CAV has spawned."""
        if seed is not None:
            self._seed = seed
        self.sim = Simulation(
            corridor=self.scenario.corridor,
            inflow_rate=self.scenario.inflow_rate,
            total_vehicles=self.scenario.total_vehicles,
            cav_count=self.scenario.cav_count,
            idm=self.idm,
            lc=self.lc,
            seed=self._seed,
        )
        self.trajectory = []
        self.step_count = 0
        self.episode_reward = 0.0
        self._done = False
        while not self.sim.cav_ids():
            self._advance_one_second({})
            if self.step_count > self.scenario.step_cap:
                raise RuntimeError("no CAV spawned within the episode step cap")
        return self._observe()

    def _observe(self) -> GraphObservation:
        if not self.sim.cav_ids():
            return GraphObservation.empty()
        return build_observation(self.sim.state, self.obs_cfg)

    def _advance_one_second(self, commands: dict[int, float]) -> int:
        exited = 0
        for sub in range(SUBSTEPS):
            commands = {k: a for k, a in commands.items() if k in self.sim.state.vehicles}
            exited += self.sim.step(commands, dt=SUB_DT, lane_changes=(sub == 0))
        self.step_count += 1
        if self.record:
            t = self.sim.state.time
            for veh in sorted(self.sim.state.vehicles.values(), key=lambda v: v.id):
                self.trajectory.append((t, veh.id, veh.kind, veh.lane, veh.position, veh.speed))
        return exited

    def step(self, actions: np.ndarray | None) -> StepOutcome:
        """Apply per-CAV accelerations (ordered by the current observation's
        cav_ids) for one second. Pass None to leave CAVs under rule-based
        control (the baseline configuration)."""
        if self._done:
            raise EpisodeOver("episode is over; call reset()")
        cav_ids = self.sim.cav_ids()
        if actions is None:
            commands = {}
        else:
            actions = np.asarray(actions, dtype=float)
            if actions.shape != (len(cav_ids),):
                raise ValueError(
                    f"expected {len(cav_ids)} actions, got {actions.shape}"
                )
            commands = dict(zip(cav_ids, actions.tolist()))

        exited = self._advance_one_second(commands)

        st = self.sim.state
        r1 = throughput_reward(st.exit_log, st.time, self.reward_cfg)
        r2 = variance_penalty(self.sim, self.reward_cfg)
        reward = r1 + r2
        self.episode_reward += reward

        all_out = st.exited_count >= self.scenario.total_vehicles
        if self.scenario.horizon_steps is not None:
            done = self.step_count >= self.scenario.horizon_steps
        else:
            done = all_out or self.step_count >= self.scenario.step_cap
        self._done = done

        speeds = [v.speed for v in st.vehicles.values()]
        return StepOutcome(
            obs=self._observe(),
            reward=reward,
            done=done,
            r1=r1,
            r2=r2,
            exited_this_step=exited,
            mean_speed=float(np.mean(speeds)) if speeds else 0.0,
            n_upstream=self._count_upstream(),
        )

    def _count_upstream(self) -> int:
        drop = self.sim.corridor.first_drop_position()
        cutoff = drop if drop is not None else self.sim.corridor.total_length
        return sum(1 for v in self.sim.state.vehicles.values() if v.position < cutoff)

    @property
    def done(self) -> bool:
        return self._done
