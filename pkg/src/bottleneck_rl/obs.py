"""RL observation construction: per-CAV sensing, node features, adjacency.

Nodes are the CAVs currently in the corridor. Each CAV senses HDVs
within a longitudinal radius (all lanes, idealized sensors) and the
sensed traffic enters the node features as mean-aggregated statistics,
giving a fixed feature width of 6. The CAV communication graph is
complete (zero latency), and its symmetric normalization with
self-loops feeds the graph-convolution layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sim import CAV, HDV, SimState

FEATURE_DIM = 6


@dataclass(frozen=True)
class ObsConfig:
    rho: float = 100.0
    pos_scale: float = 500.0
    speed_scale: float = 30.0
    max_sensed: int = 10
    max_lanes: int = 4

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be > 0")
        if self.pos_scale <= 0 or self.speed_scale <= 0 or self.max_sensed <= 0:
            raise ValueError("scales must be > 0")
        if self.max_lanes < 1:
            raise ValueError("max_lanes must be >= 1")


@dataclass(frozen=True)
class GraphObservation:
    features: np.ndarray  # (N, 6)
    adjacency: np.ndarray  # (N, N) binary, zero diagonal
    cav_ids: tuple[int, ...]

    @property
    def n(self) -> int:
        return len(self.cav_ids)

    @staticmethod
    def empty() -> "GraphObservation":
        return GraphObservation(
            features=np.zeros((0, FEATURE_DIM)),
            adjacency=np.zeros((0, 0)),
            cav_ids=(),
        )


def sense(cav_id: int, state: SimState, cfg: ObsConfig) -> list[tuple[float, float]]:
    """HDVs within the sensing radius of a CAV, as (relative position, speed).

    The radius is a closed ball on longitudinal distance across all
    lanes; results are sorted by relative position.
    """
    ego = state.vehicles.get(cav_id)
    if ego is None or ego.kind != CAV:
        raise KeyError(f"id {cav_id} is not a CAV in the simulation state")
    out = [
        (veh.position - ego.position, veh.speed)
        for veh in state.vehicles.values()
        if veh.kind == HDV and abs(veh.position - ego.position) <= cfg.rho
    ]
    out.sort()
    return out


def build_features(state: SimState, cfg: ObsConfig) -> np.ndarray:
    """Node-feature matrix, one row per CAV (ordered by vehicle id).

    Columns: normalized position, normalized speed, normalized lane
    index, capped sensed-HDV count, mean sensed relative position, mean
    sensed HDV speed. All entries lie in [-1, 1].
    """
    cav_ids = sorted(v.id for v in state.vehicles.values() if v.kind == CAV)
    if not cav_ids:
        raise ValueError("observation undefined with zero CAVs")
    lane_norm = max(1, cfg.max_lanes - 1)
    rows = np.zeros((len(cav_ids), FEATURE_DIM))
    for i, vid in enumerate(cav_ids):
        veh = state.vehicles[vid]
        sensed = sense(vid, state, cfg)
        rows[i, 0] = veh.position / cfg.pos_scale
        rows[i, 1] = veh.speed / cfg.speed_scale
        rows[i, 2] = veh.lane / lane_norm
        rows[i, 3] = min(1.0, len(sensed) / cfg.max_sensed)
        if sensed:
            rows[i, 4] = float(np.mean([s[0] for s in sensed])) / cfg.rho
            rows[i, 5] = float(np.mean([s[1] for s in sensed])) / cfg.speed_scale
    return rows


def build_adjacency(n_cavs: int) -> np.ndarray:
    """Complete CAV communication graph: ones off-diagonal, zero diagonal."""
    if n_cavs < 1:
        raise ValueError("n_cavs must be >= 1")
    return np.ones((n_cavs, n_cavs)) - np.eye(n_cavs)


def normalize_adjacency(A: np.ndarray) -> np.ndarray:
    """Symmetric degree normalization with self-loops."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("adjacency must be square")
    if not np.array_equal(A, A.T):
        raise ValueError("adjacency must be symmetric")
    if np.any(np.diag(A) != 0) or not np.all((A == 0) | (A == 1)):
        raise ValueError("adjacency must be binary with zero diagonal")
    A_hat = A + np.eye(A.shape[0])
    inv_sqrt_deg = 1.0 / np.sqrt(A_hat.sum(axis=1))
    return A_hat * np.outer(inv_sqrt_deg, inv_sqrt_deg)


def build_observation(state: SimState, cfg: ObsConfig) -> GraphObservation:
    features = build_features(state, cfg)
    return GraphObservation(
        features=features,
        adjacency=build_adjacency(features.shape[0]),
        cav_ids=tuple(sorted(v.id for v in state.vehicles.values() if v.kind == CAV)),
    )
