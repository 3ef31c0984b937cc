"""Result analytics: time-space speed grids and per-episode metrics.

Trajectory samples (one per vehicle per one-second step) are binned
into 50 m x 10 s cells. Cells hold running sums so both the mean speed
and the population standard deviation can be reduced; empty cells are
flagged missing, never reported as zero speed. Speeds are logged in m/s
and reported in km/h.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

CELL_LENGTH = 50.0  # meters
CELL_DURATION = 10.0  # seconds
MS_TO_KMH = 3.6


@dataclass
class HeatmapGrid:
    n_space: int
    n_time: int
    count: np.ndarray = field(default=None)
    sum_speed: np.ndarray = field(default=None)
    sum_sq: np.ndarray = field(default=None)

    def __post_init__(self):
        shape = (self.n_space, self.n_time)
        if self.count is None:
            self.count = np.zeros(shape, dtype=int)
            self.sum_speed = np.zeros(shape)
            self.sum_sq = np.zeros(shape)

    def add(self, space_cell: int, time_cell: int, speed_ms: float) -> None:
        kmh = speed_ms * MS_TO_KMH
        self.count[space_cell, time_cell] += 1
        self.sum_speed[space_cell, time_cell] += kmh
        self.sum_sq[space_cell, time_cell] += kmh * kmh

    @property
    def missing(self) -> np.ndarray:
        return self.count == 0

    def mean_kmh(self) -> np.ndarray:
        """Cell mean speed in km/h; missing cells are NaN."""
        with np.errstate(invalid="ignore", divide="ignore"):
            out = self.sum_speed / self.count
        out[self.missing] = np.nan
        return out

    def std_kmh(self) -> np.ndarray:
        """Cell population standard deviation in km/h; missing cells are NaN."""
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = self.sum_speed / self.count
            var = self.sum_sq / self.count - mean * mean
        var = np.maximum(var, 0.0)  # guard tiny negative round-off
        out = np.sqrt(var)
        out[self.missing] = np.nan
        return out

    @property
    def total_samples(self) -> int:
        return int(self.count.sum())


def accumulate_grids(
    trajectory: list[tuple[float, int, str, int, float, float]],
    corridor_length: float,
) -> HeatmapGrid:
    """Bin (time, id, kind, lane, position, speed) rows into one grid.

    The mean and standard-deviation views are two reductions of the same
    accumulator. Samples outside the corridor indicate a logger bug.
    """
    if not trajectory:
        raise ValueError("empty trajectory log")
    n_space = math.ceil(corridor_length / CELL_LENGTH)
    max_time = max(row[0] for row in trajectory)
    n_time = max(1, math.ceil((max_time + 1e-9) / CELL_DURATION))
    grid = HeatmapGrid(n_space=n_space, n_time=n_time)
    for t, _vid, _kind, _lane, pos, speed in trajectory:
        if not 0.0 <= pos < corridor_length:
            raise ValueError(f"sample position {pos} outside corridor")
        i = min(int(pos // CELL_LENGTH), n_space - 1)
        j = min(int(t // CELL_DURATION), n_time - 1)
        grid.add(i, j, speed)
    return grid


def count_cells_below(grid: HeatmapGrid, threshold_kmh: float) -> int:
    """Non-missing cells whose mean speed is below the threshold."""
    mean = grid.mean_kmh()
    return int(np.sum(mean[~grid.missing] < threshold_kmh))


@dataclass(frozen=True)
class EpisodeMetrics:
    scenario: str
    episode: int
    seed: int
    episode_reward: float
    throughput: int
    episode_length: int
    cells_below_8: int

    def to_record(self) -> dict:
        return {
            "scenario": self.scenario,
            "episode": self.episode,
            "seed": self.seed,
            "episode_reward": self.episode_reward,
            "throughput": self.throughput,
            "episode_length": self.episode_length,
            "cells_below_8_kmh": self.cells_below_8,
        }


def episode_throughput(metrics: list[EpisodeMetrics]) -> list[int]:
    if not metrics:
        raise ValueError("no episodes")
    return [m.throughput for m in metrics]


# ------------------------------------------------------------------ output

def grid_to_csv(values: np.ndarray) -> str:
    """CSV matrix, rows = space cells upstream-first, cols = time cells.

    Missing cells are empty fields.
    """
    lines = []
    for row in values:
        lines.append(",".join("" if np.isnan(v) else repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def grid_from_csv(text: str) -> np.ndarray:
    rows = []
    for line in text.strip("\n").split("\n"):
        rows.append([math.nan if cell == "" else float(cell) for cell in line.split(",")])
    return np.asarray(rows)


def _ramp(value: float, vmax: float) -> str:
    """Red (0) through yellow (vmax/2) to green (vmax), clipped."""
    t = min(1.0, max(0.0, value / vmax))
    if t < 0.5:
        r, g = 255, int(510 * t)
    else:
        r, g = int(510 * (1.0 - t)), 255
    return f"rgb({r},{g},0)"


def grid_to_svg(values: np.ndarray, vmax: float = 120.0, cell_px: int = 8) -> str:
    """SVG heatmap with the red-yellow-green ramp over [0, vmax] km/h.

    Row 0 (upstream) is drawn at the top; missing cells are light gray.
    """
    n_space, n_time = values.shape
    w, h = n_time * cell_px, n_space * cell_px
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">'
    ]
    for i in range(n_space):
        for j in range(n_time):
            v = values[i, j]
            color = "rgb(220,220,220)" if np.isnan(v) else _ramp(v, vmax)
            parts.append(
                f'<rect x="{j * cell_px}" y="{i * cell_px}" '
                f'width="{cell_px}" height="{cell_px}" fill="{color}"/>'
            )
    parts.append("</svg>")
    return "\n".join(parts)
