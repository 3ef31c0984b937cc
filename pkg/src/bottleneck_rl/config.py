"""Run configuration: one JSON document with a section per module.

CLI flags override file values. Every numeric field is validated by its
owning dataclass before a run starts, so an invalid config aborts with
a message naming the field.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .agent import TrainConfig
from .env import RewardConfig
from .obs import ObsConfig
from .sim import IdmParams, LaneChangeParams

_SECTIONS = {
    "idm": IdmParams,
    "lane_change": LaneChangeParams,
    "obs": ObsConfig,
    "reward": RewardConfig,
    "train": TrainConfig,
}


@dataclass(frozen=True)
class RunConfig:
    scenario: str = "moderate"
    mode: str = "train"
    seed: int = 0
    episodes: int = 10
    output_dir: str = "out"
    checkpoint: str | None = None
    idm: IdmParams = field(default_factory=IdmParams)
    lane_change: LaneChangeParams = field(default_factory=LaneChangeParams)
    obs: ObsConfig = field(default_factory=ObsConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.scenario not in ("moderate", "severe"):
            raise ValueError(f"scenario must be 'moderate' or 'severe', got {self.scenario!r}")
        if self.mode not in ("train", "eval", "baseline", "compare", "render"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(data: dict) -> "RunConfig":
        kwargs = {}
        for key, value in data.items():
            if key in _SECTIONS:
                if not isinstance(value, dict):
                    raise ValueError(f"config section {key!r} must be an object")
                cls = _SECTIONS[key]
                known = {f.name for f in dataclasses.fields(cls)}
                extra = set(value) - known
                if extra:
                    raise ValueError(f"unknown field(s) {sorted(extra)} in section {key!r}")
                kwargs[key] = cls(**value)
            else:
                known = {f.name for f in dataclasses.fields(RunConfig)}
                if key not in known:
                    raise ValueError(f"unknown config field {key!r}")
                kwargs[key] = value
        return RunConfig(**kwargs)

    @staticmethod
    def load(path: str | Path) -> "RunConfig":
        return RunConfig.from_dict(json.loads(Path(path).read_text()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()

    def replace(self, **kwargs) -> "RunConfig":
        return dataclasses.replace(self, **kwargs)
