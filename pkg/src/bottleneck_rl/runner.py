"""Training, evaluation, and comparison runs with artifact emission.

Every run writes a manifest (config hash, seed, code version) to its
output directory. Training logs one CSV row per environment step and
one per episode; evaluation and baseline runs emit per-episode metrics,
time-space grids, and an SVG heatmap. All runs are deterministic given
the config seed; episode seeds are seed + episode_index.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import __version__
from .agent import (
    ActorParams,
    OUNoise,
    ReplayBuffer,
    Transition,
    actor_forward,
    clone_params,
    make_actor,
    make_critic,
    select_action,
    soft_update,
    update,
)
from .checkpoint import assign_tensors, load_tensors, save_tensors
from .config import RunConfig
from .env import BottleneckEnv
from .metrics import (
    EpisodeMetrics,
    accumulate_grids,
    count_cells_below,
    grid_from_csv,
    grid_to_csv,
    grid_to_svg,
)
from .nn import adam_init
from .scenarios import get_scenario

CHECKPOINT_EVERY = 50  # episodes


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def _prepare_out(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise RuntimeError(f"output directory {out} is not writable: {exc}") from exc
    return out


def _write_manifest(cfg: RunConfig, out: Path) -> None:
    manifest = {
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "code_version": __version__,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _all_tensors(actor, critic, target_actor, target_critic) -> dict:
    out = {}
    for prefix, params in (
        ("actor", actor),
        ("critic", critic),
        ("target_actor", target_actor),
        ("target_critic", target_critic),
    ):
        for name, arr in params.tensors().items():
            out[f"{prefix}/{name}"] = arr
    return out


def train_run(cfg: RunConfig) -> Path:
    out = _prepare_out(cfg)
    _write_manifest(cfg, out)
    scenario = get_scenario(cfg.scenario)
    tc = cfg.train

    rng_init = np.random.default_rng(cfg.seed)
    rng_noise = np.random.default_rng(cfg.seed + 10_000)
    rng_replay = np.random.default_rng(cfg.seed + 20_000)

    actor = make_actor(rng_init)
    critic = make_critic(rng_init)
    target_actor = clone_params(actor)
    target_critic = clone_params(critic)
    actor_opt = adam_init(actor.tensors())
    critic_opt = adam_init(critic.tensors())
    buffer = ReplayBuffer(tc.buffer_capacity)
    noise = OUNoise(tc.noise_theta, tc.noise_sigma)

    env_steps = 0
    episode = 0
    step_rows = ["step,episode,reward,critic_loss,actor_objective"]
    episode_rows = ["episode,steps,reward"]

    while env_steps < tc.total_steps and (
        tc.max_episodes is None or episode < tc.max_episodes
    ):
        episode += 1
        env = BottleneckEnv(
            scenario,
            seed=cfg.seed + episode - 1,
            idm=cfg.idm,
            lc=cfg.lane_change,
            obs_cfg=cfg.obs,
            reward_cfg=cfg.reward,
        )
        obs = env.reset()
        noise.reset()
        while True:
            act = select_action(obs, actor, explore=True, noise=noise, rng=rng_noise)
            outcome = env.step(act)
            if obs.n:
                buffer.add(Transition(obs, act.copy(), outcome.reward, outcome.obs, outcome.done))
            env_steps += 1
            closs = aobj = None
            if env_steps > tc.warmup_steps and buffer.size >= tc.batch_size:
                closs, aobj = update(
                    actor, critic, target_actor, target_critic,
                    buffer, tc, rng_replay, actor_opt, critic_opt,
                )
                soft_update(target_actor.tensors(), actor.tensors(), tc.tau)
                soft_update(target_critic.tensors(), critic.tensors(), tc.tau)
            step_rows.append(
                f"{env_steps},{episode},{_fmt(outcome.reward)},{_fmt(closs)},{_fmt(aobj)}"
            )
            obs = outcome.obs
            if outcome.done or env_steps >= tc.total_steps:
                break
        episode_rows.append(f"{episode},{env.step_count},{_fmt(env.episode_reward)}")
        if episode % CHECKPOINT_EVERY == 0:
            save_tensors(
                out / f"checkpoint_ep{episode:05d}.json",
                _all_tensors(actor, critic, target_actor, target_critic),
            )

    save_tensors(out / "checkpoint.json", _all_tensors(actor, critic, target_actor, target_critic))
    (out / "training_log.csv").write_text("\n".join(step_rows) + "\n")
    (out / "episode_rewards.csv").write_text("\n".join(episode_rows) + "\n")
    return out


def load_actor(checkpoint_path: str | Path) -> ActorParams:
    """Actor parameters from a checkpoint, with shape validation."""
    actor = make_actor(np.random.default_rng(0))
    expected_all = _all_tensors(actor, make_critic(np.random.default_rng(0)),
                                clone_params(actor), make_critic(np.random.default_rng(0)))
    loaded = load_tensors(checkpoint_path, expected=expected_all)
    assign_tensors(
        {f"actor/{k}": v for k, v in actor.tensors().items()},
        {k: v for k, v in loaded.items() if k.startswith("actor/")},
    )
    return actor


def _run_episodes(cfg: RunConfig, actor: ActorParams | None, out: Path) -> list[EpisodeMetrics]:
    scenario = get_scenario(cfg.scenario)
    metrics: list[EpisodeMetrics] = []
    for ep in range(cfg.episodes):
        seed = cfg.seed + ep
        env = BottleneckEnv(
            scenario,
            seed=seed,
            idm=cfg.idm,
            lc=cfg.lane_change,
            obs_cfg=cfg.obs,
            reward_cfg=cfg.reward,
            record=True,
        )
        obs = env.reset()
        while True:
            actions = actor_forward(obs, actor) if actor is not None else None
            outcome = env.step(actions)
            obs = outcome.obs
            if outcome.done:
                break
        grid = accumulate_grids(env.trajectory, scenario.corridor.total_length)
        metrics.append(
            EpisodeMetrics(
                scenario=scenario.name,
                episode=ep,
                seed=seed,
                episode_reward=env.episode_reward,
                throughput=env.sim.state.exited_count,
                episode_length=env.step_count,
                cells_below_8=count_cells_below(grid, 8.0),
            )
        )
        mean_csv = grid_to_csv(grid.mean_kmh())
        std_csv = grid_to_csv(grid.std_kmh())
        (out / f"mean_speed_grid_ep{ep:03d}.csv").write_text(mean_csv)
        (out / f"speed_std_grid_ep{ep:03d}.csv").write_text(std_csv)
        if ep == 0:
            (out / "mean_speed_grid.csv").write_text(mean_csv)
            (out / "speed_std_grid.csv").write_text(std_csv)
            (out / "heatmap.svg").write_text(grid_to_svg(grid.mean_kmh()))

    (out / "episode_metrics.json").write_text(
        json.dumps(
            {"scenario": scenario.name, "episodes": [m.to_record() for m in metrics]},
            indent=2,
        )
        + "\n"
    )
    return metrics


def baseline_run(cfg: RunConfig) -> list[EpisodeMetrics]:
    """Episodes where CAVs follow the same car-following and lane-change
    rules as HDVs; no learned control."""
    out = _prepare_out(cfg)
    _write_manifest(cfg, out)
    return _run_episodes(cfg, actor=None, out=out)


def eval_run(cfg: RunConfig) -> list[EpisodeMetrics]:
    """Noise-free rollouts of a trained policy from a checkpoint."""
    if cfg.checkpoint is None:
        raise ValueError("eval requires a checkpoint path")
    out = _prepare_out(cfg)
    _write_manifest(cfg, out)
    actor = load_actor(cfg.checkpoint)
    return _run_episodes(cfg, actor=actor, out=out)


def compare_run(baseline_metrics_path: str | Path, eval_metrics_path: str | Path, out_dir: str | Path) -> dict:
    """Side-by-side report: per-episode throughput, rewards, congested cells."""
    base = json.loads(Path(baseline_metrics_path).read_text())
    ev = json.loads(Path(eval_metrics_path).read_text())
    if base["scenario"] != ev["scenario"]:
        raise ValueError(
            f"scenario mismatch: baseline {base['scenario']!r} vs eval {ev['scenario']!r}"
        )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    b_eps, e_eps = base["episodes"], ev["episodes"]
    if not b_eps or not e_eps:
        raise ValueError("both metric sets must be nonempty")
    n = min(len(b_eps), len(e_eps))
    pairs = [
        {
            "episode": i,
            "baseline_throughput": b_eps[i]["throughput"],
            "eval_throughput": e_eps[i]["throughput"],
            "throughput_delta": e_eps[i]["throughput"] - b_eps[i]["throughput"],
        }
        for i in range(n)
    ]
    report = {
        "scenario": base["scenario"],
        "throughput_pairs": pairs,
        "baseline_mean_reward": float(np.mean([m["episode_reward"] for m in b_eps])),
        "eval_mean_reward": float(np.mean([m["episode_reward"] for m in e_eps])),
        "baseline_mean_throughput": float(np.mean([m["throughput"] for m in b_eps])),
        "eval_mean_throughput": float(np.mean([m["throughput"] for m in e_eps])),
        "baseline_cells_below_8_kmh": [m["cells_below_8_kmh"] for m in b_eps],
        "eval_cells_below_8_kmh": [m["cells_below_8_kmh"] for m in e_eps],
        "baseline_episode_lengths": [m["episode_length"] for m in b_eps],
        "eval_episode_lengths": [m["episode_length"] for m in e_eps],
    }
    (out / "compare_report.json").write_text(json.dumps(report, indent=2) + "\n")
    csv_rows = ["episode,baseline_throughput,eval_throughput,throughput_delta"]
    for p in pairs:
        csv_rows.append(
            f"{p['episode']},{p['baseline_throughput']},{p['eval_throughput']},{p['throughput_delta']}"
        )
    (out / "compare_throughput.csv").write_text("\n".join(csv_rows) + "\n")
    return report


def render_run(grid_csv_path: str | Path, out_dir: str | Path) -> Path:
    """Re-render a grid CSV as an SVG heatmap."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    values = grid_from_csv(Path(grid_csv_path).read_text())
    target = out / "heatmap.svg"
    target.write_text(grid_to_svg(values))
    return target
