"""Centralized multi-agent DDPG over graph observations.

Actor and critic share the same trunk architecture (dense encoder
followed by one graph convolution) but have independent parameters. The
actor emits one bounded acceleration per CAV node; the critic mean-pools
the per-node (embedding, action) vectors into a single value. Targets
are slowly tracking copies updated by convex combination.

All forward/backward passes accept a stacked batch (B, N, ...) with a
shared propagation matrix, so minibatch updates group transitions by
node count instead of padding.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np

from .nn import (
    DenseLayer,
    GraphConvLayer,
    dense_backward,
    dense_forward_cached,
    graphconv_backward,
    graphconv_forward_cached,
    init_dense,
    init_graphconv,
    tensors_of,
)
from .obs import FEATURE_DIM, GraphObservation, normalize_adjacency

ACTION_BOUND = 3.0
HIDDEN = 32


@dataclass
class ActorParams:
    enc1: DenseLayer
    enc2: DenseLayer
    gcn: GraphConvLayer
    head1: DenseLayer
    head2: DenseLayer
    out: DenseLayer

    def tensors(self) -> dict[str, np.ndarray]:
        return tensors_of(self)


@dataclass
class CriticParams:
    enc1: DenseLayer
    enc2: DenseLayer
    gcn: GraphConvLayer
    head1: DenseLayer
    out: DenseLayer

    def tensors(self) -> dict[str, np.ndarray]:
        return tensors_of(self)


def make_actor(rng: np.random.Generator, feature_dim: int = FEATURE_DIM) -> ActorParams:
    return ActorParams(
        enc1=init_dense(feature_dim, HIDDEN, rng, "relu"),
        enc2=init_dense(HIDDEN, HIDDEN, rng, "relu"),
        gcn=init_graphconv(HIDDEN, HIDDEN, rng),
        head1=init_dense(HIDDEN, HIDDEN, rng, "relu"),
        head2=init_dense(HIDDEN, HIDDEN, rng, "relu"),
        out=init_dense(HIDDEN, 1, rng, "linear"),
    )


def make_critic(rng: np.random.Generator, feature_dim: int = FEATURE_DIM) -> CriticParams:
    return CriticParams(
        enc1=init_dense(feature_dim, HIDDEN, rng, "relu"),
        enc2=init_dense(HIDDEN, HIDDEN, rng, "relu"),
        gcn=init_graphconv(HIDDEN, HIDDEN, rng),
        head1=init_dense(HIDDEN + 1, HIDDEN, rng, "relu"),
        out=init_dense(HIDDEN, 1, rng, "linear"),
    )


def clone_params(params):
    return copy.deepcopy(params)


# ----------------------------------------------------------------- forward

def _trunk_forward(X, S, params):
    h1, c1 = dense_forward_cached(X, params.enc1)
    h2, c2 = dense_forward_cached(h1, params.enc2)
    z, cg = graphconv_forward_cached(h2, S, params.gcn)
    return z, {"c1": c1, "c2": c2, "cg": cg}


def _trunk_backward(grad_z, cache, params):
    gh2, gWg, gbg = graphconv_backward(grad_z, cache["cg"], params.gcn)
    gh1, gW2, gb2 = dense_backward(gh2, cache["c2"], params.enc2)
    _, gW1, gb1 = dense_backward(gh1, cache["c1"], params.enc1)
    return {
        "enc1.W": gW1, "enc1.b": gb1,
        "enc2.W": gW2, "enc2.b": gb2,
        "gcn.W": gWg, "gcn.b": gbg,
    }


def actor_forward_batch(X, S, params: ActorParams):
    """Unclipped per-node outputs u of shape (..., N, 1), with cache."""
    z, trunk_cache = _trunk_forward(X, S, params)
    h1, ch1 = dense_forward_cached(z, params.head1)
    h2, ch2 = dense_forward_cached(h1, params.head2)
    u, co = dense_forward_cached(h2, params.out)
    cache = {"trunk": trunk_cache, "ch1": ch1, "ch2": ch2, "co": co}
    return u, cache


def actor_backward_batch(grad_u, cache, params: ActorParams) -> dict[str, np.ndarray]:
    gh2, gWo, gbo = dense_backward(grad_u, cache["co"], params.out)
    gh1, gW2, gb2 = dense_backward(gh2, cache["ch2"], params.head2)
    gz, gW1, gb1 = dense_backward(gh1, cache["ch1"], params.head1)
    grads = _trunk_backward(gz, cache["trunk"], params)
    grads.update({
        "head1.W": gW1, "head1.b": gb1,
        "head2.W": gW2, "head2.b": gb2,
        "out.W": gWo, "out.b": gbo,
    })
    return grads


def critic_forward_batch(X, S, actions, params: CriticParams):
    """Scalar value per batch element, shape (..., 1), with cache.

    `actions` has shape (..., N, 1). With zero nodes the pooled vector
    is all zeros, so the value is still defined.
    """
    n = actions.shape[-2]
    if n == 0:
        batch_shape = actions.shape[:-2]
        pooled = np.zeros(batch_shape + (HIDDEN + 1,))
        cache = {"n": 0}
    else:
        z, trunk_cache = _trunk_forward(X, S, params)
        za = np.concatenate([z, actions], axis=-1)
        pooled = za.mean(axis=-2)
        cache = {"n": n, "trunk": trunk_cache}
    h1, ch1 = dense_forward_cached(pooled, params.head1)
    q, co = dense_forward_cached(h1, params.out)
    cache.update({"ch1": ch1, "co": co})
    return q, cache


def critic_backward_batch(grad_q, cache, params: CriticParams):
    """Returns (param gradients, gradient with respect to actions)."""
    gh1, gWo, gbo = dense_backward(grad_q, cache["co"], params.out)
    gpooled, gW1, gb1 = dense_backward(gh1, cache["ch1"], params.head1)
    grads = {
        "head1.W": gW1, "head1.b": gb1,
        "out.W": gWo, "out.b": gbo,
    }
    n = cache["n"]
    if n == 0:
        for name, arr in (("enc1", params.enc1), ("enc2", params.enc2), ("gcn", params.gcn)):
            grads[f"{name}.W"] = np.zeros_like(arr.W)
            grads[f"{name}.b"] = np.zeros_like(arr.b)
        return grads, np.zeros(grad_q.shape[:-1] + (0, 1))
    g_za = np.repeat(gpooled[..., None, :] / n, n, axis=-2)
    grad_z = g_za[..., :HIDDEN]
    grad_actions = g_za[..., HIDDEN:]
    grads.update(_trunk_backward(grad_z, cache["trunk"], params))
    return grads, grad_actions


# ------------------------------------------------------------- public API

def actor_forward(obs: GraphObservation, params: ActorParams) -> np.ndarray:
    """Deterministic policy: one clipped acceleration per CAV node."""
    if obs.n == 0:
        return np.zeros(0)
    S = normalize_adjacency(obs.adjacency)
    u, _ = actor_forward_batch(obs.features, S, params)
    return np.clip(u[:, 0], -ACTION_BOUND, ACTION_BOUND)


def critic_forward(obs: GraphObservation, actions: np.ndarray, params: CriticParams) -> float:
    actions = np.asarray(actions, dtype=float)
    if actions.shape != (obs.n,):
        raise ValueError(f"actions length {actions.shape} != node count {obs.n}")
    S = normalize_adjacency(obs.adjacency) if obs.n else np.zeros((0, 0))
    q, _ = critic_forward_batch(obs.features, S, actions[:, None], params)
    return float(q[0])


class OUNoise:
    """Per-node Ornstein-Uhlenbeck process keyed by vehicle id.

    Nodes appearing mid-episode start at zero; reset() clears all state
    at episode boundaries.
    """

    def __init__(self, theta: float = 0.15, sigma: float = 0.6, dt: float = 1.0):
        self.theta = theta
        self.sigma = sigma
        self.dt = dt
        self._x: dict[int, float] = {}

    def reset(self) -> None:
        self._x.clear()

    def sample(self, ids, rng: np.random.Generator) -> np.ndarray:
        out = np.empty(len(ids))
        for i, vid in enumerate(ids):
            x = self._x.get(vid, 0.0)
            x += self.theta * (0.0 - x) * self.dt
            x += self.sigma * math.sqrt(self.dt) * rng.standard_normal()
            self._x[vid] = x
            out[i] = x
        return out


def select_action(
    obs: GraphObservation,
    params: ActorParams,
    explore: bool = False,
    noise: OUNoise | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    actions = actor_forward(obs, params)
    if explore and obs.n:
        if noise is None or rng is None:
            raise ValueError("exploration requires a noise process and rng")
        actions = actions + noise.sample(obs.cav_ids, rng)
    return np.clip(actions, -ACTION_BOUND, ACTION_BOUND)


# --------------------------------------------------------------- training

@dataclass(frozen=True)
class Transition:
    obs: GraphObservation
    actions: np.ndarray
    reward: float
    next_obs: GraphObservation
    done: bool

    def __post_init__(self):
        if len(self.actions) != self.obs.n:
            raise ValueError("actions length must match observation node count")


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._head = 0

    @property
    def size(self) -> int:
        return len(self._items)

    def add(self, transition: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._head] = transition
            self._head = (self._head + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        if self.size < batch_size:
            raise ValueError(f"buffer holds {self.size} < batch size {batch_size}")
        idx = rng.integers(0, self.size, size=batch_size)
        return [self._items[i] for i in idx]


@dataclass(frozen=True)
class TrainConfig:
    discount: float = 0.99
    tau: float = 1e-3
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    batch_size: int = 64
    warmup_steps: int = 1000
    noise_theta: float = 0.15
    noise_sigma: float = 0.6
    buffer_capacity: int = 100_000
    total_steps: int = 1_000_000
    max_episodes: int | None = None
    # Rewards are O(1e3) per step, so raw value targets are O(1e5); the
    # optimizer sees rewards scaled to O(1) instead. Logged/reported
    # rewards are never scaled.
    reward_scale: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must be in (0, 1)")
        if self.reward_scale <= 0.0:
            raise ValueError("reward_scale must be > 0")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must be in (0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def soft_update(target_tensors: dict[str, np.ndarray], online_tensors: dict[str, np.ndarray], tau: float) -> None:
    """theta' <- tau * theta + (1 - tau) * theta', elementwise, in place."""
    for name, tgt in target_tensors.items():
        tgt *= 1.0 - tau
        tgt += tau * online_tensors[name]


def _propagation_matrix(obs: GraphObservation) -> np.ndarray:
    return normalize_adjacency(obs.adjacency) if obs.n else np.zeros((0, 0))


def _group_by_nodes(batch, key) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for i, t in enumerate(batch):
        groups.setdefault(key(t), []).append(i)
    return groups


def compute_targets(batch, target_actor, target_critic, discount, reward_scale=1.0) -> np.ndarray:
    """Bootstrapped values y_i; terminal transitions use the bare reward."""
    y = np.array([t.reward * reward_scale for t in batch])
    boot = [i for i, t in enumerate(batch) if not t.done]
    for n, rel in _group_by_nodes([batch[i] for i in boot], lambda t: t.next_obs.n).items():
        idx = [boot[i] for i in rel]
        sample = batch[idx[0]].next_obs
        S = _propagation_matrix(sample)
        X = np.stack([batch[i].next_obs.features for i in idx])
        if n:
            u, _ = actor_forward_batch(X, S, target_actor)
            a = np.clip(u, -ACTION_BOUND, ACTION_BOUND)
        else:
            a = np.zeros((len(idx), 0, 1))
        q, _ = critic_forward_batch(X, S, a, target_critic)
        y[idx] += discount * q[:, 0]
    return y


def update(
    actor: ActorParams,
    critic: CriticParams,
    target_actor: ActorParams,
    target_critic: CriticParams,
    buffer: ReplayBuffer,
    cfg: TrainConfig,
    rng: np.random.Generator,
    actor_opt,
    critic_opt,
) -> tuple[float, float]:
    """One DDPG minibatch update; returns (critic loss, actor objective).

    Critic descends the mean-squared Bellman error; the actor ascends
    the minibatch mean value of its own actions through the critic's
    action gradient. Targets are refreshed by soft update afterwards by
    the caller's training loop via `soft_update`.
    """
    from .nn import adam_step

    batch = buffer.sample(cfg.batch_size, rng)
    B = len(batch)
    y = compute_targets(batch, target_actor, target_critic, cfg.discount, cfg.reward_scale)

    groups = _group_by_nodes(batch, lambda t: t.obs.n)

    # Critic step.
    critic_tensors = critic.tensors()
    critic_grads = {k: np.zeros_like(v) for k, v in critic_tensors.items()}
    loss = 0.0
    for n, idx in groups.items():
        S = _propagation_matrix(batch[idx[0]].obs)
        X = np.stack([batch[i].obs.features for i in idx])
        A = np.stack([np.asarray(batch[i].actions, dtype=float)[:, None] for i in idx])
        q, cache = critic_forward_batch(X, S, A, critic)
        delta = q[:, 0] - y[idx]
        loss += float(delta @ delta)
        grads, _ = critic_backward_batch((2.0 / B) * delta[:, None], cache, critic)
        for k, g in grads.items():
            critic_grads[k] += g
    loss /= B
    adam_step(critic_tensors, critic_grads, critic_opt, cfg.critic_lr)

    # Actor step along the critic's action gradient (critic frozen).
    actor_tensors = actor.tensors()
    actor_grads = {k: np.zeros_like(v) for k, v in actor_tensors.items()}
    objective = 0.0
    for n, idx in groups.items():
        S = _propagation_matrix(batch[idx[0]].obs)
        X = np.stack([batch[i].obs.features for i in idx])
        u, acache = actor_forward_batch(X, S, actor)
        a = np.clip(u, -ACTION_BOUND, ACTION_BOUND)
        q, ccache = critic_forward_batch(X, S, a, critic)
        objective += float(q.sum())
        grad_q = np.full((len(idx), 1), 1.0 / B)
        _, grad_a = critic_backward_batch(grad_q, ccache, critic)
        # Pass the action gradient through the clip unless it pushes a
        # saturated output further outward; a hard zero there would trap
        # saturated nodes permanently.
        inward = (u >= ACTION_BOUND) & (grad_a < 0) | (u <= -ACTION_BOUND) & (grad_a > 0)
        grad_u = grad_a * ((np.abs(u) < ACTION_BOUND) | inward)
        for k, g in actor_backward_batch(grad_u, acache, actor).items():
            actor_grads[k] -= g  # ascend
    objective /= B
    adam_step(actor_tensors, actor_grads, actor_opt, cfg.actor_lr)

    return loss, objective
