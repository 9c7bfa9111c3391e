"""Asynchronous advantage actor-critic training.

Workers snapshot the global parameters, collect an n-step rollout from a
private environment, compute accumulated actor/critic gradients, and submit
them to a serialized global RMSProp updater. A single-worker run is fully
deterministic given the seed.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .env import EpisodeRecord, UavUgvEnv
from .nn import ActionBounds, GradientSet, ParamSet, RmsPropState
from .scenario import Task, TaskDistribution, sample_task


class A3cError(ValueError):
    """Invalid training configuration or rollout data."""


@dataclass
class TrainConfig:
    """Worker count, rollout horizon, discount, regularization, rates, budgets."""

    max_updates: int = 2000
    num_workers: int = 1
    rollout_len: int = 20          # n-step horizon
    rollout_cap: int | None = None  # per-rollout transition cap; defaults to rollout_len
    gamma: float = 0.99
    entropy_coef: float = 0.01
    actor_lr: float = 5e-4
    critic_lr: float = 1e-3
    grad_clip: float = 40.0
    hidden: tuple[int, ...] = (64, 64)
    rmsprop_decay: float = 0.99
    rmsprop_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.num_workers < 1:
            raise A3cError("num_workers must be >= 1")
        if self.rollout_len < 1:
            raise A3cError("rollout_len must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise A3cError("gamma must be in [0, 1]")
        if self.entropy_coef < 0:
            raise A3cError("entropy_coef must be >= 0")
        if self.rollout_cap is None:
            object.__setattr__(self, "rollout_cap", self.rollout_len)


@dataclass
class RolloutBuffer:
    """Ordered transitions of one rollout window plus the bootstrap value."""

    capacity: int
    features: list[np.ndarray] = field(default_factory=list)
    pre_squash: list[np.ndarray] = field(default_factory=list)
    actions: list[np.ndarray] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    log_probs: list[float] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    dones: list[bool] = field(default_factory=list)
    bootstrap_value: float = 0.0

    def add(self, feats, pre_squash, action, reward, log_prob, value, done) -> None:
        if len(self.features) >= self.capacity:
            raise A3cError(f"rollout buffer exceeds capacity {self.capacity}")
        if not (np.isfinite(reward) and np.isfinite(log_prob) and np.isfinite(value)):
            raise A3cError("non-finite transition data")
        self.features.append(np.asarray(feats, dtype=float))
        self.pre_squash.append(np.asarray(pre_squash, dtype=float))
        self.actions.append(np.asarray(action, dtype=float))
        self.rewards.append(float(reward))
        self.log_probs.append(float(log_prob))
        self.values.append(float(value))
        self.dones.append(bool(done))

    def __len__(self) -> int:
        return len(self.features)

    def feature_matrix(self) -> np.ndarray:
        return np.stack(self.features)

    def pre_squash_matrix(self) -> np.ndarray:
        return np.stack(self.pre_squash)


def nstep_returns(buffer: RolloutBuffer, gamma: float) -> np.ndarray:
    """Discounted bootstrapped return at every buffer position.

    Backward recursion; the bootstrap value seeds positions that reach the
    window end without a terminal, terminals reset the accumulator to zero.
    """
    if len(buffer) == 0:
        raise A3cError("empty rollout buffer")
    acc = float(buffer.bootstrap_value)
    out = np.empty(len(buffer))
    for t in reversed(range(len(buffer))):
        if buffer.dones[t]:
            acc = 0.0
        acc = buffer.rewards[t] + gamma * acc
        out[t] = acc
    return out


def advantage(returns: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Return minus the critic's estimate, per step."""
    returns = np.asarray(returns, dtype=float)
    values = np.asarray(values, dtype=float)
    if returns.shape != values.shape:
        raise A3cError(f"length mismatch: returns {returns.shape} vs values {values.shape}")
    return returns - values


def actor_loss_grads(params: ParamSet, bounds: ActionBounds, buffer: RolloutBuffer,
                     advantages: np.ndarray, entropy_coef: float
                     ) -> tuple[float, GradientSet]:
    """Minimized policy loss and its exact gradient, accumulated over a buffer.

    Loss = sum_n [-log pi(a_n|s_n) * adv_n] - coef * sum_n entropy; descending
    this loss moves parameters along the advantage-weighted score plus the
    entropy gradient. Advantages are treated as constants.
    """
    advantages = np.asarray(advantages, dtype=float)
    if len(advantages) != len(buffer):
        raise A3cError("advantage count does not match buffer length")
    x = buffer.feature_matrix()
    u = buffer.pre_squash_matrix()
    means, cache = nn.mlp_forward(params, x)
    log_sigma = params.log_sigma
    sigma = np.exp(log_sigma)
    z = (u - means) / sigma
    t, dim = z.shape

    gauss = -0.5 * (np.sum(z * z, axis=1) + dim * nn.LOG_2PI) - float(np.sum(log_sigma))
    jac = np.array([bounds.log_jacobian(row) for row in u])
    log_probs = gauss - jac
    entropy = nn.gaussian_entropy(log_sigma)
    loss = float(np.sum(-advantages * log_probs)) - entropy_coef * t * entropy

    d_mean = (-advantages[:, None]) * (z / sigma)
    grads = nn.mlp_backward(params, cache, d_mean)
    d_log_sigma = np.sum((-advantages[:, None]) * (z * z - 1.0), axis=0) - entropy_coef * t
    grads.blocks[-1][...] = d_log_sigma
    grads.accumulated = True
    return loss, grads


def critic_loss_grads(params: ParamSet, buffer: RolloutBuffer,
                      returns: np.ndarray) -> tuple[float, GradientSet]:
    """Summed squared return error and its exact gradient over a buffer."""
    returns = np.asarray(returns, dtype=float)
    if len(returns) != len(buffer):
        raise A3cError("return count does not match buffer length")
    x = buffer.feature_matrix()
    out, cache = nn.mlp_forward(params, x)
    diff = returns - out[:, 0]
    loss = float(np.sum(diff * diff))
    grads = nn.mlp_backward(params, cache, (-2.0 * diff)[:, None])
    grads.accumulated = True
    return loss, grads


class GlobalParams:
    """Shared actor/critic with a serialized RMSProp update channel.

    Readers take the latest published snapshot without locking (reference
    assignment is atomic); every update builds fresh arrays, applies both
    optimizers under the lock, and bumps the version counter exactly once.
    """

    def __init__(self, actor: ParamSet, critic: ParamSet,
                 actor_opt: RmsPropState, critic_opt: RmsPropState):
        self._lock = threading.Lock()
        self._actor_opt = actor_opt
        self._critic_opt = critic_opt
        self._snapshot = (actor, critic, 0)

    @property
    def version(self) -> int:
        return self._snapshot[2]

    def read(self) -> tuple[ParamSet, ParamSet, int]:
        return self._snapshot

    def update(self, actor_grads: GradientSet, critic_grads: GradientSet) -> int:
        with self._lock:
            actor, critic, version = self._snapshot
            actor, self._actor_opt = nn.rmsprop_step(self._actor_opt, actor, actor_grads)
            critic, self._critic_opt = nn.rmsprop_step(self._critic_opt, critic, critic_grads)
            version += 1
            actor.version = version
            critic.version = version
            self._snapshot = (actor, critic, version)
            return version

    def optimizer_states(self) -> tuple[RmsPropState, RmsPropState]:
        return self._actor_opt, self._critic_opt


@dataclass
class UpdateRecord:
    """One global update as seen by the worker that submitted it."""

    worker: int
    update: int
    steps: int
    mean_reward: float
    actor_loss: float
    critic_loss: float
    entropy: float
    wall_time: float = 0.0


class EpisodeStream:
    """Couples an environment with a task source and seeded resets."""

    def __init__(self, env: UavUgvEnv, task_fn, seed):
        self.env = env
        self._task_fn = task_fn
        self._rng = np.random.default_rng(seed)
        self.episodes = 0

    def begin(self) -> np.ndarray:
        task = self._task_fn(self._rng)
        state = self.env.reset(task, seed=int(self._rng.integers(2 ** 63)))
        self.episodes += 1
        return self.env.encode(state)

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        out = self.env.step(action)
        return self.env.encode(out.state), out.reward, out.done


def distribution_task_fn(dist: TaskDistribution):
    """New task per episode, sampled from the distribution."""
    return lambda rng: sample_task(dist, int(rng.integers(2 ** 31)))


def fixed_task_fn(task: Task):
    return lambda rng: task


def worker_loop(worker_id: int, handle: GlobalParams, stream: EpisodeStream,
                bounds: ActionBounds, config: TrainConfig,
                rng: np.random.Generator, clock=None):
    """Yield one UpdateRecord per submitted gradient until the update budget
    is exhausted. Snapshot -> rollout -> returns/advantages -> gradients ->
    serialized submit."""
    clock = clock or (lambda: 0.0)
    feats = stream.begin()
    done = False
    while handle.version < config.max_updates:
        actor, critic, _ = handle.read()
        buffer = RolloutBuffer(capacity=config.rollout_cap)
        entropy = 0.0
        for _ in range(config.rollout_cap):
            pol = nn.forward_actor(actor, feats, bounds, rng)
            value = nn.forward_critic(critic, feats)
            nxt, reward, done = stream.step(pol.action)
            buffer.add(feats, pol.pre_squash, pol.action, reward, pol.log_prob, value, done)
            entropy = pol.entropy
            feats = nxt
            if done:
                break
        buffer.bootstrap_value = 0.0 if done else nn.forward_critic(critic, feats)
        returns = nstep_returns(buffer, config.gamma)
        advs = advantage(returns, np.asarray(buffer.values))
        a_loss, a_grads = actor_loss_grads(actor, bounds, buffer, advs, config.entropy_coef)
        c_loss, c_grads = critic_loss_grads(critic, buffer, returns)
        a_grads.clip_global_norm_(config.grad_clip)
        c_grads.clip_global_norm_(config.grad_clip)
        version = handle.update(a_grads, c_grads)
        yield UpdateRecord(
            worker=worker_id, update=version, steps=len(buffer),
            mean_reward=float(np.mean(buffer.rewards)),
            actor_loss=a_loss, critic_loss=c_loss, entropy=entropy,
            wall_time=clock(),
        )
        if done:
            feats = stream.begin()
            done = False


def train_a3c(config: TrainConfig, stream_factory, input_dim: int, act_dim: int,
              bounds: ActionBounds, record_cb=None,
              actor: ParamSet | None = None, critic: ParamSet | None = None
              ) -> tuple[GlobalParams, list[UpdateRecord]]:
    """Run A3C to the update budget; serial when num_workers == 1.

    ``stream_factory(worker_id, seed_sequence)`` builds each worker's private
    EpisodeStream. Parallel mode uses threads with lock-free snapshot reads;
    its record stream is merged in version order but is not reproducible.
    """
    root = np.random.SeedSequence(config.seed)
    s_actor, s_critic, s_workers = root.spawn(3)
    if actor is None:
        actor = nn.init_actor(input_dim, tuple(config.hidden), act_dim, s_actor)
    if critic is None:
        critic = nn.init_critic(input_dim, tuple(config.hidden), s_critic)
    handle = GlobalParams(
        actor, critic,
        RmsPropState.for_params(actor, config.actor_lr, config.rmsprop_decay,
                                config.rmsprop_eps),
        RmsPropState.for_params(critic, config.critic_lr, config.rmsprop_decay,
                                config.rmsprop_eps),
    )
    worker_seeds = s_workers.spawn(config.num_workers)

    if config.num_workers == 1:
        rng_seed, stream_seed = worker_seeds[0].spawn(2)
        stream = stream_factory(0, stream_seed)
        records = []
        for rec in worker_loop(0, handle, stream, bounds, config,
                               np.random.default_rng(rng_seed)):
            records.append(rec)
            if record_cb:
                record_cb(rec)
        return handle, records

    t0 = time.perf_counter()
    clock = lambda: time.perf_counter() - t0
    all_records: list[list[UpdateRecord]] = [[] for _ in range(config.num_workers)]

    def run(worker_id: int):
        rng_seed, stream_seed = worker_seeds[worker_id].spawn(2)
        stream = stream_factory(worker_id, stream_seed)
        for rec in worker_loop(worker_id, handle, stream, bounds, config,
                               np.random.default_rng(rng_seed), clock=clock):
            all_records[worker_id].append(rec)
            if record_cb:
                record_cb(rec)

    threads = [threading.Thread(target=run, args=(w,)) for w in range(config.num_workers)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    merged = sorted((r for worker in all_records for r in worker), key=lambda r: r.update)
    return handle, merged


def collect_rollouts(env: UavUgvEnv, task: Task, reset_seed, actor: ParamSet,
                     critic: ParamSet, bounds: ActionBounds, tau: int,
                     gamma: float, rng: np.random.Generator | None = None,
                     record: bool = False):
    """Play one full episode, chunked into tau-step rollout buffers.

    Greedy (mean) actions when ``rng`` is None. Each chunk's bootstrap is the
    critic's value at the chunk boundary (zero at the terminal). Returns
    (buffers, episode reward, EpisodeRecord or None).
    """
    state = env.reset(task, reset_seed)
    feats = env.encode(state)
    rec = None
    if record:
        rec = EpisodeRecord(task_id=task.task_id,
                            user_positions=np.asarray(task.user_positions, float))
        rec.append(state, None, env.initial_constraints(state))
    buffers = []
    buffer = RolloutBuffer(capacity=tau)
    total = 0.0
    done = False
    while not done:
        pol = nn.forward_actor(actor, feats, bounds, rng)
        value = nn.forward_critic(critic, feats)
        out = env.step(pol.action)
        nxt = env.encode(out.state)
        buffer.add(feats, pol.pre_squash, pol.action, out.reward, pol.log_prob, value, out.done)
        total += out.reward
        done = out.done
        feats = nxt
        if rec is not None:
            rec.append(out.state, out.reward, out.slot_constraints)
        if len(buffer) == tau or done:
            buffer.bootstrap_value = 0.0 if done else nn.forward_critic(critic, feats)
            buffers.append(buffer)
            buffer = RolloutBuffer(capacity=tau)
    return buffers, total, rec


def evaluate_policy(env: UavUgvEnv, task: Task, actor: ParamSet, critic: ParamSet,
                    bounds: ActionBounds, episodes: int, seed,
                    gamma: float = 0.99) -> tuple[float, list[float]]:
    """Mean episode reward of the greedy policy over seeded resets."""
    seq = np.random.SeedSequence(seed)
    rewards = []
    for child in seq.spawn(episodes):
        reset_seed = int(np.random.default_rng(child).integers(2 ** 63))
        _, total, _ = collect_rollouts(env, task, reset_seed, actor, critic, bounds,
                                       tau=env.fleet.num_slots, gamma=gamma, rng=None)
        rewards.append(total)
    return float(np.mean(rewards)), rewards
