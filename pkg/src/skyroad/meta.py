"""Meta-learning wrapped around the actor-critic learner.

Per-task inner adaptation with plain gradient steps, an importance-weighted
policy gradient for off-policy reuse, a first-order meta-update (default)
with an optional second-order mode that pushes the post-adaptation gradient
back through the inner steps via finite-difference Hessian-vector products,
and rapid online adaptation for deployment.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .a3c import (RolloutBuffer, TrainConfig, collect_rollouts, critic_loss_grads,
                  evaluate_policy, nstep_returns)
from .env import UavUgvEnv
from .nn import ActionBounds, GradientSet, ParamSet, RmsPropState
from .scenario import Task


class MetaError(ValueError):
    """Invalid meta-learning configuration or rollout data."""


@dataclass
class MetaConfig:
    """Inner/outer rates, adaptation depth, batch size, iteration budget."""

    inner_lr: float = 5e-4
    meta_lr: float = 1e-4
    inner_steps: int = 5
    batch_size: int = 4
    meta_iters: int = 200
    first_order: bool = True
    episodes_per_inner_step: int = 1
    post_episodes: int = 1
    grad_clip: float = 40.0
    weight_clip: tuple[float, float] = (0.1, 10.0)
    hvp_eps: float = 1e-5
    workers: int = 1

    def __post_init__(self):
        if self.inner_lr <= 0 or self.meta_lr <= 0:
            raise MetaError("learning rates must be > 0")
        if self.inner_steps < 1:
            raise MetaError("inner_steps must be >= 1")
        if self.batch_size < 1:
            raise MetaError("batch_size must be >= 1")
        if self.meta_iters < 0:
            raise MetaError("meta_iters must be >= 0")


@dataclass
class AdaptationReport:
    """Before/after rewards and the inner-loop trace for one task."""

    task_id: str
    pre_reward: float
    post_reward: float
    inner_losses: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    pre_rewards: list[float] = field(default_factory=list)
    post_rewards: list[float] = field(default_factory=list)


@dataclass
class TaskBatch:
    """Fixed transitions with frozen advantages; replayable and smooth in
    the actor parameters (the basis for gradient and curvature checks)."""

    features: np.ndarray     # (T, D)
    pre_squash: np.ndarray   # (T, A)
    advantages: np.ndarray   # (T,)


def make_task_batch(buffers: list[RolloutBuffer], critic: ParamSet,
                    gamma: float) -> TaskBatch:
    """Concatenate rollout chunks and compute advantages with the given critic."""
    if not buffers or all(len(b) == 0 for b in buffers):
        raise MetaError("task loss needs at least one non-empty rollout")
    feats = np.concatenate([b.feature_matrix() for b in buffers])
    pre = np.concatenate([b.pre_squash_matrix() for b in buffers])
    returns = np.concatenate([nstep_returns(b, gamma) for b in buffers])
    values = nn.critic_values(critic, feats)
    return TaskBatch(features=feats, pre_squash=pre, advantages=returns - values)


def policy_grad_on_batch(actor: ParamSet, bounds: ActionBounds, batch: TaskBatch,
                         weights: np.ndarray | None = None
                         ) -> tuple[float, GradientSet]:
    """Mean advantage-weighted negative log-likelihood and its exact gradient.

    ``weights`` are optional per-transition multipliers (importance ratios);
    they and the advantages are constants under differentiation.
    """
    x = batch.features
    u = batch.pre_squash
    adv = batch.advantages
    if weights is not None:
        adv = adv * weights
    means, cache = nn.mlp_forward(actor, x)
    log_sigma = actor.log_sigma
    sigma = np.exp(log_sigma)
    z = (u - means) / sigma
    t, dim = z.shape

    gauss = -0.5 * (np.sum(z * z, axis=1) + dim * nn.LOG_2PI) - float(np.sum(log_sigma))
    jac = np.array([bounds.log_jacobian(row) for row in u])
    loss = float(np.mean(-adv * (gauss - jac)))

    coeff = (-adv / t)[:, None]
    grads = nn.mlp_backward(actor, cache, coeff * (z / sigma))
    grads.blocks[-1][...] = np.sum(coeff * (z * z - 1.0), axis=0)
    grads.accumulated = True
    return loss, grads


def task_loss(actor: ParamSet, critic: ParamSet, buffers: list[RolloutBuffer],
              bounds: ActionBounds, gamma: float) -> tuple[float, GradientSet]:
    """Task-specific policy loss: mean of -log pi(a|s) times the advantage."""
    batch = make_task_batch(buffers, critic, gamma)
    return policy_grad_on_batch(actor, bounds, batch)


def importance_weighted_grad(actor: ParamSet, behavior: ParamSet,
                             buffers: list[RolloutBuffer], critic: ParamSet,
                             bounds: ActionBounds, gamma: float,
                             weight_clip: tuple[float, float] = (0.1, 10.0)
                             ) -> tuple[GradientSet, dict[str, int]]:
    """Policy gradient with per-transition density ratios against the
    behavior policy, clipped to ``weight_clip``.

    The tanh-squash Jacobians cancel in the ratio; non-finite pre-clip weights
    are counted as diagnostics and mapped to the upper clip bound.
    """
    batch = make_task_batch(buffers, critic, gamma)
    lo, hi = weight_clip

    def gaussian_rows(params: ParamSet) -> np.ndarray:
        means, _ = nn.mlp_forward(params, batch.features)
        ls = params.log_sigma
        z = (batch.pre_squash - means) / np.exp(ls)
        return -0.5 * (np.sum(z * z, axis=1) + z.shape[1] * nn.LOG_2PI) - float(np.sum(ls))

    raw = np.exp(gaussian_rows(actor) - gaussian_rows(behavior))
    finite = np.isfinite(raw)
    raw = np.where(finite, raw, hi)
    weights = np.clip(raw, lo, hi)
    diagnostics = {
        "nonfinite_weights": int((~finite).sum()),
        "clipped_weights": int(((raw < lo) | (raw > hi)).sum()),
    }
    _, grads = policy_grad_on_batch(actor, bounds, batch, weights=weights)
    return grads, diagnostics


def critic_fit_grads(critic: ParamSet, buffers: list[RolloutBuffer],
                     gamma: float) -> tuple[float, GradientSet]:
    """Summed squared return error over all rollout chunks."""
    total_loss = 0.0
    total = GradientSet.zeros_like(critic)
    for b in buffers:
        loss, g = critic_loss_grads(critic, b, nstep_returns(b, gamma))
        total_loss += loss
        total.add_(g)
    return total_loss, total


@dataclass
class InnerStepContext:
    """Actor parameters and frozen data of one inner step (for the optional
    second-order correction)."""

    params: ParamSet
    batch: TaskBatch


@dataclass
class AdaptResult:
    actor: ParamSet
    critic: ParamSet
    report: AdaptationReport
    post_buffers: list[RolloutBuffer]
    inner_contexts: list[InnerStepContext]


def inner_adapt(actor: ParamSet, critic: ParamSet, task: Task, env: UavUgvEnv,
                bounds: ActionBounds, config: MetaConfig, train: TrainConfig,
                seed, inner_lr: float | None = None, steps: int | None = None,
                keep_contexts: bool = False) -> AdaptResult:
    """Clone the parameters and take plain gradient steps on the task.

    Each step collects fresh rollouts under the current adapted policy,
    computes the task loss (actor) and the squared-return loss (critic), and
    steps both with the inner rate. The inputs are never mutated. Collection
    and the whole adaptation are deterministic given the seed.
    """
    lr = config.inner_lr if inner_lr is None else inner_lr
    n_steps = config.inner_steps if steps is None else steps
    actor_i = actor.clone()
    critic_i = critic.clone()
    seq = np.random.SeedSequence(seed)
    step_seeds = seq.spawn(n_steps + 1)   # one extra for the post rollouts

    losses: list[float] = []
    norms: list[float] = []
    contexts: list[InnerStepContext] = []
    pre_reward = 0.0
    for step in range(n_steps):
        rng = np.random.default_rng(step_seeds[step])
        buffers: list[RolloutBuffer] = []
        totals = []
        for _ in range(config.episodes_per_inner_step):
            reset_seed = int(rng.integers(2 ** 63))
            bufs, total, _ = collect_rollouts(env, task, reset_seed, actor_i, critic_i,
                                              bounds, train.rollout_len, train.gamma, rng)
            buffers.extend(bufs)
            totals.append(total)
        if step == 0:
            pre_reward = float(np.mean(totals))
        batch = make_task_batch(buffers, critic_i, train.gamma)
        loss, a_grads = policy_grad_on_batch(actor_i, bounds, batch)
        _, c_grads = critic_fit_grads(critic_i, buffers, train.gamma)
        if keep_contexts:
            contexts.append(InnerStepContext(params=actor_i.clone(), batch=batch))
        losses.append(loss)
        norms.append(a_grads.global_norm())
        actor_i = nn.sgd_step(actor_i, a_grads, lr)
        critic_i = nn.sgd_step(critic_i, c_grads, lr)

    rng = np.random.default_rng(step_seeds[n_steps])
    post_buffers: list[RolloutBuffer] = []
    post_totals = []
    for _ in range(config.post_episodes):
        reset_seed = int(rng.integers(2 ** 63))
        bufs, total, _ = collect_rollouts(env, task, reset_seed, actor_i, critic_i,
                                          bounds, train.rollout_len, train.gamma, rng)
        post_buffers.extend(bufs)
        post_totals.append(total)

    report = AdaptationReport(
        task_id=task.task_id,
        pre_reward=pre_reward,
        post_reward=float(np.mean(post_totals)),
        inner_losses=losses,
        grad_norms=norms,
    )
    return AdaptResult(actor=actor_i, critic=critic_i, report=report,
                       post_buffers=post_buffers, inner_contexts=contexts)


def hvp_central(grad_fn, x0: np.ndarray, v: np.ndarray, eps: float) -> np.ndarray:
    """Hessian-vector product via central differencing of a gradient function."""
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        return np.zeros_like(v)
    unit = v / norm
    plus = grad_fn(x0 + eps * unit)
    minus = grad_fn(x0 - eps * unit)
    return (plus - minus) * (norm / (2.0 * eps))


def second_order_meta_gradient(post_grad: np.ndarray,
                               contexts: list[InnerStepContext],
                               bounds: ActionBounds, inner_lr: float,
                               eps: float = 1e-5) -> np.ndarray:
    """Pull the post-adaptation gradient back through the inner steps.

    Each inner step contributes a Jacobian (I - lr * H) with H the Hessian of
    that step's task loss at that step's parameters; the transposed chain is
    applied right-to-left with finite-difference Hessian-vector products.
    """
    g = post_grad.copy()
    for ctx in reversed(contexts):
        base = ctx.params

        def grad_at(vec: np.ndarray) -> np.ndarray:
            _, grads = policy_grad_on_batch(base.from_vector(vec), bounds, ctx.batch)
            return grads.to_vector()

        g = g - inner_lr * hvp_central(grad_at, base.to_vector(), g, eps)
    return g


@dataclass
class MetaUpdateRecord:
    """One meta-iteration: task traces plus aggregate gradient statistics."""

    iteration: int
    task_ids: list[str]
    pre_reward: float
    post_reward: float
    meta_loss: float
    meta_grad_norm: float
    critic_loss: float = 0.0
    entropy: float = 0.0
    wall_time: float = 0.0
    reports: list[AdaptationReport] = field(default_factory=list)


def meta_update(actor: ParamSet, critic: ParamSet, tasks: list[Task], env_builder,
                bounds: ActionBounds, config: MetaConfig, train: TrainConfig,
                actor_opt: RmsPropState, critic_opt: RmsPropState, seed,
                meta_lr: float | None = None):
    """Adapt to each task, sum the post-adaptation gradients, apply RMSProp.

    Returns (actor, critic, actor_opt, critic_opt, MetaUpdateRecord). Tasks
    are processed independently with per-task seeds; the aggregation order is
    fixed by task index, so results are identical in serial and thread modes.
    A zero ``meta_lr`` override skips the parameter update (identity).
    """
    lr = config.meta_lr if meta_lr is None else meta_lr
    seq = np.random.SeedSequence(seed)
    task_seeds = seq.spawn(len(tasks))

    def adapt_one(i: int):
        env = env_builder()
        res = inner_adapt(actor, critic, tasks[i], env, bounds, config, train,
                          task_seeds[i], keep_contexts=not config.first_order)
        batch = make_task_batch(res.post_buffers, res.critic, train.gamma)
        post_loss, a_grads = policy_grad_on_batch(res.actor, bounds, batch)
        if not config.first_order:
            corrected = second_order_meta_gradient(
                a_grads.to_vector(), res.inner_contexts, bounds,
                config.inner_lr, config.hvp_eps)
            blocks = res.actor.from_vector(corrected).blocks
            a_grads = GradientSet(blocks=blocks, accumulated=True)
        c_loss, c_grads = critic_fit_grads(res.critic, res.post_buffers, train.gamma)
        return res.report, post_loss, a_grads, c_loss, c_grads

    if config.workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(adapt_one, range(len(tasks))))
    else:
        results = [adapt_one(i) for i in range(len(tasks))]

    ga = GradientSet.zeros_like(actor)
    gc = GradientSet.zeros_like(critic)
    meta_loss = 0.0
    critic_loss = 0.0
    reports = []
    for report, post_loss, a_grads, c_loss, c_grads in results:
        ga.add_(a_grads)
        gc.add_(c_grads)
        meta_loss += post_loss
        critic_loss += c_loss
        reports.append(report)
    ga.clip_global_norm_(config.grad_clip)
    gc.clip_global_norm_(config.grad_clip)

    if lr > 0:
        actor_opt = RmsPropState(mu=actor_opt.mu, lr=lr, decay=actor_opt.decay,
                                 eps=actor_opt.eps)
        critic_opt = RmsPropState(mu=critic_opt.mu, lr=lr, decay=critic_opt.decay,
                                  eps=critic_opt.eps)
        actor, actor_opt = nn.rmsprop_step(actor_opt, actor, ga)
        critic, critic_opt = nn.rmsprop_step(critic_opt, critic, gc)

    record = MetaUpdateRecord(
        iteration=-1,
        task_ids=[t.task_id for t in tasks],
        pre_reward=float(np.mean([r.pre_reward for r in reports])),
        post_reward=float(np.mean([r.post_reward for r in reports])),
        meta_loss=meta_loss,
        meta_grad_norm=ga.global_norm(),
        critic_loss=critic_loss,
        entropy=nn.gaussian_entropy(actor.log_sigma),
        reports=reports,
    )
    return actor, critic, actor_opt, critic_opt, record


def meta_train(dist, env_builder, bounds: ActionBounds, input_dim: int,
               act_dim: int, config: MetaConfig, train: TrainConfig, seed,
               record_cb=None, checkpoint_cb=None, checkpoint_every: int = 50,
               actor: ParamSet | None = None, critic: ParamSet | None = None):
    """Meta-training loop: sample a task batch, meta-update, repeat.

    Deterministic given the seed. ``checkpoint_cb(iteration, actor, critic,
    actor_opt, critic_opt)`` fires every ``checkpoint_every`` iterations and
    at the end. Returns (actor, critic, records).
    """
    from .scenario import sample_task

    root = np.random.SeedSequence(seed)
    s_actor, s_critic, s_iters = root.spawn(3)
    if actor is None:
        actor = nn.init_actor(input_dim, tuple(train.hidden), act_dim, s_actor)
    if critic is None:
        critic = nn.init_critic(input_dim, tuple(train.hidden), s_critic)
    actor_opt = RmsPropState.for_params(actor, config.meta_lr, train.rmsprop_decay,
                                        train.rmsprop_eps)
    critic_opt = RmsPropState.for_params(critic, config.meta_lr, train.rmsprop_decay,
                                         train.rmsprop_eps)

    records: list[MetaUpdateRecord] = []
    iter_seeds = s_iters.spawn(max(config.meta_iters, 1))
    for it in range(config.meta_iters):
        rng = np.random.default_rng(iter_seeds[it])
        tasks = [sample_task(dist, int(rng.integers(2 ** 31)))
                 for _ in range(config.batch_size)]
        update_seed = iter_seeds[it].spawn(1)[0]
        actor, critic, actor_opt, critic_opt, rec = meta_update(
            actor, critic, tasks, env_builder, bounds, config, train,
            actor_opt, critic_opt, update_seed)
        rec.iteration = it
        records.append(rec)
        if record_cb:
            record_cb(rec)
        if checkpoint_cb and ((it + 1) % checkpoint_every == 0):
            checkpoint_cb(it, actor, critic, actor_opt, critic_opt)
    if checkpoint_cb:
        checkpoint_cb(config.meta_iters - 1, actor, critic, actor_opt, critic_opt)
    return actor, critic, records


def online_adapt(actor: ParamSet, critic: ParamSet, task: Task, k: int,
                 env_builder, bounds: ActionBounds, config: MetaConfig,
                 train: TrainConfig, seed, eval_episodes: int = 5):
    """Rapid deployment: evaluate, take k adaptation steps, evaluate again.

    Evaluation uses greedy rollouts over ``eval_episodes`` seeded resets; the
    same evaluation seeds are reused before and after adaptation. k = 0
    returns the input parameters unchanged (report pre == post).
    """
    if k < 0:
        raise MetaError("adaptation step count must be >= 0")
    seq = np.random.SeedSequence(seed)
    adapt_seed, eval_seed = seq.spawn(2)
    env = env_builder()
    pre_mean, pre_list = evaluate_policy(env, task, actor, critic, bounds,
                                         eval_episodes, eval_seed, train.gamma)
    if k == 0:
        report = AdaptationReport(task_id=task.task_id, pre_reward=pre_mean,
                                  post_reward=pre_mean, pre_rewards=pre_list,
                                  post_rewards=list(pre_list))
        return actor, critic, report
    res = inner_adapt(actor, critic, task, env, bounds, config, train,
                      adapt_seed, steps=k)
    post_mean, post_list = evaluate_policy(env, task, res.actor, res.critic, bounds,
                                           eval_episodes, eval_seed, train.gamma)
    report = AdaptationReport(
        task_id=task.task_id, pre_reward=pre_mean, post_reward=post_mean,
        inner_losses=res.report.inner_losses, grad_norms=res.report.grad_norms,
        pre_rewards=pre_list, post_rewards=post_list,
    )
    return res.actor, res.critic, report
