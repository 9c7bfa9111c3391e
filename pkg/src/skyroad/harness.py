"""Experiment orchestration: training runs, adaptation, evaluation,
trajectory export, and runtime benchmarking.

Every command writes schema-tagged CSV tables and, unless figures are
disabled, a rendered PNG next to each table. Serial runs are byte-for-byte
reproducible given the same config and seed: wall-time cells are written as
0.0 in serial mode and checkpoints carry no timestamps.
"""

from __future__ import annotations

import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import a3c, figures, meta, metrics, nn
from .a3c import (EpisodeStream, TrainConfig, collect_rollouts, distribution_task_fn,
                  train_a3c)
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import (ConfigError, World, build_meta_config, build_train_config,
                     build_world, load_config, scenario_fingerprint)
from .env import UavUgvEnv
from .network import CONSTRAINT_NAMES
from .scenario import sample_task

TRAIN_FIELDS = ["update", "wall_time", "mean_reward", "actor_loss", "critic_loss", "entropy"]
META_FIELDS = ["iteration", "task_ids", "pre_reward", "post_reward", "meta_loss",
               "meta_grad_norm"]
EVAL_FIELDS = (["num_users", "episodes", "mean_sum_rate", "std_sum_rate",
                "qos_satisfied_fraction", "mean_reward"]
               + [f"{c.lower()}_max" for c in CONSTRAINT_NAMES])
TRAJ_FIELDS = ["slot", "entity", "id", "x", "y", "z"]
EPISODE_FIELDS = TRAJ_FIELDS + ["reward"] + [c.lower() for c in CONSTRAINT_NAMES]
ADAPT_FIELDS = ["kind", "index", "pre_reward", "post_reward"]
BENCH_FIELDS = ["algo", "config", "reps", "mean_s", "std_s"]


def _out(out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _save(world: World, algo: str, out: Path, actor, critic, actor_opt, critic_opt,
          update_count: int, name: str = "checkpoint.bin") -> Path:
    ckpt = Checkpoint(
        fingerprint=scenario_fingerprint(world.cfg),
        algo=algo,
        update_count=update_count,
        actor=actor,
        critic=critic,
        actor_opt=actor_opt,
        critic_opt=critic_opt,
        config=world.cfg,
    )
    return save_checkpoint(out / name, ckpt)


def run_train(cfg: dict, out_dir, seed: int | None = None, workers: int | None = None,
              max_updates: int | None = None, render_figures: bool = True) -> dict:
    """A3C training: metrics.csv + checkpoint.bin (+ reward_curve.png)."""
    world = build_world(cfg)
    train = build_train_config(cfg, seed=seed, num_workers=workers,
                               max_updates=max_updates)
    out = _out(out_dir)

    def stream(worker_id, seed_seq):
        return EpisodeStream(world.make_env(), distribution_task_fn(world.dist), seed_seq)

    handle, records = train_a3c(train, stream, world.input_dim, world.act_dim,
                                world.bounds)
    rows = [
        {"update": r.update, "wall_time": r.wall_time, "mean_reward": r.mean_reward,
         "actor_loss": r.actor_loss, "critic_loss": r.critic_loss, "entropy": r.entropy}
        for r in records
    ]
    paths = {"metrics": metrics.write_csv(out / "metrics.csv", "train-metrics",
                                          TRAIN_FIELDS, rows)}
    actor, critic, version = handle.read()
    actor_opt, critic_opt = handle.optimizer_states()
    paths["checkpoint"] = _save(world, "a3c", out, actor, critic, actor_opt,
                                critic_opt, version)
    if render_figures and rows:
        paths["figure"] = figures.save_training_curves(rows, out / "reward_curve.png")
    return paths


def run_meta_train(cfg: dict, out_dir, seed: int | None = None,
                   workers: int | None = None, meta_iters: int | None = None,
                   inner_steps: int | None = None, meta_batch: int | None = None,
                   render_figures: bool = True) -> dict:
    """Meta-training: unified metrics.csv, meta_metrics.csv, checkpoint.bin."""
    world = build_world(cfg)
    train = build_train_config(cfg, seed=seed)
    mcfg = build_meta_config(cfg, meta_iters=meta_iters, inner_steps=inner_steps,
                             batch_size=meta_batch, workers=workers)
    out = _out(out_dir)

    saved = {}

    def keep(it, actor, critic, actor_opt, critic_opt):
        saved["final"] = (actor, critic, actor_opt, critic_opt, it + 1)

    actor, critic, records = meta.meta_train(
        world.dist, world.make_env, world.bounds, world.input_dim, world.act_dim,
        mcfg, train, train.seed, checkpoint_cb=keep,
        checkpoint_every=max(1, mcfg.meta_iters // 4 or 1))

    rows = [
        {"update": r.iteration + 1, "wall_time": r.wall_time,
         "mean_reward": r.post_reward, "actor_loss": r.meta_loss,
         "critic_loss": r.critic_loss, "entropy": r.entropy}
        for r in records
    ]
    meta_rows = [
        {"iteration": r.iteration, "task_ids": ";".join(r.task_ids),
         "pre_reward": r.pre_reward, "post_reward": r.post_reward,
         "meta_loss": r.meta_loss, "meta_grad_norm": r.meta_grad_norm}
        for r in records
    ]
    paths = {
        "metrics": metrics.write_csv(out / "metrics.csv", "train-metrics",
                                     TRAIN_FIELDS, rows),
        "meta_metrics": metrics.write_csv(out / "meta_metrics.csv", "meta-metrics",
                                          META_FIELDS, meta_rows),
    }
    final = saved.get("final")
    if final is None:
        opt = nn.RmsPropState.for_params(actor, mcfg.meta_lr)
        final = (actor, critic, opt,
                 nn.RmsPropState.for_params(critic, mcfg.meta_lr), 0)
    paths["checkpoint"] = _save(world, "meta-a3c", out, final[0], final[1],
                                final[2], final[3], final[4])
    if render_figures and meta_rows:
        paths["figure"] = figures.save_meta_curves(meta_rows, out / "adaptation_curve.png")
    return paths


def _world_from_checkpoint(checkpoint_path, config=None) -> tuple[Checkpoint, World]:
    expect = None
    cfg = None
    if config is not None:
        cfg = load_config(config)
        expect = scenario_fingerprint(cfg)
    ckpt = load_checkpoint(checkpoint_path, expect_fingerprint=expect)
    world = build_world(cfg if cfg is not None else load_config(ckpt.config))
    return ckpt, world


def run_adapt(checkpoint_path, task_seed: int, inner_steps: int, out_dir,
              episodes: int = 5, config=None, render_figures: bool = True) -> dict:
    """Online adaptation on one held-out task; writes adapt_report.csv."""
    ckpt, world = _world_from_checkpoint(checkpoint_path, config)
    train = build_train_config(world.cfg)
    mcfg = build_meta_config(world.cfg)
    task = sample_task(world.dist, task_seed)
    seed = np.random.SeedSequence((world.seed, int(task_seed)))
    _, _, report = meta.online_adapt(
        ckpt.actor, ckpt.critic, task, inner_steps, world.make_env, world.bounds,
        mcfg, train, seed, eval_episodes=episodes)
    rows = [
        {"kind": "episode", "index": i, "pre_reward": pre, "post_reward": post}
        for i, (pre, post) in enumerate(zip(report.pre_rewards, report.post_rewards))
    ]
    rows.append({"kind": "mean", "index": len(report.pre_rewards),
                 "pre_reward": report.pre_reward, "post_reward": report.post_reward})
    out = _out(out_dir)
    return {"report": metrics.write_csv(out / "adapt_report.csv", "adapt-report",
                                        ADAPT_FIELDS, rows)}


def _eval_point(world: World, ckpt: Checkpoint, num_users: int, episodes: int,
                seed: int) -> dict:
    dist = replace(world.dist, num_users_range=(num_users, num_users))
    env = world.make_env()
    seq = np.random.SeedSequence((seed, num_users))
    sum_rates = []
    rewards = []
    qos_hits = 0
    qos_total = 0
    worst = dict.fromkeys(CONSTRAINT_NAMES, 0.0)
    for child in seq.spawn(episodes):
        rng = np.random.default_rng(child)
        task = sample_task(dist, int(rng.integers(2 ** 31)))
        _, total, rec = collect_rollouts(
            env, task, int(rng.integers(2 ** 63)), ckpt.actor, ckpt.critic,
            world.bounds, tau=world.fleet.num_slots, gamma=0.99, rng=None, record=True)
        rewards.append(total)
        sum_rates.append(float(np.mean([r.sum_rate for r in rec.rate_reports])))
        for r in rec.rate_reports:
            qos_hits += int(np.sum(r.per_user_rate >= task.qos.rate_min_bps))
            qos_total += len(r.per_user_rate)
        for name, (mx, _count) in rec.constraint_report().summary().items():
            worst[name] = max(worst[name], mx)
    row = {
        "num_users": num_users,
        "episodes": episodes,
        "mean_sum_rate": float(np.mean(sum_rates)),
        "std_sum_rate": float(np.std(sum_rates)),
        "qos_satisfied_fraction": qos_hits / qos_total if qos_total else 0.0,
        "mean_reward": float(np.mean(rewards)),
    }
    row.update({f"{name.lower()}_max": worst[name] for name in CONSTRAINT_NAMES})
    return row


def run_eval(checkpoint_path, out_dir, episodes: int = 5, seed: int | None = None,
             sweep_users: list[int] | None = None, config=None,
             render_figures: bool = True) -> dict:
    """Greedy-policy evaluation, optionally swept over user counts."""
    ckpt, world = _world_from_checkpoint(checkpoint_path, config)
    seed = world.seed if seed is None else seed
    points = sweep_users or [world.fleet.num_users]
    rows = [_eval_point(world, ckpt, int(k), episodes, int(seed)) for k in points]
    out = _out(out_dir)
    paths = {"summary": metrics.write_csv(out / "eval_summary.csv", "eval-summary",
                                          EVAL_FIELDS, rows)}
    if render_figures and len(rows) > 1:
        paths["figure"] = figures.save_eval_sweep(rows, out / "sum_rate_vs_users.png")
    return paths


def run_export_traj(checkpoint_path, task_seed: int, out_dir, slots: int | None = None,
                    config=None, render_figures: bool = True) -> dict:
    """Greedy episode exported as a flat position table (plus full table)."""
    ckpt, world = _world_from_checkpoint(checkpoint_path, config)
    fleet = world.fleet if slots is None else replace(world.fleet, num_slots=int(slots))
    env = UavUgvEnv(world.graph, fleet, world.area, world.weights)
    task = sample_task(world.dist, int(task_seed))
    reset_seed = int(np.random.default_rng(
        np.random.SeedSequence((world.seed, int(task_seed)))).integers(2 ** 63))
    _, _, rec = collect_rollouts(env, task, reset_seed, ckpt.actor, ckpt.critic,
                                 world.bounds, tau=fleet.num_slots, gamma=0.99,
                                 rng=None, record=True)
    full_rows = rec.table_rows()
    traj_rows = [{k: r[k] for k in TRAJ_FIELDS} for r in full_rows]
    out = _out(out_dir)
    paths = {
        "trajectory": metrics.write_csv(out / "trajectory.csv", "trajectory",
                                        TRAJ_FIELDS, traj_rows),
        "episode": metrics.write_csv(out / "episode.csv", "episode-table",
                                     EPISODE_FIELDS, full_rows),
    }
    if render_figures:
        paths["figure"] = figures.save_trajectory(traj_rows, world.graph,
                                                  out / "trajectory.png")
    return paths


def _bench_a3c_episode(world: World, train: TrainConfig, rng: np.random.Generator,
                       actor, critic, actor_opt, critic_opt) -> float:
    """One online-learning episode: rollout chunks plus gradient updates."""
    env = world.make_env()
    task = sample_task(world.dist, int(rng.integers(2 ** 31)))
    t0 = time.perf_counter()
    buffers, _, _ = collect_rollouts(env, task, int(rng.integers(2 ** 63)), actor,
                                     critic, world.bounds, train.rollout_len,
                                     train.gamma, rng)
    for buf in buffers:
        returns = a3c.nstep_returns(buf, train.gamma)
        advs = a3c.advantage(returns, np.asarray(buf.values))
        _, ag = a3c.actor_loss_grads(actor, world.bounds, buf, advs, train.entropy_coef)
        _, cg = a3c.critic_loss_grads(critic, buf, returns)
        ag.clip_global_norm_(train.grad_clip)
        cg.clip_global_norm_(train.grad_clip)
        actor, actor_opt = nn.rmsprop_step(actor_opt, actor, ag)
        critic, critic_opt = nn.rmsprop_step(critic_opt, critic, cg)
    return time.perf_counter() - t0


def _bench_meta_episode(world: World, train: TrainConfig, rng: np.random.Generator,
                        actor, critic) -> float:
    """One deployment episode under an already-adapted policy (greedy)."""
    env = world.make_env()
    task = sample_task(world.dist, int(rng.integers(2 ** 31)))
    t0 = time.perf_counter()
    collect_rollouts(env, task, int(rng.integers(2 ** 63)), actor, critic,
                     world.bounds, train.rollout_len, train.gamma, rng=None)
    return time.perf_counter() - t0


def run_bench(cfg: dict, out_dir, reps: int = 5, render_figures: bool = True) -> dict:
    """Per-episode wall time for both algorithms on one configuration.

    The learner (a3c) episode includes gradient computation and updates; the
    meta-trained policy's deployment episode is inference-only. Timings are
    wall clock and therefore not byte-reproducible across runs.
    """
    if reps < 2:
        raise ConfigError("bench needs at least 2 repetitions")
    world = build_world(cfg)
    train = build_train_config(cfg)
    rows = []
    root = np.random.SeedSequence(world.seed)
    actor = nn.init_actor(world.input_dim, tuple(train.hidden), world.act_dim, root.spawn(1)[0])
    critic = nn.init_critic(world.input_dim, tuple(train.hidden), root.spawn(1)[0])
    actor_opt = nn.RmsPropState.for_params(actor, train.actor_lr)
    critic_opt = nn.RmsPropState.for_params(critic, train.critic_lr)
    for algo in ("a3c", "meta-a3c"):
        rng = np.random.default_rng(world.seed)
        times = []
        for _ in range(reps):
            if algo == "a3c":
                times.append(_bench_a3c_episode(world, train, rng, actor, critic,
                                                actor_opt, critic_opt))
            else:
                times.append(_bench_meta_episode(world, train, rng, actor, critic))
        rows.append({"algo": algo, "config": world.name, "reps": reps,
                     "mean_s": float(np.mean(times)), "std_s": float(np.std(times))})
    out = _out(out_dir)
    paths = {"bench": metrics.write_csv(out / "bench.csv", "bench", BENCH_FIELDS, rows)}
    if render_figures:
        paths["figure"] = figures.save_bench(rows, out / "bench.png")
    return paths
