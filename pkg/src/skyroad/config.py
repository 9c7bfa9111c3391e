"""Scenario/experiment configuration: JSON schema, validation, world building.

A config file is one JSON object with the keys ``area``, ``graph``, ``fleet``,
``qos``, ``channel``, ``tasks``, ``reward``, ``train``, ``meta``,
``eval_episodes`` and ``seed``; every field is optional and falls back to the
built-in defaults. Two named scenarios ship with the package: "smoke" (tiny,
minutes on a laptop) and "paper" (the full-scale evaluation setup).
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .a3c import TrainConfig
from .channel import ChannelParams
from .env import RewardWeights, UavUgvEnv, action_bounds, action_dim
from .meta import MetaConfig
from .nn import ActionBounds
from .scenario import (FleetParams, QoSParams, RoadGraph, TaskDistribution,
                       build_graph, grid_graph)


class ConfigError(ValueError):
    """Malformed or inconsistent configuration (CLI exit code 1)."""


PAPER_CONFIG: dict = {
    "name": "paper",
    "area": [3000.0, 3000.0],
    "graph": {"kind": "grid", "n": 4, "speed_limit": 15.0},
    "fleet": {
        "num_ugv": 4, "num_uav": 4, "num_users": 100, "num_slots": 25,
        "slot_duration_s": 1.0, "v_max_ugv": 20.0, "v_max_uav": 30.0,
        "z_min": 30.0, "z_max": 150.0,
    },
    "qos": {"rate_min_bps": 0.5e6, "sinr_backhaul_min": 1000.0, "d_safe_m": 10.0},
    "channel": {
        "carrier_hz": 2.0e9, "beta_los_db": 1.0, "beta_nlos_db": 20.0,
        "eta1": 9.61, "eta2": 0.16, "b1": 9.61, "b2": 0.16,
        "bandwidth_hz": 1.0e6, "p_uav_w": 1.0, "p_ugv_w": 1.0, "noise_w": 1.0e-12,
    },
    "tasks": {
        "num_users_range": [100, 100],
        "scurve_jitter": 0.2,
        "rate_min_range": [0.25e6, 1.0e6],
    },
    "reward": {"qos_weight": 10.0, "backhaul_weight": 10.0, "terminal_weight": 10.0},
    "train": {
        "max_updates": 2000, "num_workers": 1, "rollout_len": 20, "gamma": 0.99,
        "entropy_coef": 0.01, "actor_lr": 0.0005, "critic_lr": 0.001,
        "grad_clip": 40.0, "hidden": [64, 64],
    },
    "meta": {
        "inner_lr": 0.0005, "meta_lr": 0.0001, "inner_steps": 5,
        "batch_size": 4, "meta_iters": 200, "first_order": True,
    },
    "eval_episodes": 5,
    "seed": 1,
}

SMOKE_CONFIG: dict = {
    "name": "smoke",
    "area": [500.0, 500.0],
    "graph": {"kind": "grid", "n": 2, "speed_limit": 15.0},
    "fleet": {
        "num_ugv": 1, "num_uav": 1, "num_users": 5, "num_slots": 20,
        "slot_duration_s": 1.0, "v_max_ugv": 20.0, "v_max_uav": 30.0,
        "z_min": 30.0, "z_max": 150.0,
    },
    "qos": {"rate_min_bps": 0.5e6, "sinr_backhaul_min": 1000.0, "d_safe_m": 10.0},
    "channel": {
        "carrier_hz": 2.0e9, "beta_los_db": 1.0, "beta_nlos_db": 20.0,
        "eta1": 9.61, "eta2": 0.16, "b1": 9.61, "b2": 0.16,
        "bandwidth_hz": 1.0e6, "p_uav_w": 1.0, "p_ugv_w": 1.0, "noise_w": 1.0e-12,
    },
    "tasks": {
        "num_users_range": [5, 5],
        "scurve_jitter": 0.2,
        "rate_min_range": [0.25e6, 1.0e6],
    },
    "reward": {"qos_weight": 10.0, "backhaul_weight": 10.0, "terminal_weight": 10.0},
    "train": {
        "max_updates": 2000, "num_workers": 1, "rollout_len": 20, "gamma": 0.99,
        "entropy_coef": 0.01, "actor_lr": 0.0005, "critic_lr": 0.001,
        "grad_clip": 40.0, "hidden": [32, 32],
    },
    "meta": {
        "inner_lr": 0.0005, "meta_lr": 0.0001, "inner_steps": 5,
        "batch_size": 4, "meta_iters": 200, "first_order": True,
    },
    "eval_episodes": 5,
    "seed": 1,
}

BUILTIN_CONFIGS = {"smoke": SMOKE_CONFIG, "paper": PAPER_CONFIG, "default": PAPER_CONFIG}

# Keys that define the simulated world; the checkpoint fingerprint covers
# exactly these (training hyperparameters may differ between save and load).
SCENARIO_KEYS = ("area", "graph", "fleet", "qos", "channel", "tasks", "reward")


def load_config(source) -> dict:
    """Load a config from a builtin name, a JSON file path, or a dict."""
    if isinstance(source, dict):
        cfg = copy.deepcopy(source)
    elif str(source) in BUILTIN_CONFIGS:
        cfg = copy.deepcopy(BUILTIN_CONFIGS[str(source)])
    else:
        path = Path(source)
        if not path.exists():
            raise ConfigError(f"config not found: {source!r} "
                              f"(not a file, not one of {sorted(set(BUILTIN_CONFIGS))})")
        try:
            cfg = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    merged = copy.deepcopy(PAPER_CONFIG)
    for key, value in cfg.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key].update(value)
        else:
            merged[key] = value
    return merged


def scenario_fingerprint(cfg: dict) -> str:
    """Hash of the world-defining config subset."""
    subset = {k: cfg.get(k) for k in SCENARIO_KEYS}
    blob = json.dumps(subset, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class World:
    """Everything a run needs: static scenario plus derived dimensions."""

    name: str
    cfg: dict
    area: tuple[float, float]
    graph: RoadGraph
    fleet: FleetParams
    qos: QoSParams
    channel: ChannelParams
    weights: RewardWeights
    dist: TaskDistribution
    seed: int
    eval_episodes: int

    def make_env(self) -> UavUgvEnv:
        return UavUgvEnv(self.graph, self.fleet, self.area, self.weights)

    @property
    def bounds(self) -> ActionBounds:
        return action_bounds(self.fleet)

    @property
    def input_dim(self) -> int:
        return 5 * self.fleet.num_uav + 2 * self.fleet.num_ugv + 1

    @property
    def act_dim(self) -> int:
        return action_dim(self.fleet)


def _build_graph(cfg: dict, area) -> RoadGraph:
    spec = cfg.get("graph", {})
    kind = spec.get("kind", "grid")
    if kind == "grid":
        return grid_graph(area, int(spec.get("n", 4)), float(spec.get("speed_limit", 15.0)))
    if kind == "explicit":
        if "nodes" not in spec or "edges" not in spec:
            raise ConfigError("explicit graph needs 'nodes' and 'edges'")
        return build_graph(spec["nodes"], spec["edges"])
    raise ConfigError(f"unknown graph kind {kind!r}")


def build_world(cfg: dict) -> World:
    """Validate the config and construct the immutable scenario objects."""
    try:
        area = (float(cfg["area"][0]), float(cfg["area"][1]))
        graph = _build_graph(cfg, area)
        fleet = FleetParams(**cfg.get("fleet", {}))
        qos = QoSParams(**cfg.get("qos", {}))
        channel = ChannelParams(**cfg.get("channel", {}))
        weights = RewardWeights(**cfg.get("reward", {}))
        tasks = cfg.get("tasks", {})
        dist = TaskDistribution(
            area=area,
            nominal_channel=channel,
            nominal_qos=qos,
            num_users_range=tuple(tasks.get("num_users_range",
                                            (fleet.num_users, fleet.num_users))),
            scurve_jitter=float(tasks.get("scurve_jitter", 0.2)),
            rate_min_range=tuple(tasks.get("rate_min_range", (0.25e6, 1.0e6))),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    return World(
        name=str(cfg.get("name", "scenario")),
        cfg=cfg,
        area=area,
        graph=graph,
        fleet=fleet,
        qos=qos,
        channel=channel,
        weights=weights,
        dist=dist,
        seed=int(cfg.get("seed", 0)),
        eval_episodes=int(cfg.get("eval_episodes", 5)),
    )


def build_train_config(cfg: dict, **overrides) -> TrainConfig:
    params = dict(cfg.get("train", {}))
    params.update({k: v for k, v in overrides.items() if v is not None})
    if "hidden" in params:
        params["hidden"] = tuple(int(h) for h in params["hidden"])
    if "seed" not in params:
        params["seed"] = int(cfg.get("seed", 0))
    try:
        return TrainConfig(**params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid train config: {exc}") from exc


def build_meta_config(cfg: dict, **overrides) -> MetaConfig:
    params = dict(cfg.get("meta", {}))
    params.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return MetaConfig(**params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid meta config: {exc}") from exc
