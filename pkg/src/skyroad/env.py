"""The decision process: world state, continuous actions, constraint-respecting
kinematics for air and ground vehicles, and the rate/QoS reward.

UAV motion is norm-clipped, altitude-clamped and separation-projected; UGV
motion is a walk along the road graph. The transition is deterministic:
randomness enters only through task sampling, initial placement, and policy
sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import network
from .channel import ChannelParams
from .network import AssociationState, RateReport
from .nn import ActionBounds
from .scenario import FleetParams, QoSParams, RoadGraph, Task

# Realized speeds carry this relative headroom so speed constraints hold
# exactly (violation 0.0) under float roundoff.
SPEED_GUARD = 1e-12
# Separation scale-back targets d_safe plus this margin (meters).
SEPARATION_MARGIN = 1e-7


class EnvError(ValueError):
    """Invalid action, configuration, or episode state."""


@dataclass(frozen=True)
class RewardWeights:
    """Reward shaping: QoS hinge weight, backhaul hinge weight, terminal
    return-to-start weight, and the rate unit divisor (1e6 -> Mbit/s)."""

    qos_weight: float = 10.0
    backhaul_weight: float = 10.0
    terminal_weight: float = 10.0
    rate_unit: float = 1.0e6


@dataclass
class WorldState:
    """Positions of every entity at a slot plus current link state."""

    uav_pos: np.ndarray        # (U, 3)
    ugv_edge: np.ndarray       # (M,) edge ids
    ugv_s: np.ndarray          # (M,) arclength on edge
    ugv_pos: np.ndarray        # (M, 2) derived road points
    user_pos: np.ndarray       # (K, 2)
    slot: int
    uav_start: np.ndarray      # (U, 3)
    ugv_start: np.ndarray      # (M, 2)
    assoc: AssociationState
    rates: RateReport

    @property
    def user_sinr(self) -> np.ndarray:
        return self.rates.per_user_sinr


@dataclass
class StepOutcome:
    """Result of advancing one slot."""

    state: WorldState
    reward: float
    rates: RateReport
    slot_constraints: dict[str, float]
    done: bool


@dataclass
class EpisodeRecord:
    """Flat episode history for export and constraint auditing."""

    task_id: str
    user_positions: np.ndarray
    uav_traj: list[np.ndarray] = field(default_factory=list)
    ugv_traj: list[np.ndarray] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    associations: list[AssociationState] = field(default_factory=list)
    rate_reports: list[RateReport] = field(default_factory=list)
    slot_constraints: list[dict[str, float]] = field(default_factory=list)

    def append(self, state: WorldState, reward: float | None,
               constraints: dict[str, float]) -> None:
        self.uav_traj.append(state.uav_pos.copy())
        self.ugv_traj.append(state.ugv_pos.copy())
        self.associations.append(state.assoc)
        self.rate_reports.append(state.rates)
        self.slot_constraints.append(constraints)
        if reward is not None:
            self.rewards.append(reward)

    def table_rows(self):
        """Rows of (slot, entity, id, x, y, z, reward, c1..c11 violations).

        Vehicle rows repeat the slot's reward and constraint magnitudes; the
        static users appear once at slot 0 with those fields blank.
        """
        rows = []
        for n, (uav, ugv) in enumerate(zip(self.uav_traj, self.ugv_traj)):
            reward = self.rewards[n - 1] if n > 0 else ""
            cons = self.slot_constraints[n]
            extras = {c.lower(): cons[c] for c in network.CONSTRAINT_NAMES}
            for i, p in enumerate(uav):
                rows.append({"slot": n, "entity": "uav", "id": i,
                             "x": p[0], "y": p[1], "z": p[2], "reward": reward, **extras})
            for i, p in enumerate(ugv):
                rows.append({"slot": n, "entity": "ugv", "id": i,
                             "x": p[0], "y": p[1], "z": 0.0, "reward": reward, **extras})
        blank = {c.lower(): "" for c in network.CONSTRAINT_NAMES}
        for i, p in enumerate(self.user_positions):
            rows.append({"slot": 0, "entity": "user", "id": i,
                         "x": p[0], "y": p[1], "z": 0.0, "reward": "", **blank})
        return rows

    def constraint_report(self) -> network.ConstraintReport:
        return network.ConstraintReport(per_slot=list(self.slot_constraints))


def action_dim(fleet: FleetParams) -> int:
    return 3 * fleet.num_uav + 3 * fleet.num_ugv


def action_bounds(fleet: FleetParams) -> ActionBounds:
    """Squashing bounds: UAV velocity components to [-v_max, v_max]; UGV
    heading components to [-1, 1]; UGV speed to [0, v_max]."""
    dim = action_dim(fleet)
    loc = np.zeros(dim)
    scale = np.ones(dim)
    scale[: 3 * fleet.num_uav] = fleet.v_max_uav
    for m in range(fleet.num_ugv):
        base = 3 * fleet.num_uav + 3 * m
        loc[base + 2] = fleet.v_max_ugv / 2.0
        scale[base + 2] = fleet.v_max_ugv / 2.0
    return ActionBounds(loc=loc, scale=scale)


def split_action(action: np.ndarray, fleet: FleetParams):
    """-> (UAV velocities (U,3), UGV headings (M,2), UGV speeds (M,))."""
    a = np.asarray(action, dtype=float)
    if a.shape != (action_dim(fleet),):
        raise EnvError(f"action dimension {a.shape} != ({action_dim(fleet)},)")
    if not np.isfinite(a).all():
        raise EnvError("action contains non-finite entries")
    u = fleet.num_uav
    uav_v = a[: 3 * u].reshape(u, 3)
    rest = a[3 * u:].reshape(fleet.num_ugv, 3)
    return uav_v, rest[:, :2], rest[:, 2]


def _max_feasible_scale(origin: np.ndarray, disp: np.ndarray,
                        obstacles: list[np.ndarray], radius: float) -> float:
    """Largest t in [0, 1] with ||origin + t*disp - c|| >= radius for all c.

    The origin itself is assumed feasible; each obstacle contributes one open
    violating t-interval (quadratic roots), and the result is the largest t
    below/above the merged intervals containing 1.
    """
    a = float(np.dot(disp, disp))
    if a == 0.0:
        return 1.0
    intervals = []
    for c in obstacles:
        oc = origin - c
        b = 2.0 * float(np.dot(disp, oc))
        e = float(np.dot(oc, oc)) - radius * radius
        disc = b * b - 4.0 * a * e
        if disc <= 0.0:
            continue
        sq = math.sqrt(disc)
        t1 = (-b - sq) / (2.0 * a)
        t2 = (-b + sq) / (2.0 * a)
        if t2 <= 0.0 or t1 >= 1.0:
            continue
        intervals.append((t1, t2))
    if not intervals:
        return 1.0
    t = 1.0
    # Walk down through overlapping violating intervals that cover t.
    for t1, t2 in sorted(intervals, reverse=True):
        if t1 < t < t2 or (t == 1.0 and t1 < 1.0 < t2):
            t = t1
    return max(t, 0.0)


def _move_uavs(fleet: FleetParams, qos: QoSParams, uav_pos: np.ndarray,
               velocities: np.ndarray, dt: float) -> np.ndarray:
    """Clip speed, apply displacement, clamp altitude, enforce separation.

    UAVs move in index order; each one's displacement is scaled back along its
    direction until it keeps d_safe from the new positions of already-moved
    UAVs and the old positions of not-yet-moved ones (so a feasible scale
    always exists and the post-step separation invariant is exact).
    """
    new = uav_pos.copy()
    v_cap = fleet.v_max_uav * (1.0 - SPEED_GUARD)
    radius = qos.d_safe_m + SEPARATION_MARGIN
    num = len(uav_pos)
    for u in range(num):
        v = velocities[u].copy()
        speed = float(np.linalg.norm(v))
        if speed > v_cap:
            v *= v_cap / speed
        target = uav_pos[u] + v * dt
        target[2] = min(max(target[2], fleet.z_min), fleet.z_max)
        disp = target - uav_pos[u]
        obstacles = [new[j] for j in range(u)] + [uav_pos[j] for j in range(u + 1, num)]
        t = _max_feasible_scale(uav_pos[u], disp, obstacles, radius)
        new[u] = uav_pos[u] + t * disp
    return new


def _pick_edge_at_node(graph: RoadGraph, node: int, heading: np.ndarray):
    """Best-aligned incident edge at a node; ties go to the lowest edge id.

    Returns (edge id, travel sign away from the node, entry arclength).
    """
    best_eid = -1
    best_dot = -np.inf
    for eid in graph.adjacency[node]:
        i, _ = graph.edge_nodes[eid]
        direction = graph.edge_unit(eid) if node == i else -graph.edge_unit(eid)
        d = float(np.dot(direction, heading))
        if d > best_dot:
            best_dot = d
            best_eid = eid
    i, _ = graph.edge_nodes[best_eid]
    if node == i:
        return best_eid, 1, 0.0
    return best_eid, -1, float(graph.edge_lengths[best_eid])


def _advance_ugv(graph: RoadGraph, fleet: FleetParams, edge_id: int, s: float,
                 heading: np.ndarray, speed_cmd: float, dt: float) -> tuple[int, float]:
    """Walk along the graph for one slot.

    Moves along the current edge in the heading-aligned direction at
    min(commanded, segment limit, vehicle limit); on reaching a node, switches
    to the incident edge best aligned with the heading and continues away from
    that node.
    """
    remaining = dt
    forced_sign = 0
    hops = 0
    while remaining > 1e-15 and hops < 64:
        hops += 1
        length = float(graph.edge_lengths[edge_id])
        limit = min(speed_cmd, graph.edge_speed_limits[edge_id], fleet.v_max_ugv)
        speed = max(limit, 0.0) * (1.0 - SPEED_GUARD)
        if speed <= 0.0:
            break
        if forced_sign:
            sign = forced_sign
        else:
            unit = graph.edge_unit(edge_id)
            sign = 1 if float(np.dot(unit, heading)) >= 0.0 else -1
        dist_to_end = (length - s) if sign > 0 else s
        travel = speed * remaining
        if travel < dist_to_end:
            s += sign * travel
            remaining = 0.0
        else:
            remaining -= dist_to_end / speed
            node = int(graph.edge_nodes[edge_id][1 if sign > 0 else 0])
            edge_id, forced_sign, s = _pick_edge_at_node(graph, node, heading)
        s = min(max(s, 0.0), float(graph.edge_lengths[edge_id]))
    return edge_id, s


def reward_value(rates: RateReport, qos: QoSParams, weights: RewardWeights) -> float:
    """Sum rate minus weighted normalized QoS and backhaul shortfall hinges.

    Rates contribute in units of ``weights.rate_unit`` (Mbit/s by default);
    each user's penalty is the relative shortfall below its rate floor, each
    UAV's the relative feeder-SNR shortfall below the backhaul threshold.
    """
    total = float(rates.per_user_rate.sum()) / weights.rate_unit
    qos_pen = float(np.sum(np.maximum(
        (qos.rate_min_bps - rates.per_user_rate) / qos.rate_min_bps, 0.0)))
    bh_pen = float(np.sum(np.maximum(
        (qos.sinr_backhaul_min - rates.per_uav_backhaul_sinr) / qos.sinr_backhaul_min, 0.0)))
    return total - weights.qos_weight * qos_pen - weights.backhaul_weight * bh_pen


class UavUgvEnv:
    """One private environment instance per worker; no shared mutable state."""

    def __init__(self, graph: RoadGraph, fleet: FleetParams, area: tuple[float, float],
                 weights: RewardWeights = RewardWeights()):
        self.graph = graph
        self.fleet = fleet
        self.area = (float(area[0]), float(area[1]))
        self.weights = weights
        self._task: Task | None = None
        self._state: WorldState | None = None

    @property
    def task(self) -> Task:
        if self._task is None:
            raise EnvError("environment has no active episode; call reset first")
        return self._task

    @property
    def state(self) -> WorldState:
        if self._state is None:
            raise EnvError("environment has no active episode; call reset first")
        return self._state

    @property
    def feature_dim(self) -> int:
        return 5 * self.fleet.num_uav + 2 * self.fleet.num_ugv + 1

    def reset(self, task: Task, seed) -> WorldState:
        """Place UGVs at distinct seeded nodes and UAVs at seeded positions
        honoring the separation floor; record start positions."""
        rng = np.random.default_rng(seed)
        fleet = self.fleet
        if fleet.num_ugv > self.graph.num_nodes:
            raise EnvError(
                f"cannot place {fleet.num_ugv} UGVs at distinct nodes of a "
                f"{self.graph.num_nodes}-node graph"
            )
        node_ids = rng.choice(self.graph.num_nodes, size=fleet.num_ugv, replace=False)
        ugv_edge = np.zeros(fleet.num_ugv, dtype=int)
        ugv_s = np.zeros(fleet.num_ugv)
        for m, node in enumerate(node_ids):
            eid = min(self.graph.adjacency[int(node)])
            ugv_edge[m] = eid
            i, _ = self.graph.edge_nodes[eid]
            ugv_s[m] = 0.0 if int(node) == int(i) else float(self.graph.edge_lengths[eid])

        lo = np.array([0.0, 0.0, fleet.z_min])
        hi = np.array([self.area[0], self.area[1], fleet.z_max])
        uav_pos = np.zeros((fleet.num_uav, 3))
        for u in range(fleet.num_uav):
            for attempt in range(200):
                cand = rng.uniform(lo, hi)
                if all(np.linalg.norm(cand - uav_pos[j]) >= task.qos.d_safe_m
                       for j in range(u)):
                    uav_pos[u] = cand
                    break
            else:
                raise EnvError(
                    f"cannot place {fleet.num_uav} UAVs pairwise >= "
                    f"{task.qos.d_safe_m} m apart in the area"
                )

        ugv_pos = np.array([self.graph.point_on_edge(int(e), float(s))
                            for e, s in zip(ugv_edge, ugv_s)])
        assoc = network.associate(uav_pos, ugv_pos, task.user_positions,
                                  task.channel_env, task.qos)
        rates = network.evaluate_rates(uav_pos, ugv_pos, task.user_positions,
                                       assoc, task.channel_env)
        self._task = task
        self._state = WorldState(
            uav_pos=uav_pos, ugv_edge=ugv_edge, ugv_s=ugv_s, ugv_pos=ugv_pos,
            user_pos=np.asarray(task.user_positions, dtype=float), slot=0,
            uav_start=uav_pos.copy(), ugv_start=ugv_pos.copy(),
            assoc=assoc, rates=rates,
        )
        return self._state

    def step(self, action: np.ndarray) -> StepOutcome:
        outcome = transition(self.graph, self.fleet, self.area, self.weights,
                             self.task, self.state, action)
        self._state = outcome.state
        return outcome

    def initial_constraints(self, state: WorldState) -> dict[str, float]:
        """Slot-0 constraint magnitudes (no motion terms)."""
        return network.slot_constraints(
            self.task.qos, self.fleet, self.graph, state.assoc, state.rates,
            uav_now=state.uav_pos, ugv_now=state.ugv_pos,
        )

    def encode(self, state: WorldState) -> np.ndarray:
        """Fixed-length features: normalized vehicle positions, per-UAV served
        share and mean served-user SINR (dB/60), and the slot fraction.

        Length is 5*U + 2*M + 1, independent of the task's user count.
        """
        w, h = self.area
        fleet = self.fleet
        feats = np.empty(self.feature_dim)
        i = 0
        for p in state.uav_pos:
            feats[i] = p[0] / w
            feats[i + 1] = p[1] / h
            feats[i + 2] = p[2] / fleet.z_max
            i += 3
        for p in state.ugv_pos:
            feats[i] = p[0] / w
            feats[i + 1] = p[1] / h
            i += 2
        k = max(len(state.user_pos), 1)
        for u in range(fleet.num_uav):
            served = np.flatnonzero(state.assoc.alpha[:, u]) if len(state.user_pos) else []
            feats[i] = len(served) / k
            if len(served):
                db = 10.0 * np.log10(np.maximum(state.user_sinr[served], 1e-30))
                feats[i + 1] = float(np.mean(np.clip(db, -60.0, 120.0))) / 60.0
            else:
                feats[i + 1] = 0.0
            i += 2
        feats[i] = state.slot / fleet.num_slots
        return feats


def transition(graph: RoadGraph, fleet: FleetParams, area: tuple[float, float],
               weights: RewardWeights, task: Task, state: WorldState,
               action: np.ndarray) -> StepOutcome:
    """Deterministic one-slot transition; pure in (state, action)."""
    if state.slot >= fleet.num_slots:
        raise EnvError("episode is done; reset the environment")
    uav_v, headings, speeds = split_action(action, fleet)
    dt = fleet.slot_duration_s

    new_uav = _move_uavs(fleet, task.qos, state.uav_pos, uav_v, dt)

    new_edge = state.ugv_edge.copy()
    new_s = state.ugv_s.copy()
    for m in range(fleet.num_ugv):
        new_edge[m], new_s[m] = _advance_ugv(
            graph, fleet, int(state.ugv_edge[m]), float(state.ugv_s[m]),
            headings[m], float(speeds[m]), dt,
        )
    new_ugv = np.array([graph.point_on_edge(int(e), float(s))
                        for e, s in zip(new_edge, new_s)])

    assoc = network.associate(new_uav, new_ugv, state.user_pos,
                              task.channel_env, task.qos)
    rates = network.evaluate_rates(new_uav, new_ugv, state.user_pos,
                                   assoc, task.channel_env)

    slot = state.slot + 1
    done = slot == fleet.num_slots
    reward = reward_value(rates, task.qos, weights)
    if done:
        diag = math.hypot(area[0], area[1])
        back = sum(np.linalg.norm(new_uav[u] - state.uav_start[u]) for u in range(fleet.num_uav))
        back += sum(np.linalg.norm(new_ugv[m] - state.ugv_start[m]) for m in range(fleet.num_ugv))
        reward -= weights.terminal_weight * back / diag

    new_state = WorldState(
        uav_pos=new_uav, ugv_edge=new_edge, ugv_s=new_s, ugv_pos=new_ugv,
        user_pos=state.user_pos, slot=slot,
        uav_start=state.uav_start, ugv_start=state.ugv_start,
        assoc=assoc, rates=rates,
    )
    constraints = network.slot_constraints(
        task.qos, fleet, graph, assoc, rates,
        uav_now=new_uav, ugv_now=new_ugv,
        uav_prev=state.uav_pos, ugv_prev=state.ugv_pos,
        uav_start=state.uav_start, ugv_start=state.ugv_start,
        final=done,
    )
    return StepOutcome(state=new_state, reward=reward, rates=rates,
                       slot_constraints=constraints, done=done)
