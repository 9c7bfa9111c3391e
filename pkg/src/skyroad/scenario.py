"""Static world definition: road graph, fleet and QoS parameters, task sampling.

The road graph is the feasible domain of every ground-vehicle position; tasks
are sampled environment instances (user layout, channel jitter, per-user rate
floor) drawn from a configurable distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import ChannelParams

# Edge length must agree with node geometry to within this tolerance (meters).
EDGE_LENGTH_TOL = 1e-6


class ScenarioError(ValueError):
    """A scenario element failed validation."""


@dataclass(frozen=True)
class RoadGraph:
    """Undirected road network: intersections plus speed-limited segments.

    Treated as immutable after construction; safe to share across workers.
    """

    nodes: np.ndarray                       # (Q, 2) intersection coordinates, m
    edge_nodes: np.ndarray                  # (E, 2) int endpoint indices
    edge_lengths: np.ndarray                # (E,) m
    edge_speed_limits: np.ndarray           # (E,) m/s
    adjacency: dict[int, tuple[int, ...]]   # node -> incident edge ids

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return len(self.edge_nodes)

    def edge_endpoints(self, edge_id: int) -> tuple[np.ndarray, np.ndarray]:
        i, j = self.edge_nodes[edge_id]
        return self.nodes[i], self.nodes[j]

    def edge_unit(self, edge_id: int) -> np.ndarray:
        """Unit vector from the edge's first endpoint toward its second."""
        a, b = self.edge_endpoints(edge_id)
        return (b - a) / self.edge_lengths[edge_id]

    def point_on_edge(self, edge_id: int, s: float) -> np.ndarray:
        """2D point at arclength ``s`` from the edge's first endpoint."""
        a, _ = self.edge_endpoints(edge_id)
        return a + self.edge_unit(edge_id) * s


@dataclass(frozen=True)
class QoSParams:
    """Service floors: per-user rate, backhaul SINR, and UAV separation."""

    rate_min_bps: float = 0.5e6
    sinr_backhaul_min: float = 1000.0   # linear ratio
    d_safe_m: float = 10.0

    def __post_init__(self):
        for name in ("rate_min_bps", "sinr_backhaul_min", "d_safe_m"):
            if getattr(self, name) <= 0:
                raise ScenarioError(f"QoSParams.{name} must be > 0")


@dataclass(frozen=True)
class FleetParams:
    """Entity counts, episode discretization, and kinematic bounds."""

    num_ugv: int = 4
    num_uav: int = 4
    num_users: int = 100
    num_slots: int = 25
    slot_duration_s: float = 1.0
    v_max_ugv: float = 20.0
    v_max_uav: float = 30.0
    z_min: float = 30.0
    z_max: float = 150.0

    def __post_init__(self):
        for name in ("num_ugv", "num_uav", "num_users", "num_slots"):
            if getattr(self, name) < 1:
                raise ScenarioError(f"FleetParams.{name} must be >= 1")
        if self.slot_duration_s <= 0:
            raise ScenarioError("FleetParams.slot_duration_s must be > 0")
        if not self.z_min < self.z_max:
            raise ScenarioError("FleetParams requires z_min < z_max")
        if self.v_max_ugv <= 0 or self.v_max_uav <= 0:
            raise ScenarioError("FleetParams speeds must be > 0")

    @property
    def horizon_s(self) -> float:
        return self.num_slots * self.slot_duration_s


@dataclass(frozen=True)
class Task:
    """One sampled environment instance from the task distribution."""

    task_id: str
    user_positions: np.ndarray      # (K, 2) m
    channel_env: ChannelParams
    qos: QoSParams
    seed: int

    @property
    def num_users(self) -> int:
        return len(self.user_positions)


@dataclass(frozen=True)
class TaskDistribution:
    """Ranges the task sampler draws from.

    Tasks vary user count/placement, the four S-curve channel parameters
    (multiplicative jitter), and the per-user minimum rate.
    """

    area: tuple[float, float]                   # service-area rectangle (m)
    nominal_channel: ChannelParams
    nominal_qos: QoSParams
    num_users_range: tuple[int, int] = (100, 100)
    scurve_jitter: float = 0.2                  # +/- fraction on eta1/eta2/b1/b2
    rate_min_range: tuple[float, float] = (0.25e6, 1.0e6)

    def __post_init__(self):
        if self.area[0] <= 0 or self.area[1] <= 0:
            raise ScenarioError("service area dimensions must be > 0")
        lo, hi = self.num_users_range
        if lo < 1 or hi < lo:
            raise ScenarioError(f"empty or inverted user-count range {self.num_users_range}")
        if not 0 <= self.scurve_jitter < 1:
            raise ScenarioError("scurve_jitter must be in [0, 1)")
        rlo, rhi = self.rate_min_range
        if rlo <= 0 or rhi < rlo:
            raise ScenarioError(f"empty or inverted rate_min_range {self.rate_min_range}")


def build_graph(nodes, edges) -> RoadGraph:
    """Validate a node/edge specification and return a RoadGraph.

    ``nodes``: sequence of 2D positions. ``edges``: sequence of
    ``(i, j, speed_limit)`` or ``(i, j, speed_limit, length)``; when a length
    is given it must match the node geometry to within EDGE_LENGTH_TOL.
    """
    node_arr = np.asarray(nodes, dtype=float)
    if node_arr.ndim != 2 or node_arr.shape[1] != 2 or len(node_arr) == 0:
        raise ScenarioError("graph spec needs a non-empty list of 2D nodes")
    if len(edges) == 0:
        raise ScenarioError("graph spec needs at least one edge")

    n = len(node_arr)
    edge_nodes = []
    lengths = []
    speeds = []
    for eid, spec in enumerate(edges):
        if len(spec) == 3:
            i, j, vmax = spec
            stated_len = None
        elif len(spec) == 4:
            i, j, vmax, stated_len = spec
        else:
            raise ScenarioError(f"edge {eid}: expected (i, j, speed[, length])")
        i, j = int(i), int(j)
        if not (0 <= i < n and 0 <= j < n):
            raise ScenarioError(f"edge {eid}: dangling node reference ({i}, {j})")
        if i == j:
            raise ScenarioError(f"edge {eid}: zero-length edge (self-loop at node {i})")
        length = float(np.linalg.norm(node_arr[j] - node_arr[i]))
        if length <= 0.0:
            raise ScenarioError(f"edge {eid}: zero-length edge between coincident nodes {i}, {j}")
        if stated_len is not None and abs(stated_len - length) > EDGE_LENGTH_TOL:
            raise ScenarioError(
                f"edge {eid}: stated length {stated_len} differs from node geometry {length}"
            )
        if vmax <= 0:
            raise ScenarioError(f"edge {eid}: speed limit must be > 0, got {vmax}")
        edge_nodes.append((i, j))
        lengths.append(length)
        speeds.append(float(vmax))

    adjacency: dict[int, list[int]] = {k: [] for k in range(n)}
    for eid, (i, j) in enumerate(edge_nodes):
        adjacency[i].append(eid)
        adjacency[j].append(eid)

    # Connectivity: BFS from node 0 must reach every node.
    seen = {0}
    frontier = [0]
    while frontier:
        k = frontier.pop()
        for eid in adjacency[k]:
            i, j = edge_nodes[eid]
            nxt = j if i == k else i
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    if len(seen) != n:
        missing = sorted(set(range(n)) - seen)
        raise ScenarioError(f"disconnected graph: nodes {missing} unreachable from node 0")

    return RoadGraph(
        nodes=node_arr,
        edge_nodes=np.asarray(edge_nodes, dtype=int),
        edge_lengths=np.asarray(lengths, dtype=float),
        edge_speed_limits=np.asarray(speeds, dtype=float),
        adjacency={k: tuple(v) for k, v in adjacency.items()},
    )


def grid_graph(area: tuple[float, float], n: int, speed_limit: float = 15.0) -> RoadGraph:
    """n x n Manhattan grid spanning the service area with a uniform limit."""
    if n < 2:
        raise ScenarioError("grid graph needs n >= 2")
    xs = np.linspace(0.0, area[0], n)
    ys = np.linspace(0.0, area[1], n)
    nodes = [(x, y) for y in ys for x in xs]
    edges = []
    for r in range(n):
        for c in range(n):
            k = r * n + c
            if c + 1 < n:
                edges.append((k, k + 1, speed_limit))
            if r + 1 < n:
                edges.append((k, k + n, speed_limit))
    return build_graph(nodes, edges)


def project_to_graph(graph: RoadGraph, point) -> tuple[int, float, np.ndarray]:
    """Nearest on-graph location to ``point``.

    Returns (edge id, arclength along that edge, projected 2D point). Ties in
    distance are broken by the lowest edge id; idempotent for on-graph points.
    """
    p = np.asarray(point, dtype=float)
    best = None
    for eid in range(graph.num_edges):
        a, b = graph.edge_endpoints(eid)
        ab = b - a
        length = graph.edge_lengths[eid]
        t = float(np.dot(p - a, ab)) / (length * length)
        t = min(max(t, 0.0), 1.0)
        proj = a + t * ab
        d = float(np.linalg.norm(p - proj))
        if best is None or d < best[0]:
            best = (d, eid, t * length, proj)
    _, eid, s, proj = best
    return eid, float(s), proj


def distance_to_graph(graph: RoadGraph, point) -> float:
    """Euclidean distance from ``point`` to the nearest road segment."""
    _, _, proj = project_to_graph(graph, point)
    return float(np.linalg.norm(np.asarray(point, dtype=float) - proj))


def sample_task(dist: TaskDistribution, seed: int) -> Task:
    """Draw one task; deterministic given the seed."""
    rng = np.random.default_rng(seed)
    lo, hi = dist.num_users_range
    k = int(rng.integers(lo, hi + 1))
    users = rng.uniform((0.0, 0.0), dist.area, size=(k, 2))

    j = dist.scurve_jitter
    f = rng.uniform(1.0 - j, 1.0 + j, size=4)
    ch = replace(
        dist.nominal_channel,
        eta1=dist.nominal_channel.eta1 * f[0],
        eta2=dist.nominal_channel.eta2 * f[1],
        b1=dist.nominal_channel.b1 * f[2],
        b2=dist.nominal_channel.b2 * f[3],
    )
    rmin = float(rng.uniform(*dist.rate_min_range))
    qos = replace(dist.nominal_qos, rate_min_bps=rmin)

    task = Task(task_id=f"task-{seed}", user_positions=users, channel_env=ch, qos=qos, seed=seed)
    _validate_task(task, dist)
    return task


def _validate_task(task: Task, dist: TaskDistribution) -> None:
    w, h = dist.area
    u = task.user_positions
    if np.any(u < -1e-9) or np.any(u[:, 0] > w + 1e-9) or np.any(u[:, 1] > h + 1e-9):
        raise ScenarioError(f"{task.task_id}: user positions outside service area")
    ch = task.channel_env
    # Positive S-curve parameters keep the LoS probability inside [0, 1]
    # for every elevation angle.
    if min(ch.eta1, ch.eta2, ch.b1, ch.b2) <= 0:
        raise ScenarioError(f"{task.task_id}: S-curve parameters must stay > 0")
