"""Associations, per-user and sum rates, and the full constraint checker.

The feeder-link pairing and user association are computed greedily from the
geometry the policy creates; the checker evaluates every constraint of the
sum-rate problem (C1..C11) per slot and over a whole episode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from .scenario import FleetParams, QoSParams, RoadGraph, distance_to_graph

CONSTRAINT_NAMES = ("C1", "C2", "C3", "C4", "C5", "C6", "C7", "C8", "C9", "C10", "C11")

# UGV points derived from (edge, arclength) are on-graph up to float roundoff.
ON_GRAPH_TOL = 1e-6


class NetworkError(ValueError):
    """Invalid association structure or mismatched episode histories."""


@dataclass
class AssociationState:
    """Binary user->UAV matrix ``alpha`` (K,U) and UGV->UAV matrix ``x`` (M,U)."""

    alpha: np.ndarray
    x: np.ndarray

    def validate(self) -> None:
        for name, m in (("alpha", self.alpha), ("x", self.x)):
            if not np.isin(m, (0, 1)).all():
                raise NetworkError(f"{name} entries must be binary")
            if np.any(m.sum(axis=1) > 1):
                raise NetworkError(f"{name} rows must sum to <= 1")

    def serving_uav(self, k: int) -> int:
        """Index of the UAV serving user k, or -1 when unassociated."""
        row = np.flatnonzero(self.alpha[k])
        return int(row[0]) if len(row) else -1

    def paired_ugv(self, u: int) -> int:
        """Index of the UGV feeding UAV u, or -1 when unpaired."""
        col = np.flatnonzero(self.x[:, u])
        return int(col[0]) if len(col) else -1


@dataclass
class RateReport:
    """Achieved rates for one slot under a given association."""

    per_user_rate: np.ndarray        # (K,) bit/s
    per_user_sinr: np.ndarray        # (K,) linear; 0 when unassociated
    per_uav_served: np.ndarray       # (U,) user counts
    per_uav_backhaul_sinr: np.ndarray  # (U,) linear; 0 when unpaired
    sum_rate: float                  # bit/s


def backhaul_sinr_matrix(params: ch.ChannelParams, ugv_positions: np.ndarray,
                         uav_positions: np.ndarray) -> np.ndarray:
    """(M, U) feeder-link SNRs assuming every pair were associated."""
    m = len(ugv_positions)
    u = len(uav_positions)
    out = np.empty((m, u))
    for mi in range(m):
        for ui in range(u):
            out[mi, ui] = ch.sinr_backhaul(params, ugv_positions[mi], uav_positions[ui], True)
    return out


def associate(uav_positions: np.ndarray, ugv_positions: np.ndarray,
              user_positions: np.ndarray, params: ch.ChannelParams,
              qos: QoSParams) -> AssociationState:
    """Greedy feeder pairing and user association.

    UGV/UAV pairs are matched in descending backhaul-SNR order (one UGV per
    UAV); each user then picks the highest-SINR UAV among those whose feeder
    SNR clears the threshold. All ties break toward the lowest index. Users
    may stay unassociated when no UAV has a feasible feeder link.
    """
    num_u = len(uav_positions)
    num_m = len(ugv_positions)
    num_k = len(user_positions)

    snr = backhaul_sinr_matrix(params, ugv_positions, uav_positions)
    order = sorted(
        ((mi, ui) for mi in range(num_m) for ui in range(num_u)),
        key=lambda p: (-snr[p[0], p[1]], p[0], p[1]),
    )
    x = np.zeros((num_m, num_u), dtype=np.int8)
    ugv_taken = np.zeros(num_m, dtype=bool)
    uav_taken = np.zeros(num_u, dtype=bool)
    for mi, ui in order:
        if not ugv_taken[mi] and not uav_taken[ui]:
            x[mi, ui] = 1
            ugv_taken[mi] = True
            uav_taken[ui] = True

    feeder_snr = (x * snr).sum(axis=0)            # (U,) 0 for unpaired UAVs
    feasible = feeder_snr >= qos.sinr_backhaul_min

    alpha = np.zeros((num_k, num_u), dtype=np.int8)
    if feasible.any() and num_k:
        gains = ch.a2g_gain_matrix(params, uav_positions, user_positions)  # (U, K)
        total = gains.sum(axis=0)
        for k in range(num_k):
            best_u = -1
            best_sinr = -1.0
            for ui in range(num_u):
                if not feasible[ui]:
                    continue
                sig = params.p_uav_w * gains[ui, k]
                interf = params.p_uav_w * (total[k] - gains[ui, k])
                s = sig / (interf + params.noise_w)
                if s > best_sinr:
                    best_sinr = s
                    best_u = ui
            if best_u >= 0:
                alpha[k, best_u] = 1

    state = AssociationState(alpha=alpha, x=x)
    state.validate()
    return state


def evaluate_rates(uav_positions: np.ndarray, ugv_positions: np.ndarray,
                   user_positions: np.ndarray, assoc: AssociationState,
                   params: ch.ChannelParams) -> RateReport:
    """Per-user and sum rates with equal bandwidth split per serving UAV."""
    assoc.validate()
    num_u = len(uav_positions)
    num_k = len(user_positions)

    snr = backhaul_sinr_matrix(params, ugv_positions, uav_positions)
    feeder = (assoc.x * snr).sum(axis=0)

    served = assoc.alpha.sum(axis=0).astype(float)   # (U,)
    rates = np.zeros(num_k)
    sinrs = np.zeros(num_k)
    if num_k and assoc.alpha.any():
        gains = ch.a2g_gain_matrix(params, uav_positions, user_positions)
        total = gains.sum(axis=0)
        for k in range(num_k):
            u = assoc.serving_uav(k)
            if u < 0:
                continue
            sig = params.p_uav_w * gains[u, k]
            interf = params.p_uav_w * (total[k] - gains[u, k])
            s = sig / (interf + params.noise_w)
            sinrs[k] = s
            rates[k] = ch.rate(params, 1, s, bandwidth_hz=params.bandwidth_hz / served[u])
    return RateReport(
        per_user_rate=rates,
        per_user_sinr=sinrs,
        per_uav_served=served,
        per_uav_backhaul_sinr=feeder,
        sum_rate=float(rates.sum()),
    )


def slot_constraints(qos: QoSParams, fleet: FleetParams, graph: RoadGraph,
                     assoc: AssociationState, rates: RateReport,
                     uav_now: np.ndarray, ugv_now: np.ndarray,
                     uav_prev: np.ndarray | None = None,
                     ugv_prev: np.ndarray | None = None,
                     uav_start: np.ndarray | None = None,
                     ugv_start: np.ndarray | None = None,
                     final: bool = False) -> dict[str, float]:
    """Violation magnitude per constraint for one slot (0 when satisfied).

    Units: C1 linear SINR, C2 bit/s, C3/C6 m/s, C4/C5/C7/C8 meters, C9..C11
    dimensionless structural counts. Motion constraints are 0 when no previous
    positions are given (slot 0); return-to-start applies only when ``final``.
    """
    dt = fleet.slot_duration_s
    out = dict.fromkeys(CONSTRAINT_NAMES, 0.0)

    # C1: every UAV's feeder SNR must clear the threshold (0 when unpaired).
    out["C1"] = float(np.max(np.maximum(qos.sinr_backhaul_min - rates.per_uav_backhaul_sinr, 0.0)))
    if len(rates.per_user_rate):
        out["C2"] = float(np.max(np.maximum(qos.rate_min_bps - rates.per_user_rate, 0.0)))

    if uav_prev is not None:
        speeds = np.linalg.norm(uav_now - uav_prev, axis=1) / dt
        out["C3"] = float(np.max(np.maximum(speeds - fleet.v_max_uav, 0.0)))
    if ugv_prev is not None:
        speeds = np.linalg.norm(ugv_now - ugv_prev, axis=1) / dt
        out["C6"] = float(np.max(np.maximum(speeds - fleet.v_max_ugv, 0.0)))

    if final and uav_start is not None:
        out["C4"] = float(np.max(np.linalg.norm(uav_now - uav_start, axis=1)))
    if final and ugv_start is not None:
        out["C8"] = float(np.max(np.linalg.norm(ugv_now - ugv_start, axis=1)))

    if len(uav_now) >= 2:
        worst = 0.0
        for a in range(len(uav_now)):
            for b in range(a + 1, len(uav_now)):
                d = float(np.linalg.norm(uav_now[a] - uav_now[b]))
                worst = max(worst, qos.d_safe_m - d)
        out["C5"] = max(worst, 0.0)

    dist = max(distance_to_graph(graph, p) for p in ugv_now)
    out["C7"] = dist if dist > ON_GRAPH_TOL else 0.0

    out["C9"] = float(np.maximum(assoc.alpha.sum(axis=1) - 1, 0).sum())
    out["C10"] = float(np.maximum(assoc.x.sum(axis=1) - 1, 0).sum())
    out["C11"] = float((~np.isin(assoc.alpha, (0, 1))).sum() + (~np.isin(assoc.x, (0, 1))).sum())
    return out


@dataclass
class ConstraintReport:
    """Per-slot violation magnitudes plus an episode summary."""

    per_slot: list[dict[str, float]]

    def satisfied(self, name: str) -> bool:
        return all(row[name] == 0.0 for row in self.per_slot)

    def max_violation(self, name: str) -> float:
        return max(row[name] for row in self.per_slot)

    def summary(self) -> dict[str, tuple[float, int]]:
        """Per constraint: (max violation, number of violating slots)."""
        return {
            name: (self.max_violation(name), sum(1 for r in self.per_slot if r[name] > 0))
            for name in CONSTRAINT_NAMES
        }

    def to_row(self) -> dict[str, float]:
        """One flat metrics row: max violation per constraint."""
        return {f"{name.lower()}_max": self.max_violation(name) for name in CONSTRAINT_NAMES}


def check_constraints(uav_traj: np.ndarray, ugv_traj: np.ndarray,
                      associations: list[AssociationState], rate_reports: list[RateReport],
                      qos: QoSParams, fleet: FleetParams, graph: RoadGraph) -> ConstraintReport:
    """Evaluate C1..C11 on full episode histories covering slots 0..N.

    ``uav_traj`` is (N+1, U, 3), ``ugv_traj`` (N+1, M, 2); associations and
    rate reports have one entry per slot including slot 0.
    """
    n_slots = len(uav_traj)
    if not (len(ugv_traj) == len(associations) == len(rate_reports) == n_slots):
        raise NetworkError(
            "mismatched history lengths: "
            f"uav={len(uav_traj)} ugv={len(ugv_traj)} "
            f"assoc={len(associations)} rates={len(rate_reports)}"
        )
    rows = []
    for n in range(n_slots):
        rows.append(
            slot_constraints(
                qos, fleet, graph,
                associations[n], rate_reports[n],
                uav_now=uav_traj[n], ugv_now=ugv_traj[n],
                uav_prev=uav_traj[n - 1] if n > 0 else None,
                ugv_prev=ugv_traj[n - 1] if n > 0 else None,
                uav_start=uav_traj[0], ugv_start=ugv_traj[0],
                final=(n == n_slots - 1),
            )
        )
    return ConstraintReport(per_slot=rows)
