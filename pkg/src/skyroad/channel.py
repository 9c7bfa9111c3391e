"""Probabilistic ground-to-air / air-to-ground link models.

Free-space path loss with LoS/NLoS excess, an elevation-angle logistic LoS
probability, the LoS/NLoS expectation of the loss, SINR, and Shannon rate.
All functions are pure; identical inputs give bit-identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 3.0e8  # m/s


class ChannelError(ValueError):
    """Invalid channel parameters or link geometry."""


@dataclass(frozen=True)
class ChannelParams:
    """Carrier, excess losses, S-curve shapes, bandwidth, powers, noise.

    ``eta1``/``eta2`` shape the ground-to-air LoS probability curve,
    ``b1``/``b2`` the air-to-ground one. Excess losses are in dB; powers and
    noise in watts; bandwidth in Hz.
    """

    carrier_hz: float = 2.0e9
    beta_los_db: float = 1.0
    beta_nlos_db: float = 20.0
    eta1: float = 9.61
    eta2: float = 0.16
    b1: float = 9.61
    b2: float = 0.16
    bandwidth_hz: float = 1.0e6
    p_uav_w: float = 1.0
    p_ugv_w: float = 1.0
    noise_w: float = 1.0e-12

    def __post_init__(self):
        if self.carrier_hz <= 0:
            raise ChannelError("carrier_hz must be > 0")
        if self.beta_nlos_db < self.beta_los_db:
            raise ChannelError("beta_nlos_db must be >= beta_los_db")
        if self.eta2 <= 0 or self.b2 <= 0:
            raise ChannelError("S-curve slope parameters must be > 0")
        if min(self.bandwidth_hz, self.p_uav_w, self.p_ugv_w, self.noise_w) <= 0:
            raise ChannelError("bandwidth, powers and noise must be > 0")


@dataclass(frozen=True)
class LinkBudget:
    """Resolved link: geometry, LoS probability, expected loss, linear gain."""

    distance_m: float
    elevation_deg: float
    p_los: float
    loss_db: float
    gain_linear: float


def path_loss_component(params: ChannelParams, distance_m: float, los: bool) -> float:
    """Free-space loss at the carrier plus the LoS or NLoS excess, in dB."""
    if distance_m <= 0:
        raise ChannelError(f"distance must be > 0, got {distance_m}")
    excess = params.beta_los_db if los else params.beta_nlos_db
    fspl = 20.0 * math.log10(4.0 * math.pi * params.carrier_hz * distance_m / SPEED_OF_LIGHT)
    return fspl + excess


def elevation_angle(tx_ground, rx_air) -> float:
    """Elevation angle in degrees seen from a ground node toward an air node."""
    g = np.asarray(tx_ground, dtype=float)
    a = np.asarray(rx_air, dtype=float)
    gx, gy = g[0], g[1]
    z = float(a[2])
    if z <= 0:
        raise ChannelError(f"air node altitude must be > 0, got {z}")
    d = math.sqrt((a[0] - gx) ** 2 + (a[1] - gy) ** 2 + z * z)
    if d == 0:
        raise ChannelError("coincident ground/air points")
    return math.degrees(math.asin(z / d))


def p_los(s_curve_a: float, s_curve_b: float, elevation_deg: float) -> float:
    """Logistic LoS probability as a function of the elevation angle."""
    return 1.0 / (1.0 + s_curve_a * math.exp(-s_curve_b * (elevation_deg - s_curve_a)))


def expected_path_loss(params: ChannelParams, link_kind: str, tx, rx) -> LinkBudget:
    """LoS/NLoS-probability-weighted path loss for one link.

    ``link_kind`` is "g2a" (ground vehicle -> UAV, eta S-curve) or "a2g"
    (UAV -> user, b S-curve). The elevation angle is always measured from the
    ground endpoint toward the airborne one.
    """
    if link_kind == "g2a":
        ground, air = np.asarray(tx, float), np.asarray(rx, float)
        a, b = params.eta1, params.eta2
    elif link_kind == "a2g":
        ground, air = np.asarray(rx, float), np.asarray(tx, float)
        a, b = params.b1, params.b2
    else:
        raise ChannelError(f"unknown link kind {link_kind!r}")

    z = float(air[2])
    d = math.sqrt((air[0] - ground[0]) ** 2 + (air[1] - ground[1]) ** 2 + z * z)
    psi = elevation_angle(ground, air)
    pl = p_los(a, b, psi)
    loss = pl * path_loss_component(params, d, los=True) + (1.0 - pl) * path_loss_component(
        params, d, los=False
    )
    return LinkBudget(
        distance_m=d,
        elevation_deg=psi,
        p_los=pl,
        loss_db=loss,
        gain_linear=10.0 ** (-loss / 10.0),
    )


def a2g_gain_matrix(params: ChannelParams, uav_positions: np.ndarray,
                    user_positions: np.ndarray) -> np.ndarray:
    """(U, K) linear channel gains from every UAV to every user, vectorized."""
    uav = np.asarray(uav_positions, dtype=float).reshape(-1, 3)
    usr = np.asarray(user_positions, dtype=float).reshape(-1, 2)
    dx = uav[:, None, 0] - usr[None, :, 0]
    dy = uav[:, None, 1] - usr[None, :, 1]
    z = uav[:, 2][:, None]
    d = np.sqrt(dx * dx + dy * dy + z * z)
    psi = np.degrees(np.arcsin(z / d))
    pl = 1.0 / (1.0 + params.b1 * np.exp(-params.b2 * (psi - params.b1)))
    fspl = 20.0 * np.log10(4.0 * np.pi * params.carrier_hz * d / SPEED_OF_LIGHT)
    loss = fspl + pl * params.beta_los_db + (1.0 - pl) * params.beta_nlos_db
    return 10.0 ** (-loss / 10.0)


def sinr_user(params: ChannelParams, serving_uav: int, uav_positions: np.ndarray,
              user_position) -> float:
    """Downlink SINR at a user: serving power over other-UAV power plus noise."""
    gains = a2g_gain_matrix(params, uav_positions, np.asarray(user_position, float)[None, :])[:, 0]
    return sinr_user_from_gains(params, serving_uav, gains)


def sinr_user_from_gains(params: ChannelParams, serving_uav: int, gains: np.ndarray) -> float:
    """SINR given precomputed (U,) linear gains toward one user."""
    signal = params.p_uav_w * gains[serving_uav]
    interference = params.p_uav_w * (float(np.sum(gains)) - float(gains[serving_uav]))
    return signal / (interference + params.noise_w)


def sinr_backhaul(params: ChannelParams, ugv_position, uav_position, associated) -> float:
    """Interference-free feeder-link SNR, gated by the association flag."""
    if not associated:
        return 0.0
    budget = expected_path_loss(params, "g2a", ugv_position, uav_position)
    return params.p_ugv_w * budget.gain_linear / params.noise_w


def rate(params: ChannelParams, associated, sinr: float, bandwidth_hz: float | None = None) -> float:
    """Shannon rate in bit/s, gated by the association flag.

    ``bandwidth_hz`` overrides the configured bandwidth; the network layer
    uses this to split a UAV's bandwidth across its served users.
    """
    if sinr < 0:
        raise ChannelError(f"sinr must be >= 0, got {sinr}")
    if not associated:
        return 0.0
    bw = params.bandwidth_hz if bandwidth_hz is None else bandwidth_hz
    return bw * math.log2(1.0 + sinr)
