"""Player influence surfaces and pitch control.

A player's influence at a point is a self-normalized bivariate Gaussian:
the density at the point divided by the density at the distribution's
mean, so influence is 1 exactly at the player's expected location and
falls off in (0, 1]. The Gaussian's shape responds to play:

- mean: current position advanced along the velocity (default 0.5 s);
- spread: a base radius that grows linearly with distance from the ball
  (tight control near the ball, loose far away), stretched along the
  velocity direction and compressed across it as the player speeds up.

Pitch control at a point squashes the weighted difference of the two
teams' summed influence through a logistic, giving the possession team's
degree of control in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..pitch import MAX_SPEED
from ..data.records import PlayerState, TEAM_OPPONENT, TEAM_POSSESSION, TrackingSnapshot

# Influence-shape constants (all exposed via InfluenceParams).
MEAN_HORIZON_S = 0.5     # seconds of velocity added to the mean
RADIUS_NEAR_M = 4.0      # base radius at the ball
RADIUS_FAR_M = 10.0      # base radius at/after BALL_RANGE_M from the ball
BALL_RANGE_M = 18.0      # distance where the radius saturates
MIN_AXIS_FRACTION = 0.2  # compression floor for the cross-velocity axis
AXIS_FLOOR_M = 0.2       # absolute minimum semi-axis (degeneracy guard)


@dataclass(frozen=True)
class InfluenceParams:
    mean_horizon_s: float = MEAN_HORIZON_S
    radius_near_m: float = RADIUS_NEAR_M
    radius_far_m: float = RADIUS_FAR_M
    ball_range_m: float = BALL_RANGE_M
    min_axis_fraction: float = MIN_AXIS_FRACTION
    axis_floor_m: float = AXIS_FLOOR_M


@dataclass(frozen=True)
class PitchControlParams:
    lambda_attack: float = 1.0
    lambda_defense: float = 1.0
    gamma: float = 1.0

    def validate(self) -> None:
        vals = (self.lambda_attack, self.lambda_defense, self.gamma)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"pitch-control params must be finite, got {vals}")
        if self.lambda_attack < 0 or self.lambda_defense < 0:
            raise ValueError("team weights must be non-negative")


def influence_shape(
    player: PlayerState,
    ball: np.ndarray,
    params: InfluenceParams = InfluenceParams(),
) -> tuple[np.ndarray, float, float, float]:
    """(mean, semi-axis along velocity, semi-axis across, rotation angle).

    The rotation angle is the velocity heading in radians (0 when the
    player is stationary, making the shape isotropic).
    """
    pos = np.array([player.x, player.y])
    vel = np.array([player.vx, player.vy])
    mean = pos + params.mean_horizon_s * vel

    d_ball = float(np.hypot(*(pos - ball)))
    frac = min(d_ball, params.ball_range_m) / params.ball_range_m
    base = params.radius_near_m + (params.radius_far_m - params.radius_near_m) * frac

    speed = float(np.hypot(*vel))
    ratio = min(speed / MAX_SPEED, 1.0)
    a = base * (1.0 + ratio)
    b = base * max(1.0 - ratio, params.min_axis_fraction)
    a = max(a, params.axis_floor_m)
    b = max(b, params.axis_floor_m)
    theta = float(np.arctan2(vel[1], vel[0])) if speed > 0 else 0.0
    return mean, a, b, theta


def player_influence(
    player: PlayerState,
    location: np.ndarray,
    ball: np.ndarray,
    params: InfluenceParams = InfluenceParams(),
) -> float:
    """Influence of one player at one location, in (0, 1]."""
    return float(
        player_influence_grid(
            player, np.asarray(location[0], float), np.asarray(location[1], float),
            ball, params,
        )
    )


def player_influence_grid(
    player: PlayerState,
    grid_x: np.ndarray,
    grid_y: np.ndarray,
    ball: np.ndarray,
    params: InfluenceParams = InfluenceParams(),
) -> np.ndarray:
    """Vectorized influence over arbitrary location arrays.

    Works in the Gaussian's principal axes: the density ratio against the
    mean reduces to exp(-((u/a)^2 + (w/b)^2)/2) for rotated offsets
    (u, w), so no explicit covariance inversion is needed.
    """
    mean, a, b, theta = influence_shape(player, ball, params)
    dx = grid_x - mean[0]
    dy = grid_y - mean[1]
    c, s = np.cos(theta), np.sin(theta)
    u = c * dx + s * dy     # along velocity
    w = -s * dx + c * dy    # across velocity
    return np.exp(-0.5 * ((u / a) ** 2 + (w / b) ** 2))


def team_influence_grid(
    snapshot: TrackingSnapshot,
    team: str,
    grid_x: np.ndarray,
    grid_y: np.ndarray,
    params: InfluenceParams = InfluenceParams(),
) -> np.ndarray:
    """Sum of a team's player influences at every location."""
    ball = snapshot.ball
    total = np.zeros(np.broadcast(grid_x, grid_y).shape)
    for p in snapshot.team_players(team):
        total += player_influence_grid(p, grid_x, grid_y, ball, params)
    return total


def pitch_control(
    snapshot: TrackingSnapshot,
    location: np.ndarray,
    params: PitchControlParams = PitchControlParams(),
    influence_params: InfluenceParams = InfluenceParams(),
) -> float:
    """Possession team's control at one location, in [0, 1]."""
    return float(
        pitch_control_grid(
            snapshot,
            np.asarray(location[0], float),
            np.asarray(location[1], float),
            params,
            influence_params,
        )
    )


def pitch_control_grid(
    snapshot: TrackingSnapshot,
    grid_x: np.ndarray,
    grid_y: np.ndarray,
    params: PitchControlParams = PitchControlParams(),
    influence_params: InfluenceParams = InfluenceParams(),
) -> np.ndarray:
    params.validate()
    attack = team_influence_grid(snapshot, TEAM_POSSESSION, grid_x, grid_y, influence_params)
    defense = team_influence_grid(snapshot, TEAM_OPPONENT, grid_x, grid_y, influence_params)
    z = params.gamma * (params.lambda_attack * attack - params.lambda_defense * defense)
    return 1.0 / (1.0 + np.exp(-z))
