"""Outplayed-player counts and shot context.

"Outplayed" here is purely one-dimensional: a completed action moving
the ball from x_ref to x_target takes out of the game every player whose
x sits strictly inside that band. The behind-goal variant counts players
between the target and the goal line instead (how many remain to beat).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ..pitch import GOAL_POST_HIGH, GOAL_POST_LOW, PITCH_LENGTH
from ..data.records import PlayerState, TEAM_OPPONENT, TrackingSnapshot

SIDE_BETWEEN_BALL = "between_ball"
SIDE_BEHIND_GOAL = "behind_goal"

PRESSER_RADIUS_M = 3.0


def outplayed_count(
    reference: Sequence[float],
    target: Sequence[float],
    players: Iterable[PlayerState],
    side: str = SIDE_BETWEEN_BALL,
) -> int:
    """Players in the vertical band swept by reference -> target.

    between_ball: x strictly between reference.x and target.x (either
    direction). behind_goal: x strictly past target.x toward the goal
    line, goal line itself included.
    """
    xs = [p.x for p in players]
    if side == SIDE_BETWEEN_BALL:
        lo, hi = sorted((float(reference[0]), float(target[0])))
        return sum(1 for x in xs if lo < x < hi)
    if side == SIDE_BEHIND_GOAL:
        tx = float(target[0])
        return sum(1 for x in xs if tx < x <= PITCH_LENGTH)
    raise ValueError(f"unknown side {side!r}")


def outplayed_count_grid(
    reference_x: float,
    target_x: np.ndarray,
    player_xs: np.ndarray,
    side: str = SIDE_BETWEEN_BALL,
) -> np.ndarray:
    """Vectorized outplayed_count against a grid of target x-coordinates."""
    tx = target_x[..., None]
    xs = player_xs[None, ...] if target_x.ndim == 1 else player_xs
    while xs.ndim < tx.ndim:
        xs = xs[None, ...]
    if side == SIDE_BETWEEN_BALL:
        lo = np.minimum(reference_x, tx)
        hi = np.maximum(reference_x, tx)
        inside = (xs > lo) & (xs < hi)
    elif side == SIDE_BEHIND_GOAL:
        inside = (xs > tx) & (xs <= PITCH_LENGTH)
    else:
        raise ValueError(f"unknown side {side!r}")
    return inside.sum(axis=-1)


# ---------------------------------------------------------------------------
# shot context
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShotContext:
    blockage_count: int     # opponents strictly inside the ball-posts triangle
    pressers_3m: int        # opponents closer than 3 m to the ball carrier
    gk_distance_m: float    # ball to opposing goalkeeper
    gk_distance_y_m: float  # |ball_y - goalkeeper_y|
    ball_beyond_gk: bool    # ball closer to the goal line than the goalkeeper
    is_header: bool = False

    def validate(self) -> None:
        if self.blockage_count < 0 or self.pressers_3m < 0:
            raise ValueError("shot-context counts must be non-negative")
        if not (np.isfinite(self.gk_distance_m) and np.isfinite(self.gk_distance_y_m)):
            raise ValueError("goalkeeper features must be finite")


def point_in_triangle(
    point: Sequence[float],
    a: Sequence[float],
    b: Sequence[float],
    c: Sequence[float],
) -> bool:
    """Strict interior test via three half-plane sign checks."""
    def cross(o, p, q):
        return (p[0] - o[0]) * (q[1] - o[1]) - (p[1] - o[1]) * (q[0] - o[0])

    d1 = cross(a, b, point)
    d2 = cross(b, c, point)
    d3 = cross(c, a, point)
    has_neg = (d1 < 0) or (d2 < 0) or (d3 < 0)
    has_pos = (d1 > 0) or (d2 > 0) or (d3 > 0)
    # Strictly interior: all three cross products share one strict sign.
    return not (has_neg and has_pos) and d1 != 0 and d2 != 0 and d3 != 0


def shot_context(snapshot: TrackingSnapshot, is_header: bool = False) -> ShotContext:
    """Shot-situation features for the current ball position."""
    ball = (snapshot.ball_x, snapshot.ball_y)
    opponents = snapshot.team_players(TEAM_OPPONENT)
    blockage = sum(
        1
        for p in opponents
        if point_in_triangle((p.x, p.y), ball, GOAL_POST_LOW, GOAL_POST_HIGH)
    )
    carrier = snapshot.ball_carrier()
    pressers = sum(
        1
        for p in opponents
        if np.hypot(p.x - carrier.x, p.y - carrier.y) < PRESSER_RADIUS_M
    )
    gk = snapshot.goalkeeper(TEAM_OPPONENT)
    ctx = ShotContext(
        blockage_count=blockage,
        pressers_3m=pressers,
        gk_distance_m=float(np.hypot(gk.x - ball[0], gk.y - ball[1])),
        gk_distance_y_m=float(abs(gk.y - ball[1])),
        ball_beyond_gk=ball[0] > gk.x,
        is_header=is_header,
    )
    ctx.validate()
    return ctx
