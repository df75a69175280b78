"""Angles and distances on the pitch.

Angles are measured in degrees from the positive x-axis; degenerate
directions (zero-length) are defined as angle 0 so sin/cos stay on the
unit circle everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..pitch import GOAL_CENTER


@dataclass(frozen=True)
class Geometry:
    distance_m: float
    angle_deg: float
    sin_to_target: float
    cos_to_target: float


def geometry(
    origin: tuple[float, float] | np.ndarray,
    target: tuple[float, float] | np.ndarray | None = None,
    goal: tuple[float, float] = GOAL_CENTER,
) -> Geometry:
    """Distance and direction from origin to target (default: the goal)."""
    ox, oy = float(origin[0]), float(origin[1])
    tx, ty = (goal if target is None else (float(target[0]), float(target[1])))
    dx, dy = tx - ox, ty - oy
    dist = float(np.hypot(dx, dy))
    if dist == 0.0:
        return Geometry(0.0, 0.0, 0.0, 1.0)
    angle = float(np.degrees(np.arctan2(dy, dx)))
    return Geometry(dist, angle, dy / dist, dx / dist)


def distance_grid(grid_x: np.ndarray, grid_y: np.ndarray, point: np.ndarray) -> np.ndarray:
    """Euclidean distance from every cell center to a point."""
    return np.hypot(grid_x - point[0], grid_y - point[1])


def angle_to_goal_grid(
    grid_x: np.ndarray, grid_y: np.ndarray, goal: tuple[float, float] = GOAL_CENTER
) -> np.ndarray:
    """Angle (degrees from +x axis) from every cell center to the goal."""
    return np.degrees(np.arctan2(goal[1] - grid_y, goal[0] - grid_x))


def unit_direction_grids(
    grid_x: np.ndarray, grid_y: np.ndarray, point: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """(sin, cos) of the direction from a point toward every cell center.

    Cells coinciding with the point get the degenerate convention
    (sin 0, cos 1).
    """
    dx = grid_x - point[0]
    dy = grid_y - point[1]
    dist = np.hypot(dx, dy)
    safe = np.where(dist == 0.0, 1.0, dist)
    sin = np.where(dist == 0.0, 0.0, dy / safe)
    cos = np.where(dist == 0.0, 1.0, dx / safe)
    return sin, cos


def relative_angle_grids(
    grid_x: np.ndarray, grid_y: np.ndarray, point: np.ndarray, direction: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """(sin, cos) of the angle between a direction vector and point->cell rays.

    The sine is signed (positive when the ray lies counterclockwise of the
    direction). A zero direction vector or a ray of zero length falls back
    to (sin 0, cos 1).
    """
    vnorm = float(np.hypot(direction[0], direction[1]))
    dx = grid_x - point[0]
    dy = grid_y - point[1]
    dist = np.hypot(dx, dy)
    denom = dist * vnorm
    safe = np.where(denom == 0.0, 1.0, denom)
    cos = (dx * direction[0] + dy * direction[1]) / safe
    sin = (direction[0] * dy - direction[1] * dx) / safe
    cos = np.where(denom == 0.0, 1.0, cos)
    sin = np.where(denom == 0.0, 0.0, sin)
    return sin, cos
