"""Pitch geometry constants and the coarsened grid used by all surface models.

Coordinates are meters on a fixed 105 x 68 pitch. After normalization the
team in possession always attacks left to right, so the opponent goal sits
at (105, 34). Grid surfaces are stored as (width_cells, height_cells)
arrays: row index = x cell, column index = y cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PITCH_LENGTH = 105.0
PITCH_WIDTH = 68.0

# Regulation goal mouth: 7.32 m centered on y = 34.
GOAL_CENTER = (105.0, 34.0)
GOAL_HALF_WIDTH = 7.32 / 2.0
GOAL_POST_LOW = (105.0, 34.0 - GOAL_HALF_WIDTH)
GOAL_POST_HIGH = (105.0, 34.0 + GOAL_HALF_WIDTH)
OWN_GOAL_CENTER = (0.0, 34.0)

# Players may drift slightly out of bounds (throw-ins, momentum).
POSITION_MARGIN = 5.0
MAX_SPEED = 12.0  # m/s

PITCH_DIAGONAL = float(np.hypot(PITCH_LENGTH, PITCH_WIDTH))  # 125.16...


@dataclass(frozen=True)
class GridSpec:
    """Discrete destination grid: 104 x 68 cells over the 105 x 68 pitch."""

    width: int = 104
    height: int = 68

    def __post_init__(self):
        # Two 2x max-poolings must leave a usable map (104->52->26, 68->34->17).
        if self.width % 4 != 0:
            raise ValueError(f"grid width must be divisible by 4, got {self.width}")
        if self.height // 4 < 4:
            raise ValueError(f"grid height too small after two poolings: {self.height}")

    @property
    def cell_dx(self) -> float:
        return PITCH_LENGTH / self.width

    @property
    def cell_dy(self) -> float:
        return PITCH_WIDTH / self.height

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        """Map a pitch location to its (row, col) cell, clipping to bounds."""
        row = min(max(int(x / self.cell_dx), 0), self.width - 1)
        col = min(max(int(y / self.cell_dy), 0), self.height - 1)
        return row, col

    def center_of(self, row: int, col: int) -> tuple[float, float]:
        return (row + 0.5) * self.cell_dx, (col + 0.5) * self.cell_dy

    def x_centers(self) -> np.ndarray:
        return (np.arange(self.width) + 0.5) * self.cell_dx

    def y_centers(self) -> np.ndarray:
        return (np.arange(self.height) + 0.5) * self.cell_dy

    def center_mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """(width, height) arrays of cell-center x and y coordinates."""
        xs = self.x_centers()[:, None]
        ys = self.y_centers()[None, :]
        return np.broadcast_to(xs, (self.width, self.height)), np.broadcast_to(
            ys, (self.width, self.height)
        )


DEFAULT_GRID = GridSpec()


def mirror_x(x: float) -> float:
    """Reflect an x coordinate for right-to-left to left-to-right normalization."""
    return PITCH_LENGTH - x
