"""Rasterized layer stacks: the grid inputs consumed by surface models.

Three fixed channel catalogs exist (version tag ``v1``):

- ``PP`` (13): pass success — player locations/velocities, goal and ball
  geometry, carrier-velocity alignment.
- ``PS`` (13): pass selection — identical layout to PP.
- ``PE`` (16): pass value — locations/velocities and goal/ball
  distances, plus closest-pressure-line indices, four outplayed-count
  layers, and the pass-probability surface supplied via ``extras``.

Grids are float32 arrays of shape (channels, 104, 68); row index is the
x cell, column index the y cell. Sparse layers carry values only at
player cells (velocity components accumulate when players share a
cell); dense layers are filled everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..pitch import DEFAULT_GRID, GridSpec
from ..data.records import TEAM_OPPONENT, TEAM_POSSESSION, TrackingSnapshot
from . import geometry as geo
from .counts import SIDE_BEHIND_GOAL, SIDE_BETWEEN_BALL, outplayed_count_grid
from .lines import (
    AXIS_VERTICAL,
    PressureLines,
    closest_line_index_grid,
    dynamic_pressure_lines,
)

CATALOG_VERSION = "v1"

PASS_SUCCESS_CHANNELS = (
    "poss_location",
    "opp_location",
    "poss_velocity_x",
    "poss_velocity_y",
    "opp_velocity_x",
    "opp_velocity_y",
    "angle_to_goal_deg",
    "sin_to_ball",
    "cos_to_ball",
    "sin_carrier_velocity",
    "cos_carrier_velocity",
    "dist_to_goal_m",
    "dist_to_ball_m",
)
PASS_SELECTION_CHANNELS = PASS_SUCCESS_CHANNELS
PASS_VALUE_CHANNELS = (
    "poss_location",
    "opp_location",
    "poss_velocity_x",
    "poss_velocity_y",
    "opp_velocity_x",
    "opp_velocity_y",
    "angle_to_goal_deg",
    "dist_to_goal_m",
    "dist_to_ball_m",
    "poss_line_index",
    "opp_line_index",
    "outplayed_poss_between",
    "outplayed_opp_between",
    "outplayed_poss_behind",
    "outplayed_opp_behind",
    "pass_probability",
)

CATALOGS: dict[str, tuple[str, ...]] = {
    "pass_success": PASS_SUCCESS_CHANNELS,
    "pass_selection": PASS_SELECTION_CHANNELS,
    "pass_value": PASS_VALUE_CHANNELS,
}

SPARSE_LOCATION_CHANNELS = ("poss_location", "opp_location")


@dataclass(frozen=True)
class LayerStack:
    catalog: str                  # PP | PS | PE
    channel_names: tuple[str, ...]
    data: np.ndarray              # float32, (C, width_cells, height_cells)

    @property
    def n_channels(self) -> int:
        return len(self.channel_names)

    def channel(self, name: str) -> np.ndarray:
        return self.data[self.channel_names.index(name)]

    def validate(self) -> None:
        if self.catalog not in CATALOGS:
            raise ValueError(f"unknown catalog {self.catalog!r}")
        expected = CATALOGS[self.catalog]
        if self.channel_names != expected:
            raise ValueError(f"channel names do not match catalog {self.catalog}")
        if self.data.shape[0] != len(expected):
            raise ValueError(
                f"{self.catalog} stack must have {len(expected)} channels, "
                f"got {self.data.shape[0]}"
            )
        if not np.isfinite(self.data).all():
            raise ValueError("layer stack contains NaN/Inf")
        for name in SPARSE_LOCATION_CHANNELS:
            if name in self.channel_names:
                vals = np.unique(self.channel(name))
                if not np.isin(vals, (0.0, 1.0)).all():
                    raise ValueError(f"location layer {name} must be 0/1")


def _player_layers(
    snapshot: TrackingSnapshot, grid: GridSpec
) -> dict[str, np.ndarray]:
    shape = (grid.width, grid.height)
    out = {
        "poss_location": np.zeros(shape),
        "opp_location": np.zeros(shape),
        "poss_velocity_x": np.zeros(shape),
        "poss_velocity_y": np.zeros(shape),
        "opp_velocity_x": np.zeros(shape),
        "opp_velocity_y": np.zeros(shape),
    }
    for p in snapshot.players:
        r, c = grid.cell_of(p.x, p.y)
        prefix = "poss" if p.team == TEAM_POSSESSION else "opp"
        out[f"{prefix}_location"][r, c] = 1.0
        out[f"{prefix}_velocity_x"][r, c] += p.vx
        out[f"{prefix}_velocity_y"][r, c] += p.vy
    return out


def rasterize_layers(
    snapshot: TrackingSnapshot,
    catalog: str,
    extras: dict[str, np.ndarray] | None = None,
    grid: GridSpec = DEFAULT_GRID,
    lines: tuple[PressureLines, PressureLines] | None = None,
) -> LayerStack:
    """Build the layer stack for one frame under the given catalog.

    The pass-value catalog requires ``extras['pass_probability']`` (a
    (width, height) surface from the pass-success model); the other two
    catalogs take no extras. ``lines`` optionally reuses precomputed
    (possession, opponent) vertical pressure lines for the value
    catalog's line-index channels.
    """
    if catalog not in CATALOGS:
        raise ValueError(f"unknown catalog {catalog!r}")
    gx, gy = grid.center_mesh()
    ball = snapshot.ball
    layers = _player_layers(snapshot, grid)
    layers["angle_to_goal_deg"] = geo.angle_to_goal_grid(gx, gy)
    layers["dist_to_goal_m"] = geo.distance_grid(gx, gy, np.asarray(geo.GOAL_CENTER))
    layers["dist_to_ball_m"] = geo.distance_grid(gx, gy, ball)

    if catalog in ("pass_success", "pass_selection"):
        sin_b, cos_b = geo.unit_direction_grids(gx, gy, ball)
        layers["sin_to_ball"] = sin_b
        layers["cos_to_ball"] = cos_b
        carrier = snapshot.ball_carrier()
        sin_v, cos_v = geo.relative_angle_grids(
            gx, gy, carrier.position, carrier.velocity
        )
        layers["sin_carrier_velocity"] = sin_v
        layers["cos_carrier_velocity"] = cos_v
    else:  # pass_value
        if not extras or "pass_probability" not in extras:
            raise ValueError(
                "pass_value catalog requires extras['pass_probability']"
            )
        surface = np.asarray(extras["pass_probability"], dtype=float)
        if surface.shape != (grid.width, grid.height):
            raise ValueError(
                f"pass_probability surface must be {(grid.width, grid.height)}, "
                f"got {surface.shape}"
            )
        xs = grid.x_centers()
        if lines is not None:
            poss_lines, opp_lines = lines
        else:
            poss_lines = dynamic_pressure_lines(
                snapshot, TEAM_POSSESSION, AXIS_VERTICAL, 3
            )
            opp_lines = dynamic_pressure_lines(
                snapshot, TEAM_OPPONENT, AXIS_VERTICAL, 3
            )
        layers["poss_line_index"] = np.repeat(
            closest_line_index_grid(xs, poss_lines)[:, None], grid.height, axis=1
        ).astype(float)
        layers["opp_line_index"] = np.repeat(
            closest_line_index_grid(xs, opp_lines)[:, None], grid.height, axis=1
        ).astype(float)
        poss_xs = np.array([p.x for p in snapshot.team_players(TEAM_POSSESSION)])
        opp_xs = np.array([p.x for p in snapshot.team_players(TEAM_OPPONENT)])
        for prefix, pxs in (("poss", poss_xs), ("opp", opp_xs)):
            between = outplayed_count_grid(ball[0], xs, pxs, SIDE_BETWEEN_BALL)
            behind = outplayed_count_grid(ball[0], xs, pxs, SIDE_BEHIND_GOAL)
            layers[f"outplayed_{prefix}_between"] = np.repeat(
                between[:, None], grid.height, axis=1
            ).astype(float)
            layers[f"outplayed_{prefix}_behind"] = np.repeat(
                behind[:, None], grid.height, axis=1
            ).astype(float)
        layers["pass_probability"] = surface

    names = CATALOGS[catalog]
    data = np.stack([layers[name] for name in names]).astype(np.float32)
    stack = LayerStack(catalog=catalog, channel_names=names, data=data)
    stack.validate()
    return stack


# ---------------------------------------------------------------------------
# debug export
# ---------------------------------------------------------------------------

def export_ascii(stack: LayerStack) -> str:
    """Render every channel as a PGM-style ASCII grid (for golden files).

    Each channel becomes a P2 block: a comment with the channel name and
    the value range used for quantization, dimensions, maxval 255, then
    height rows of width integers (row j is y-cell j).
    """
    blocks = []
    c, w, h = stack.data.shape
    for i, name in enumerate(stack.channel_names):
        grid = stack.data[i].astype(float)
        lo, hi = float(grid.min()), float(grid.max())
        span = hi - lo
        if span == 0.0:
            quant = np.zeros_like(grid, dtype=int)
        else:
            quant = np.rint((grid - lo) / span * 255).astype(int)
        lines = [
            "P2",
            f"# {name} min={lo!r} max={hi!r}",
            f"{w} {h}",
            "255",
        ]
        for j in range(h):
            lines.append(" ".join(str(v) for v in quant[:, j]))
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"
