"""Combining component models into one expected-possession value.

For a frame, the engine evaluates: the pass-success probability surface,
the pass-selection distribution, the two conditional pass-value surfaces
(ball kept vs lost), the drive success probability with its two
conditional values, the shot value, and the three-way action-selection
distribution. The single frame value is the action-probability-weighted
mixture; everything is computed from the possession team's perspective
of the given snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data.records import TrackingSnapshot
from .features.influence import pitch_control_grid
from .features.layers import rasterize_layers
from .models.bundle import ModelBundle
from .models.point import point_features, snapshot_context
from .models.soccermap import SurfaceModel
from .models.xg import xg_features
from .pitch import DEFAULT_GRID, GridSpec


def _pair_share(a: SurfaceModel, b: SurfaceModel) -> dict | None:
    """A shared forward cache for two surface models, when safe.

    Sharing requires that both models scale their input identically; the
    callers already feed them the same layer data.
    """
    if np.array_equal(a.input_scale, b.input_scale):
        return {}
    return None


@dataclass(frozen=True)
class EpvBreakdown:
    """One frame's value decomposition with all display surfaces.

    Surfaces are (104, 68) arrays indexed [x_cell, y_cell] on the
    possession-normalized pitch (possession team attacks toward x=105).
    ``action_probs`` is (pass, drive, shot).
    """

    epv: float
    action_probs: tuple[float, float, float]
    pass_value: float
    drive_value: float
    shot_value: float
    pass_success_surface: np.ndarray
    selection_surface: np.ndarray
    pass_value_success_surface: np.ndarray
    pass_value_miss_surface: np.ndarray
    pass_value_surface: np.ndarray
    drive_success_prob: float
    drive_value_success: float
    drive_value_miss: float
    shot_xg: float

    def validate(self) -> None:
        total = float(sum(self.action_probs))
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"action probabilities sum to {total}, not 1")
        mix = (
            self.action_probs[0] * self.pass_value
            + self.action_probs[1] * self.drive_value
            + self.action_probs[2] * self.shot_value
        )
        if abs(mix - self.epv) > 1e-9:
            raise ValueError(f"mixture identity violated: {mix} != {self.epv}")

    def surfaces(self) -> dict[str, np.ndarray]:
        return {
            "pass_success": self.pass_success_surface,
            "selection": self.selection_surface,
            "pass_value_success": self.pass_value_success_surface,
            "pass_value_miss": self.pass_value_miss_surface,
            "pass_value": self.pass_value_surface,
        }

    def to_json_dict(self) -> dict:
        """Scalar payload; surfaces travel separately as flat arrays."""
        return {
            "epv": self.epv,
            "action_probs": {
                "pass": self.action_probs[0],
                "drive": self.action_probs[1],
                "shot": self.action_probs[2],
            },
            "values": {
                "pass": self.pass_value,
                "drive": self.drive_value,
                "shot": self.shot_value,
            },
            "drive_success_prob": self.drive_success_prob,
            "drive_value_success": self.drive_value_success,
            "drive_value_miss": self.drive_value_miss,
            "shot_xg": self.shot_xg,
        }


def pass_value_surface(
    success_value: np.ndarray,
    miss_value: np.ndarray,
    success_prob: np.ndarray,
) -> np.ndarray:
    """Per-cell expected pass value: mix the two conditional values."""
    success_value = np.asarray(success_value, dtype=np.float64)
    miss_value = np.asarray(miss_value, dtype=np.float64)
    success_prob = np.asarray(success_prob, dtype=np.float64)
    if not (success_value.shape == miss_value.shape == success_prob.shape):
        raise ValueError("surfaces must share one grid shape")
    if ((success_prob < 0) | (success_prob > 1)).any():
        raise ValueError("success probabilities must lie in [0, 1]")
    return success_value * success_prob + miss_value * (1.0 - success_prob)


def compose_epv(
    snapshot: TrackingSnapshot,
    bundle: ModelBundle,
    grid: GridSpec = DEFAULT_GRID,
) -> EpvBreakdown:
    """Full decomposition of one frame's expected possession value."""
    from dataclasses import replace as dc_replace

    context = snapshot_context(snapshot)

    # Pass family. The success and selection catalogs share channel
    # content, so rasterize once and relabel; the model pairs that see an
    # identical input also share the input-side forward work.
    stack_success = rasterize_layers(snapshot, "pass_success", grid=grid)
    stack_selection = dc_replace(stack_success, catalog="pass_selection")
    shared = _pair_share(bundle.pass_success, bundle.pass_selection)
    p_success = bundle.pass_success.surface(stack_success, share=shared)
    selection = bundle.pass_selection.surface(stack_selection, share=shared)
    stack_value = rasterize_layers(
        snapshot,
        "pass_value",
        {"pass_probability": p_success},
        grid=grid,
        lines=(context.poss_lines, context.opp_lines),
    )
    shared = _pair_share(bundle.pass_value_success, bundle.pass_value_miss)
    v_success = bundle.pass_value_success.surface(stack_value, share=shared)
    v_miss = bundle.pass_value_miss.surface(stack_value, share=shared)
    v_pass = pass_value_surface(v_success, v_miss, p_success)
    pass_value = float(np.sum(selection * v_pass))

    # Drive family: success probability, then the two conditional values.
    drive_feat = point_features(snapshot, "drive_probability", context=context)
    p_drive = float(bundle.drive_probability.predict(drive_feat)[0])
    value_feat = point_features(
        snapshot,
        "drive_value",
        {"drive_success_probability": p_drive},
        context=context,
    )
    dv_success = float(bundle.drive_value_success.predict(value_feat)[0])
    dv_miss = float(bundle.drive_value_miss.predict(value_feat)[0])
    drive_value = dv_success * p_drive + dv_miss * (1.0 - p_drive)

    # Shot value and the action mixture.
    ball = snapshot.ball
    shot_xg = float(bundle.xg.predict(xg_features(ball[0], ball[1]))[0])
    shot_feat = point_features(
        snapshot, "shot_value", {"shot_xg": shot_xg, "is_header": False}
    )
    shot_value = float(bundle.shot_value.predict(shot_feat)[0])
    select_feat = point_features(
        snapshot, "action_selection", {"shot_xg": shot_xg}, context=context
    )
    probs = bundle.action_selection.predict(select_feat)[0]
    action_probs = (float(probs[0]), float(probs[1]), float(probs[2]))

    epv = (
        action_probs[0] * pass_value
        + action_probs[1] * drive_value
        + action_probs[2] * shot_value
    )
    breakdown = EpvBreakdown(
        epv=float(epv),
        action_probs=action_probs,
        pass_value=pass_value,
        drive_value=drive_value,
        shot_value=shot_value,
        pass_success_surface=p_success,
        selection_surface=selection,
        pass_value_success_surface=v_success,
        pass_value_miss_surface=v_miss,
        pass_value_surface=v_pass,
        drive_success_prob=p_drive,
        drive_value_success=dv_success,
        drive_value_miss=dv_miss,
        shot_xg=shot_xg,
    )
    breakdown.validate()
    return breakdown


def possession_changed(start: TrackingSnapshot, end: TrackingSnapshot) -> bool:
    """True when a different set of players holds possession at the end."""
    return start.possession_ids() != end.possession_ids()


def epv_added(
    start: TrackingSnapshot,
    end: TrackingSnapshot,
    bundle: ModelBundle,
    grid: GridSpec = DEFAULT_GRID,
) -> float:
    """Value change of an action from the acting team's perspective.

    Both frames are valued for their own possession team; when the ball
    changes hands the end value flips sign so the difference stays in
    the acting (start) team's frame of reference.
    """
    start_value = compose_epv(start, bundle, grid).epv
    end_value = compose_epv(end, bundle, grid).epv
    if possession_changed(start, end):
        end_value = -end_value
    return end_value - start_value


def best_pass_option(breakdown: EpvBreakdown) -> tuple[tuple[int, int], float]:
    """Highest-valued pass destination cell; ties go to the lowest cell.

    Cells order as (x_cell, y_cell); the scan is row-major so the first
    maximal cell is the lexicographically smallest.
    """
    surf = breakdown.pass_value_surface
    flat = int(np.argmax(surf))
    cell = np.unravel_index(flat, surf.shape)
    return (int(cell[0]), int(cell[1])), float(surf[cell])


def whatif_pass(breakdown: EpvBreakdown, cell: tuple[int, int]) -> dict:
    """Evaluate one hypothetical pass destination from a frame breakdown."""
    surf = breakdown.pass_value_surface
    ix, iy = int(cell[0]), int(cell[1])
    if not (0 <= ix < surf.shape[0] and 0 <= iy < surf.shape[1]):
        raise IndexError(f"cell {cell} outside surface {surf.shape}")
    return {
        "cell": [ix, iy],
        "success_prob": float(breakdown.pass_success_surface[ix, iy]),
        "value_if_success": float(breakdown.pass_value_success_surface[ix, iy]),
        "value_if_miss": float(breakdown.pass_value_miss_surface[ix, iy]),
        "epv_added_if_chosen": float(surf[ix, iy] - breakdown.epv),
    }


def pitch_control_surface(
    snapshot: TrackingSnapshot, grid: GridSpec = DEFAULT_GRID
) -> np.ndarray:
    """Possession-team control probability over the whole grid."""
    gx, gy = grid.center_mesh()
    return pitch_control_grid(snapshot, gx, gy)
