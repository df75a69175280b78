"""Dynamic pressure lines via 1-D complete-linkage clustering.

A team's outfield players are clustered on a single projected coordinate
(x for vertical lines, y for horizontal) into k groups by agglomerative
complete linkage: repeatedly merge the two clusters whose union has the
smallest diameter. Each resulting line's coordinate is the mean of its
members; lines are indexed by ascending coordinate.

Goalkeepers are excluded: the lines describe the outfield pressing
structure (defense / midfield / forward bands for k=3).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data.records import PlayerState, TrackingSnapshot

AXIS_VERTICAL = "vertical"      # cluster on x: defense/midfield/forward bands
AXIS_HORIZONTAL = "horizontal"  # cluster on y: left/center/right bands


@dataclass(frozen=True)
class PressureLines:
    axis: str
    centroids: tuple[float, ...]            # ascending coordinates, len k
    assignment: dict[str, int]              # player_id -> line index

    @property
    def k(self) -> int:
        return len(self.centroids)

    def members(self, index: int) -> list[str]:
        return sorted(pid for pid, i in self.assignment.items() if i == index)


def complete_linkage_1d(values: np.ndarray, k: int) -> list[list[int]]:
    """Cluster scalar values into k groups; returns member-index lists.

    Merge order ties (equal union diameters) are broken in favor of the
    pair whose smallest member index is lowest, then by the other
    cluster's smallest index, so results are platform-independent.
    """
    n = len(values)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if n < k:
        raise ValueError(f"cannot form {k} clusters from {n} points")
    clusters: list[list[int]] = [[i] for i in range(n)]
    while len(clusters) > k:
        best = None
        best_key = None
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                merged = clusters[i] + clusters[j]
                vals = values[merged]
                diameter = float(vals.max() - vals.min())
                key = (diameter, min(clusters[i] + clusters[j]),
                       max(min(clusters[i]), min(clusters[j])))
                if best_key is None or key < best_key:
                    best_key = key
                    best = (i, j)
        i, j = best
        clusters[i] = clusters[i] + clusters[j]
        del clusters[j]
    return clusters


def dynamic_pressure_lines(
    snapshot: TrackingSnapshot,
    team: str,
    axis: str = AXIS_VERTICAL,
    k: int = 3,
) -> PressureLines:
    """Cluster a team's outfield players into k pressure lines."""
    if axis not in (AXIS_VERTICAL, AXIS_HORIZONTAL):
        raise ValueError(f"axis must be vertical|horizontal, got {axis!r}")
    outfield = [p for p in snapshot.team_players(team) if not p.is_goalkeeper]
    if len(outfield) < k:
        raise ValueError(
            f"team {team!r} has {len(outfield)} outfield players, need >= {k}"
        )
    coord = np.array([p.x if axis == AXIS_VERTICAL else p.y for p in outfield])
    groups = complete_linkage_1d(coord, k)
    centroids = [float(coord[g].mean()) for g in groups]
    order = np.argsort(centroids, kind="stable")
    assignment: dict[str, int] = {}
    sorted_centroids = []
    for rank, gi in enumerate(order):
        sorted_centroids.append(centroids[gi])
        for member in groups[gi]:
            assignment[outfield[member].player_id] = rank
    return PressureLines(
        axis=axis, centroids=tuple(sorted_centroids), assignment=assignment
    )


def closest_line_index(coordinate: float, lines: PressureLines) -> int:
    """Index of the nearest line; distance ties go to the lower index."""
    if not lines.centroids:
        raise ValueError("no pressure lines")
    dists = [abs(coordinate - c) for c in lines.centroids]
    return int(np.argmin(dists))  # argmin returns the first (lowest) index on ties


def closest_line_index_grid(coords: np.ndarray, lines: PressureLines) -> np.ndarray:
    """Vectorized closest_line_index over an array of coordinates."""
    centroids = np.asarray(lines.centroids)
    dists = np.abs(coords[..., None] - centroids)
    return np.argmin(dists, axis=-1)


def players_per_line(lines: PressureLines) -> list[int]:
    counts = [0] * lines.k
    for idx in lines.assignment.values():
        counts[idx] += 1
    return counts


def formation_block(
    snapshot: TrackingSnapshot, team: str, lines: PressureLines
) -> tuple[float, float, float, float]:
    """Bounding box (x0, y0, x1, y1) of the outfield players that sit
    between the first and last vertical pressure lines (inclusive)."""
    lo, hi = lines.centroids[0], lines.centroids[-1]
    pts = [
        (p.x, p.y)
        for p in snapshot.team_players(team)
        if not p.is_goalkeeper and lo <= p.x <= hi
    ]
    if not pts:
        return (lo, 0.0, hi, 0.0)
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    return (min(xs), min(ys), max(xs), max(ys))
