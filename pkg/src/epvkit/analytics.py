"""Action tagging and aggregate studies over composed frame values.

Three report families build on the frame composer: per-action tags with
the value added by each action, kernel densities of value-added grouped
by tag, and zone/pair aggregates that compare groups of possessions
against the pooled mean.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .compose import EpvBreakdown, compose_epv, epv_added
from .data.records import (
    TEAM_OPPONENT,
    TEAM_POSSESSION,
    Action,
    EventRecord,
    Match,
)
from .data.rewards import FRAME_RATE_HZ
from .features.influence import pitch_control
from .features.lines import dynamic_pressure_lines
from .models.bundle import ModelBundle
from .pitch import DEFAULT_GRID, GridSpec, PITCH_LENGTH, PITCH_WIDTH

# Tag vocabulary.
TAG_BREAKS_LINE_1 = "breaks_line_1"
TAG_BREAKS_LINE_2 = "breaks_line_2"
TAG_BREAKS_LINE_3 = "breaks_line_3"
TAG_UNDER_PRESSURE = "under_pressure"
TAG_LONG_PASS = "long_pass"
TAG_PASS_BACK = "pass_back"
TAG_CROSS = "cross"
TAG_LOST_BALL = "lost_ball"
TAG_DRIVE_BREAKS_LINE = "drive_breaks_line"

ALL_TAGS = (
    TAG_BREAKS_LINE_1,
    TAG_BREAKS_LINE_2,
    TAG_BREAKS_LINE_3,
    TAG_UNDER_PRESSURE,
    TAG_LONG_PASS,
    TAG_PASS_BACK,
    TAG_CROSS,
    TAG_LOST_BALL,
    TAG_DRIVE_BREAKS_LINE,
)

# A carrier with possession-side control below this is under pressure.
PRESSURE_CONTROL_MAX = 0.4
# Passes covering more than this many meters are long passes.
LONG_PASS_MIN_M = 30.0

# Default zone resolution for advantage maps.
ZONES_X = 12
ZONES_Y = 8

DENSITY_MIN_EVENTS = 30
DENSITY_POINTS = 512
_MIN_BANDWIDTH = 1e-6


# ---------------------------------------------------------------------------
# action tagging
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TaggedAction:
    event: EventRecord
    tags: frozenset[str]
    epv_added: float


def action_tags(event: EventRecord, origin) -> frozenset[str]:
    """Flags for one action given its origin snapshot.

    Line breaks compare the action's endpoints against the opponent
    pressure-line centroids: a pass breaks line i when it starts before
    and ends beyond centroid i, and a drive that crosses any centroid
    breaks a line. Pressure uses the possession side's control at the
    ball; back passes move away from the attacked goal; lost balls are
    unsuccessful passes or drives.
    """
    tags: set[str] = set()
    if event.action in (Action.PASS, Action.DRIVE):
        opp_lines = dynamic_pressure_lines(origin, TEAM_OPPONENT)
        crossed = [
            i
            for i, c in enumerate(opp_lines.centroids)
            if event.origin_x < c < event.dest_x
        ]
        if event.action == Action.PASS:
            for i in crossed:
                tags.add(f"breaks_line_{i + 1}")
        elif crossed:
            tags.add(TAG_DRIVE_BREAKS_LINE)
        if event.outcome == 0:
            tags.add(TAG_LOST_BALL)
    if pitch_control(origin, origin.ball) < PRESSURE_CONTROL_MAX:
        tags.add(TAG_UNDER_PRESSURE)
    if event.action == Action.PASS:
        if float(np.hypot(event.dest_x - event.origin_x,
                          event.dest_y - event.origin_y)) > LONG_PASS_MIN_M:
            tags.add(TAG_LONG_PASS)
        if event.dest_x < event.origin_x:
            tags.add(TAG_PASS_BACK)
        if event.is_cross:
            tags.add(TAG_CROSS)
    return frozenset(tags)


def tag_actions(
    match: Match,
    bundle: ModelBundle,
    events: Sequence[EventRecord] | None = None,
    epv_added_values: Sequence[float] | None = None,
    grid: GridSpec = DEFAULT_GRID,
) -> list[TaggedAction]:
    """Tag a match's actions and attach each one's value added.

    ``epv_added_values`` supplies precomputed per-event values (same
    order as the events); otherwise each value is composed from the
    origin and resolution frames, and events without both frames get
    NaN.
    """
    events = list(match.events if events is None else events)
    if epv_added_values is not None and len(epv_added_values) != len(events):
        raise ValueError(
            f"{len(epv_added_values)} values for {len(events)} events"
        )
    tagged = []
    for i, ev in enumerate(events):
        origin = match.snapshot_at(ev.frame_index)
        if epv_added_values is not None:
            value = float(epv_added_values[i])
        elif ev.end_frame is not None and match.has_frame(ev.end_frame):
            value = epv_added(
                origin, match.snapshot_at(ev.end_frame), bundle, grid
            )
        else:
            value = float("nan")
        tagged.append(TaggedAction(event=ev, tags=action_tags(ev, origin),
                                   epv_added=value))
    return tagged


# ---------------------------------------------------------------------------
# value-added densities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DensityCurve:
    """A kernel density over value-added, scaled so its peak is 1."""

    support: np.ndarray
    density: np.ndarray
    bandwidth: float
    count: int

    def validate(self) -> None:
        if self.density.min() < 0:
            raise ValueError("density must be nonnegative")
        if abs(self.density.max() - 1.0) > 1e-12:
            raise ValueError("density must be normalized to max 1")

    def to_csv(self) -> str:
        rows = ["epv_added,density"]
        for s, d in zip(self.support, self.density):
            rows.append(f"{s:.6f},{d:.8f}")
        return "\n".join(rows) + "\n"


def silverman_bandwidth(values: np.ndarray) -> float:
    """Rule-of-thumb kernel width: 0.9 min(sd, iqr/1.34) n^(-1/5)."""
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    sd = float(values.std(ddof=1)) if n > 1 else 0.0
    q75, q25 = np.percentile(values, [75.0, 25.0])
    iqr = float(q75 - q25)
    scales = [s for s in (sd, iqr / 1.34) if s > 0]
    if not scales:
        return _MIN_BANDWIDTH
    return max(0.9 * min(scales) * n ** (-0.2), _MIN_BANDWIDTH)


def epv_added_density(
    tagged: Sequence[TaggedAction],
    tag: str,
    bandwidth: float | None = None,
    points: int = DENSITY_POINTS,
) -> DensityCurve:
    """Gaussian kernel density of value-added for one tag.

    Requires at least ``DENSITY_MIN_EVENTS`` finite-valued events with
    the tag; the curve is divided by its own maximum so it peaks at 1.
    """
    if tag not in ALL_TAGS:
        raise ValueError(f"unknown tag {tag!r}")
    values = np.array(
        [t.epv_added for t in tagged if tag in t.tags and math.isfinite(t.epv_added)]
    )
    if values.size < DENSITY_MIN_EVENTS:
        raise ValueError(
            f"tag {tag!r} has {values.size} events, need >= {DENSITY_MIN_EVENTS}"
        )
    h = silverman_bandwidth(values) if bandwidth is None else float(bandwidth)
    if h <= 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    support = np.linspace(values.min() - 3 * h, values.max() + 3 * h, points)
    z = (support[:, None] - values[None, :]) / h
    density = np.exp(-0.5 * z * z).sum(axis=1) / (values.size * h * np.sqrt(2 * np.pi))
    density = density / density.max()
    curve = DensityCurve(support=support, density=density, bandwidth=h,
                         count=int(values.size))
    curve.validate()
    return curve


# ---------------------------------------------------------------------------
# zone advantage maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Possession:
    """A maximal run of consecutive events by one team within a match."""

    match: Match
    events: tuple[EventRecord, ...]

    @property
    def team(self) -> str:
        return self.events[0].actor_team


def split_possessions(match: Match) -> list[Possession]:
    runs: list[Possession] = []
    current: list[EventRecord] = []
    for ev in match.events:
        if current and ev.actor_team != current[-1].actor_team:
            runs.append(Possession(match=match, events=tuple(current)))
            current = []
        current.append(ev)
    if current:
        runs.append(Possession(match=match, events=tuple(current)))
    return runs


def zone_of(x: float, y: float, nx: int = ZONES_X, ny: int = ZONES_Y) -> tuple[int, int]:
    ix = min(max(int(x / (PITCH_LENGTH / nx)), 0), nx - 1)
    iy = min(max(int(y / (PITCH_WIDTH / ny)), 0), ny - 1)
    return ix, iy


MODE_ON_BALL = "on_ball"
MODE_OFF_BALL = "off_ball"


def _possession_on_ball_map(
    possession: Possession, nx: int, ny: int,
    epv_added_fn: Callable[[Match, EventRecord], float],
) -> np.ndarray:
    zones = np.zeros((nx, ny))
    for ev in possession.events:
        if ev.action != Action.PASS or ev.outcome != 1:
            continue
        value = epv_added_fn(possession.match, ev)
        if math.isfinite(value) and value > 0:
            ix, iy = zone_of(ev.dest_x, ev.dest_y, nx, ny)
            zones[ix, iy] += value
    return zones


def _frame_off_ball_map(
    match: Match, frame_index: int, nx: int, ny: int, grid: GridSpec,
    breakdown_fn: Callable[[Match, int], "EpvBreakdown"],
) -> np.ndarray:
    breakdown = breakdown_fn(match, frame_index)
    gain = np.maximum(breakdown.pass_value_surface - breakdown.epv, 0.0)
    zones = np.zeros((nx, ny))
    xs = grid.x_centers()
    ys = grid.y_centers()
    izx = np.minimum((xs / (PITCH_LENGTH / nx)).astype(int), nx - 1)
    izy = np.minimum((ys / (PITCH_WIDTH / ny)).astype(int), ny - 1)
    np.add.at(zones, (izx[:, None], izy[None, :]), gain)
    return zones


def _default_epv_added(bundle: ModelBundle, grid: GridSpec):
    def fn(match: Match, ev: EventRecord) -> float:
        if ev.end_frame is None or not match.has_frame(ev.end_frame):
            return float("nan")
        return epv_added(
            match.snapshot_at(ev.frame_index),
            match.snapshot_at(ev.end_frame),
            bundle,
            grid,
        )
    return fn


def zone_advantage_maps(
    groups: Mapping[str, Sequence[Possession]],
    bundle: ModelBundle,
    mode: str = MODE_ON_BALL,
    nx: int = ZONES_X,
    ny: int = ZONES_Y,
    grid: GridSpec = DEFAULT_GRID,
    per_frame: bool = False,
    epv_added_fn: Callable[[Match, EventRecord], float] | None = None,
    breakdown_fn: Callable[[Match, int], EpvBreakdown] | None = None,
) -> dict[str, np.ndarray]:
    """Per-group zone maps reported as differences from the pooled mean.

    ``on_ball`` accumulates each possession's positive pass value-added
    into the destination zone; ``off_ball`` accumulates the positive
    cells of (pass value surface - current value) at each pass frame,
    averaged per possession unless ``per_frame``. Group maps are means
    over contributions, and the output subtracts the frequency-weighted
    mean map, so the weighted sum of the returned maps is the zero map.
    """
    if mode not in (MODE_ON_BALL, MODE_OFF_BALL):
        raise ValueError(f"mode must be on_ball|off_ball, got {mode!r}")
    if not groups or all(len(g) == 0 for g in groups.values()):
        raise ValueError("no possessions to aggregate")
    if epv_added_fn is None:
        epv_added_fn = _default_epv_added(bundle, grid)
    if breakdown_fn is None:
        breakdown_fn = lambda match, frame: compose_epv(  # noqa: E731
            match.snapshot_at(frame), bundle, grid
        )

    contributions: dict[str, list[np.ndarray]] = {}
    for name, possessions in groups.items():
        maps: list[np.ndarray] = []
        for possession in possessions:
            if mode == MODE_ON_BALL:
                maps.append(
                    _possession_on_ball_map(possession, nx, ny, epv_added_fn)
                )
                continue
            frames = [
                ev.frame_index
                for ev in possession.events
                if ev.action == Action.PASS
            ]
            frame_maps = [
                _frame_off_ball_map(
                    possession.match, f, nx, ny, grid, breakdown_fn
                )
                for f in frames
            ]
            if per_frame:
                maps.extend(frame_maps)
            elif frame_maps:
                maps.append(np.mean(frame_maps, axis=0))
        if maps:
            contributions[name] = maps

    total = sum(len(m) for m in contributions.values())
    if total == 0:
        raise ValueError("no contributions in any group")
    group_means = {n: np.mean(m, axis=0) for n, m in contributions.items()}
    pooled = (
        sum(len(contributions[n]) * group_means[n] for n in group_means) / total
    )
    return {n: group_means[n] - pooled for n in group_means}


def zone_map_to_csv(zones: np.ndarray) -> str:
    rows = ["zone_x,zone_y,value"]
    for ix in range(zones.shape[0]):
        for iy in range(zones.shape[1]):
            rows.append(f"{ix},{iy},{zones[ix, iy]:.8f}")
    return "\n".join(rows) + "\n"


# ---------------------------------------------------------------------------
# pair pass matrices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairStats:
    passer: str
    receiver: str
    minutes: float
    passes: int
    on_ball_epv_added: float    # per 90 shared minutes
    off_ball_epv_added: float   # per 90 shared minutes
    selection_pct: float        # share of passer's passes choosing receiver


def nearest_receiver(match: Match, event: EventRecord) -> str | None:
    """The intended receiver: closest possession-side teammate to the
    pass destination at the origin frame, excluding the passer."""
    snap = match.snapshot_at(event.frame_index)
    best, best_d = None, float("inf")
    for p in snap.players:
        if p.team != TEAM_POSSESSION or p.player_id == event.actor_id:
            continue
        d = float(np.hypot(p.x - event.dest_x, p.y - event.dest_y))
        if d < best_d:
            best, best_d = p.player_id, d
    return best


def shared_minutes(matches: Sequence[Match]) -> dict[tuple[str, str], float]:
    """Minutes each ordered player pair spent on the pitch together."""
    frames: dict[tuple[str, str], int] = {}
    for match in matches:
        for snap in match.snapshots:
            ids = sorted(p.player_id for p in snap.players)
            for i, a in enumerate(ids):
                for b in ids[i + 1 :]:
                    frames[(a, b)] = frames.get((a, b), 0) + 1
    factor = 1.0 / (FRAME_RATE_HZ * 60.0)
    out: dict[tuple[str, str], float] = {}
    for (a, b), n in frames.items():
        out[(a, b)] = out[(b, a)] = n * factor
    return out


def pair_pass_matrix(
    matches: Sequence[Match],
    bundle: ModelBundle,
    pairs: Iterable[tuple[str, str]] | None = None,
    grid: GridSpec = DEFAULT_GRID,
    epv_added_fn: Callable[[Match, EventRecord], float] | None = None,
    breakdown_fn: Callable[[Match, int], EpvBreakdown] | None = None,
) -> dict[tuple[str, str], PairStats]:
    """Per-90 pass chemistry for (passer, receiver) pairs.

    For every pass the receiver is the nearest teammate to the
    destination. On-ball value sums the pass's value-added; off-ball
    value sums the positive headroom of the pass-value surface at the
    receiver's cell. Both are normalized by shared minutes and scaled to
    90. Selection share divides the pair's passes by the passer's
    attempts while that receiver was on the pitch; pairs that never
    overlap are excluded.
    """
    if epv_added_fn is None:
        epv_added_fn = _default_epv_added(bundle, grid)
    if breakdown_fn is None:
        breakdown_fn = lambda match, frame: compose_epv(  # noqa: E731
            match.snapshot_at(frame), bundle, grid
        )
    minutes = shared_minutes(matches)
    wanted = set(tuple(p) for p in pairs) if pairs is not None else None

    counts: dict[tuple[str, str], int] = {}
    on_ball: dict[tuple[str, str], float] = {}
    off_ball: dict[tuple[str, str], float] = {}
    avail_attempts: dict[tuple[str, str], int] = {}

    for match in matches:
        for ev in match.events:
            if ev.action != Action.PASS:
                continue
            snap = match.snapshot_at(ev.frame_index)
            for p in snap.players:
                if p.player_id != ev.actor_id:
                    k = (ev.actor_id, p.player_id)
                    avail_attempts[k] = avail_attempts.get(k, 0) + 1
            receiver = nearest_receiver(match, ev)
            if receiver is None:
                continue
            key = (ev.actor_id, receiver)
            if wanted is not None and key not in wanted:
                continue
            if minutes.get(key, 0.0) <= 0.0:
                continue
            counts[key] = counts.get(key, 0) + 1
            value = epv_added_fn(match, ev)
            if math.isfinite(value):
                on_ball[key] = on_ball.get(key, 0.0) + value
            breakdown = breakdown_fn(match, ev.frame_index)
            rec = next(p for p in snap.players if p.player_id == receiver)
            cell = grid.cell_of(rec.x, rec.y)
            headroom = breakdown.pass_value_surface[cell] - breakdown.epv
            if headroom > 0:
                off_ball[key] = off_ball.get(key, 0.0) + float(headroom)

    out: dict[tuple[str, str], PairStats] = {}
    for key, n in counts.items():
        passer, receiver = key
        mins = minutes[key]
        scale = 90.0 / mins
        out[key] = PairStats(
            passer=passer,
            receiver=receiver,
            minutes=mins,
            passes=n,
            on_ball_epv_added=on_ball.get(key, 0.0) * scale,
            off_ball_epv_added=off_ball.get(key, 0.0) * scale,
            selection_pct=n / avail_attempts[key],
        )
    return out


def pair_matrix_to_csv(stats: Mapping[tuple[str, str], PairStats]) -> str:
    rows = [
        "passer,receiver,minutes,passes,on_ball_epv_added,"
        "off_ball_epv_added,selection_pct"
    ]
    for key in sorted(stats):
        s = stats[key]
        rows.append(
            f"{s.passer},{s.receiver},{s.minutes:.2f},{s.passes},"
            f"{s.on_ball_epv_added:.6f},{s.off_ball_epv_added:.6f},"
            f"{s.selection_pct:.4f}"
        )
    return "\n".join(rows) + "\n"
