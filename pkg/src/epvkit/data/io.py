"""Parsing and serialization for tracking and event files.

Tracking files are line-delimited, one frame per line::

    match_id,frame,ts,ball_x,ball_y,[team:id:x:y:vx:vy:gk]x22

with team tokens ``P`` (possession) / ``O`` (opponent), UTF-8, dot
decimal. Raw frames may face either direction; on parse, frames are
mirrored so the possession team always attacks left-to-right (decided by
which half the possession goalkeeper occupies). Serialization undoes the
mirror, so parse(serialize(x)) == x exactly, including the direction
flag.

Event files are CSV with header::

    match_id,frame,action,origin_x,origin_y,dest_x,dest_y,outcome,is_cross,is_header,actor_id,actor_team

Event coordinates use the same normalized orientation as the frame they
join to. Drive destinations are recomputed from the actor's tracked
velocity (position + velocity x 1 s) and shot destinations pinned to the
goal-line center, so annotation noise in those columns cannot leak
downstream.
"""

from __future__ import annotations

import io
from collections import defaultdict
from dataclasses import replace
from typing import Iterable, TextIO

from ..pitch import GOAL_CENTER, PITCH_LENGTH
from .records import (
    TEAM_OPPONENT,
    TEAM_POSSESSION,
    Action,
    EventRecord,
    Match,
    PlayerState,
    SchemaError,
    TrackingSnapshot,
)

TEAM_TOKENS = {"P": TEAM_POSSESSION, "O": TEAM_OPPONENT}
TOKEN_OF_TEAM = {v: k for k, v in TEAM_TOKENS.items()}

EVENT_HEADER = (
    "match_id,frame,action,origin_x,origin_y,dest_x,dest_y,"
    "outcome,is_cross,is_header,actor_id,actor_team"
)

HALFWAY_X = PITCH_LENGTH / 2.0


class ParseError(ValueError):
    """Malformed input line; carries the 1-based line number."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


def _fmt(value: float) -> str:
    """Shortest decimal that round-trips the float exactly."""
    return repr(float(value))


# ---------------------------------------------------------------------------
# tracking
# ---------------------------------------------------------------------------

def _parse_player(token: str, line_number: int) -> PlayerState:
    parts = token.split(":")
    if len(parts) != 7:
        raise ParseError(line_number, f"player token {token!r} has {len(parts)} fields, want 7")
    team_tok, pid, x, y, vx, vy, gk = parts
    if team_tok not in TEAM_TOKENS:
        raise ParseError(line_number, f"unknown team token {team_tok!r}")
    if gk not in ("0", "1"):
        raise ParseError(line_number, f"goalkeeper flag must be 0/1, got {gk!r}")
    try:
        return PlayerState(
            player_id=pid,
            team=TEAM_TOKENS[team_tok],
            x=float(x),
            y=float(y),
            vx=float(vx),
            vy=float(vy),
            is_goalkeeper=gk == "1",
        )
    except ValueError as exc:
        raise ParseError(line_number, f"bad numeric field in {token!r}: {exc}") from None


def parse_tracking(stream: TextIO | str) -> list[TrackingSnapshot]:
    """Parse a tracking file into normalized snapshots.

    Snapshots come back ordered by (match_id, frame_index) with the
    possession team attacking left-to-right. Raises ParseError with a
    line number for malformed lines, SchemaError for invariant breaks.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    snapshots: list[TrackingSnapshot] = []
    for line_number, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split(",")
        if len(fields) != 5 + 22:
            raise ParseError(
                line_number, f"expected {5 + 22} comma fields, got {len(fields)}"
            )
        match_id, frame_s, ts_s, bx_s, by_s = fields[:5]
        try:
            frame = int(frame_s)
            ts = float(ts_s)
            ball_x = float(bx_s)
            ball_y = float(by_s)
        except ValueError as exc:
            raise ParseError(line_number, f"bad frame header field: {exc}") from None
        players = tuple(_parse_player(tok, line_number) for tok in fields[5:])
        snap = TrackingSnapshot(
            match_id=match_id,
            frame_index=frame,
            timestamp=ts,
            players=players,
            ball_x=ball_x,
            ball_y=ball_y,
            attacking_direction=1,
        )
        try:
            snap.validate()
        except SchemaError as exc:
            raise SchemaError(f"line {line_number}: {exc}") from None
        # Normalize: possession goalkeeper in the right half means the raw
        # frame attacks right-to-left, so mirror it.
        if snap.goalkeeper(TEAM_POSSESSION).x > HALFWAY_X:
            snap = snap.mirrored()
        snapshots.append(snap)

    snapshots.sort(key=lambda s: (s.match_id, s.frame_index))
    last: dict[str, int] = {}
    for s in snapshots:
        if s.match_id in last and s.frame_index <= last[s.match_id]:
            raise SchemaError(
                f"match {s.match_id}: frame_index {s.frame_index} not strictly increasing"
            )
        last[s.match_id] = s.frame_index
    return snapshots


def serialize_tracking(snapshots: Iterable[TrackingSnapshot]) -> str:
    """Inverse of parse_tracking; restores the raw (pre-mirror) orientation."""
    lines = []
    for snap in snapshots:
        raw = snap.mirrored() if snap.attacking_direction == -1 else snap
        head = [
            snap.match_id,
            str(snap.frame_index),
            _fmt(snap.timestamp),
            _fmt(raw.ball_x),
            _fmt(raw.ball_y),
        ]
        toks = [
            ":".join(
                [
                    TOKEN_OF_TEAM[p.team],
                    p.player_id,
                    _fmt(p.x),
                    _fmt(p.y),
                    _fmt(p.vx),
                    _fmt(p.vy),
                    "1" if p.is_goalkeeper else "0",
                ]
            )
            for p in raw.players
        ]
        lines.append(",".join(head + toks))
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# events
# ---------------------------------------------------------------------------

def _parse_flag(value: str, name: str, line_number: int) -> int:
    if value not in ("0", "1"):
        raise ParseError(line_number, f"{name} must be 0/1, got {value!r}")
    return int(value)


def parse_events(
    stream: TextIO | str,
    tracking: Iterable[TrackingSnapshot],
) -> list[EventRecord]:
    """Parse an event CSV and join each row to its tracking frame.

    Drive destinations are recomputed as actor position + velocity x 1 s;
    shot destinations are pinned to the goal-line center. Raises
    ParseError for malformed rows, unknown action codes, or frames
    missing from the tracking data.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    frames: dict[tuple[str, int], TrackingSnapshot] = {
        (s.match_id, s.frame_index): s for s in tracking
    }
    events: list[EventRecord] = []
    header_seen = False
    for line_number, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        if not header_seen:
            if line != EVENT_HEADER:
                raise ParseError(line_number, f"bad header (want {EVENT_HEADER!r})")
            header_seen = True
            continue
        cols = line.split(",")
        if len(cols) != 12:
            raise ParseError(line_number, f"expected 12 columns, got {len(cols)}")
        (match_id, frame_s, action_s, ox, oy, dx, dy,
         outcome_s, cross_s, header_s, actor_id, actor_team) = cols
        try:
            action = Action(action_s)
        except ValueError:
            raise ParseError(line_number, f"unknown action code {action_s!r}") from None
        try:
            frame = int(frame_s)
            origin_x, origin_y = float(ox), float(oy)
            dest_x, dest_y = float(dx), float(dy)
        except ValueError as exc:
            raise ParseError(line_number, f"bad numeric field: {exc}") from None
        outcome = _parse_flag(outcome_s, "outcome", line_number)
        is_cross = bool(_parse_flag(cross_s, "is_cross", line_number))
        is_header = bool(_parse_flag(header_s, "is_header", line_number))

        key = (match_id, frame)
        if key not in frames:
            raise ParseError(
                line_number, f"event references missing frame {frame} of match {match_id}"
            )
        snap = frames[key]

        if action is Action.SHOT:
            dest_x, dest_y = GOAL_CENTER
        elif action is Action.DRIVE:
            actor = next((p for p in snap.players if p.player_id == actor_id), None)
            if actor is None:
                raise ParseError(
                    line_number, f"actor {actor_id!r} not on pitch at frame {frame}"
                )
            dest_x = actor.x + actor.vx * 1.0
            dest_y = actor.y + actor.vy * 1.0

        events.append(
            EventRecord(
                match_id=match_id,
                frame_index=frame,
                action=action,
                origin_x=origin_x,
                origin_y=origin_y,
                dest_x=dest_x,
                dest_y=dest_y,
                outcome=outcome,
                is_cross=is_cross,
                is_header=is_header,
                actor_id=actor_id,
                actor_team=actor_team,
            )
        )
    if not header_seen:
        raise ParseError(1, "empty event file (missing header)")
    return events


def serialize_events(events: Iterable[EventRecord]) -> str:
    rows = [EVENT_HEADER]
    for ev in events:
        rows.append(
            ",".join(
                [
                    ev.match_id,
                    str(ev.frame_index),
                    ev.action.value,
                    _fmt(ev.origin_x),
                    _fmt(ev.origin_y),
                    _fmt(ev.dest_x),
                    _fmt(ev.dest_y),
                    str(ev.outcome),
                    "1" if ev.is_cross else "0",
                    "1" if ev.is_header else "0",
                    ev.actor_id,
                    ev.actor_team,
                ]
            )
        )
    return "\n".join(rows) + "\n"


# ---------------------------------------------------------------------------
# match assembly
# ---------------------------------------------------------------------------

def build_matches(
    snapshots: Iterable[TrackingSnapshot],
    events: Iterable[EventRecord],
) -> dict[str, Match]:
    """Group snapshots and events into Match objects.

    Fills each event's end_frame with the next event's frame in the same
    match (the moment the action has resolved); the last event ends at
    the match's final frame.
    """
    snaps_by_match: dict[str, list[TrackingSnapshot]] = defaultdict(list)
    for s in snapshots:
        snaps_by_match[s.match_id].append(s)
    events_by_match: dict[str, list[EventRecord]] = defaultdict(list)
    for e in events:
        events_by_match[e.match_id].append(e)

    matches: dict[str, Match] = {}
    for match_id, snaps in snaps_by_match.items():
        snaps.sort(key=lambda s: s.frame_index)
        evs = sorted(events_by_match.get(match_id, []), key=lambda e: e.frame_index)
        last_frame = snaps[-1].frame_index
        resolved = []
        for i, ev in enumerate(evs):
            end = evs[i + 1].frame_index if i + 1 < len(evs) else last_frame
            resolved.append(replace(ev, end_frame=end))
        matches[match_id] = Match(match_id=match_id, snapshots=snaps, events=resolved)
    return matches
