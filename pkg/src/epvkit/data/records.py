"""Core tracking and event record types.

Snapshots are possession-relative: after normalization the team with the
ball is labeled ``possession`` and attacks left to right. Player ids are
stable across frames, which is how possession changes are detected (the
``possession`` label migrates between the two id sets on turnovers).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from ..pitch import MAX_SPEED, PITCH_LENGTH, PITCH_WIDTH, POSITION_MARGIN

TEAM_POSSESSION = "possession"
TEAM_OPPONENT = "opponent"


class Action(str, Enum):
    PASS = "pass"
    DRIVE = "drive"
    SHOT = "shot"


class SchemaError(ValueError):
    """Raised when a record violates a structural invariant."""


@dataclass(frozen=True)
class PlayerState:
    player_id: str
    team: str  # TEAM_POSSESSION or TEAM_OPPONENT
    x: float
    y: float
    vx: float
    vy: float
    is_goalkeeper: bool = False

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def velocity(self) -> np.ndarray:
        return np.array([self.vx, self.vy])

    @property
    def speed(self) -> float:
        return float(np.hypot(self.vx, self.vy))

    def validate(self) -> None:
        if self.team not in (TEAM_POSSESSION, TEAM_OPPONENT):
            raise SchemaError(f"unknown team label {self.team!r}")
        if not (-POSITION_MARGIN <= self.x <= PITCH_LENGTH + POSITION_MARGIN):
            raise SchemaError(f"player {self.player_id} x={self.x} out of bounds")
        if not (-POSITION_MARGIN <= self.y <= PITCH_WIDTH + POSITION_MARGIN):
            raise SchemaError(f"player {self.player_id} y={self.y} out of bounds")
        if self.speed > MAX_SPEED + 1e-9:
            raise SchemaError(
                f"player {self.player_id} speed {self.speed:.2f} exceeds {MAX_SPEED} m/s"
            )


@dataclass(frozen=True)
class TrackingSnapshot:
    """One 10 Hz frame: 22 players plus the ball, possession attacking x+."""

    match_id: str
    frame_index: int
    timestamp: float
    players: tuple[PlayerState, ...]
    ball_x: float
    ball_y: float
    # +1 if the raw record already attacked left-to-right, -1 if it was mirrored.
    attacking_direction: int = 1

    def validate(self) -> None:
        if len(self.players) != 22:
            raise SchemaError(
                f"frame {self.frame_index}: expected 22 players, got {len(self.players)}"
            )
        for p in self.players:
            p.validate()
        for team in (TEAM_POSSESSION, TEAM_OPPONENT):
            gks = [p for p in self.players if p.team == team and p.is_goalkeeper]
            if len(gks) != 1:
                raise SchemaError(
                    f"frame {self.frame_index}: team {team!r} has {len(gks)} goalkeepers"
                )

    @property
    def ball(self) -> np.ndarray:
        return np.array([self.ball_x, self.ball_y])

    def team_players(self, team: str) -> list[PlayerState]:
        return [p for p in self.players if p.team == team]

    def possession_ids(self) -> frozenset[str]:
        return frozenset(p.player_id for p in self.players if p.team == TEAM_POSSESSION)

    def goalkeeper(self, team: str) -> PlayerState:
        for p in self.players:
            if p.team == team and p.is_goalkeeper:
                return p
        raise SchemaError(f"frame {self.frame_index}: no goalkeeper for {team!r}")

    def ball_carrier(self) -> PlayerState:
        """Possession player closest to the ball."""
        holders = self.team_players(TEAM_POSSESSION)
        dists = [np.hypot(p.x - self.ball_x, p.y - self.ball_y) for p in holders]
        return holders[int(np.argmin(dists))]

    def mirrored(self) -> "TrackingSnapshot":
        """Reflect the frame about the halfway line (x -> 105 - x, vx -> -vx)."""
        players = tuple(
            replace(p, x=PITCH_LENGTH - p.x, vx=-p.vx) for p in self.players
        )
        return replace(
            self,
            players=players,
            ball_x=PITCH_LENGTH - self.ball_x,
            attacking_direction=-self.attacking_direction,
        )


@dataclass(frozen=True)
class EventRecord:
    """An annotated on-ball action joined to its tracking frame.

    ``actor_team`` is an absolute team id (stable across possession
    changes); reward labeling compares it against the scoring team.
    ``end_frame`` is the frame at which the action resolves, derived as
    the next event's frame within the match.
    """

    match_id: str
    frame_index: int
    action: Action
    origin_x: float
    origin_y: float
    dest_x: float
    dest_y: float
    outcome: int  # 1 = success, 0 = miss
    actor_id: str
    actor_team: str
    is_cross: bool = False
    is_header: bool = False
    reward: int = 0  # G in {-1, 0, +1}, assigned by reward labeling
    end_frame: int | None = None

    @property
    def origin(self) -> np.ndarray:
        return np.array([self.origin_x, self.origin_y])

    @property
    def destination(self) -> np.ndarray:
        return np.array([self.dest_x, self.dest_y])

    def validate(self) -> None:
        if self.outcome not in (0, 1):
            raise SchemaError(f"event outcome must be 0/1, got {self.outcome}")
        if self.reward not in (-1, 0, 1):
            raise SchemaError(f"event reward must be in {{-1,0,1}}, got {self.reward}")


@dataclass(frozen=True)
class GoalRecord:
    match_id: str
    frame_index: int
    timestamp: float
    team: str  # absolute team id of the scorer


@dataclass(frozen=True)
class DatasetSplit:
    train: frozenset[str]
    validation: frozenset[str]
    test: frozenset[str]
    seed: int = 0

    def validate(self) -> None:
        parts = [self.train, self.validation, self.test]
        total = sum(len(p) for p in parts)
        union = self.train | self.validation | self.test
        if len(union) != total:
            raise SchemaError("dataset split partitions overlap")

    def all_matches(self) -> frozenset[str]:
        return self.train | self.validation | self.test


@dataclass
class Match:
    """A match's normalized snapshots and events, indexed by frame."""

    match_id: str
    snapshots: list[TrackingSnapshot]
    events: list[EventRecord]
    _by_frame: dict[int, TrackingSnapshot] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._by_frame:
            self._by_frame = {s.frame_index: s for s in self.snapshots}

    def snapshot_at(self, frame_index: int) -> TrackingSnapshot:
        try:
            return self._by_frame[frame_index]
        except KeyError:
            raise KeyError(
                f"match {self.match_id}: no snapshot for frame {frame_index}"
            ) from None

    def has_frame(self, frame_index: int) -> bool:
        return frame_index in self._by_frame

    @property
    def frame_range(self) -> tuple[int, int]:
        return self.snapshots[0].frame_index, self.snapshots[-1].frame_index
