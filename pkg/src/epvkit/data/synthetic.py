"""Synthetic match generator.

Players follow mean-reverting noisy kinematics around formation anchors
that shift with the ball; a hand-tuned logistic policy over
distance-to-goal picks pass/drive/shot actions at a configurable tempo.
Outcome probabilities depend on pass distance and local crowding, so the
generated data carries structure the surface models can actually learn.

The simulation runs in absolute coordinates (team A attacks x+, team B
x-) and is serialized through the standard raw formats, then re-parsed,
so returned snapshots/events are exactly what a round trip through the
files would produce. Everything is driven by one seeded generator:
identical seeds give byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..pitch import PITCH_LENGTH, PITCH_WIDTH
from .io import EVENT_HEADER, parse_events, parse_tracking
from .records import EventRecord, TrackingSnapshot

FRAME_RATE = 10.0
DT = 1.0 / FRAME_RATE

# Kinematics: spring pull toward anchors with velocity damping and noise.
PULL = 0.55          # 1/s^2 toward anchor
DAMP = 0.9           # 1/s velocity decay
NOISE_ACCEL = 1.1    # m/s^2 white-noise scale
PLAYER_VMAX = 7.8    # m/s, comfortably under the 12 m/s schema limit
MARGIN = 0.3         # keep positions strictly inside the pitch

# Outcome models (probabilities seen by the event sampler). Crowding is a
# Gaussian-kernel player density (sigma 4 m): at the destination for
# passes, at the carrier's own position for drives (pressure => loss).
PASS_B0, PASS_DIST, PASS_OPP, PASS_OWN = 3.6, 0.105, 1.7, 0.75
DRIVE_B0, DRIVE_OPP = 2.9, 4.2
SHOT_STEEP = 0.21    # logistic decay of scoring chance with distance
SHOT_MID = 11.0      # distance where the unscaled chance is 0.5
# Empirical mean of sigmoid((SHOT_MID - d) * SHOT_STEEP) over generated
# shot distances; converts goal_rate into a per-shot success scale.
SHOT_SHAPE_MEAN = 0.386

CROWD_SIGMA = 4.0

# 4-4-2 anchor template for a team defending x=0, expressed as
# (x, y) in meters; index 0 is the goalkeeper.
FORMATION = np.array(
    [
        (4.0, 34.0),
        (20.0, 10.0), (18.0, 25.0), (18.0, 43.0), (20.0, 58.0),
        (42.0, 8.0), (40.0, 24.0), (40.0, 44.0), (42.0, 60.0),
        (60.0, 26.0), (60.0, 42.0),
    ]
)
ADVANCE_M = 35.0     # how deep anchors push at full attacking progress
ADVANCE_MAX_X = 95.0
PROGRESS_START = 40.0  # ball depth where anchors begin advancing
PROGRESS_FULL = 88.0   # ball depth of maximum push
CENTRAL_PULL = 0.25    # attackers drift toward the goal's y at full progress
PRESS_PULL = 0.25      # defending-team shift toward the ball


@dataclass(frozen=True)
class TeamStyle:
    """Per-team behavior knobs; 1.0 everywhere is the neutral style."""

    press: float = 1.0       # marking tightness (scales PRESS_PULL)
    tempo: float = 1.0       # action-rate multiplier while in possession
    directness: float = 1.0  # forward bias when choosing pass targets

    def validate(self) -> None:
        for name in ("press", "tempo", "directness"):
            v = getattr(self, name)
            if not (0.25 <= v <= 4.0):
                raise ValueError(f"style {name}={v} outside [0.25, 4]")


@dataclass(frozen=True)
class SynthConfig:
    duration_minutes: float = 90.0
    actions_per_match: float = 1433.0
    goal_rate: float = 2.8               # expected goals per match
    pass_share: float = 0.5297
    drive_share: float = 0.4552
    shot_share: float = 0.0151
    dense_tracking: bool = False         # emit every frame vs event frames only
    home_style: TeamStyle = field(default_factory=TeamStyle)
    away_style: TeamStyle = field(default_factory=TeamStyle)

    def validate(self) -> None:
        if not (0.0 < self.goal_rate <= 10.0):
            raise ValueError(f"goal_rate must be in (0, 10], got {self.goal_rate}")
        if self.duration_minutes <= 0:
            raise ValueError("duration_minutes must be positive")
        if self.actions_per_match < 10:
            raise ValueError("actions_per_match must be at least 10")
        shares = (self.pass_share, self.drive_share, self.shot_share)
        if any(s <= 0 for s in shares) or abs(sum(shares) - 1.0) > 1e-6:
            raise ValueError(f"action shares must be positive and sum to 1, got {shares}")
        self.home_style.validate()
        self.away_style.validate()


def _sigmoid(z: float) -> float:
    return 1.0 / (1.0 + np.exp(-z))


class _MatchSim:
    """Stateful single-match simulation; see module docstring."""

    def __init__(self, match_id: str, seed: int, config: SynthConfig):
        config.validate()
        self.match_id = match_id
        self.config = config
        self.rng = np.random.default_rng(seed)

        # Rows 0..10 team A (attacks x+), rows 11..21 team B (attacks x-).
        anchors_a = FORMATION.copy()
        anchors_b = FORMATION.copy()
        anchors_b[:, 0] = PITCH_LENGTH - anchors_b[:, 0]
        self.base_anchor = np.vstack([anchors_a, anchors_b])
        self.team_of = np.array([0] * 11 + [1] * 11)  # 0 = A, 1 = B
        self.is_gk = np.zeros(22, dtype=bool)
        self.is_gk[0] = self.is_gk[11] = True
        self.player_ids = [f"A{i}" for i in range(11)] + [f"B{i}" for i in range(11)]

        jitter = self.rng.normal(0.0, 2.0, size=(22, 2))
        jitter[self.is_gk] *= 0.2
        self.pos = np.clip(
            self.base_anchor + jitter,
            [MARGIN, MARGIN],
            [PITCH_LENGTH - MARGIN, PITCH_WIDTH - MARGIN],
        )
        self.vel = np.zeros((22, 2))
        self.possession = 0           # team index with the ball
        self.carrier = 9              # striker kicks off
        self.ball = self.pos[self.carrier].copy()
        self.frame = 0

        self.tracking_lines: list[str] = []
        self.event_rows: list[str] = []
        self.n_goals = 0

        self._team_rows = (np.arange(11), np.arange(11, 22))
        self._base_depth = (
            self.base_anchor[:11, 0].copy(),
            PITCH_LENGTH - self.base_anchor[11:, 0],
        )
        self._pos_lo = np.array([MARGIN, MARGIN])
        self._pos_hi = np.array([PITCH_LENGTH - MARGIN, PITCH_WIDTH - MARGIN])
        self._cached_anchors: np.ndarray | None = None
        self._noise_buf = np.empty((0, 22, 2))
        self._noise_at = 0

        total_frames = config.duration_minutes * 60.0 * FRAME_RATE
        self.total_frames = int(total_frames)
        self.mean_gap = total_frames / config.actions_per_match
        expected_shots = config.actions_per_match * config.shot_share
        self.shot_scale = config.goal_rate / (expected_shots * SHOT_SHAPE_MEAN)

    # -- geometry helpers ---------------------------------------------------

    def _goal_of(self, team: int) -> np.ndarray:
        return np.array([PITCH_LENGTH if team == 0 else 0.0, PITCH_WIDTH / 2.0])

    def _style(self, team: int) -> TeamStyle:
        return self.config.home_style if team == 0 else self.config.away_style

    def _crowd(self, point: np.ndarray, team: int, exclude: int | None = None) -> float:
        idx = np.flatnonzero(self.team_of == team)
        if exclude is not None:
            idx = idx[idx != exclude]
        d2 = np.sum((self.pos[idx] - point) ** 2, axis=1)
        return float(np.sum(np.exp(-d2 / (2.0 * CROWD_SIGMA**2))))

    # -- kinematics ---------------------------------------------------------

    def _anchors(self) -> np.ndarray:
        anchors = self.base_anchor.copy()
        ball_depth = self.ball[0] if self.possession == 0 else PITCH_LENGTH - self.ball[0]
        progress = float(
            np.clip((ball_depth - PROGRESS_START) / (PROGRESS_FULL - PROGRESS_START), 0.0, 1.0)
        )
        for team in (0, 1):
            rows = self._team_rows[team]
            if team == self.possession:
                # Push the whole shape toward the opposing box as the ball
                # advances; deeper players push proportionally further.
                base = self.base_anchor[rows]
                depth = self._base_depth[team]
                push = ADVANCE_M * progress * (depth / depth.max())
                target_depth = np.minimum(depth + push, ADVANCE_MAX_X)
                anchors[rows, 0] = target_depth if team == 0 else PITCH_LENGTH - target_depth
                anchors[rows, 1] = base[:, 1] + CENTRAL_PULL * progress * (
                    PITCH_WIDTH / 2.0 - base[:, 1]
                )
            else:
                press = PRESS_PULL * self._style(team).press
                anchors[rows] += press * (self.ball - anchors[rows])
        # Goalkeepers stay home regardless of phase.
        anchors[self.is_gk] = self.base_anchor[self.is_gk]
        return anchors

    _ANCHOR_REFRESH = 5   # frames between anchor recomputes (0.5 s)
    _NOISE_BLOCK = 256    # frames of acceleration noise drawn per batch

    def _noise(self) -> np.ndarray:
        if self._noise_at >= len(self._noise_buf):
            self._noise_buf = self.rng.standard_normal((self._NOISE_BLOCK, 22, 2))
            self._noise_at = 0
        out = self._noise_buf[self._noise_at]
        self._noise_at += 1
        return out

    def _step(self):
        if self._cached_anchors is None or self.frame % self._ANCHOR_REFRESH == 0:
            self._cached_anchors = self._anchors()
        anchors = self._cached_anchors
        accel = PULL * (anchors - self.pos)
        accel -= DAMP * self.vel
        accel += NOISE_ACCEL * self._noise()
        self.vel += accel * DT
        speed_sq = np.einsum("ij,ij->i", self.vel, self.vel)
        over = speed_sq > PLAYER_VMAX**2
        if over.any():
            self.vel[over] *= (PLAYER_VMAX / np.sqrt(speed_sq[over]))[:, None]
        self.pos += self.vel * DT
        np.clip(self.pos, self._pos_lo, self._pos_hi, out=self.pos)
        self.ball = self.pos[self.carrier].copy()
        self.frame += 1

    # -- emission -----------------------------------------------------------

    def _emit_frame(self):
        ts = self.frame * DT
        parts = [
            self.match_id,
            str(self.frame),
            repr(round(ts, 3)),
            repr(float(self.ball[0])),
            repr(float(self.ball[1])),
        ]
        for i in range(22):
            token = ":".join(
                [
                    "P" if self.team_of[i] == self.possession else "O",
                    self.player_ids[i],
                    repr(float(self.pos[i, 0])),
                    repr(float(self.pos[i, 1])),
                    repr(float(self.vel[i, 0])),
                    repr(float(self.vel[i, 1])),
                    "1" if self.is_gk[i] else "0",
                ]
            )
            parts.append(token)
        self.tracking_lines.append(",".join(parts))

    def _norm(self, point: np.ndarray) -> tuple[float, float]:
        """Map an absolute point into possession-normalized coordinates."""
        if self.possession == 0:
            return float(point[0]), float(point[1])
        return float(PITCH_LENGTH - point[0]), float(point[1])

    def _emit_event(self, action: str, dest_abs: np.ndarray, outcome: int,
                    is_cross: bool = False, is_header: bool = False):
        ox, oy = self._norm(self.ball)
        dx, dy = self._norm(dest_abs)
        self.event_rows.append(
            ",".join(
                [
                    self.match_id,
                    str(self.frame),
                    action,
                    repr(ox),
                    repr(oy),
                    repr(dx),
                    repr(dy),
                    str(outcome),
                    "1" if is_cross else "0",
                    "1" if is_header else "0",
                    self.player_ids[self.carrier],
                    "A" if self.team_of[self.carrier] == 0 else "B",
                ]
            )
        )

    # -- action policy ------------------------------------------------------

    def _turnover(self, point: np.ndarray):
        self.possession = 1 - self.possession
        self._cached_anchors = None
        opp_rows = self._team_rows[self.possession]
        dists = np.linalg.norm(self.pos[opp_rows] - point, axis=1)
        self.carrier = int(opp_rows[np.argmin(dists)])
        self.ball = self.pos[self.carrier].copy()

    def _choose_action(self) -> str:
        cfg = self.config
        goal = self._goal_of(self.possession)
        dist_goal = float(np.linalg.norm(self.ball - goal))
        # Shots are gated by a logistic in goal distance whose scale is
        # tuned so the overall mix stays near the configured shares.
        shot_p = 3.3 * cfg.shot_share * _sigmoid((24.0 - dist_goal) / 5.0)
        shot_p = min(shot_p, 0.5)
        rest = 1.0 - shot_p
        pass_p = rest * cfg.pass_share / (cfg.pass_share + cfg.drive_share)
        u = self.rng.random()
        if u < shot_p:
            return "shot"
        if u < shot_p + pass_p:
            return "pass"
        return "drive"

    def _do_pass(self):
        team = self.possession
        mates = np.flatnonzero((self.team_of == team))
        mates = mates[mates != self.carrier]
        towards_goal = self.pos[mates, 0] - self.ball[0]
        if team == 1:
            towards_goal = -towards_goal
        direct = self._style(team).directness
        weights = np.exp(0.05 * direct * towards_goal)
        dists = np.linalg.norm(self.pos[mates] - self.ball, axis=1)
        weights *= np.exp(-dists / 30.0)  # prefer reachable targets
        weights /= weights.sum()
        target = int(self.rng.choice(mates, p=weights))
        dest = self.pos[target] + self.rng.normal(0.0, 1.2, size=2)
        dest = np.clip(dest, [MARGIN, MARGIN],
                       [PITCH_LENGTH - MARGIN, PITCH_WIDTH - MARGIN])
        pass_dist = float(np.linalg.norm(dest - self.ball))
        opp_crowd = self._crowd(dest, 1 - team)
        own_crowd = self._crowd(dest, team, exclude=self.carrier)
        p = _sigmoid(
            PASS_B0 - PASS_DIST * pass_dist - PASS_OPP * opp_crowd + PASS_OWN * own_crowd
        )
        outcome = int(self.rng.random() < p)
        is_cross = pass_dist > 20.0 and abs(dest[0] - self._goal_of(team)[0]) < 25.0
        self._emit_event("pass", dest, outcome, is_cross=is_cross)
        if outcome:
            self.pos[target] = dest
            self.carrier = target
            self.ball = dest.copy()
        else:
            self._turnover(dest)

    def _steer_for_drive(self):
        """Clamp the carrier's velocity so pos + v x 1 s stays on the pitch.

        Must run before the action frame is emitted: the recorded frame's
        velocity is what downstream parsing uses to recompute the
        destination.
        """
        dest = self.pos[self.carrier] + self.vel[self.carrier]
        lo = np.array([MARGIN, MARGIN])
        hi = np.array([PITCH_LENGTH - MARGIN, PITCH_WIDTH - MARGIN])
        if np.any(dest < lo) or np.any(dest > hi):
            self.vel[self.carrier] = np.clip(dest, lo, hi) - self.pos[self.carrier]

    def _do_drive(self):
        team = self.possession
        dest = self.pos[self.carrier] + self.vel[self.carrier]  # position + velocity x 1 s
        opp_crowd = self._crowd(self.pos[self.carrier], 1 - team)
        p = _sigmoid(DRIVE_B0 - DRIVE_OPP * opp_crowd)
        outcome = int(self.rng.random() < p)
        self._emit_event("drive", dest, outcome)
        if not outcome:
            self._turnover(dest)

    def _do_shot(self):
        team = self.possession
        goal = self._goal_of(team)
        dist = float(np.linalg.norm(self.ball - goal))
        p = self.shot_scale * _sigmoid((SHOT_MID - dist) * SHOT_STEEP)
        p = float(np.clip(p, 0.005, 0.92))
        outcome = int(self.rng.random() < p)
        is_header = bool(self.rng.random() < 0.12)
        self._emit_event("shot", goal, outcome, is_header=is_header)
        if outcome:
            self.n_goals += 1
            self.possession = 1 - self.possession
            self._cached_anchors = None
            mid = np.array([PITCH_LENGTH / 2.0, PITCH_WIDTH / 2.0])
            rows = self._team_rows[self.possession]
            self.carrier = int(rows[np.argmin(np.linalg.norm(self.pos[rows] - mid, axis=1))])
            self.pos[self.carrier] = mid + self.rng.normal(0.0, 0.5, size=2)
            self.ball = self.pos[self.carrier].copy()
        else:
            gk = 0 if team == 1 else 11
            self.possession = 1 - self.possession
            self._cached_anchors = None
            self.carrier = gk
            self.ball = self.pos[gk].copy()

    # -- main loop ----------------------------------------------------------

    def run(self) -> tuple[str, str]:
        tempo = self._style(self.possession).tempo
        next_action = 1 + int(self.rng.exponential(self.mean_gap / tempo))
        while self.frame < self.total_frames:
            self._step()
            acting = self.frame >= next_action
            action = ""
            if acting:
                action = self._choose_action()
                if action == "drive":
                    self._steer_for_drive()
            if self.config.dense_tracking or acting:
                self._emit_frame()
            if acting:
                if action == "pass":
                    self._do_pass()
                elif action == "drive":
                    self._do_drive()
                else:
                    self._do_shot()
                tempo = self._style(self.possession).tempo
                gap = 1 + int(self.rng.exponential(self.mean_gap / tempo))
                next_action = self.frame + gap
        tracking_text = "\n".join(self.tracking_lines) + "\n"
        events_text = EVENT_HEADER + "\n" + "\n".join(self.event_rows) + "\n"
        return tracking_text, events_text


def synthesize_match_text(
    match_id: str, seed: int, config: SynthConfig | None = None
) -> tuple[str, str]:
    """Generate one match as raw (tracking_text, events_text)."""
    return _MatchSim(match_id, seed, config or SynthConfig()).run()


def synthesize_match(
    match_id: str, seed: int, config: SynthConfig | None = None
) -> tuple[list[TrackingSnapshot], list[EventRecord]]:
    """Generate one match and return parsed, normalized records.

    Output is exactly what parsing the generated files yields, so file
    round trips are consistent by construction.
    """
    tracking_text, events_text = synthesize_match_text(match_id, seed, config)
    snapshots = parse_tracking(tracking_text)
    events = parse_events(events_text, snapshots)
    return snapshots, events
