"""Reward labeling, goal extraction, and match-level dataset splits.

Every on-ball action is labeled against the *next* goal in its match: +1
if the acting team scores within the vanishing window, -1 if the other
team does, 0 if no goal follows soon enough. The scoring shot itself
falls inside its own window, so it always carries +1.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .records import Action, DatasetSplit, EventRecord, GoalRecord

DEFAULT_EPSILON_S = 15.0
FRAME_RATE_HZ = 10.0


def default_event_time(event: EventRecord) -> float:
    return event.frame_index / FRAME_RATE_HZ


def goals_from_events(
    events: Iterable[EventRecord],
    event_time: Callable[[EventRecord], float] = default_event_time,
) -> list[GoalRecord]:
    """Every successful shot is a goal, credited to the shooter's team."""
    goals = [
        GoalRecord(
            match_id=e.match_id,
            frame_index=e.frame_index,
            timestamp=event_time(e),
            team=e.actor_team,
        )
        for e in events
        if e.action is Action.SHOT and e.outcome == 1
    ]
    goals.sort(key=lambda g: (g.match_id, g.frame_index))
    return goals


def segment_and_label(
    events: Sequence[EventRecord],
    goals: Sequence[GoalRecord],
    epsilon: float = DEFAULT_EPSILON_S,
    event_time: Callable[[EventRecord], float] = default_event_time,
) -> list[EventRecord]:
    """Assign each event a reward in {-1, 0, +1}.

    An event within ``epsilon`` seconds before (or at) its match's next
    goal gets +1 when taken by the scoring team, -1 otherwise; everything
    farther out gets 0. Total and idempotent: every event gets exactly
    one label, and relabeling changes nothing.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    goals_by_match: dict[str, list[GoalRecord]] = {}
    for g in sorted(goals, key=lambda g: (g.match_id, g.frame_index)):
        goals_by_match.setdefault(g.match_id, []).append(g)

    labeled = []
    for ev in events:
        t = event_time(ev)
        reward = 0
        for g in goals_by_match.get(ev.match_id, []):
            if g.frame_index < ev.frame_index:
                continue
            if g.timestamp - t <= epsilon:
                reward = 1 if ev.actor_team == g.team else -1
            break  # only the next goal matters
        labeled.append(replace(ev, reward=reward))
    return labeled


def split_dataset(
    match_ids: Sequence[str],
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2),
    seed: int = 0,
) -> DatasetSplit:
    """Partition match ids into train/validation/test sets.

    Validation and test sizes round their quotas to the nearest integer
    (half up); train absorbs the slack, so the three sizes always sum to
    the match count. Splitting is at match granularity only.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    if any(r < 0 for r in ratios):
        raise ValueError(f"ratios must be non-negative, got {ratios}")
    ids = list(match_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate match ids")
    n = len(ids)
    n_partitions = sum(1 for r in ratios if r > 0)
    if n < n_partitions:
        raise ValueError(f"{n} matches cannot fill {n_partitions} partitions")

    n_val = int(np.floor(n * ratios[1] + 0.5))
    n_test = int(np.floor(n * ratios[2] + 0.5))
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 0:
        raise ValueError(f"ratios {ratios} produce a negative partition for n={n}")

    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    shuffled = [ids[i] for i in order]
    split = DatasetSplit(
        train=frozenset(shuffled[:n_train]),
        validation=frozenset(shuffled[n_train : n_train + n_val]),
        test=frozenset(shuffled[n_train + n_val :]),
        seed=seed,
    )
    split.validate()
    return split


def shuffle_events(
    events: Sequence[EventRecord], seed: int = 0
) -> list[EventRecord]:
    """Deterministically shuffle events (training order must not follow match order)."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(events))
    return [events[i] for i in order]


def events_in_split(
    events: Iterable[EventRecord], match_ids: frozenset[str]
) -> list[EventRecord]:
    return [e for e in events if e.match_id in match_ids]
