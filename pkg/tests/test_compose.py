"""Tests for frame-value composition, what-if probes, and control surfaces."""

import dataclasses
import json

import numpy as np
import pytest

from epvkit.compose import (
    EpvBreakdown,
    best_pass_option,
    compose_epv,
    epv_added,
    pass_value_surface,
    pitch_control_surface,
    possession_changed,
    whatif_pass,
)
from epvkit.data.records import TEAM_OPPONENT, TEAM_POSSESSION
from epvkit.features.influence import pitch_control_grid
from epvkit.pitch import DEFAULT_GRID

from builders import make_snapshot, random_snapshot
from oracles import (
    expected_pass_value_oracle,
    frame_value_oracle,
    pass_value_oracle,
)


def _flip_teams(snapshot):
    """The same positions with possession handed to the other eleven."""
    swap = {TEAM_POSSESSION: TEAM_OPPONENT, TEAM_OPPONENT: TEAM_POSSESSION}
    players = tuple(
        dataclasses.replace(p, team=swap[p.team]) for p in snapshot.players
    )
    flipped = dataclasses.replace(snapshot, players=players)
    flipped.validate()
    return flipped


class TestPassValueSurface:
    def test_hand_mixture(self):
        out = pass_value_surface([[1.0]], [[-1.0]], [[0.75]])
        assert out.shape == (1, 1)
        assert abs(out[0, 0] - 0.5) < 1e-12

    def test_matches_oracle(self, rng):
        v_s = rng.uniform(-1, 1, size=(8, 16))
        v_m = rng.uniform(-1, 1, size=(8, 16))
        p = rng.uniform(0, 1, size=(8, 16))
        out = pass_value_surface(v_s, v_m, p)
        assert np.max(np.abs(out - pass_value_oracle(v_s, v_m, p))) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="one grid shape"):
            pass_value_surface(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 3)))

    def test_probability_range_enforced(self):
        bad = np.full((2, 2), 1.5)
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            pass_value_surface(np.zeros((2, 2)), np.zeros((2, 2)), bad)


class TestComposeEpv:
    def test_breakdown_shapes_and_ranges(self, small_bundle, small_grid):
        b = compose_epv(make_snapshot(), small_bundle, grid=small_grid)
        shape = (small_grid.width, small_grid.height)
        for name, surf in b.surfaces().items():
            assert surf.shape == shape, name
        assert -1.0 <= b.epv <= 1.0
        assert all(p >= 0 for p in b.action_probs)
        assert abs(sum(b.action_probs) - 1.0) < 1e-9
        assert 0.0 <= b.drive_success_prob <= 1.0
        assert 0.0 <= b.shot_xg <= 1.0
        assert -1.0 <= b.drive_value_success <= 1.0
        assert np.all((b.pass_success_surface >= 0) & (b.pass_success_surface <= 1))

    def test_pass_value_matches_cellwise_oracle(self, small_bundle, small_grid):
        b = compose_epv(make_snapshot(), small_bundle, grid=small_grid)
        expected = expected_pass_value_oracle(
            b.selection_surface,
            b.pass_value_success_surface,
            b.pass_value_miss_surface,
            b.pass_success_surface,
        )
        assert abs(b.pass_value - expected) < 1e-9
        cellwise = pass_value_oracle(
            b.pass_value_success_surface,
            b.pass_value_miss_surface,
            b.pass_success_surface,
        )
        assert np.max(np.abs(b.pass_value_surface - cellwise)) < 1e-9

    def test_epv_is_action_probability_mixture(self, small_bundle, small_grid):
        b = compose_epv(make_snapshot(), small_bundle, grid=small_grid)
        expected = frame_value_oracle(
            b.action_probs, b.pass_value, b.drive_value, b.shot_value
        )
        assert abs(b.epv - expected) < 1e-12
        drive_mix = (
            b.drive_value_success * b.drive_success_prob
            + b.drive_value_miss * (1.0 - b.drive_success_prob)
        )
        assert abs(b.drive_value - drive_mix) < 1e-12

    def test_composition_is_deterministic(self, small_bundle, small_grid):
        a = compose_epv(make_snapshot(), small_bundle, grid=small_grid)
        b = compose_epv(make_snapshot(), small_bundle, grid=small_grid)
        assert a.epv == b.epv
        assert np.array_equal(a.pass_value_surface, b.pass_value_surface)

    def test_fuzzed_frames_stay_normalized(self, small_bundle, small_grid, rng):
        for k in range(50):
            snap = random_snapshot(rng, frame_index=k)
            b = compose_epv(snap, small_bundle, grid=small_grid)
            assert abs(float(b.selection_surface.sum()) - 1.0) < 1e-5
            assert abs(sum(b.action_probs) - 1.0) < 1e-9
            assert -1.0 <= b.epv <= 1.0
            assert np.all((b.pass_success_surface >= 0) & (b.pass_success_surface <= 1))
            assert np.all(np.abs(b.pass_value_surface) <= 1.0 + 1e-6)

    def test_full_size_grid(self, random_bundle):
        b = compose_epv(make_snapshot(), random_bundle)
        assert b.selection_surface.shape == (DEFAULT_GRID.width, DEFAULT_GRID.height)
        assert -1.0 <= b.epv <= 1.0

    def test_validate_rejects_corrupted_breakdown(self, small_bundle, small_grid):
        b = compose_epv(make_snapshot(), small_bundle, grid=small_grid)
        with pytest.raises(ValueError, match="mixture identity"):
            dataclasses.replace(b, epv=b.epv + 0.01).validate()
        with pytest.raises(ValueError, match="sum to"):
            dataclasses.replace(b, action_probs=(0.5, 0.5, 0.5)).validate()

    def test_json_payload_is_scalars_only(self, small_bundle, small_grid):
        b = compose_epv(make_snapshot(), small_bundle, grid=small_grid)
        payload = b.to_json_dict()
        text = json.dumps(payload)  # must not choke on arrays
        parsed = json.loads(text)
        assert parsed["epv"] == b.epv
        assert parsed["action_probs"] == {
            "pass": b.action_probs[0],
            "drive": b.action_probs[1],
            "shot": b.action_probs[2],
        }
        assert parsed["values"]["drive"] == b.drive_value
        assert parsed["shot_xg"] == b.shot_xg
        assert "pass_success" not in parsed

    def test_surfaces_dict_aliases_fields(self, small_bundle, small_grid):
        b = compose_epv(make_snapshot(), small_bundle, grid=small_grid)
        surfaces = b.surfaces()
        assert surfaces["selection"] is b.selection_surface
        assert surfaces["pass_value"] is b.pass_value_surface
        assert set(surfaces) == {
            "pass_success",
            "selection",
            "pass_value_success",
            "pass_value_miss",
            "pass_value",
        }


class TestEpvAdded:
    def test_possession_changed_detection(self):
        snap = make_snapshot()
        assert not possession_changed(snap, make_snapshot(ball=(70.0, 30.0)))
        assert possession_changed(snap, _flip_teams(snap))

    def test_same_team_difference(self, small_bundle, small_grid):
        start = make_snapshot()
        end = make_snapshot(ball=(80.0, 34.0), frame_index=10)
        delta = epv_added(start, end, small_bundle, grid=small_grid)
        expected = (
            compose_epv(end, small_bundle, grid=small_grid).epv
            - compose_epv(start, small_bundle, grid=small_grid).epv
        )
        assert abs(delta - expected) < 1e-12

    def test_turnover_flips_end_value(self, small_bundle, small_grid):
        start = make_snapshot()
        end = _flip_teams(make_snapshot(ball=(40.0, 20.0), frame_index=10))
        delta = epv_added(start, end, small_bundle, grid=small_grid)
        expected = (
            -compose_epv(end, small_bundle, grid=small_grid).epv
            - compose_epv(start, small_bundle, grid=small_grid).epv
        )
        assert abs(delta - expected) < 1e-12


class TestPassProbes:
    def test_best_pass_option_finds_peak(self, small_bundle, small_grid):
        b = compose_epv(make_snapshot(), small_bundle, grid=small_grid)
        surf = np.zeros_like(b.pass_value_surface)
        surf[3, 9] = 0.7
        surf[12, 2] = 0.4
        crafted = dataclasses.replace(b, pass_value_surface=surf)
        cell, value = best_pass_option(crafted)
        assert cell == (3, 9)
        assert value == 0.7

    def test_best_pass_option_tie_breaks_row_major(self, small_bundle, small_grid):
        b = compose_epv(make_snapshot(), small_bundle, grid=small_grid)
        surf = np.zeros_like(b.pass_value_surface)
        surf[1, 2] = 0.5
        surf[5, 3] = 0.5
        cell, _ = best_pass_option(dataclasses.replace(b, pass_value_surface=surf))
        assert cell == (1, 2)

    def test_whatif_reads_all_surfaces_at_cell(self, small_bundle, small_grid):
        b = compose_epv(make_snapshot(), small_bundle, grid=small_grid)
        probe = whatif_pass(b, (4, 7))
        assert probe["cell"] == [4, 7]
        assert probe["success_prob"] == float(b.pass_success_surface[4, 7])
        assert probe["value_if_success"] == float(b.pass_value_success_surface[4, 7])
        assert probe["value_if_miss"] == float(b.pass_value_miss_surface[4, 7])
        expected_delta = float(b.pass_value_surface[4, 7] - b.epv)
        assert probe["epv_added_if_chosen"] == expected_delta

    def test_whatif_rejects_out_of_bounds(self, small_bundle, small_grid):
        b = compose_epv(make_snapshot(), small_bundle, grid=small_grid)
        with pytest.raises(IndexError, match="outside surface"):
            whatif_pass(b, (small_grid.width, 0))
        with pytest.raises(IndexError, match="outside surface"):
            whatif_pass(b, (0, -1))


class TestPitchControlSurface:
    def test_matches_direct_grid_evaluation(self, small_grid):
        snap = make_snapshot()
        surf = pitch_control_surface(snap, grid=small_grid)
        gx, gy = small_grid.center_mesh()
        assert np.array_equal(surf, pitch_control_grid(snap, gx, gy))
        assert surf.shape == (small_grid.width, small_grid.height)
        assert np.all((surf > 0.0) & (surf < 1.0))
