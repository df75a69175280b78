"""Dense point models and the boosted-tree goal-probability baseline."""

from __future__ import annotations

import math

import numpy as np
import pytest

from epvkit.models import point as P
from epvkit.models import xg as X
from epvkit.models.soccermap import TrainConfig
from epvkit.features.counts import shot_context
from epvkit.features.lines import closest_line_index, dynamic_pressure_lines
from epvkit.data.records import TEAM_OPPONENT, TEAM_POSSESSION

from builders import make_snapshot
from oracles import fd_agrees


class TestPointFeatures:
    def test_catalog_widths(self):
        widths = {k: len(v) for k, v in P.POINT_CATALOGS.items()}
        assert widths == {
            "drive_probability": 7,
            "drive_value": 8,
            "action_selection": 8,
            "shot_value": 10,
        }

    def test_shared_context_values(self):
        snap = make_snapshot(ball=(62.0, 40.0))
        ctx = P.snapshot_context(snap)
        base = ctx.base
        assert base[0] == 62.0
        assert base[1] == pytest.approx(math.degrees(math.atan2(-6.0, 43.0)))
        assert base[2] == pytest.approx(math.hypot(43.0, 6.0))
        assert 0.0 <= base[3] <= 1.0          # pitch control at the ball
        assert base[4] > 0.0                  # opponent influence is positive
        poss = dynamic_pressure_lines(snap, TEAM_POSSESSION)
        opp = dynamic_pressure_lines(snap, TEAM_OPPONENT)
        assert base[5] == float(closest_line_index(62.0, poss)) == 2.0
        assert base[6] == float(closest_line_index(62.0, opp)) == 1.0

    def test_catalog_assembly_and_extras(self):
        snap = make_snapshot()
        ctx = P.snapshot_context(snap)
        drive = P.point_features(snap, "drive_probability", context=ctx)
        assert np.array_equal(drive, ctx.base)
        dv = P.point_features(
            snap, "drive_value", {"drive_success_probability": 0.63}, ctx
        )
        assert dv.shape == (8,)
        assert dv[-1] == 0.63
        sel = P.point_features(snap, "action_selection", {"shot_xg": 0.04}, ctx)
        assert sel[-1] == 0.04
        with pytest.raises(KeyError, match="drive_success_probability"):
            P.point_features(snap, "drive_value", {}, ctx)
        with pytest.raises(ValueError, match="catalog"):
            P.point_features(snap, "throw_in", {}, ctx)

    def test_context_reuse_changes_nothing(self):
        snap = make_snapshot(ball=(30.0, 20.0))
        with_ctx = P.point_features(snap, "drive_probability",
                                    context=P.snapshot_context(snap))
        without = P.point_features(snap, "drive_probability")
        assert np.array_equal(with_ctx, without)

    def test_shot_value_features_match_shot_context(self):
        snap = make_snapshot(ball=(88.0, 30.0))
        feats = P.point_features(snap, "shot_value",
                                 {"shot_xg": 0.11, "is_header": True})
        ctx = shot_context(snap, is_header=True)
        assert feats.shape == (10,)
        assert feats[0] == 88.0
        assert feats[1] == float(ctx.ball_beyond_gk)
        assert feats[4] == pytest.approx(ctx.gk_distance_y_m)
        assert feats[5] == pytest.approx(ctx.gk_distance_m)
        assert feats[6] == float(ctx.blockage_count)
        assert feats[8] == 1.0
        assert feats[9] == pytest.approx(0.11)


class TestDenseLosses:
    def test_binary_logloss_hand_value(self):
        loss, grad = P.binary_logloss(np.zeros((4, 1)), [1, 0, 1, 0])
        assert loss == pytest.approx(math.log(2.0))
        assert np.allclose(grad.reshape(-1), [-0.125, 0.125, -0.125, 0.125])
        with pytest.raises(ValueError, match="0 or 1"):
            P.binary_logloss(np.zeros((1, 1)), [0.5])

    def test_value_mse_hand_value(self):
        loss, _ = P.value_mse(np.zeros((2, 1)), [1.0, 0.5])
        assert loss == pytest.approx((0.25 + 0.0) / 2)
        with pytest.raises(ValueError, match=r"\[0,1\]"):
            P.value_mse(np.zeros((1, 1)), [-0.2])

    def test_categorical_ce_hand_value(self):
        onehot = np.eye(3)[[0, 2]]
        loss, grad = P.categorical_ce(np.zeros((2, 3)), onehot)
        assert loss == pytest.approx(math.log(3.0), abs=1e-9)
        assert np.max(np.abs(grad.sum(axis=1))) < 1e-12
        with pytest.raises(ValueError, match="one-hot"):
            P.categorical_ce(np.zeros((1, 3)), np.array([[0.2, 0.2, 0.2]]))
        with pytest.raises(ValueError, match="share shape"):
            P.categorical_ce(np.zeros((1, 3)), np.eye(4)[:1])

    @pytest.mark.parametrize("loss_name", ["binary", "mse", "ce"])
    def test_gradients_match_finite_differences(self, loss_name):
        rng = np.random.default_rng(8)
        for _ in range(8):
            if loss_name == "ce":
                logits = rng.normal(size=(5, 3))
                targets = np.eye(3)[rng.integers(0, 3, 5)]
                fn = P.categorical_ce
            else:
                logits = rng.normal(size=(5, 1))
                if loss_name == "binary":
                    targets = rng.integers(0, 2, 5).astype(float)
                    fn = P.binary_logloss
                else:
                    targets = rng.uniform(size=5)
                    fn = P.value_mse

            def loss():
                return fn(logits, targets)[0]

            _, grad = fn(logits, targets)
            ok, err = fd_agrees(loss, logits, grad, rng)
            assert ok, f"{loss_name} rel err {err}"

    def test_dense_softmax_properties(self):
        rng = np.random.default_rng(9)
        z = rng.normal(size=(6, 3)) * 5
        p = P.dense_softmax(z)
        assert np.max(np.abs(p.sum(axis=1) - 1.0)) < 1e-12
        assert np.allclose(P.dense_softmax(z + 40.0), p, atol=1e-12)


class TestDenseNet:
    def test_forward_matches_matrix_oracle(self):
        rng = np.random.default_rng(10)
        net = P.DenseNet(5, 2, (4, 3), seed=3, dtype=np.float64)
        x = rng.normal(size=(7, 5))
        h1 = np.maximum(x @ net.fc1.w + net.fc1.b, 0.0)
        h2 = np.maximum(h1 @ net.fc2.w + net.fc2.b, 0.0)
        want = h2 @ net.out.w + net.out.b
        assert np.allclose(net.forward(x), want, atol=1e-12)

    def test_param_counts(self):
        assert P.DenseNet(7, 1, (8, 8), seed=0).param_count() == 145
        assert P.DenseNet(10, 1, (10, 10), seed=0).param_count() == 231
        assert P.DenseNet(8, 3, (8, 8), seed=0).param_count() == 171

    def test_whole_net_gradient(self):
        rng = np.random.default_rng(11)
        net = P.DenseNet(4, 1, (6, 6), seed=5, dtype=np.float64)
        x = rng.normal(size=(9, 4))
        y = rng.integers(0, 2, 9).astype(float)

        def loss():
            return P.binary_logloss(net.forward(x), y)[0]

        for key, tensor in net.params().items():
            net.zero_grads()
            _, dz = P.binary_logloss(net.forward(x), y)
            net.backward(dz)
            ok, err = fd_agrees(loss, tensor, net.grads()[key], rng,
                                eps=1e-5, rtol=1e-4)
            assert ok, f"{key} rel err {err}"


class TestPointModel:
    def test_create_validates(self):
        with pytest.raises(ValueError, match="catalog"):
            P.PointModel.create("nope", "sigmoid", seed=0)
        with pytest.raises(ValueError, match="head"):
            P.PointModel.create("drive_probability", "tanh", seed=0)

    def test_standardization_is_float32_quantized(self):
        rng = np.random.default_rng(12)
        model = P.PointModel.create("drive_probability", "sigmoid", seed=0)
        feats = rng.normal(size=(50, 7)) * 19.37 + 4.2
        model.fit_standardization(feats)
        assert np.array_equal(model.mean, model.mean.astype(np.float32))
        assert np.array_equal(model.scale, model.scale.astype(np.float32))
        constant = np.hstack([feats[:, :6], np.full((50, 1), 3.3)])
        model.fit_standardization(constant)
        assert model.scale[6] == 1.0  # zero-variance column keeps scale 1

    def test_predict_ranges_per_head(self):
        rng = np.random.default_rng(13)
        feats = rng.normal(size=(20, 7))
        prob = P.PointModel.create("drive_probability", "sigmoid", seed=1)
        assert np.all((prob.predict(feats) > 0) & (prob.predict(feats) < 1))
        value = P.PointModel.create("drive_value", "sigmoid_affine", seed=1)
        v = value.predict(rng.normal(size=(20, 8)))
        assert np.all((v > -1) & (v < 1))
        sel = P.PointModel.create("action_selection", "softmax3", seed=1)
        s = sel.predict(rng.normal(size=(20, 8)))
        assert s.shape == (20, 3)
        assert np.max(np.abs(s.sum(axis=1) - 1.0)) < 1e-12

    def test_temperature_rescales_logits(self):
        rng = np.random.default_rng(14)
        model = P.PointModel.create("drive_probability", "sigmoid", seed=2)
        feats = rng.normal(size=(10, 7))
        z = model.logits(feats).astype(np.float64).reshape(-1)
        model.temperature = 2.0
        want = 1.0 / (1.0 + np.exp(-z / 2.0))
        assert np.allclose(model.predict(feats), want, atol=1e-12)
        # ordering of predictions is unchanged by temperature
        cold = np.argsort(z)
        hot = np.argsort(model.predict(feats))
        assert np.array_equal(cold, hot)

    def test_checksum_tracks_parameters(self):
        a = P.PointModel.create("drive_probability", "sigmoid", seed=3)
        b = P.PointModel.create("drive_probability", "sigmoid", seed=3)
        assert a.checksum() == b.checksum()
        b.net.fc1.w[0, 0] += 1.0
        assert a.checksum() != b.checksum()


def _separable_problem(rng, n=600):
    x = rng.normal(size=(n, 7))
    y = (x[:, 0] + 0.5 * x[:, 2] > 0).astype(float)
    cut = 2 * n // 3
    return (x[:cut], y[:cut], x[cut:], y[cut:])


class TestPointTraining:
    def test_learns_a_separable_rule(self):
        rng = np.random.default_rng(15)
        xt, yt, xv, yv = _separable_problem(rng)
        model = P.PointModel.create("drive_probability", "sigmoid", seed=4)
        config = TrainConfig(learning_rate=0.01, batch_size=32, max_epochs=30, seed=0)
        logs = P.train_point_model(model, xt, yt, xv, yv, config)
        assert logs[-1].val_loss < 0.35 < math.log(2.0)
        preds = model.predict(xv)
        accuracy = np.mean((preds > 0.5) == (yv > 0.5))
        assert accuracy > 0.9

    def test_training_is_deterministic(self):
        rng = np.random.default_rng(16)
        xt, yt, xv, yv = _separable_problem(rng, n=300)
        config = TrainConfig(learning_rate=0.01, batch_size=16, max_epochs=5, seed=3)
        sums = []
        for _ in range(2):
            model = P.PointModel.create("drive_probability", "sigmoid", seed=4)
            P.train_point_model(model, xt, yt, xv, yv, config)
            sums.append(model.checksum())
        assert sums[0] == sums[1]

    def test_early_stopping_restores_best_parameters(self):
        rng = np.random.default_rng(17)
        xt, yt, xv, yv = _separable_problem(rng, n=200)
        model = P.PointModel.create("drive_probability", "sigmoid", seed=5)
        config = TrainConfig(learning_rate=0.05, batch_size=16, max_epochs=40,
                             early_stop_delta=1e-3, seed=0)
        logs = P.train_point_model(model, xt, yt, xv, yv, config)
        assert len(logs) <= 40
        best = min(log.val_loss for log in logs)
        final = P.point_loss_eval(model, xv, yv)
        assert final == pytest.approx(best, abs=1e-9)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_empty_training_set_raises(self):
        model = P.PointModel.create("drive_probability", "sigmoid", seed=0)
        with pytest.raises(ValueError, match="empty"):
            P.train_point_model(
                model, np.zeros((0, 7)), np.zeros(0),
                np.zeros((1, 7)), np.zeros(1), TrainConfig(),
            )

    def test_grid_search_returns_lowest_validation(self):
        rng = np.random.default_rng(18)
        xt, yt, xv, yv = _separable_problem(rng, n=300)
        base = TrainConfig(max_epochs=4, seed=0)
        model, config, logs = P.grid_search_point(
            lambda: P.PointModel.create("drive_probability", "sigmoid", seed=6),
            xt, yt, xv, yv,
            learning_rates=(1e-4, 1e-2), batch_sizes=(32,), base_config=base,
        )
        assert config.learning_rate == 1e-2  # the blatantly better choice
        assert min(log.val_loss for log in logs) < math.log(2.0)


# ---------------------------------------------------------------------------
# goal-probability baseline
# ---------------------------------------------------------------------------

class TestXgFeatures:
    def test_descriptor_row(self):
        row = X.xg_features(100.0, 34.0, attack_type="set_piece", is_header=True)
        assert row.shape == (8,)
        assert row[0] == 100.0 and row[1] == 34.0
        assert row[2] == pytest.approx(5.0)
        assert row[3] == pytest.approx(0.0)
        assert list(row[4:7]) == [0.0, 1.0, 0.0]
        assert row[7] == 1.0

    def test_unknown_attack_type(self):
        with pytest.raises(ValueError, match="attack type"):
            X.xg_features(50.0, 30.0, attack_type="counter")


class TestTreePredict:
    def test_hand_built_tree_routes_correctly(self):
        tree = X.Tree(
            feature=np.array([0, -1, -1]),
            threshold=np.array([0.5, 0.0, 0.0]),
            left=np.array([1, -1, -1]),
            right=np.array([2, -1, -1]),
            value=np.array([0.0, 1.5, -2.5]),
        )
        x = np.array([[0.5, 9.0], [0.50001, 9.0], [-3.0, 0.0]])
        assert np.array_equal(tree.predict(x), [1.5, -2.5, 1.5])

    def test_depth_two_tree(self):
        # root: f0 <= 0; left: f1 <= 0
        tree = X.Tree(
            feature=np.array([0, 1, -1, -1, -1]),
            threshold=np.array([0.0, 0.0, 0.0, 0.0, 0.0]),
            left=np.array([1, 3, -1, -1, -1]),
            right=np.array([2, 4, -1, -1, -1]),
            value=np.array([0.0, 0.0, 3.0, 1.0, 2.0]),
        )
        cases = [([-1.0, -1.0], 1.0), ([-1.0, 1.0], 2.0), ([1.0, 0.0], 3.0)]
        for row, want in cases:
            assert tree.predict(np.array([row]))[0] == want


def _synthetic_shots(rng, n=400):
    x = rng.uniform(60, 105, n)
    y = rng.uniform(10, 58, n)
    feats = np.stack([X.xg_features(a, b) for a, b in zip(x, y)])
    dist = feats[:, 2]
    p = 1.0 / (1.0 + np.exp((dist - 14.0) / 4.0))
    outcomes = (rng.uniform(size=n) < p).astype(float)
    return feats, outcomes


class TestXgFit:
    def test_input_validation(self):
        feats = np.zeros((5, 8))
        with pytest.raises(ValueError, match="0/1"):
            X.fit_xg(feats, [0, 1, 0.5, 0, 1], 5, 2, 0.1)
        with pytest.raises(ValueError, match="single-class"):
            X.fit_xg(feats, [1, 1, 1, 1, 1], 5, 2, 0.1)

    def test_base_logit_is_quantized_log_odds(self):
        rng = np.random.default_rng(19)
        feats, outcomes = _synthetic_shots(rng, n=100)
        model = X.fit_xg(feats, outcomes, 3, 2, 0.1)
        rate = outcomes.mean()
        assert model.base_logit == float(np.float32(np.log(rate / (1 - rate))))
        assert np.array_equal(model.mean, model.mean.astype(np.float32))

    def test_beats_constant_baseline(self):
        rng = np.random.default_rng(20)
        feats, outcomes = _synthetic_shots(rng)
        hold_f, hold_y = _synthetic_shots(rng)
        model = X.fit_xg(feats, outcomes, 60, 3, 0.1)
        rate = outcomes.mean()
        base = -np.mean(hold_y * np.log(rate) + (1 - hold_y) * np.log(1 - rate))
        assert X.xg_logloss(model, hold_f, hold_y) < 0.9 * base
        preds = model.predict(hold_f)
        assert np.all((preds > 0) & (preds < 1))

    def test_staged_logits_are_partial_sums(self):
        rng = np.random.default_rng(21)
        feats, outcomes = _synthetic_shots(rng, n=150)
        model = X.fit_xg(feats, outcomes, 7, 2, 0.1)
        stages = model.staged_logits(feats[:10])
        assert stages.shape == (8, 10)
        assert np.allclose(stages[0], model.base_logit)
        assert np.allclose(stages[-1], model.predict_logit(feats[:10]), atol=1e-12)
        increments = np.diff(stages, axis=0)
        manual = np.array(
            [model.shrinkage * t.predict(model.standardize(feats[:10]))
             for t in model.trees]
        )
        assert np.allclose(increments, manual, atol=1e-12)

    def test_fit_is_deterministic(self):
        rng = np.random.default_rng(22)
        feats, outcomes = _synthetic_shots(rng, n=120)
        a = X.fit_xg(feats, outcomes, 10, 3, 0.05)
        b = X.fit_xg(feats, outcomes, 10, 3, 0.05)
        assert a.checksum() == b.checksum()
        c = X.fit_xg(feats[:100], outcomes[:100], 10, 3, 0.05)
        assert a.checksum() != c.checksum()

    def test_cross_validation_selects_and_refits(self):
        rng = np.random.default_rng(23)
        feats, outcomes = _synthetic_shots(rng, n=200)
        model, report = X.cross_validated_xg(
            feats, outcomes, seed=1, k=4,
            tree_grid=(5, 20), depth_grid=(2,), shrinkage_grid=(0.1,),
        )
        assert report["selected"]["depth"] == 2
        assert report["selected"]["trees"] in (5, 20)
        assert len(report["grid"]) == 2
        assert len(model.trees) == report["selected"]["trees"]
        assert np.isfinite(report["cv_logloss"])

    def test_cross_validation_needs_enough_shots(self):
        with pytest.raises(ValueError, match="at least"):
            X.cross_validated_xg(np.zeros((4, 8)), [0, 1, 0, 1], k=10)
