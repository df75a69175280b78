"""Tests for the three-scale surface network, its model wrapper, and trainer."""

import numpy as np
import pytest

from epvkit.features.layers import CATALOGS, LayerStack, rasterize_layers
from epvkit.models.soccermap import (
    CHANNEL_SCALE,
    SoccerMapNet,
    SurfaceModel,
    TrainConfig,
    TrainingDiverged,
    catalog_scale,
    grid_search_surface,
    train_surface_model,
)
from epvkit.nn import heads as H
from epvkit.nn.ops import FLOAT
from epvkit.pitch import GridSpec

from builders import make_snapshot
from oracles import fd_agrees

SMALL = GridSpec(8, 16)


def _tiny_model(seed: int, head: str = "sigmoid") -> SurfaceModel:
    """A 2-channel model on the small grid, cheap enough to train in tests."""
    return SurfaceModel(
        catalog="pass_success",
        head=head,
        net=SoccerMapNet(2, seed=seed, grid=SMALL),
        input_scale=np.ones(2, dtype=FLOAT),
    )


def _fake_stack(data: np.ndarray) -> LayerStack:
    return LayerStack(catalog="pass_success", channel_names=("a", "b"), data=data)


def _cell_task(rng: np.random.Generator, n: int):
    """Examples whose label is the sign of channel 0 at the queried cell."""
    examples = []
    for _ in range(n):
        data = rng.uniform(-1.0, 1.0, size=(2, SMALL.width, SMALL.height))
        data = data.astype(np.float32)
        i = int(rng.integers(SMALL.width))
        j = int(rng.integers(SMALL.height))
        sign = 1.0 if rng.uniform() < 0.5 else -1.0
        data[0, i, j] = sign * rng.uniform(0.4, 1.0)
        examples.append((_fake_stack(data), (i, j), 1.0 if sign > 0 else 0.0))
    return examples


def _val_logloss(model: SurfaceModel, examples, chunk: int = 4) -> float:
    """Chunked mean single-cell loss, mirroring the trainer's validation."""
    total = 0.0
    for lo in range(0, len(examples), chunk):
        part = examples[lo : lo + chunk]
        x = model.prepare([p[0] for p in part])
        z = model.net.forward(x)
        pix = np.array([p[1] for p in part])
        tgt = np.array([p[2] for p in part], dtype=np.float64)
        loss, _ = H.single_pixel_loss(z, pix, tgt, model.head)
        total += loss * len(part)
    return total / len(examples)


class TestArchitecture:
    def test_param_count_13_channels(self):
        net = SoccerMapNet(13, seed=0, grid=SMALL)
        # Per branch: 5x5x13x32+32, 5x5x32x64+64, 64x32+32, 32x1+1 = 63,809.
        assert net.param_count() == 3 * 63_809 + 3 + 3 + 64 + 33 == 191_530

    def test_param_count_16_channels(self):
        net = SoccerMapNet(16, seed=0, grid=SMALL)
        assert net.param_count() == 3 * 66_209 + 103 == 198_730

    def test_param_count_ignores_grid(self):
        a = SoccerMapNet(13, seed=0, grid=SMALL)
        b = SoccerMapNet(13, seed=0, grid=GridSpec(104, 68))
        assert a.param_count() == b.param_count()

    def test_param_dict_has_weight_and_bias_per_layer(self):
        net = SoccerMapNet(2, seed=0, grid=SMALL)
        params = net.params()
        assert len(params) == 32  # 16 conv layers x (w, b)
        for scale in (1, 2, 4):
            assert f"s{scale}/conv_a/w" in params
            assert f"s{scale}/pred_out/b" in params
        assert params["fuse_1/w"].shape == (1, 1, 2, 1)
        assert params["final_hidden/w"].shape == (1, 1, 1, 32)

    def test_forward_shape_and_dtype(self, rng):
        net = SoccerMapNet(3, seed=0, grid=SMALL)
        x = rng.normal(size=(2, 8, 16, 3)).astype(np.float32)
        out = net.forward(x)
        assert out.shape == (2, 8, 16, 1)
        assert out.dtype == np.float32
        assert np.all(np.isfinite(out))

    def test_forward_odd_height_grid(self, rng):
        # 17 pools to 8 then 4; the upsample path must replicate the edge.
        net = SoccerMapNet(3, seed=0, grid=GridSpec(8, 17))
        x = rng.normal(size=(1, 8, 17, 3)).astype(np.float32)
        assert net.forward(x).shape == (1, 8, 17, 1)

    def test_forward_channel_mismatch(self, rng):
        net = SoccerMapNet(3, seed=0, grid=SMALL)
        with pytest.raises(ValueError, match="expected 3 channels"):
            net.forward(rng.normal(size=(1, 8, 16, 4)).astype(np.float32))

    def test_whole_net_gradients(self, rng):
        net = SoccerMapNet(2, seed=11, grid=SMALL, dtype=np.float64)
        x = rng.normal(size=(2, 8, 16, 2))
        pixels = np.array([[1, 2], [5, 9]])
        targets = np.array([1.0, 0.0])

        def loss_fn():
            z = net.forward(x)
            loss, _ = H.single_pixel_loss(z, pixels, targets, "sigmoid")
            return loss

        net.zero_grads()
        z = net.forward(x)
        _, dz = H.single_pixel_loss(z, pixels, targets, "sigmoid")
        net.backward(dz)
        grads = net.grads()
        for name, tensor in net.params().items():
            ok, err = fd_agrees(
                loss_fn, tensor, grads[name], rng, eps=1e-6, rtol=1e-3
            )
            assert ok, f"{name}: relative error {err}"


class TestChannelScaling:
    def test_scale_vector_matches_catalog_order(self):
        for catalog, names in CATALOGS.items():
            vec = catalog_scale(catalog)
            assert vec.shape == (len(names),)
            assert vec.dtype == FLOAT
            assert np.all(vec > 0)
            assert vec[0] == CHANNEL_SCALE[names[0]]

    def test_known_divisors(self):
        names = CATALOGS["pass_success"]
        vec = catalog_scale("pass_success")
        assert vec[names.index("poss_location")] == 1.0
        assert vec[names.index("dist_to_goal_m")] == 105.0
        assert vec[names.index("angle_to_goal_deg")] == 180.0
        assert vec[names.index("poss_velocity_x")] == 12.0

    def test_prepare_divides_each_channel(self):
        stack = rasterize_layers(make_snapshot(), "pass_success", grid=SMALL)
        model = SurfaceModel.create("pass_success", "sigmoid", seed=0, grid=SMALL)
        prepared = model.prepare([stack])
        assert prepared.shape == (1, SMALL.width, SMALL.height, 13)
        assert prepared.dtype == FLOAT
        assert prepared.flags["C_CONTIGUOUS"]
        for c, name in enumerate(stack.channel_names):
            expected = stack.data[c] / np.float32(CHANNEL_SCALE[name])
            assert np.array_equal(prepared[0, :, :, c], expected), name


class TestSurfaceModel:
    def test_create_infers_channels(self):
        m13 = SurfaceModel.create("pass_success", "sigmoid", seed=0, grid=SMALL)
        m16 = SurfaceModel.create("pass_value", "sigmoid_affine", seed=0, grid=SMALL)
        assert m13.net.c_in == 13
        assert m16.net.c_in == 16
        assert m13.temperature == 1.0

    def test_create_rejects_unknown_head(self):
        with pytest.raises(ValueError, match="unknown head"):
            SurfaceModel.create("pass_success", "softplus", seed=0, grid=SMALL)

    def test_create_rejects_unknown_catalog(self):
        with pytest.raises(KeyError):
            SurfaceModel.create("dribble_success", "sigmoid", seed=0, grid=SMALL)

    def test_sigmoid_surface_range(self, rng):
        model = _tiny_model(seed=4)
        stack = _fake_stack(rng.normal(size=(2, 8, 16)).astype(np.float32))
        surf = model.surface(stack)
        assert surf.shape == (8, 16)
        assert np.all((surf > 0.0) & (surf < 1.0))

    def test_affine_surface_range(self, rng):
        model = _tiny_model(seed=4, head="sigmoid_affine")
        stack = _fake_stack(rng.normal(size=(2, 8, 16)).astype(np.float32))
        surf = model.surface(stack)
        assert np.all((surf > -1.0) & (surf < 1.0))

    def test_softmax_surface_sums_to_one(self):
        model = SurfaceModel.create("pass_selection", "grid_softmax", seed=2, grid=SMALL)
        stack = rasterize_layers(make_snapshot(), "pass_selection", grid=SMALL)
        surf = model.surface(stack)
        assert abs(float(surf.sum()) - 1.0) < 1e-6
        assert np.all(surf > 0)

    def test_surface_applies_head_to_logits(self):
        model = SurfaceModel.create("pass_selection", "grid_softmax", seed=2, grid=SMALL)
        stack = rasterize_layers(make_snapshot(), "pass_selection", grid=SMALL)
        z = model.logits([stack])
        expected = H.apply_head(z, "grid_softmax")[0, :, :, 0]
        assert np.array_equal(model.surface(stack), expected)

    def test_temperature_flattens_but_keeps_ranking(self):
        model = SurfaceModel.create("pass_selection", "grid_softmax", seed=2, grid=SMALL)
        stack = rasterize_layers(make_snapshot(), "pass_selection", grid=SMALL)
        sharp = model.surface(stack)
        model.temperature = 2.0
        flat = model.surface(stack)
        assert not np.array_equal(sharp, flat)
        assert np.unravel_index(np.argmax(sharp), sharp.shape) == np.unravel_index(
            np.argmax(flat), flat.shape
        )
        assert abs(float(flat.sum()) - 1.0) < 1e-6
        assert flat.max() < sharp.max()
        # An explicit temperature argument overrides the stored one.
        assert np.array_equal(model.surface(stack, temperature=1.0), sharp)

    def test_shared_input_cache_is_bitwise_neutral(self):
        stack = rasterize_layers(make_snapshot(), "pass_success", grid=SMALL)
        m1 = SurfaceModel.create("pass_success", "sigmoid", seed=0, grid=SMALL)
        m2 = SurfaceModel.create("pass_success", "sigmoid", seed=1, grid=SMALL)
        solo1 = m1.surface(stack)
        solo2 = m2.surface(stack)
        share: dict = {}
        assert np.array_equal(m1.surface(stack, share=share), solo1)
        assert np.array_equal(m2.surface(stack, share=share), solo2)
        assert set(share) == {"prepared", "pooled", ("cols", 0), ("cols", 1), ("cols", 2)}

    def test_checksum_tracks_parameters(self):
        a = _tiny_model(seed=9)
        b = _tiny_model(seed=9)
        c = _tiny_model(seed=10)
        assert a.checksum() == b.checksum()
        assert a.checksum() != c.checksum()
        assert len(a.checksum()) == 64
        a.net.params()["final_out/b"][0] += 1.0
        assert a.checksum() != b.checksum()


class TestTrainConfig:
    def test_defaults_pass(self):
        TrainConfig().validate()

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"learning_rate": 0.0},
            {"learning_rate": -1.0},
            {"batch_size": 0},
            {"micro_chunk": 0},
        ],
    )
    def test_invalid_configs(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs).validate()


class TestTraining:
    def test_empty_training_set(self):
        with pytest.raises(ValueError, match="empty training set"):
            train_surface_model(_tiny_model(seed=0), [], [], TrainConfig())

    def test_learns_cell_sign_task(self):
        rng = np.random.default_rng(42)
        train = _cell_task(rng, 96)
        val = _cell_task(rng, 32)
        model = _tiny_model(seed=5)
        config = TrainConfig(
            learning_rate=1e-2, batch_size=16, max_epochs=12,
            early_stop_delta=1e-4, seed=3,
        )
        logs = train_surface_model(model, train, val, config)
        assert logs[0].epoch == 0
        assert [log.epoch for log in logs] == list(range(len(logs)))
        assert all(np.isfinite(log.train_loss) for log in logs)
        final = _val_logloss(model, val)
        assert final < 0.45
        assert final < logs[0].val_loss
        # The restored parameters reproduce the best validation loss seen.
        assert abs(final - min(log.val_loss for log in logs)) < 1e-9
        x = model.prepare([e[0] for e in val])
        z = model.net.forward(x)
        hits = sum(
            (z[n, i, j, 0] > 0) == (t > 0.5)
            for n, ((_, (i, j), t)) in enumerate(val)
        )
        assert hits / len(val) >= 0.85

    def test_training_is_deterministic(self):
        def run() -> tuple[str, list]:
            rng = np.random.default_rng(7)
            train = _cell_task(rng, 48)
            val = _cell_task(rng, 16)
            model = _tiny_model(seed=5)
            config = TrainConfig(learning_rate=3e-3, batch_size=16, max_epochs=3, seed=3)
            logs = train_surface_model(model, train, val, config)
            return model.checksum(), logs

        sum_a, logs_a = run()
        sum_b, logs_b = run()
        assert sum_a == sum_b
        assert logs_a == logs_b

    def test_stack_loader_path_matches_direct(self):
        rng = np.random.default_rng(7)
        train = _cell_task(rng, 48)
        val = _cell_task(rng, 16)
        config = TrainConfig(learning_rate=3e-3, batch_size=16, max_epochs=2, seed=3)

        direct = _tiny_model(seed=5)
        train_surface_model(direct, train, val, config)

        lazy = _tiny_model(seed=5)
        handles = [(i, pix, tgt) for i, (_, pix, tgt) in enumerate(train)]
        val_handles = [(48 + i, pix, tgt) for i, (_, pix, tgt) in enumerate(val)]
        pool = [e[0] for e in train] + [e[0] for e in val]
        train_surface_model(
            lazy, handles, val_handles, config,
            stack_loader=lambda item: (pool[item[0]], item[1], item[2]),
        )
        assert direct.checksum() == lazy.checksum()

    def test_early_stop_on_flat_progress(self):
        rng = np.random.default_rng(7)
        train = _cell_task(rng, 32)
        val = _cell_task(rng, 16)
        model = _tiny_model(seed=5)
        config = TrainConfig(learning_rate=1e-12, batch_size=16, max_epochs=12, seed=3)
        logs = train_surface_model(model, train, val, config)
        assert len(logs) == 2  # stops as soon as an epoch fails to improve enough

    def test_empty_validation_set_stops_after_two_epochs(self):
        rng = np.random.default_rng(7)
        train = _cell_task(rng, 32)
        model = _tiny_model(seed=5)
        config = TrainConfig(learning_rate=3e-3, batch_size=16, max_epochs=6, seed=3)
        logs = train_surface_model(model, train, [], config)
        assert len(logs) == 2
        assert all(np.isnan(log.val_loss) for log in logs)

    def test_non_finite_loss_raises(self):
        rng = np.random.default_rng(7)
        train = _cell_task(rng, 8)
        bad = train[0][0].data.copy()
        bad[0, 0, 0] = np.nan
        train[0] = (_fake_stack(bad), train[0][1], train[0][2])
        model = _tiny_model(seed=5)
        config = TrainConfig(learning_rate=1e-3, batch_size=8, max_epochs=2, seed=3)
        with pytest.raises(TrainingDiverged, match="epoch 0, batch 0"):
            train_surface_model(model, train, [], config)

    def test_train_log_callback(self):
        rng = np.random.default_rng(7)
        train = _cell_task(rng, 16)
        seen = []
        config = TrainConfig(learning_rate=3e-3, batch_size=16, max_epochs=2, seed=3)
        logs = train_surface_model(
            _tiny_model(seed=5), train, _cell_task(rng, 8), config, log_fn=seen.append
        )
        assert seen == logs


class TestGridSearch:
    def test_selects_working_learning_rate(self):
        rng = np.random.default_rng(13)
        train = _cell_task(rng, 64)
        val = _cell_task(rng, 24)
        base = TrainConfig(batch_size=16, max_epochs=4, early_stop_delta=1e-4, seed=3)
        model, config, logs = grid_search_surface(
            lambda: _tiny_model(seed=5),
            train,
            val,
            base,
            learning_rates=(1e-2, 1e-8),
            batch_sizes=(16,),
        )
        assert config.learning_rate == 1e-2
        assert config.batch_size == 16
        best = min(log.val_loss for log in logs)
        assert abs(_val_logloss(model, val) - best) < 1e-9
