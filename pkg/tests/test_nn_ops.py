"""Grid-network building blocks: forward oracles, gradients, tie rules."""

from __future__ import annotations

import numpy as np
import pytest

from epvkit.nn import ops

from oracles import conv2d_oracle, fd_agrees, relative_error


def _random_conv(rng, dtype, kernel=None):
    c_in = int(rng.integers(1, 5))
    c_out = int(rng.integers(1, 5))
    k = kernel if kernel is not None else int(rng.choice([1, 3, 5]))
    layer = ops.Conv2D("c", c_in, c_out, k, rng, dtype=dtype)
    n = int(rng.integers(1, 4))
    h = int(rng.integers(3, 10))
    w = int(rng.integers(3, 10))
    x = rng.normal(size=(n, h, w, c_in)).astype(dtype)
    return layer, x


class TestConvForward:
    def test_matches_loop_oracle_float64(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            layer, x = _random_conv(rng, np.float64)
            got = layer.forward(x)
            want = conv2d_oracle(x, layer.w, layer.b)
            assert np.max(np.abs(got - want)) < 1e-12

    def test_matches_loop_oracle_float32(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            layer, x = _random_conv(rng, np.float32)
            got = layer.forward(x)
            want = conv2d_oracle(x.astype(np.float64), layer.w.astype(np.float64),
                                 layer.b.astype(np.float64))
            assert np.max(np.abs(got - want)) < 1e-4
            assert np.max(np.abs(got - want)) / max(np.max(np.abs(want)), 1e-10) < 1e-5

    def test_precomputed_cols_reproduce_forward(self):
        rng = np.random.default_rng(13)
        layer, x = _random_conv(rng, np.float64, kernel=5)
        direct = layer.forward(x)
        shared = layer.forward(x, cols=layer.input_cols(x))
        assert np.array_equal(direct, shared)

    def test_channel_mismatch_raises(self):
        rng = np.random.default_rng(14)
        layer = ops.Conv2D("c", 3, 2, 3, rng)
        with pytest.raises(ValueError, match="input channels"):
            layer.forward(np.zeros((1, 4, 4, 2), dtype=np.float32))

    def test_even_kernel_raises(self):
        with pytest.raises(ValueError, match="odd"):
            ops.Conv2D("c", 1, 1, 4, np.random.default_rng(0))


class TestConvBackward:
    def test_input_and_param_gradients(self):
        rng = np.random.default_rng(21)
        for _ in range(6):
            layer, x = _random_conv(rng, np.float64)
            probe = rng.normal(size=layer.forward(x).shape)

            def loss():
                return float(np.sum(layer.forward(x) * probe))

            layer.zero_grads()
            layer.forward(x)
            dx = layer.backward(probe)
            ok, err = fd_agrees(loss, x, dx, rng)
            assert ok, f"conv dx rel err {err}"
            for key, tensor in layer.params().items():
                layer.zero_grads()
                layer.forward(x)
                layer.backward(probe, need_dx=False)
                ok, err = fd_agrees(loss, tensor, layer.grads()[key], rng)
                assert ok, f"conv {key} rel err {err}"

    def test_need_dx_false_still_accumulates_params(self):
        rng = np.random.default_rng(22)
        layer, x = _random_conv(rng, np.float64, kernel=3)
        probe = rng.normal(size=layer.forward(x).shape)
        layer.backward(probe)
        with_dx = {k: v.copy() for k, v in layer.grads().items()}
        layer.zero_grads()
        layer.forward(x)
        assert layer.backward(probe, need_dx=False) is None
        for k, v in layer.grads().items():
            assert np.array_equal(v, with_dx[k])


class TestDense:
    def test_forward_is_affine(self):
        rng = np.random.default_rng(31)
        layer = ops.Dense("d", 5, 3, rng, dtype=np.float64)
        x = rng.normal(size=(7, 5))
        assert np.allclose(layer.forward(x), x @ layer.w + layer.b, atol=1e-12)

    def test_gradients(self):
        rng = np.random.default_rng(32)
        for _ in range(5):
            n_in, n_out = int(rng.integers(1, 7)), int(rng.integers(1, 7))
            layer = ops.Dense("d", n_in, n_out, rng, dtype=np.float64)
            x = rng.normal(size=(int(rng.integers(1, 6)), n_in))
            probe = rng.normal(size=(x.shape[0], n_out))

            def loss():
                return float(np.sum(layer.forward(x) * probe))

            layer.forward(x)
            dx = layer.backward(probe)
            ok, err = fd_agrees(loss, x, dx, rng)
            assert ok, err
            for key, tensor in layer.params().items():
                layer.zero_grads()
                layer.forward(x)
                layer.backward(probe)
                ok, err = fd_agrees(loss, tensor, layer.grads()[key], rng)
                assert ok, f"dense {key} rel err {err}"


class TestReLU:
    def test_forward(self):
        x = np.array([[-2.0, 0.0, 3.5]])
        assert np.array_equal(ops.ReLU().forward(x), [[0.0, 0.0, 3.5]])

    def test_gradient_away_from_kink(self):
        rng = np.random.default_rng(41)
        layer = ops.ReLU()
        for _ in range(5):
            x = rng.normal(size=(2, 4, 4, 3))
            x += 0.5 * np.sign(x)  # keep the finite-difference step off the kink
            probe = rng.normal(size=x.shape)

            def loss():
                return float(np.sum(layer.forward(x) * probe))

            layer.forward(x)
            dx = layer.backward(probe)
            ok, err = fd_agrees(loss, x, dx, rng)
            assert ok, err


class TestMaxPool:
    def test_adjoint_identity(self):
        rng = np.random.default_rng(51)
        layer = ops.MaxPool2()
        for h, w in [(4, 4), (5, 7), (6, 5), (9, 9)]:
            x = rng.normal(size=(2, h, w, 3))
            y = layer.forward(x)
            v = rng.normal(size=y.shape)
            dx = layer.backward(v)
            # <y, v> must equal <x, pool^T v> because backward routes each
            # upstream element to exactly one input position.
            assert abs(float(np.sum(y * v)) - float(np.sum(x * dx))) < 1e-9

    def test_gradient_with_distinct_values(self):
        rng = np.random.default_rng(52)
        layer = ops.MaxPool2()
        for _ in range(5):
            h, w = int(rng.integers(4, 9)), int(rng.integers(4, 9))
            x = (rng.permutation(2 * h * w * 3).astype(np.float64) * 0.1).reshape(2, h, w, 3)
            probe = rng.normal(size=layer.forward(x).shape)

            def loss():
                return float(np.sum(layer.forward(x) * probe))

            layer.forward(x)
            dx = layer.backward(probe)
            ok, err = fd_agrees(loss, x, dx, rng)
            assert ok, err

    def test_tie_goes_to_first_row_major_element(self):
        layer = ops.MaxPool2()
        x = np.ones((1, 2, 2, 1))
        layer.forward(x)
        dx = layer.backward(np.full((1, 1, 1, 1), 3.0))
        assert np.array_equal(dx[0, :, :, 0], [[3.0, 0.0], [0.0, 0.0]])

    def test_odd_trailing_rows_and_cols_are_dropped(self):
        layer = ops.MaxPool2()
        x = np.arange(25, dtype=np.float64).reshape(1, 5, 5, 1)
        y = layer.forward(x)
        assert y.shape == (1, 2, 2, 1)
        dx = layer.backward(np.ones_like(y))
        assert np.all(dx[0, 4, :, 0] == 0)
        assert np.all(dx[0, :, 4, 0] == 0)


class TestUpsample:
    @pytest.mark.parametrize("h,w,out_h,out_w", [
        (3, 3, 6, 6), (3, 3, 7, 7), (4, 5, 8, 11), (2, 2, 5, 4),
    ])
    def test_adjoint_identity(self, h, w, out_h, out_w):
        rng = np.random.default_rng(61)
        layer = ops.UpsampleTo(out_h, out_w)
        x = rng.normal(size=(2, h, w, 3))
        y = layer.forward(x)
        assert y.shape == (2, out_h, out_w, 3)
        v = rng.normal(size=y.shape)
        dx = layer.backward(v)
        assert abs(float(np.sum(y * v)) - float(np.sum(x * dx))) < 1e-9

    def test_edge_replication(self):
        layer = ops.UpsampleTo(5, 4)
        x = np.arange(6, dtype=np.float64).reshape(1, 2, 3, 1)[:, :, :2, :]
        y = layer.forward(x)
        # the appended odd row repeats the doubled last row
        assert np.array_equal(y[0, 4, :, 0], y[0, 3, :, 0])

    def test_gradient(self):
        rng = np.random.default_rng(62)
        layer = ops.UpsampleTo(7, 6)
        x = rng.normal(size=(1, 3, 3, 2))
        probe = rng.normal(size=(1, 7, 6, 2))

        def loss():
            return float(np.sum(layer.forward(x) * probe))

        layer.forward(x)
        dx = layer.backward(probe)
        ok, err = fd_agrees(loss, x, dx, rng)
        assert ok, err

    def test_rejects_impossible_target(self):
        layer = ops.UpsampleTo(9, 6)
        with pytest.raises(ValueError, match="cannot upsample"):
            layer.forward(np.zeros((1, 3, 3, 1)))


class TestConcat:
    def test_round_trip(self):
        rng = np.random.default_rng(71)
        layer = ops.Concat()
        a = rng.normal(size=(2, 3, 3, 4))
        b = rng.normal(size=(2, 3, 3, 2))
        y = layer.forward(a, b)
        assert y.shape == (2, 3, 3, 6)
        da, db = layer.backward(y)
        assert np.array_equal(da, a)
        assert np.array_equal(db, b)


def test_he_uniform_bounds_and_dtype():
    rng = np.random.default_rng(81)
    v = ops.he_uniform(rng, (64, 64), fan_in=16)
    assert v.dtype == np.float32
    assert np.max(np.abs(v)) <= 0.25 + 1e-9
    assert np.max(np.abs(v)) > 0.2  # actually fills the range
