"""Grid network building blocks with explicit forward/backward passes.

Everything is batched channels-last: activations are float32 arrays of
shape (N, H, W, C). Convolutions run as im2col + one BLAS matmul; the
backward pass likewise reduces to two matmuls (filter gradient, and the
input gradient as a correlation with spatially flipped kernels), so no
Python-level pixel loops appear anywhere on the hot path.

Each layer is a small stateful object: ``forward`` caches what backward
needs, ``backward`` consumes an upstream gradient and accumulates
parameter gradients. Parameters and gradients are exposed as dicts keyed
by layer-local names so optimizers can treat models as flat key/value
stores.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

FLOAT = np.float32


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """Uniform fan-in-scaled initialization in [-sqrt(1/fan_in), +sqrt(1/fan_in)]."""
    limit = np.sqrt(1.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(FLOAT)


class Layer:
    """Base: parameterless layers inherit these no-op param dicts."""

    name: str = ""

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def grads(self) -> dict[str, np.ndarray]:
        return {}

    def zero_grads(self) -> None:
        for g in self.grads().values():
            g[...] = 0.0


def _im2col(x: np.ndarray, kh: int, kw: int, dtype=FLOAT) -> np.ndarray:
    """(N, H+kh-1, W+kw-1, C) padded input -> (N*H*W, kh*kw*C) patch matrix."""
    n = x.shape[0]
    windows = sliding_window_view(x, (kh, kw), axis=(1, 2))
    # windows: (N, H, W, C, kh, kw) -> (N, H, W, kh, kw, C)
    h, w = windows.shape[1], windows.shape[2]
    cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, kh * kw * x.shape[3])
    return np.ascontiguousarray(cols, dtype=dtype)


class Conv2D(Layer):
    """Same-padded stride-1 convolution (cross-correlation), square kernel."""

    def __init__(self, name: str, c_in: int, c_out: int, kernel: int,
                 rng: np.random.Generator, dtype=FLOAT):
        if kernel % 2 != 1:
            raise ValueError(f"kernel must be odd, got {kernel}")
        self.name = name
        self.dtype = dtype
        self.c_in, self.c_out, self.kernel = c_in, c_out, kernel
        fan_in = c_in * kernel * kernel
        self.w = he_uniform(rng, (kernel, kernel, c_in, c_out), fan_in).astype(dtype)
        self.b = np.zeros(c_out, dtype=dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cols: np.ndarray | None = None
        self._xshape: tuple[int, ...] | None = None

    def params(self):
        return {f"{self.name}/w": self.w, f"{self.name}/b": self.b}

    def grads(self):
        return {f"{self.name}/w": self.dw, f"{self.name}/b": self.db}

    def input_cols(self, x: np.ndarray) -> np.ndarray:
        """The (N*H*W, k*k*C) patch matrix for an input, for reuse via
        ``forward(x, cols=...)`` when several layers share one input."""
        n, h, w, _ = x.shape
        k, p = self.kernel, self.kernel // 2
        if k == 1:
            return np.ascontiguousarray(
                x.reshape(n * h * w, self.c_in), dtype=self.dtype
            )
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        return _im2col(xp, k, k, self.dtype)

    def forward(self, x: np.ndarray, cols: np.ndarray | None = None) -> np.ndarray:
        if x.shape[3] != self.c_in:
            raise ValueError(
                f"{self.name}: expected {self.c_in} input channels, got {x.shape[3]}"
            )
        n, h, w, _ = x.shape
        if cols is None:
            cols = self.input_cols(x)
        self._cols = cols
        self._xshape = x.shape
        out = cols @ self.w.reshape(-1, self.c_out)
        out += self.b
        return out.reshape(n, h, w, self.c_out)

    def backward(self, dout: np.ndarray, need_dx: bool = True) -> np.ndarray | None:
        n, h, w, _ = self._xshape
        k, p = self.kernel, self.kernel // 2
        d2 = np.ascontiguousarray(dout.reshape(n * h * w, self.c_out), dtype=self.dtype)
        self.dw += (self._cols.T @ d2).reshape(self.w.shape)
        self.db += d2.sum(axis=0)
        if not need_dx:
            return None
        if k == 1:
            dx = d2 @ self.w.reshape(self.c_in, self.c_out).T
            return dx.reshape(n, h, w, self.c_in)
        # dx: scatter each kernel tap's contribution back onto the padded
        # input, one small matmul per tap (cheaper than a second im2col).
        dxp = np.zeros((n, h + 2 * p, w + 2 * p, self.c_in), dtype=self.dtype)
        for di in range(k):
            for dj in range(k):
                contrib = (d2 @ self.w[di, dj].T).reshape(n, h, w, self.c_in)
                dxp[:, di : di + h, dj : dj + w, :] += contrib
        return np.ascontiguousarray(dxp[:, p : p + h, p : p + w, :])


class ReLU(Layer):
    def __init__(self, name: str = "relu"):
        self.name = name
        self._out: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._out = np.maximum(x, 0)
        return self._out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return dout * (self._out > 0)


class MaxPool2(Layer):
    """2x2 max pooling, stride 2; odd trailing rows/cols are dropped.

    Gradient flows to the first maximal element of each window (row-major
    within the window), which keeps tie handling deterministic.
    """

    def __init__(self, name: str = "pool"):
        self.name = name

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, h, w, c = x.shape
        hh, ww = h // 2, w // 2
        self._in_shape = x.shape
        win = x[:, : 2 * hh, : 2 * ww, :]
        win = win.reshape(n, hh, 2, ww, 2, c).transpose(0, 1, 3, 2, 4, 5)
        win = win.reshape(n, hh, ww, 4, c)
        self._argmax = win.argmax(axis=3)
        out = np.take_along_axis(win, self._argmax[:, :, :, None, :], axis=3)
        return out[:, :, :, 0, :]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        n, h, w, c = self._in_shape
        hh, ww = h // 2, w // 2
        dwin = np.zeros((n, hh, ww, 4, c), dtype=dout.dtype)
        np.put_along_axis(dwin, self._argmax[:, :, :, None, :], dout[:, :, :, None, :], axis=3)
        dx = np.zeros(self._in_shape, dtype=dout.dtype)
        dx[:, : 2 * hh, : 2 * ww, :] = (
            dwin.reshape(n, hh, ww, 2, 2, c)
            .transpose(0, 1, 3, 2, 4, 5)
            .reshape(n, 2 * hh, 2 * ww, c)
        )
        return dx


class UpsampleTo(Layer):
    """Nearest-neighbor 2x upsampling to an exact target size.

    Doubles both spatial dims, then restores any odd-dimension remainder
    by replicating the last row/column (the inverse of floor-pooling).
    """

    def __init__(self, out_h: int, out_w: int, name: str = "upsample"):
        self.name = name
        self.out_h, self.out_w = out_h, out_w

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, h, w, c = x.shape
        if not (2 * h <= self.out_h <= 2 * h + 1 and 2 * w <= self.out_w <= 2 * w + 1):
            raise ValueError(
                f"{self.name}: cannot upsample {(h, w)} to {(self.out_h, self.out_w)}"
            )
        self._in_shape = x.shape
        y = np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)
        if self.out_h == 2 * h + 1:
            y = np.concatenate([y, y[:, -1:, :, :]], axis=1)
        if self.out_w == 2 * w + 1:
            y = np.concatenate([y, y[:, :, -1:, :]], axis=2)
        return np.ascontiguousarray(y)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        n, h, w, c = self._in_shape
        d = dout
        if self.out_h == 2 * h + 1:
            d = d[:, :-1, :, :].copy()
            d[:, -1, :, :] += dout[:, -1, :, :]
        if self.out_w == 2 * w + 1:
            last = d[:, :, -1, :].copy()
            d = d[:, :, :-1, :].copy()
            d[:, :, -1, :] += last
        d = d.reshape(n, h, 2, w, 2, c)
        return d.sum(axis=(2, 4))


class Concat(Layer):
    """Channel concatenation of two activations with matching spatial dims."""

    def __init__(self, name: str = "concat"):
        self.name = name

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self._split = a.shape[3]
        return np.concatenate([a, b], axis=3)

    def backward(self, dout: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return dout[..., : self._split], dout[..., self._split:]


class Dense(Layer):
    """Fully connected layer on (N, F) feature matrices."""

    def __init__(self, name: str, n_in: int, n_out: int, rng: np.random.Generator,
                 dtype=FLOAT):
        self.name = name
        self.dtype = dtype
        self.n_in, self.n_out = n_in, n_out
        self.w = he_uniform(rng, (n_in, n_out), n_in).astype(dtype)
        self.b = np.zeros(n_out, dtype=dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)

    def params(self):
        return {f"{self.name}/w": self.w, f"{self.name}/b": self.b}

    def grads(self):
        return {f"{self.name}/w": self.dw, f"{self.name}/b": self.db}

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = np.ascontiguousarray(x, dtype=self.dtype)
        return self._x @ self.w + self.b

    def backward(self, dout: np.ndarray) -> np.ndarray:
        d = np.ascontiguousarray(dout, dtype=self.dtype)
        self.dw += self._x.T @ d
        self.db += d.sum(axis=0)
        return d @ self.w.T
