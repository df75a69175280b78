"""Output heads and single-cell training losses for grid models.

Heads map a logit grid (N, H, W, 1) to its output space:

- ``sigmoid``: independent per-cell probabilities in [0, 1];
- ``grid_softmax``: one distribution over all H*W cells (sums to 1);
- ``sigmoid_affine``: 2*sigmoid - 1, a value in (-1, 1).

Supervision is single-cell: each example contributes loss only at the
observed destination cell. For sigmoid and sigmoid_affine heads the
logit gradient is nonzero only at that cell; grid_softmax couples every
cell through its normalizer, so its gradient is dense.
"""

from __future__ import annotations

import numpy as np

HEAD_SIGMOID = "sigmoid"
HEAD_GRID_SOFTMAX = "grid_softmax"
HEAD_SIGMOID_AFFINE = "sigmoid_affine"
HEADS = (HEAD_SIGMOID, HEAD_GRID_SOFTMAX, HEAD_SIGMOID_AFFINE)

_EPS = 1e-7


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def grid_softmax(z: np.ndarray) -> np.ndarray:
    """Softmax over the spatial cells of each (H, W, 1) grid in a batch."""
    n = z.shape[0]
    flat = z.reshape(n, -1).astype(np.float64)
    flat = flat - flat.max(axis=1, keepdims=True)
    e = np.exp(flat)
    e /= e.sum(axis=1, keepdims=True)
    return e.reshape(z.shape)


def sigmoid_affine(z: np.ndarray) -> np.ndarray:
    return 2.0 * sigmoid(z) - 1.0


def apply_head(logits: np.ndarray, head: str) -> np.ndarray:
    if head == HEAD_SIGMOID:
        return sigmoid(logits)
    if head == HEAD_GRID_SOFTMAX:
        return grid_softmax(logits)
    if head == HEAD_SIGMOID_AFFINE:
        return sigmoid_affine(logits)
    raise ValueError(f"unknown head {head!r}")


def _flat_index(pixels: np.ndarray, width: int) -> np.ndarray:
    return pixels[:, 0] * width + pixels[:, 1]


def sigmoid_logloss_at_cell(
    logits: np.ndarray, pixels: np.ndarray, targets: np.ndarray
) -> tuple[float, np.ndarray]:
    """Bernoulli log loss at one cell per example; mean over the batch.

    targets must be 0/1. Returns (loss, dlogits) with dlogits averaged,
    so parameter gradients come out batch-mean scaled.
    """
    n, h, w, _ = logits.shape
    if not np.isin(targets, (0, 1)).all():
        raise ValueError("logloss targets must be 0/1")
    z = logits.reshape(n, -1)[np.arange(n), _flat_index(pixels, w)]
    p = sigmoid(z)
    pc = np.clip(p, _EPS, 1.0 - _EPS)
    loss = float(-np.mean(targets * np.log(pc) + (1 - targets) * np.log(1 - pc)))
    dlogits = np.zeros(logits.shape, dtype=logits.dtype)
    dflat = dlogits.reshape(n, -1)
    dflat[np.arange(n), _flat_index(pixels, w)] = (p - targets) / n
    return loss, dlogits


def softmax_logloss_at_cell(
    logits: np.ndarray, pixels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Categorical log loss with the observed cell as the (implicit 1) target."""
    n, h, w, _ = logits.shape
    probs = grid_softmax(logits).reshape(n, -1)
    idx = _flat_index(pixels, w)
    picked = np.clip(probs[np.arange(n), idx], _EPS, None)
    loss = float(-np.mean(np.log(picked)))
    dflat = probs / n
    dflat[np.arange(n), idx] -= 1.0 / n
    return loss, dflat.reshape(logits.shape).astype(logits.dtype)


def affine_mse_at_cell(
    logits: np.ndarray, pixels: np.ndarray, targets01: np.ndarray
) -> tuple[float, np.ndarray]:
    """Squared error at one cell per example, in [0,1]-mapped value space.

    targets01 are rewards already mapped from [-1,1] to [0,1]; the
    prediction compared against them is sigmoid(logit), i.e. the
    affine head's output mapped the same way.
    """
    n, h, w, _ = logits.shape
    if ((targets01 < 0) | (targets01 > 1)).any():
        raise ValueError("mse targets must lie in [0,1]")
    z = logits.reshape(n, -1)[np.arange(n), _flat_index(pixels, w)]
    p = sigmoid(z)
    diff = p - targets01
    loss = float(np.mean(diff**2))
    dlogits = np.zeros(logits.shape, dtype=logits.dtype)
    dflat = dlogits.reshape(n, -1)
    dflat[np.arange(n), _flat_index(pixels, w)] = 2.0 * diff * p * (1.0 - p) / n
    return loss, dlogits


def single_pixel_loss(
    logits: np.ndarray,
    pixels: np.ndarray,
    targets: np.ndarray,
    head: str,
) -> tuple[float, np.ndarray]:
    """Dispatch to the head's loss; targets ignored for grid_softmax."""
    pixels = np.atleast_2d(np.asarray(pixels, dtype=int))
    targets = np.atleast_1d(np.asarray(targets, dtype=np.float64))
    n, h, w, _ = logits.shape
    if (pixels[:, 0] < 0).any() or (pixels[:, 0] >= h).any() \
            or (pixels[:, 1] < 0).any() or (pixels[:, 1] >= w).any():
        raise IndexError("pixel out of bounds")
    if head == HEAD_SIGMOID:
        return sigmoid_logloss_at_cell(logits, pixels, targets)
    if head == HEAD_GRID_SOFTMAX:
        return softmax_logloss_at_cell(logits, pixels)
    if head == HEAD_SIGMOID_AFFINE:
        return affine_mse_at_cell(logits, pixels, targets)
    raise ValueError(f"unknown head {head!r}")
