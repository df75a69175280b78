"""Probability-quality metrics and temperature recalibration.

Every probabilistic output in the engine is scored the same way: clipped
log loss for binary models, categorical cross-entropy for the action
mixture, and squared error on the [0, 1] remapping for value models.
Reliability is summarized with an expected calibration error over
equal-count bins, and miscalibrated models are repaired post hoc with a
single temperature fitted on held-out data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Predictions are clipped into [floor, 1 - floor] before taking logs.
PROB_FLOOR = 1e-7

# Temperature search runs over log T in [ln TEMP_MIN, ln TEMP_MAX].
TEMP_MIN = 0.05
TEMP_MAX = 20.0
TEMP_MIN_EXAMPLES = 100

KIND_LOGLOSS = "logloss"
KIND_CROSS_ENTROPY = "cross_entropy"
KIND_MSE = "mse"


def clip_probs(preds: np.ndarray) -> np.ndarray:
    """Clamp probabilities away from 0 and 1 so logs stay finite."""
    return np.clip(preds, PROB_FLOOR, 1.0 - PROB_FLOOR)


def logloss(preds: np.ndarray, outcomes: np.ndarray) -> float:
    """Mean negative log likelihood of binary outcomes under P(y=1)."""
    preds = clip_probs(np.asarray(preds, dtype=np.float64))
    y = np.asarray(outcomes, dtype=np.float64)
    if preds.shape != y.shape:
        raise ValueError(f"shape mismatch: {preds.shape} vs {y.shape}")
    return float(-np.mean(y * np.log(preds) + (1.0 - y) * np.log(1.0 - preds)))


def cross_entropy(pred_matrix: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log likelihood of integer class labels.

    ``pred_matrix`` is (N, M) with rows summing to one; ``labels`` holds
    class indices. With M = 2 and labels in {0, 1} this equals
    :func:`logloss` of column 1.
    """
    p = clip_probs(np.asarray(pred_matrix, dtype=np.float64))
    labels = np.asarray(labels)
    if p.ndim != 2:
        raise ValueError(f"pred_matrix must be 2-d, got shape {p.shape}")
    if labels.shape != (p.shape[0],):
        raise ValueError(f"labels shape {labels.shape} does not match {p.shape}")
    if labels.min() < 0 or labels.max() >= p.shape[1]:
        raise ValueError("labels out of range for prediction matrix")
    picked = p[np.arange(p.shape[0]), labels.astype(int)]
    return float(-np.mean(np.log(picked)))


def value_mse(preds: np.ndarray, outcomes: np.ndarray) -> float:
    """Squared error for [-1, 1] values, scored on the [0, 1] remap.

    Both the prediction and the outcome are mapped through
    v -> (v + 1) / 2 first, so the score matches the scale the value
    heads are trained on.
    """
    v = (np.asarray(preds, dtype=np.float64) + 1.0) / 2.0
    y = (np.asarray(outcomes, dtype=np.float64) + 1.0) / 2.0
    if v.shape != y.shape:
        raise ValueError(f"shape mismatch: {v.shape} vs {y.shape}")
    return float(np.mean((v - y) ** 2))


METRICS = {
    KIND_LOGLOSS: logloss,
    KIND_CROSS_ENTROPY: cross_entropy,
    KIND_MSE: value_mse,
}


def score(kind: str, preds: np.ndarray, outcomes: np.ndarray) -> float:
    if kind not in METRICS:
        raise ValueError(f"unknown metric kind {kind!r}")
    return METRICS[kind](preds, outcomes)


# ---------------------------------------------------------------------------
# reliability
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationBin:
    mean_pred: float
    mean_outcome: float
    count: int


@dataclass(frozen=True)
class CalibrationReport:
    ece: float
    bins: tuple[CalibrationBin, ...]

    def to_csv(self) -> str:
        """Reliability table as ``bin,mean_pred,mean_outcome,count`` rows."""
        rows = ["bin,mean_pred,mean_outcome,count"]
        for i, b in enumerate(self.bins):
            rows.append(f"{i},{b.mean_pred:.6f},{b.mean_outcome:.6f},{b.count}")
        return "\n".join(rows) + "\n"


def expected_calibration_error(
    preds: np.ndarray, outcomes: np.ndarray, bins: int = 10
) -> CalibrationReport:
    """Equal-count reliability binning and its weighted gap.

    Predictions are stably sorted and split into ``bins`` groups whose
    sizes differ by at most one; the error is the count-weighted mean of
    |mean prediction - mean outcome| over the non-empty groups.
    """
    preds = np.asarray(preds, dtype=np.float64)
    y = np.asarray(outcomes, dtype=np.float64)
    if preds.shape != y.shape or preds.ndim != 1:
        raise ValueError(f"need matching 1-d arrays, got {preds.shape}, {y.shape}")
    if preds.size == 0:
        raise ValueError("no examples to bin")
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    order = np.argsort(preds, kind="stable")
    groups = [g for g in np.array_split(order, bins) if g.size]
    report_bins = []
    gap = 0.0
    for g in groups:
        mean_pred = float(preds[g].mean())
        mean_outcome = float(y[g].mean())
        report_bins.append(CalibrationBin(mean_pred, mean_outcome, int(g.size)))
        gap += g.size * abs(mean_pred - mean_outcome)
    return CalibrationReport(ece=gap / preds.size, bins=tuple(report_bins))


# ---------------------------------------------------------------------------
# temperature scaling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TemperatureFit:
    temperature: float
    nll_identity: float   # loss at T = 1
    nll_fitted: float     # loss at the returned temperature


def _nll_at_temperature(logits: np.ndarray, outcomes: np.ndarray, t: float) -> float:
    if logits.ndim == 1:
        return logloss(1.0 / (1.0 + np.exp(-logits / t)), outcomes)
    z = logits / t
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return cross_entropy(e / e.sum(axis=1, keepdims=True), outcomes)


def fit_temperature(logits: np.ndarray, outcomes: np.ndarray) -> TemperatureFit:
    """Single-parameter recalibration by scaling logits.

    Minimizes the held-out negative log likelihood over T by
    golden-section search on log T in [ln 0.05, ln 20]. Dividing by a
    positive scalar never reorders logits, so ranking metrics are
    untouched; the returned temperature is also guaranteed to score no
    worse than leaving the logits alone (T = 1).

    ``logits`` is (N,) with binary outcomes, or (N, M) with integer class
    labels. Fit on validation data, then report scores on a separate
    test split.
    """
    logits = np.asarray(logits, dtype=np.float64)
    outcomes = np.asarray(outcomes)
    n = logits.shape[0]
    if n < TEMP_MIN_EXAMPLES:
        raise ValueError(f"need >= {TEMP_MIN_EXAMPLES} examples, got {n}")
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    if not np.all(np.isfinite(np.asarray(outcomes, dtype=np.float64))):
        raise ValueError("outcomes must be finite")

    def nll(u: float) -> float:
        return _nll_at_temperature(logits, outcomes, math.exp(u))

    lo, hi = math.log(TEMP_MIN), math.log(TEMP_MAX)
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = nll(c), nll(d)
    while b - a > 1e-8:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = nll(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = nll(d)
    t = float(np.float32(math.exp((a + b) / 2.0)))

    nll_identity = _nll_at_temperature(logits, outcomes, 1.0)
    nll_fitted = _nll_at_temperature(logits, outcomes, t)
    if nll_fitted > nll_identity:
        t, nll_fitted = 1.0, nll_identity
    return TemperatureFit(temperature=t, nll_identity=nll_identity, nll_fitted=nll_fitted)
