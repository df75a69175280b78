"""Shallow dense models over scalar ball-context features.

These cover the single-valued model family: ball-drive success
probability, drive expected value (success and miss variants), shot
expected value, and the three-way action-selection distribution. Each is
a two-hidden-layer rectified MLP over a small named feature vector with
stored input standardization, so a trained model is a self-contained
(catalog, parameters, mean/scale) triple.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from ..data.records import (
    TEAM_OPPONENT,
    TEAM_POSSESSION,
    TrackingSnapshot,
)
from ..features.counts import shot_context
from ..features.geometry import geometry
from ..features.influence import pitch_control, player_influence
from ..features.lines import (
    PressureLines,
    closest_line_index,
    dynamic_pressure_lines,
)
from ..nn.adam import AdamState, adam_step
from ..nn.heads import HEAD_SIGMOID, HEAD_SIGMOID_AFFINE, sigmoid
from ..nn.ops import FLOAT, Dense, ReLU
from .soccermap import TrainConfig, TrainingDiverged, EpochLog

POINT_CATALOG_VERSION = "v1"

HEAD_SOFTMAX3 = "softmax3"

# Order of the action-selection output classes.
ACTION_CLASSES = ("pass", "drive", "shot")

_BALL_CONTEXT = (
    "ball_x",
    "angle_to_goal_deg",
    "dist_to_goal_m",
    "possession_control_at_ball",
    "opponent_influence_at_ball",
    "possession_line_index",
    "opponent_line_index",
)

DRIVE_PROB_FEATURES = _BALL_CONTEXT
DRIVE_VALUE_FEATURES = _BALL_CONTEXT + ("drive_success_probability",)
ACTION_SELECT_FEATURES = _BALL_CONTEXT + ("shot_xg",)
SHOT_VALUE_FEATURES = (
    "ball_x",
    "ball_beyond_keeper",
    "angle_to_goal_deg",
    "dist_to_goal_m",
    "keeper_distance_y_m",
    "keeper_distance_m",
    "blockage_count",
    "pressers_3m",
    "is_header",
    "shot_xg",
)

POINT_CATALOGS: dict[str, tuple[str, ...]] = {
    "drive_probability": DRIVE_PROB_FEATURES,
    "drive_value": DRIVE_VALUE_FEATURES,
    "action_selection": ACTION_SELECT_FEATURES,
    "shot_value": SHOT_VALUE_FEATURES,
}

# Extra inputs each catalog needs beyond the snapshot itself.
_CATALOG_EXTRAS: dict[str, tuple[str, ...]] = {
    "drive_probability": (),
    "drive_value": ("drive_success_probability",),
    "action_selection": ("shot_xg",),
    "shot_value": ("shot_xg", "is_header"),
}


@dataclass(frozen=True)
class SnapshotContext:
    """Per-snapshot values shared by several point catalogs.

    Composing one frame evaluates three point models (and the value-layer
    rasterizer) on the same snapshot; building this once avoids repeating
    the pressure-line clustering and influence sums for each of them.
    """

    poss_lines: PressureLines
    opp_lines: PressureLines
    base: np.ndarray  # the seven shared ball-context features


def snapshot_context(snapshot: TrackingSnapshot) -> SnapshotContext:
    """Compute the shared ball-context features for one snapshot."""
    ball = snapshot.ball
    geo = geometry(ball)
    poss_lines = dynamic_pressure_lines(snapshot, TEAM_POSSESSION)
    opp_lines = dynamic_pressure_lines(snapshot, TEAM_OPPONENT)
    opp_infl = sum(
        player_influence(p, ball, ball) for p in snapshot.team_players(TEAM_OPPONENT)
    )
    base = np.array(
        [
            ball[0],
            geo.angle_deg,
            geo.distance_m,
            pitch_control(snapshot, ball),
            opp_infl,
            float(closest_line_index(ball[0], poss_lines)),
            float(closest_line_index(ball[0], opp_lines)),
        ],
        dtype=np.float64,
    )
    return SnapshotContext(poss_lines=poss_lines, opp_lines=opp_lines, base=base)


def point_features(
    snapshot: TrackingSnapshot,
    catalog: str,
    extras: dict[str, float] | None = None,
    context: SnapshotContext | None = None,
) -> np.ndarray:
    """Assemble one catalog's feature vector for a snapshot.

    ``extras`` supplies model outputs that feed other models (drive
    success probability, event-based shot value) and the header flag for
    shots; missing required keys raise ``KeyError``. ``context`` reuses a
    precomputed :func:`snapshot_context` for the shared features.
    """
    if catalog not in POINT_CATALOGS:
        raise ValueError(f"unknown point catalog {catalog!r}")
    extras = extras or {}
    for key in _CATALOG_EXTRAS[catalog]:
        if key not in extras:
            raise KeyError(f"catalog {catalog!r} requires extras[{key!r}]")
    ball = snapshot.ball

    if catalog == "shot_value":
        ctx = shot_context(snapshot, is_header=bool(extras.get("is_header", False)))
        geo = geometry(ball)
        return np.array(
            [
                ball[0],
                float(ctx.ball_beyond_gk),
                geo.angle_deg,
                geo.distance_m,
                ctx.gk_distance_y_m,
                ctx.gk_distance_m,
                float(ctx.blockage_count),
                float(ctx.pressers_3m),
                float(ctx.is_header),
                float(extras["shot_xg"]),
            ],
            dtype=np.float64,
        )

    if context is None:
        context = snapshot_context(snapshot)
    base = list(context.base)
    if catalog == "drive_value":
        base.append(float(extras["drive_success_probability"]))
    elif catalog == "action_selection":
        base.append(float(extras["shot_xg"]))
    return np.array(base, dtype=np.float64)


# ---------------------------------------------------------------------------
# losses on dense logits


def binary_logloss(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Log loss on (N, 1) logits against 0/1 targets; returns (loss, dlogits)."""
    z = logits.reshape(-1)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if ((y != 0) & (y != 1)).any():
        raise ValueError("binary targets must be 0 or 1")
    p = sigmoid(z)
    eps = 1e-7
    pc = np.clip(p, eps, 1 - eps)
    loss = float(-np.mean(y * np.log(pc) + (1 - y) * np.log(1 - pc)))
    dz = ((p - y) / z.size).astype(logits.dtype).reshape(logits.shape)
    return loss, dz


def value_mse(logits: np.ndarray, targets01: np.ndarray) -> tuple[float, np.ndarray]:
    """Squared error between sigmoid(logit) and [0,1]-mapped value targets."""
    z = logits.reshape(-1)
    y = np.asarray(targets01, dtype=np.float64).reshape(-1)
    if ((y < 0) | (y > 1)).any():
        raise ValueError("value targets must lie in [0,1]")
    p = sigmoid(z)
    diff = p - y
    loss = float(np.mean(diff**2))
    dz = (2.0 * diff * p * (1.0 - p) / z.size).astype(logits.dtype)
    return loss, dz.reshape(logits.shape)


def categorical_ce(logits: np.ndarray, onehot: np.ndarray) -> tuple[float, np.ndarray]:
    """Cross-entropy on (N, K) logits against one-hot rows; (loss, dlogits)."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(onehot, dtype=np.float64)
    if z.shape != y.shape:
        raise ValueError("logits and one-hot targets must share shape")
    if not np.allclose(y.sum(axis=1), 1.0):
        raise ValueError("targets must be one-hot rows")
    shifted = z - z.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    probs = expz / expz.sum(axis=1, keepdims=True)
    eps = 1e-12
    loss = float(-np.mean(np.sum(y * np.log(probs + eps), axis=1)))
    dz = ((probs - y) / z.shape[0]).astype(logits.dtype)
    return loss, dz


def dense_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax for (N, K) logits."""
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    return expz / expz.sum(axis=1, keepdims=True)


POINT_HEADS = (HEAD_SIGMOID, HEAD_SIGMOID_AFFINE, HEAD_SOFTMAX3)

_HEAD_WIDTH = {HEAD_SIGMOID: 1, HEAD_SIGMOID_AFFINE: 1, HEAD_SOFTMAX3: 3}


class DenseNet:
    """Two hidden rectified layers and a linear output layer."""

    def __init__(
        self,
        n_in: int,
        n_out: int,
        hidden: tuple[int, int],
        seed: int,
        dtype=FLOAT,
    ):
        rng = np.random.default_rng(seed)
        h1, h2 = hidden
        self.hidden = hidden
        self.dtype = dtype
        self.fc1 = Dense("fc1", n_in, h1, rng, dtype=dtype)
        self.act1 = ReLU("act1")
        self.fc2 = Dense("fc2", h1, h2, rng, dtype=dtype)
        self.act2 = ReLU("act2")
        self.out = Dense("out", h2, n_out, rng, dtype=dtype)
        self._layers = [self.fc1, self.fc2, self.out]

    def params(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for layer in self._layers:
            out.update(layer.params())
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for layer in self._layers:
            out.update(layer.grads())
        return out

    def zero_grads(self) -> None:
        for layer in self._layers:
            layer.zero_grads()

    def param_count(self) -> int:
        return sum(p.size for p in self.params().values())

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = self.act1.forward(self.fc1.forward(x.astype(self.dtype, copy=False)))
        h = self.act2.forward(self.fc2.forward(h))
        return self.out.forward(h)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        d = self.out.backward(dout.astype(self.dtype, copy=False))
        d = self.fc2.backward(self.act2.backward(d))
        return self.fc1.backward(self.act1.backward(d))


@dataclass
class PointModel:
    """A trained point model: catalog, net, standardization, head."""

    catalog: str
    head: str
    net: DenseNet
    mean: np.ndarray
    scale: np.ndarray
    temperature: float = 1.0
    catalog_version: str = POINT_CATALOG_VERSION

    @classmethod
    def create(
        cls,
        catalog: str,
        head: str,
        seed: int,
        hidden: tuple[int, int] = (8, 8),
        dtype=FLOAT,
    ) -> "PointModel":
        if catalog not in POINT_CATALOGS:
            raise ValueError(f"unknown point catalog {catalog!r}")
        if head not in POINT_HEADS:
            raise ValueError(f"unknown point head {head!r}")
        n_in = len(POINT_CATALOGS[catalog])
        net = DenseNet(n_in, _HEAD_WIDTH[head], hidden, seed, dtype=dtype)
        return cls(
            catalog=catalog,
            head=head,
            net=net,
            mean=np.zeros(n_in, dtype=np.float64),
            scale=np.ones(n_in, dtype=np.float64),
        )

    def fit_standardization(self, features: np.ndarray) -> None:
        """Store column means and scales of a training design matrix.

        Values are quantized to float32 so that a model and its
        serialized form compute identical predictions.
        """
        x = np.asarray(features, dtype=np.float64)
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        scale = np.where(std < 1e-8, 1.0, std)
        self.mean = mean.astype(np.float32).astype(np.float64)
        self.scale = scale.astype(np.float32).astype(np.float64)

    def standardize(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=np.float64) - self.mean) / self.scale

    def logits(self, features: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(self.standardize(features))
        return self.net.forward(x)

    def predict(self, features: np.ndarray) -> np.ndarray:
        """Head output per example: probability, value, or class simplex."""
        z = self.logits(features).astype(np.float64) / self.temperature
        if self.head == HEAD_SIGMOID:
            return sigmoid(z.reshape(-1))
        if self.head == HEAD_SIGMOID_AFFINE:
            return 2.0 * sigmoid(z.reshape(-1)) - 1.0
        return dense_softmax(z)

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self.net.params()):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(self.net.params()[name]).tobytes())
        digest.update(self.mean.tobytes())
        digest.update(self.scale.tobytes())
        return digest.hexdigest()


def _point_loss(
    model: PointModel, x: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray]:
    z = model.net.forward(x)
    if model.head == HEAD_SIGMOID:
        return binary_logloss(z, y)
    if model.head == HEAD_SIGMOID_AFFINE:
        return value_mse(z, y)
    return categorical_ce(z, y)


def point_loss_eval(model: PointModel, features: np.ndarray, targets: np.ndarray) -> float:
    """Loss of the model on a standardized-on-the-fly evaluation set."""
    x = np.atleast_2d(model.standardize(features)).astype(model.net.dtype)
    loss, _ = _point_loss(model, x, targets)
    return loss


def train_point_model(
    model: PointModel,
    train_features: np.ndarray,
    train_targets: np.ndarray,
    val_features: np.ndarray,
    val_targets: np.ndarray,
    config: TrainConfig,
    log_fn=None,
) -> list[EpochLog]:
    """Adam with early stopping on validation loss; mirrors surface training.

    Targets: 0/1 for the probability head, [0,1]-mapped values for the
    value head, one-hot (N, 3) rows for the selection head. The model's
    standardization is fitted here from the training features.
    """
    model.fit_standardization(train_features)
    x_train = np.atleast_2d(model.standardize(train_features)).astype(model.net.dtype)
    x_val = np.atleast_2d(model.standardize(val_features)).astype(model.net.dtype)
    y_train = np.asarray(train_targets, dtype=np.float64)
    y_val = np.asarray(val_targets, dtype=np.float64)
    n = x_train.shape[0]
    if n == 0:
        raise ValueError("empty training set")

    rng = np.random.default_rng(config.seed)
    state = AdamState()
    best_loss = np.inf
    best_params = {k: v.copy() for k, v in model.net.params().items()}
    logs: list[EpochLog] = []
    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        train_loss = 0.0
        seen = 0
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            model.net.zero_grads()
            loss, dz = _point_loss(model, x_train[idx], y_train[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            model.net.backward(dz)
            adam_step(
                model.net.params(), model.net.grads(), state,
                lr=config.learning_rate, beta1=config.beta1, beta2=config.beta2,
            )
            train_loss += loss * len(idx)
            seen += len(idx)
        val_loss, _ = _point_loss(model, x_val, y_val)
        if not np.isfinite(val_loss):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
        entry = EpochLog(epoch=epoch, train_loss=train_loss / seen, val_loss=val_loss)
        logs.append(entry)
        if log_fn is not None:
            log_fn(entry)
        improvement = best_loss - val_loss
        if val_loss < best_loss:
            best_loss = val_loss
            best_params = {k: v.copy() for k, v in model.net.params().items()}
        if epoch > 0 and improvement < config.early_stop_delta:
            break
    for key, value in model.net.params().items():
        value[...] = best_params[key]
    return logs


def grid_search_point(
    make_model,
    train_features: np.ndarray,
    train_targets: np.ndarray,
    val_features: np.ndarray,
    val_targets: np.ndarray,
    learning_rates: tuple[float, ...],
    batch_sizes: tuple[int, ...],
    base_config: TrainConfig,
    log_fn=None,
) -> tuple[PointModel, TrainConfig, list[EpochLog]]:
    """Train one model per (lr, batch) pair; keep the best validation loss."""
    best: tuple[PointModel, TrainConfig, list[EpochLog]] | None = None
    best_val = np.inf
    for lr in learning_rates:
        for batch in batch_sizes:
            config = replace(base_config, learning_rate=lr, batch_size=batch)
            model = make_model()
            logs = train_point_model(
                model, train_features, train_targets,
                val_features, val_targets, config, log_fn=log_fn,
            )
            val = min(log.val_loss for log in logs)
            if val < best_val:
                best_val = val
                best = (model, config, logs)
    assert best is not None, "empty hyperparameter grid"
    return best
