"""Three-scale fully convolutional surface model and its trainer.

The network evaluates the whole pitch at once and is supervised at a
single destination cell per example:

- three branches process the input grid at full, half, and quarter
  resolution (max-pooled copies of the input), each with two 5x5
  convolutions (32 then 64 filters, ReLU);
- each branch ends in a prediction head (1x1 conv to 32 + ReLU, then
  1x1 linear to 1 logit);
- coarse logits are upsampled (nearest) and merged with the next finer
  branch through 1x1 linear fusion layers;
- a final 1x1 stage (1->32 ReLU, 32->1 linear) emits the output logits.

Channel scaling: inputs are divided by fixed per-channel constants (one
per catalog channel, stored with the model) so locations, angles,
distances and counts arrive in comparable ranges.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from ..pitch import DEFAULT_GRID, GridSpec
from ..features.layers import CATALOGS, LayerStack
from ..nn import heads as H
from ..nn.adam import AdamState, adam_step
from ..nn.ops import FLOAT, Concat, Conv2D, Dense, MaxPool2, ReLU, UpsampleTo

# Fixed per-channel input divisors, keyed by channel name.
CHANNEL_SCALE = {
    "poss_location": 1.0,
    "opp_location": 1.0,
    "poss_velocity_x": 12.0,
    "poss_velocity_y": 12.0,
    "opp_velocity_x": 12.0,
    "opp_velocity_y": 12.0,
    "angle_to_goal_deg": 180.0,
    "sin_to_ball": 1.0,
    "cos_to_ball": 1.0,
    "sin_carrier_velocity": 1.0,
    "cos_carrier_velocity": 1.0,
    "dist_to_goal_m": 105.0,
    "dist_to_ball_m": 105.0,
    "poss_line_index": 2.0,
    "opp_line_index": 2.0,
    "outplayed_poss_between": 11.0,
    "outplayed_opp_between": 11.0,
    "outplayed_poss_behind": 11.0,
    "outplayed_opp_behind": 11.0,
    "pass_probability": 1.0,
}


def catalog_scale(catalog: str) -> np.ndarray:
    return np.array([CHANNEL_SCALE[name] for name in CATALOGS[catalog]], dtype=FLOAT)


class SoccerMapNet:
    """The bare three-scale grid network (logit output, no head)."""

    def __init__(self, c_in: int, seed: int, grid: GridSpec = DEFAULT_GRID,
                 dtype=FLOAT):
        rng = np.random.default_rng(seed)
        self.c_in = c_in
        self.grid = grid
        self.dtype = dtype
        h1, w1 = grid.width, grid.height  # H axis is pitch x, W axis pitch y
        h2, w2 = h1 // 2, w1 // 2

        def conv(name, ci, co, k):
            return Conv2D(name, ci, co, k, rng, dtype=dtype)

        self.pool_a = MaxPool2("pool_a")
        self.pool_b = MaxPool2("pool_b")
        self.branches = []
        for s in (1, 2, 4):
            self.branches.append(
                {
                    "conv_a": conv(f"s{s}/conv_a", c_in, 32, 5),
                    "relu_a": ReLU(),
                    "conv_b": conv(f"s{s}/conv_b", 32, 64, 5),
                    "relu_b": ReLU(),
                    "pred_hidden": conv(f"s{s}/pred_hidden", 64, 32, 1),
                    "pred_relu": ReLU(),
                    "pred_out": conv(f"s{s}/pred_out", 32, 1, 1),
                }
            )
        self.up_42 = UpsampleTo(h2, w2, "up_42")
        self.cat_2 = Concat("cat_2")
        self.fuse_2 = conv("fuse_2", 2, 1, 1)
        self.up_21 = UpsampleTo(h1, w1, "up_21")
        self.cat_1 = Concat("cat_1")
        self.fuse_1 = conv("fuse_1", 2, 1, 1)
        self.final_hidden = conv("final_hidden", 1, 32, 1)
        self.final_relu = ReLU()
        self.final_out = conv("final_out", 32, 1, 1)

    # -- parameter plumbing -------------------------------------------------

    def _param_layers(self):
        for br in self.branches:
            for key in ("conv_a", "conv_b", "pred_hidden", "pred_out"):
                yield br[key]
        yield self.fuse_2
        yield self.fuse_1
        yield self.final_hidden
        yield self.final_out

    def params(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for layer in self._param_layers():
            out.update(layer.params())
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for layer in self._param_layers():
            out.update(layer.grads())
        return out

    def zero_grads(self) -> None:
        for layer in self._param_layers():
            layer.zero_grads()

    def param_count(self) -> int:
        return sum(p.size for p in self.params().values())

    # -- forward / backward -------------------------------------------------

    def _branch_forward(
        self, idx: int, x: np.ndarray, cols: np.ndarray | None = None
    ) -> np.ndarray:
        br = self.branches[idx]
        h = br["relu_a"].forward(br["conv_a"].forward(x, cols=cols))
        h = br["relu_b"].forward(br["conv_b"].forward(h))
        h = br["pred_relu"].forward(br["pred_hidden"].forward(h))
        return br["pred_out"].forward(h)

    def _branch_backward(self, idx: int, dout: np.ndarray) -> None:
        br = self.branches[idx]
        d = br["pred_out"].backward(dout)
        d = br["pred_hidden"].backward(br["pred_relu"].backward(d))
        d = br["conv_b"].backward(br["relu_b"].backward(d))
        # conv_a consumes the (pooled) input directly: no upstream
        # parameters, so skip the expensive input-gradient correlation.
        br["conv_a"].backward(br["relu_a"].backward(d), need_dx=False)

    def _shared_cols(
        self, share: dict | None, idx: int, x: np.ndarray
    ) -> np.ndarray | None:
        if share is None:
            return None
        cols = share.get(("cols", idx))
        if cols is None:
            cols = self.branches[idx]["conv_a"].input_cols(x)
            share[("cols", idx)] = cols
        return cols

    def forward(self, x: np.ndarray, share: dict | None = None) -> np.ndarray:
        """(N, H, W, C) scaled input -> (N, H, W, 1) logits.

        ``share`` is an optional mutable cache for evaluating two nets on
        an identical input (the caller guarantees equality): the first net
        stores its pooled inputs and first-layer patch matrices there, the
        second reuses them. Inference only; it bypasses the pooling
        layers' saved state, so a later ``backward`` would be wrong.
        """
        if x.shape[3] != self.c_in:
            raise ValueError(f"expected {self.c_in} channels, got {x.shape[3]}")
        if share is not None and "pooled" in share:
            x2, x4 = share["pooled"]
        else:
            x2 = self.pool_a.forward(x)
            x4 = self.pool_b.forward(x2)
            if share is not None:
                share["pooled"] = (x2, x4)
        p1 = self._branch_forward(0, x, self._shared_cols(share, 0, x))
        p2 = self._branch_forward(1, x2, self._shared_cols(share, 1, x2))
        p4 = self._branch_forward(2, x4, self._shared_cols(share, 2, x4))
        f2 = self.fuse_2.forward(self.cat_2.forward(p2, self.up_42.forward(p4)))
        f1 = self.fuse_1.forward(self.cat_1.forward(p1, self.up_21.forward(f2)))
        h = self.final_relu.forward(self.final_hidden.forward(f1))
        return self.final_out.forward(h)

    def backward(self, dlogits: np.ndarray) -> None:
        d = self.final_out.backward(dlogits)
        d = self.final_hidden.backward(self.final_relu.backward(d))
        d = self.fuse_1.backward(d)
        dp1, dup = self.cat_1.backward(d)
        d2 = self.up_21.backward(dup)
        d2 = self.fuse_2.backward(d2)
        dp2, dup4 = self.cat_2.backward(d2)
        dp4 = self.up_42.backward(dup4)
        self._branch_backward(2, dp4)
        self._branch_backward(1, dp2)
        self._branch_backward(0, dp1)


@dataclass
class SurfaceModel:
    """A trained (or initializing) surface model: net + head + scaling."""

    catalog: str
    head: str
    net: SoccerMapNet
    input_scale: np.ndarray
    temperature: float = 1.0

    @classmethod
    def create(cls, catalog: str, head: str, seed: int,
               grid: GridSpec = DEFAULT_GRID) -> "SurfaceModel":
        if head not in H.HEADS:
            raise ValueError(f"unknown head {head!r}")
        c_in = len(CATALOGS[catalog])
        return cls(
            catalog=catalog,
            head=head,
            net=SoccerMapNet(c_in, seed=seed, grid=grid),
            input_scale=catalog_scale(catalog),
        )

    def prepare(self, stacks: list[LayerStack]) -> np.ndarray:
        """Stack and scale: list of (C, H, W) -> (N, H, W, C) float32."""
        data = np.stack([s.data for s in stacks])        # (N, C, H, W)
        data = data.transpose(0, 2, 3, 1) / self.input_scale
        return np.ascontiguousarray(data, dtype=FLOAT)

    def logits(
        self, stacks: list[LayerStack], share: dict | None = None
    ) -> np.ndarray:
        if share is not None and "prepared" in share:
            x = share["prepared"]
        else:
            x = self.prepare(stacks)
            if share is not None:
                share["prepared"] = x
        return self.net.forward(x, share=share)

    def surface(
        self,
        stack: LayerStack,
        temperature: float | None = None,
        share: dict | None = None,
    ) -> np.ndarray:
        """One (H, W) output surface with the head (and temperature) applied.

        ``share`` lets two models with identical catalogs evaluate the
        same stack while reusing the input-side work (see
        :meth:`SoccerMapNet.forward`).
        """
        t = self.temperature if temperature is None else temperature
        z = self.logits([stack], share=share) / t
        return H.apply_head(z, self.head)[0, :, :, 0]

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self.net.params()):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(self.net.params()[name]).tobytes())
        return digest.hexdigest()


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    beta1: float = 0.9
    beta2: float = 0.999
    early_stop_delta: float = 1e-3
    max_epochs: int = 20
    seed: int = 0
    micro_chunk: int = 4          # examples per forward/backward slice
    val_max_examples: int = 2048  # validation subsample for the stop rule

    def validate(self) -> None:
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ValueError("bad optimizer config")
        if self.micro_chunk < 1:
            raise ValueError("micro_chunk must be >= 1")


LR_GRID = (1e-3, 1e-4, 1e-5, 1e-6)
BATCH_GRID = (16, 32)
DELTA_PROBABILITY = 1e-3   # early-stop delta for probability-output models
DELTA_VALUE = 1e-5         # early-stop delta for value-output models


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float


def _batch_loss(
    model: SurfaceModel,
    stacks: list[LayerStack],
    pixels: np.ndarray,
    targets: np.ndarray,
    chunk: int,
    backprop: bool,
) -> float:
    """Mean single-cell loss over a batch, optionally accumulating grads."""
    total = 0.0
    n = len(stacks)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        x = model.prepare(stacks[lo:hi])
        z = model.net.forward(x)
        loss, dz = H.single_pixel_loss(z, pixels[lo:hi], targets[lo:hi], model.head)
        weight = (hi - lo) / n
        total += loss * weight
        if backprop:
            model.net.backward(dz * weight)
    return total


def train_surface_model(
    model: SurfaceModel,
    train_examples: list[tuple[LayerStack, tuple[int, int], float]],
    val_examples: list[tuple[LayerStack, tuple[int, int], float]],
    config: TrainConfig,
    stack_loader=None,
    log_fn=None,
) -> list[EpochLog]:
    """Optimize the model in place; returns per-epoch loss logs.

    Examples are (stack, destination_cell, target) triples. For large
    datasets pass lightweight placeholders plus a ``stack_loader``
    callable that materializes LayerStacks on demand (stacks for one
    batch at a time), keeping memory flat.
    """
    config.validate()
    if not train_examples:
        raise ValueError("empty training set")
    rng = np.random.default_rng(config.seed)
    state = AdamState()
    loader = stack_loader or (lambda item: item)

    val_used = val_examples
    if len(val_used) > config.val_max_examples:
        idx = rng.choice(len(val_used), size=config.val_max_examples, replace=False)
        val_used = [val_used[i] for i in idx]

    def evaluate(examples) -> float:
        if not examples:
            return float("nan")
        total = 0.0
        for lo in range(0, len(examples), config.micro_chunk):
            part = [loader(e) for e in examples[lo : lo + config.micro_chunk]]
            stacks = [p[0] for p in part]
            pix = np.array([p[1] for p in part])
            tgt = np.array([p[2] for p in part], dtype=np.float64)
            total += _batch_loss(model, stacks, pix, tgt, config.micro_chunk, False) * len(part)
        return total / len(examples)

    logs: list[EpochLog] = []
    best_val = np.inf
    best_params: dict[str, np.ndarray] | None = None
    order = np.arange(len(train_examples))
    for epoch in range(config.max_epochs):
        rng.shuffle(order)
        running = 0.0
        seen = 0
        for lo in range(0, len(order), config.batch_size):
            batch_idx = order[lo : lo + config.batch_size]
            part = [loader(train_examples[i]) for i in batch_idx]
            stacks = [p[0] for p in part]
            pix = np.array([p[1] for p in part])
            tgt = np.array([p[2] for p in part], dtype=np.float64)
            model.net.zero_grads()
            loss = _batch_loss(model, stacks, pix, tgt, config.micro_chunk, True)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss {loss} at epoch {epoch}, batch {lo // config.batch_size}"
                )
            adam_step(
                model.net.params(), model.net.grads(), state,
                lr=config.learning_rate, beta1=config.beta1, beta2=config.beta2,
            )
            running += loss * len(batch_idx)
            seen += len(batch_idx)
        train_loss = running / seen
        val_loss = evaluate(val_used)
        logs.append(EpochLog(epoch=epoch, train_loss=train_loss, val_loss=val_loss))
        if log_fn:
            log_fn(logs[-1])
        if np.isfinite(val_loss) and val_loss < best_val - 1e-12:
            improved = best_val - val_loss
            best_val = val_loss
            best_params = {k: v.copy() for k, v in model.net.params().items()}
            if improved < config.early_stop_delta and epoch > 0:
                break
        elif epoch > 0:
            break  # no improvement at all
    if best_params is not None:
        params = model.net.params()
        for k, v in best_params.items():
            params[k][...] = v
    return logs


def grid_search_surface(
    make_model,
    train_examples,
    val_examples,
    base_config: TrainConfig,
    learning_rates=LR_GRID,
    batch_sizes=BATCH_GRID,
    stack_loader=None,
) -> tuple[SurfaceModel, TrainConfig, list[EpochLog]]:
    """Train one model per (lr, batch) pair; keep the best validation loss.

    ``make_model`` is a zero-argument factory so every run starts from
    identically seeded initial parameters.
    """
    best = None
    for lr in learning_rates:
        for bs in batch_sizes:
            config = replace(base_config, learning_rate=lr, batch_size=bs)
            model = make_model()
            logs = train_surface_model(
                model, train_examples, val_examples, config, stack_loader=stack_loader
            )
            val = min(l.val_loss for l in logs)
            if best is None or val < best[0]:
                best = (val, model, config, logs)
    _, model, config, logs = best
    return model, config, logs
