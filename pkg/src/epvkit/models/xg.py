"""Event-based expected-goals baseline: boosted depth-limited trees.

A small in-repo gradient-boosting learner over shot descriptors (location,
distance/angle to goal, attack type, header flag) with logistic loss and
Newton leaf values. Hyperparameters are selected by k-fold cross-validated
grid search; the fitted ensemble then serves as an input feature to the
action-selection and shot-value models.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from ..features.geometry import geometry
from ..nn.heads import sigmoid

ATTACK_TYPES = ("regular", "set_piece", "penalty")

XG_FEATURES = (
    "x",
    "y",
    "dist_to_goal_m",
    "angle_to_goal_deg",
    "type_regular",
    "type_set_piece",
    "type_penalty",
    "is_header",
)

TREE_GRID = (50, 100, 250)
DEPTH_GRID = (3, 5, 10)
SHRINKAGE_GRID = (1e-3, 1e-2, 1e-1)


def xg_features(
    x: float, y: float, attack_type: str = "regular", is_header: bool = False
) -> np.ndarray:
    """One shot's descriptor row."""
    if attack_type not in ATTACK_TYPES:
        raise ValueError(f"unknown attack type {attack_type!r}")
    geo = geometry(np.array([x, y], dtype=float))
    onehot = [float(attack_type == t) for t in ATTACK_TYPES]
    return np.array(
        [x, y, geo.distance_m, geo.angle_deg, *onehot, float(is_header)],
        dtype=np.float64,
    )


@dataclass
class Tree:
    """Flat-array binary regression tree.

    ``feature[i] < 0`` marks node i as a leaf whose prediction is
    ``value[i]``; internal nodes route ``x[feature] <= threshold`` to
    ``left`` and the rest to ``right``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        node = np.zeros(x.shape[0], dtype=np.int64)
        out = np.zeros(x.shape[0], dtype=np.float64)
        active = np.arange(x.shape[0])
        while active.size:
            cur = node[active]
            feat = self.feature[cur]
            leaf = feat < 0
            if leaf.any():
                sel = active[leaf]
                out[sel] = self.value[node[sel]]
            inner = active[~leaf]
            if inner.size:
                cur = node[inner]
                go_left = (
                    x[inner, self.feature[cur]] <= self.threshold[cur]
                )
                node[inner] = np.where(go_left, self.left[cur], self.right[cur])
            active = inner
        return out


def _fit_tree(
    x: np.ndarray,
    grad: np.ndarray,
    hess: np.ndarray,
    max_depth: int,
    lam: float = 1.0,
    min_child_hessian: float = 1e-3,
) -> Tree:
    """Greedy exact-split regression tree on (gradient, hessian) targets.

    Split gain is the Newton objective improvement
    GL^2/(HL+lam) + GR^2/(HR+lam) - G^2/(H+lam); leaves predict
    -G/(H+lam). Ties keep the first (lowest feature index, then lowest
    threshold) candidate, which makes fitting deterministic.
    """
    n, n_feat = x.shape
    features: list[int] = []
    thresholds: list[float] = []
    lefts: list[int] = []
    rights: list[int] = []
    values: list[float] = []

    order = np.argsort(x, axis=0, kind="stable")

    def new_node() -> int:
        features.append(-1)
        thresholds.append(0.0)
        lefts.append(-1)
        rights.append(-1)
        values.append(0.0)
        return len(features) - 1

    def build(idx: np.ndarray, depth: int, node: int) -> None:
        g_sum = grad[idx].sum()
        h_sum = hess[idx].sum()
        values[node] = -g_sum / (h_sum + lam)
        if depth >= max_depth or idx.size < 2:
            return
        parent_score = g_sum * g_sum / (h_sum + lam)
        best_gain = 1e-12
        best: tuple[int, float] | None = None
        for f in range(n_feat):
            col = x[idx, f]
            srt = np.argsort(col, kind="stable")
            xs = col[srt]
            gs = np.cumsum(grad[idx][srt])
            hs = np.cumsum(hess[idx][srt])
            # candidate split after position i (0-based), i in [0, n-2],
            # only where the feature value actually changes
            valid = xs[:-1] < xs[1:]
            if not valid.any():
                continue
            gl, hl = gs[:-1], hs[:-1]
            gr, hr = g_sum - gl, h_sum - hl
            ok = valid & (hl >= min_child_hessian) & (hr >= min_child_hessian)
            if not ok.any():
                continue
            gain = np.where(
                ok,
                gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent_score,
                -np.inf,
            )
            i = int(np.argmax(gain))
            if gain[i] > best_gain:
                best_gain = float(gain[i])
                best = (f, float(0.5 * (xs[i] + xs[i + 1])))
        if best is None:
            return
        f, thr = best
        go_left = x[idx, f] <= thr
        left_idx, right_idx = idx[go_left], idx[~go_left]
        if left_idx.size == 0 or right_idx.size == 0:
            return
        li, ri = new_node(), new_node()
        features[node] = f
        thresholds[node] = thr
        lefts[node] = li
        rights[node] = ri
        build(left_idx, depth + 1, li)
        build(right_idx, depth + 1, ri)

    root = new_node()
    build(np.arange(n), 0, root)
    return Tree(
        feature=np.array(features, dtype=np.int64),
        threshold=np.array(thresholds, dtype=np.float64),
        left=np.array(lefts, dtype=np.int64),
        right=np.array(rights, dtype=np.int64),
        value=np.array(values, dtype=np.float64),
    )


@dataclass
class XgModel:
    """Boosted ensemble with stored feature standardization."""

    mean: np.ndarray
    scale: np.ndarray
    base_logit: float
    shrinkage: float
    max_depth: int
    trees: list[Tree] = field(default_factory=list)

    def standardize(self, features: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(np.asarray(features, dtype=np.float64)) - self.mean) / self.scale

    def predict_logit(self, features: np.ndarray) -> np.ndarray:
        x = self.standardize(features)
        z = np.full(x.shape[0], self.base_logit, dtype=np.float64)
        for tree in self.trees:
            z += self.shrinkage * tree.predict(x)
        return z

    def staged_logits(self, features: np.ndarray) -> np.ndarray:
        """(n_trees + 1, N) partial-sum logits, first row the base score."""
        x = self.standardize(features)
        z = np.full(x.shape[0], self.base_logit, dtype=np.float64)
        stages = [z.copy()]
        for tree in self.trees:
            z = z + self.shrinkage * tree.predict(x)
            stages.append(z.copy())
        return np.array(stages)

    def predict(self, features: np.ndarray) -> np.ndarray:
        """Goal probability per shot, in (0, 1)."""
        return sigmoid(self.predict_logit(features))

    def checksum(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.mean.tobytes())
        digest.update(self.scale.tobytes())
        digest.update(np.float64(self.base_logit).tobytes())
        digest.update(np.float64(self.shrinkage).tobytes())
        for tree in self.trees:
            for arr in (tree.feature, tree.threshold, tree.left, tree.right, tree.value):
                digest.update(np.ascontiguousarray(arr).tobytes())
        return digest.hexdigest()


def fit_xg(
    features: np.ndarray,
    outcomes: np.ndarray,
    n_trees: int,
    max_depth: int,
    shrinkage: float,
    lam: float = 1.0,
) -> XgModel:
    """Newton boosting with logistic loss on 0/1 shot outcomes."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(outcomes, dtype=np.float64).reshape(-1)
    if set(np.unique(y)) - {0.0, 1.0}:
        raise ValueError("shot outcomes must be 0/1")
    if y.min() == y.max():
        raise ValueError("training shots are single-class; cannot fit")
    # Quantize everything the serialized form stores as float32, so a
    # fitted model and its saved/loaded copy predict identically.
    mean = x.mean(axis=0).astype(np.float32).astype(np.float64)
    std = x.std(axis=0)
    scale = np.where(std < 1e-8, 1.0, std).astype(np.float32).astype(np.float64)
    xs = (x - mean) / scale
    rate = y.mean()
    model = XgModel(
        mean=mean,
        scale=scale,
        base_logit=float(np.float32(np.log(rate / (1.0 - rate)))),
        shrinkage=float(np.float32(shrinkage)),
        max_depth=max_depth,
    )
    z = np.full(y.size, model.base_logit, dtype=np.float64)
    for _ in range(n_trees):
        p = sigmoid(z)
        grad = p - y
        hess = p * (1.0 - p)
        tree = _fit_tree(xs, grad, hess, max_depth, lam=lam)
        tree.threshold = tree.threshold.astype(np.float32).astype(np.float64)
        tree.value = tree.value.astype(np.float32).astype(np.float64)
        model.trees.append(tree)
        z += model.shrinkage * tree.predict(xs)
    return model


def xg_logloss(model: XgModel, features: np.ndarray, outcomes: np.ndarray) -> float:
    p = np.clip(model.predict(features), 1e-7, 1 - 1e-7)
    y = np.asarray(outcomes, dtype=np.float64).reshape(-1)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def cross_validated_xg(
    features: np.ndarray,
    outcomes: np.ndarray,
    seed: int = 0,
    k: int = 10,
    tree_grid: tuple[int, ...] = TREE_GRID,
    depth_grid: tuple[int, ...] = DEPTH_GRID,
    shrinkage_grid: tuple[float, ...] = SHRINKAGE_GRID,
    log_fn=None,
) -> tuple[XgModel, dict]:
    """Grid search with k-fold CV; refit the winner on all data.

    Returns the refit model and a report with per-combination mean CV
    loss and the selected hyperparameters.
    """
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(outcomes, dtype=np.float64).reshape(-1)
    n = y.size
    if n < k:
        raise ValueError(f"need at least {k} shots for {k}-fold selection")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    folds = np.array_split(order, k)

    results = []
    best_key: tuple[int, int, float] | None = None
    best_loss = np.inf
    for n_trees in tree_grid:
        for depth in depth_grid:
            for lr in shrinkage_grid:
                losses = []
                for fi in range(k):
                    val_idx = folds[fi]
                    train_idx = np.concatenate(
                        [folds[j] for j in range(k) if j != fi]
                    )
                    if y[train_idx].min() == y[train_idx].max():
                        continue
                    model = fit_xg(x[train_idx], y[train_idx], n_trees, depth, lr)
                    losses.append(xg_logloss(model, x[val_idx], y[val_idx]))
                if not losses:
                    continue
                mean_loss = float(np.mean(losses))
                results.append(
                    {"trees": n_trees, "depth": depth, "shrinkage": lr, "cv_logloss": mean_loss}
                )
                if log_fn is not None:
                    log_fn(results[-1])
                if mean_loss < best_loss:
                    best_loss = mean_loss
                    best_key = (n_trees, depth, lr)
    if best_key is None:
        raise ValueError("no viable hyperparameter combination")
    n_trees, depth, lr = best_key
    final = fit_xg(x, y, n_trees, depth, lr)
    report = {
        "selected": {"trees": n_trees, "depth": depth, "shrinkage": lr},
        "cv_logloss": best_loss,
        "grid": results,
    }
    return final, report
