"""End-to-end orchestration: synthetic corpus to trained, calibrated bundle.

The training order follows the dependency chain between components:
expected-goals first (it feeds the shot-value and action-selection
features), then the pass-success surface (its output is an input channel
of the pass-value surfaces) and the drive-success model (its output is a
drive-value feature). Every step is deterministic given the config and
seed, so reruns produce byte-identical artifacts.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .calibration import (
    expected_calibration_error,
    fit_temperature,
    logloss as logloss_metric,
)
from .data.io import build_matches, parse_events, parse_tracking, \
    serialize_events, serialize_tracking
from .data.records import Action, DatasetSplit, EventRecord, Match, TrackingSnapshot
from .data.rewards import goals_from_events, segment_and_label, split_dataset
from .data.synthetic import SynthConfig, synthesize_match
from .features.layers import rasterize_layers
from .models.bundle import (
    ALL_ROLES,
    ModelBundle,
    POINT_ROLES,
    SURFACE_ROLES,
    create_role_model,
    load_model_file,
    save_model_file,
)
from .models.point import (
    ACTION_CLASSES,
    PointModel,
    point_features,
    snapshot_context,
    train_point_model,
    grid_search_point,
)
from .models.soccermap import (
    BATCH_GRID,
    DELTA_PROBABILITY,
    DELTA_VALUE,
    LR_GRID,
    SurfaceModel,
    TrainConfig,
    grid_search_surface,
    train_surface_model,
)
from .models.xg import cross_validated_xg, fit_xg, xg_features
from .pitch import DEFAULT_GRID, GridSpec

# Roles in dependency order; entries later in the tuple may consume the
# outputs of earlier ones.
TRAIN_ORDER = (
    "xg",
    "pass_success",
    "pass_selection",
    "drive_probability",
    "pass_value_success",
    "pass_value_miss",
    "drive_value_success",
    "drive_value_miss",
    "shot_value",
    "action_selection",
)

ROLE_DEPS: dict[str, tuple[str, ...]] = {
    "pass_value_success": ("pass_success",),
    "pass_value_miss": ("pass_success",),
    "drive_value_success": ("drive_probability",),
    "drive_value_miss": ("drive_probability",),
    "shot_value": ("xg",),
    "action_selection": ("xg",),
}

# Per-role seed offsets so each model draws distinct initial parameters.
ROLE_SEED_OFFSET = {role: i for i, role in enumerate(TRAIN_ORDER)}

# Value heads converge on a finer loss scale than probability heads.
_VALUE_ROLES = frozenset(
    ("pass_value_success", "pass_value_miss",
     "drive_value_success", "drive_value_miss", "shot_value")
)

BUNDLE_DIRNAME = "bundle"
MATCHES_DIRNAME = "matches"

_CONFIG_KEYS = {
    "data_dir", "seed", "n_matches", "match_minutes", "epsilon_s",
    "split_ratios", "grid_search", "learning_rate", "batch_size",
    "max_epochs", "selection_calibration_max", "service_port",
    "model_overrides",
}
_OVERRIDE_KEYS = {"learning_rate", "batch_size", "max_epochs"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run needs: paths, seeds, and optimizer settings."""

    data_dir: str = "."
    seed: int = 0
    n_matches: int = 8
    match_minutes: float = 90.0
    epsilon_s: float = 15.0
    split_ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    grid_search: bool = False
    learning_rate: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 20
    selection_calibration_max: int = 512
    service_port: int = 8008
    model_overrides: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.n_matches < 1:
            raise ConfigError("n_matches must be >= 1")
        if self.match_minutes < 1.0:
            raise ConfigError("match_minutes must be >= 1")
        if self.epsilon_s < 0:
            raise ConfigError("epsilon_s must be >= 0")
        if len(self.split_ratios) != 3 or abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ConfigError("split_ratios must be three values summing to 1")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("bad optimizer defaults")
        for role, override in self.model_overrides.items():
            if role not in ALL_ROLES:
                raise ConfigError(f"model_overrides: unknown role {role!r}")
            unknown = set(override) - _OVERRIDE_KEYS
            if unknown:
                raise ConfigError(
                    f"model_overrides[{role}]: unknown keys {sorted(unknown)}"
                )

    def to_dict(self) -> dict:
        return {
            "data_dir": self.data_dir,
            "seed": self.seed,
            "n_matches": self.n_matches,
            "match_minutes": self.match_minutes,
            "epsilon_s": self.epsilon_s,
            "split_ratios": list(self.split_ratios),
            "grid_search": self.grid_search,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "selection_calibration_max": self.selection_calibration_max,
            "service_port": self.service_port,
            "model_overrides": self.model_overrides,
        }

    def train_config(self, role: str) -> TrainConfig:
        override = self.model_overrides.get(role, {})
        delta = DELTA_VALUE if role in _VALUE_ROLES else DELTA_PROBABILITY
        return TrainConfig(
            learning_rate=float(override.get("learning_rate", self.learning_rate)),
            batch_size=int(override.get("batch_size", self.batch_size)),
            max_epochs=int(override.get("max_epochs", self.max_epochs)),
            early_stop_delta=delta,
            seed=self.seed + ROLE_SEED_OFFSET.get(role, 0),
        )

    @property
    def matches_dir(self) -> Path:
        return Path(self.data_dir) / MATCHES_DIRNAME

    @property
    def bundle_dir(self) -> Path:
        return Path(self.data_dir) / BUNDLE_DIRNAME


def load_config(
    path: str | Path | None = None,
    overrides: dict | None = None,
    env: dict | None = None,
) -> PipelineConfig:
    """Build the run config from an optional JSON file plus overrides.

    Key precedence: explicit overrides, then the file, then the
    ``EPV_DATA_DIR`` environment variable (for ``data_dir``), then
    defaults. Unknown keys are rejected.
    """
    env = os.environ if env is None else env
    raw: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    merged = dict(raw)
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    if "data_dir" not in merged and env.get("EPV_DATA_DIR"):
        merged["data_dir"] = env["EPV_DATA_DIR"]
    if "split_ratios" in merged:
        merged["split_ratios"] = tuple(float(v) for v in merged["split_ratios"])
    config = PipelineConfig(**merged)
    config.validate()
    return config


def config_hash(config: PipelineConfig) -> str:
    canonical = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


# ---------------------------------------------------------------------------
# corpus
# ---------------------------------------------------------------------------

def label_matches(matches: dict[str, Match], epsilon_s: float) -> None:
    """Fill every event's reward from goals, in place."""
    for match in matches.values():
        goals = goals_from_events(match.events)
        match.events = segment_and_label(match.events, goals, epsilon=epsilon_s)


def synthesize_corpus(config: PipelineConfig) -> dict[str, Match]:
    """Generate, assemble, and reward-label the configured corpus.

    Shorter-than-regulation matches (``match_minutes``) keep the same
    event density by scaling the action count with the duration.
    """
    scale = config.match_minutes / 90.0
    synth = SynthConfig(
        duration_minutes=config.match_minutes,
        actions_per_match=max(10.0, 1433.0 * scale),
    )
    all_frames: list[TrackingSnapshot] = []
    all_events: list[EventRecord] = []
    for i in range(config.n_matches):
        match_id = f"match{i:03d}"
        frames, events = synthesize_match(match_id, config.seed + i, synth)
        all_frames.extend(frames)
        all_events.extend(events)
    matches = build_matches(all_frames, all_events)
    label_matches(matches, config.epsilon_s)
    return matches


def write_corpus(matches: dict[str, Match], directory: str | Path) -> dict[str, str]:
    """Write one .tracking and .events file per match; returns checksums."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    checksums: dict[str, str] = {}
    for match_id in sorted(matches):
        match = matches[match_id]
        for suffix, text in (
            (".tracking", serialize_tracking(match.snapshots)),
            (".events", serialize_events(match.events)),
        ):
            path = directory / f"{match_id}{suffix}"
            path.write_text(text)
            checksums[path.name] = hashlib.sha256(text.encode()).hexdigest()
    return checksums


def read_corpus(directory: str | Path, epsilon_s: float) -> dict[str, Match]:
    """Load a written corpus and re-derive resolutions and rewards."""
    directory = Path(directory)
    if not directory.exists():
        raise FileNotFoundError(f"corpus directory not found: {directory}")
    frames: list[TrackingSnapshot] = []
    events: list[EventRecord] = []
    tracking_files = sorted(directory.glob("*.tracking"))
    if not tracking_files:
        raise FileNotFoundError(f"no .tracking files under {directory}")
    for path in tracking_files:
        match_frames = parse_tracking(path.read_text())
        events_path = path.with_suffix(".events")
        if not events_path.exists():
            raise FileNotFoundError(f"missing events file: {events_path}")
        frames.extend(match_frames)
        events.extend(parse_events(events_path.read_text(), match_frames))
    matches = build_matches(frames, events)
    label_matches(matches, epsilon_s)
    return matches


def corpus_split(matches: dict[str, Match], config: PipelineConfig) -> DatasetSplit:
    return split_dataset(sorted(matches), ratios=config.split_ratios, seed=config.seed)


def _events_in(
    matches: dict[str, Match], ids, action: Action | None = None
) -> list[tuple[Match, EventRecord]]:
    out = []
    for match_id in sorted(ids):
        match = matches[match_id]
        for ev in match.events:
            if action is None or ev.action == action:
                if match.has_frame(ev.frame_index):
                    out.append((match, ev))
    return out


# ---------------------------------------------------------------------------
# example builders
# ---------------------------------------------------------------------------

def surface_examples(
    matches: dict[str, Match], ids, role: str, grid: GridSpec = DEFAULT_GRID
) -> list[tuple[TrackingSnapshot, tuple[int, int], float]]:
    """(snapshot, destination cell, target) triples for one surface role.

    Stacks are intentionally not materialized here; pair these with
    :func:`surface_stack_loader` to rasterize per batch.
    """
    examples = []
    for match, ev in _events_in(matches, ids, Action.PASS):
        if role == "pass_value_success" and ev.outcome != 1:
            continue
        if role == "pass_value_miss" and ev.outcome != 0:
            continue
        cell = grid.cell_of(ev.dest_x, ev.dest_y)
        if role == "pass_success":
            target = float(ev.outcome)
        elif role == "pass_selection":
            target = 1.0
        else:
            target = (ev.reward + 1.0) / 2.0
        examples.append((match.snapshot_at(ev.frame_index), cell, target))
    return examples


def surface_stack_loader(
    role: str,
    pass_success: SurfaceModel | None = None,
    grid: GridSpec = DEFAULT_GRID,
    cache_size: int = 8,
):
    """Materializes (stack, cell, target) from a placeholder example."""
    if role in ("pass_success", "pass_selection"):
        catalog = role

        def load(example):
            snapshot, cell, target = example
            return rasterize_layers(snapshot, catalog, grid=grid), cell, target

        return load

    if role not in ("pass_value_success", "pass_value_miss"):
        raise ValueError(f"not a surface role: {role!r}")
    if pass_success is None:
        raise ValueError(f"{role} needs the trained pass_success model")
    cache: dict[tuple[str, int], np.ndarray] = {}

    def load_value(example):
        snapshot, cell, target = example
        key = (snapshot.match_id, snapshot.frame_index)
        surface = cache.get(key)
        if surface is None:
            surface = pass_success.surface(
                rasterize_layers(snapshot, "pass_success", grid=grid)
            )
            if len(cache) >= cache_size:
                cache.pop(next(iter(cache)))
            cache[key] = surface
        stack = rasterize_layers(
            snapshot, "pass_value", {"pass_probability": surface}, grid=grid
        )
        return stack, cell, target

    return load_value


def xg_dataset(matches: dict[str, Match], ids) -> tuple[np.ndarray, np.ndarray]:
    rows, outcomes = [], []
    for _match, ev in _events_in(matches, ids, Action.SHOT):
        rows.append(xg_features(ev.origin_x, ev.origin_y, is_header=ev.is_header))
        outcomes.append(float(ev.outcome))
    if not rows:
        return np.zeros((0, 0)), np.zeros(0)
    return np.stack(rows), np.array(outcomes)


def point_dataset(
    matches: dict[str, Match],
    ids,
    role: str,
    deps: dict[str, object],
) -> tuple[np.ndarray, np.ndarray]:
    """Design matrix and targets for one point-model role.

    ``deps`` holds the trained upstream models the role's features need
    (drive success probability, expected goals).
    """
    rows: list[np.ndarray] = []
    targets: list = []

    def shot_xg_at(x: float, y: float, is_header: bool = False) -> float:
        return float(deps["xg"].predict(xg_features(x, y, is_header=is_header))[0])

    if role == "drive_probability":
        for match, ev in _events_in(matches, ids, Action.DRIVE):
            snap = match.snapshot_at(ev.frame_index)
            rows.append(point_features(snap, "drive_probability"))
            targets.append(float(ev.outcome))
    elif role in ("drive_value_success", "drive_value_miss"):
        wanted = 1 if role.endswith("success") else 0
        dp: PointModel = deps["drive_probability"]
        for match, ev in _events_in(matches, ids, Action.DRIVE):
            if ev.outcome != wanted:
                continue
            snap = match.snapshot_at(ev.frame_index)
            context = snapshot_context(snap)
            p_drive = float(dp.predict(
                point_features(snap, "drive_probability", context=context)
            )[0])
            rows.append(point_features(
                snap, "drive_value",
                {"drive_success_probability": p_drive}, context=context,
            ))
            targets.append((ev.reward + 1.0) / 2.0)
    elif role == "shot_value":
        for match, ev in _events_in(matches, ids, Action.SHOT):
            snap = match.snapshot_at(ev.frame_index)
            xg = shot_xg_at(ev.origin_x, ev.origin_y, ev.is_header)
            rows.append(point_features(
                snap, "shot_value", {"shot_xg": xg, "is_header": ev.is_header}
            ))
            targets.append((ev.reward + 1.0) / 2.0)
    elif role == "action_selection":
        class_index = {name: i for i, name in enumerate(ACTION_CLASSES)}
        for match, ev in _events_in(matches, ids):
            snap = match.snapshot_at(ev.frame_index)
            xg = shot_xg_at(ev.origin_x, ev.origin_y)
            rows.append(point_features(snap, "action_selection", {"shot_xg": xg}))
            onehot = np.zeros(len(ACTION_CLASSES))
            onehot[class_index[ev.action.value]] = 1.0
            targets.append(onehot)
    else:
        raise ValueError(f"not a point role: {role!r}")

    if not rows:
        return np.zeros((0, 0)), np.zeros(0)
    return np.stack(rows), np.asarray(targets, dtype=np.float64)


# ---------------------------------------------------------------------------
# training driver
# ---------------------------------------------------------------------------

@dataclass
class RoleReport:
    role: str
    examples: int
    val_examples: int
    epochs: int = 0
    train_loss: float = float("nan")
    val_loss: float = float("nan")
    config: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "role": self.role,
            "examples": self.examples,
            "val_examples": self.val_examples,
            "epochs": self.epochs,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "config": self.config,
            "extra": self.extra,
        }


def train_role(
    role: str,
    config: PipelineConfig,
    matches: dict[str, Match],
    split: DatasetSplit,
    deps: dict[str, object],
    log_fn=None,
):
    """Train one role; returns (model, RoleReport)."""
    missing = [d for d in ROLE_DEPS.get(role, ()) if d not in deps]
    if missing:
        raise ValueError(f"{role}: missing dependencies {missing}")

    if role == "xg":
        x_train, y_train = xg_dataset(matches, split.train | split.validation)
        if x_train.shape[0] < 10 or len(set(y_train.tolist())) < 2:
            raise ValueError(
                f"xg: need >= 10 shots with both outcomes, have {x_train.shape[0]}"
            )
        report = RoleReport(role=role, examples=int(x_train.shape[0]), val_examples=0)
        if config.grid_search:
            model, cv_report = cross_validated_xg(
                x_train, y_train, seed=config.seed
            )
            report.extra = cv_report
        else:
            model = fit_xg(x_train, y_train, n_trees=100, max_depth=3, shrinkage=0.1)
            report.extra = {"selected": {"n_trees": 100, "max_depth": 3,
                                         "shrinkage": 0.1}}
        return model, report

    train_config = config.train_config(role)
    seed = train_config.seed

    if role in SURFACE_ROLES:
        train_ex = surface_examples(matches, split.train, role)
        val_ex = surface_examples(matches, split.validation, role)
        if not train_ex or not val_ex:
            raise ValueError(f"{role}: empty train or validation set")
        loader = surface_stack_loader(role, deps.get("pass_success"))
        report = RoleReport(role=role, examples=len(train_ex),
                            val_examples=len(val_ex))
        if config.grid_search:
            model, used_config, logs = grid_search_surface(
                lambda: create_role_model(role, seed),
                train_ex, val_ex, train_config,
                learning_rates=LR_GRID, batch_sizes=BATCH_GRID,
                stack_loader=loader,
            )
            report.config = {"learning_rate": used_config.learning_rate,
                             "batch_size": used_config.batch_size}
        else:
            model = create_role_model(role, seed)
            logs = train_surface_model(
                model, train_ex, val_ex, train_config,
                stack_loader=loader, log_fn=log_fn,
            )
            report.config = {"learning_rate": train_config.learning_rate,
                             "batch_size": train_config.batch_size}
        report.epochs = len(logs)
        report.train_loss = logs[-1].train_loss
        report.val_loss = min(log.val_loss for log in logs)
        return model, report

    if role in POINT_ROLES:
        x_train, y_train = point_dataset(matches, split.train, role, deps)
        x_val, y_val = point_dataset(matches, split.validation, role, deps)
        if x_train.shape[0] == 0 or x_val.shape[0] == 0:
            raise ValueError(f"{role}: empty train or validation set")
        report = RoleReport(role=role, examples=int(x_train.shape[0]),
                            val_examples=int(x_val.shape[0]))
        if config.grid_search:
            model, used_config, logs = grid_search_point(
                lambda: create_role_model(role, seed),
                x_train, y_train, x_val, y_val,
                learning_rates=LR_GRID, batch_sizes=BATCH_GRID,
                base_config=train_config,
            )
            report.config = {"learning_rate": used_config.learning_rate,
                             "batch_size": used_config.batch_size}
        else:
            model = create_role_model(role, seed)
            logs = train_point_model(
                model, x_train, y_train, x_val, y_val, train_config,
                log_fn=log_fn,
            )
            report.config = {"learning_rate": train_config.learning_rate,
                             "batch_size": train_config.batch_size}
        report.epochs = len(logs)
        report.train_loss = logs[-1].train_loss
        report.val_loss = min(log.val_loss for log in logs)
        return model, report

    raise ValueError(f"unknown role {role!r}")


def load_deps(bundle_dir: str | Path, role: str) -> dict[str, object]:
    """Load a role's prerequisite models from a bundle directory."""
    deps: dict[str, object] = {}
    for dep in ROLE_DEPS.get(role, ()):
        deps[dep] = load_model_file(bundle_dir, dep)
    return deps


def train_bundle(
    config: PipelineConfig,
    matches: dict[str, Match],
    split: DatasetSplit,
    log_fn=None,
    save_dir: str | Path | None = None,
) -> tuple[ModelBundle, dict]:
    """Run the whole training order and assemble the bundle.

    When ``save_dir`` is given, each model's file is written as soon as
    it finishes, so a partially trained directory can seed later
    single-role runs.
    """
    deps: dict[str, object] = {}
    reports: dict[str, dict] = {}
    for role in TRAIN_ORDER:
        model, report = train_role(role, config, matches, split, deps, log_fn)
        deps[role] = model
        reports[role] = report.to_dict()
        if save_dir is not None:
            save_model_file(save_dir, role, model)
    bundle = ModelBundle(**{role: deps[role] for role in TRAIN_ORDER})
    bundle.validate()
    calibration_report = calibrate_bundle(bundle, matches, split, config)
    if save_dir is not None:
        # Re-save the calibrated probability models with their temperatures.
        for role in calibration_report:
            if "temperature" in calibration_report[role]:
                save_model_file(save_dir, role, getattr(bundle, role))
    return bundle, {"training": reports, "calibration": calibration_report}


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------

def _surface_pixel_logits(
    model: SurfaceModel,
    examples: list[tuple[TrackingSnapshot, tuple[int, int], float]],
    loader,
    chunk: int = 8,
) -> tuple[np.ndarray, np.ndarray]:
    """Raw logit at each example's destination cell, with its target."""
    zs, ys = [], []
    for lo in range(0, len(examples), chunk):
        part = [loader(e) for e in examples[lo : lo + chunk]]
        stacks = [p[0] for p in part]
        logits = model.logits(stacks)
        for (_, (ix, iy), target), z in zip(part, logits):
            zs.append(float(z[ix, iy, 0]))
            ys.append(target)
    return np.array(zs), np.array(ys)


def calibrate_bundle(
    bundle: ModelBundle,
    matches: dict[str, Match],
    split: DatasetSplit,
    config: PipelineConfig,
) -> dict[str, dict]:
    """Fit temperatures for the probability outputs on validation data.

    Value heads keep temperature 1 (scaling a squared-error output is
    not a calibration repair). Roles without enough validation examples
    are skipped and reported as such.
    """
    out: dict[str, dict] = {}

    def record(role: str, fit, n: int) -> None:
        getattr(bundle, role).temperature = fit.temperature
        out[role] = {
            "temperature": fit.temperature,
            "nll_before": fit.nll_identity,
            "nll_after": fit.nll_fitted,
            "examples": n,
        }

    def skip(role: str, n: int) -> None:
        out[role] = {"skipped": f"only {n} validation examples"}

    # Pass success: binary logit at the attempted destination.
    examples = surface_examples(matches, split.validation, "pass_success")
    loader = surface_stack_loader("pass_success")
    if len(examples) >= 100:
        z, y = _surface_pixel_logits(bundle.pass_success, examples, loader)
        record("pass_success", fit_temperature(z, y), len(examples))
    else:
        skip("pass_success", len(examples))

    # Pass selection: categorical over grid cells (subsampled).
    examples = surface_examples(matches, split.validation, "pass_selection")
    if len(examples) >= 100:
        limit = min(len(examples), config.selection_calibration_max)
        subset = examples[:limit]
        sel_loader = surface_stack_loader("pass_selection")
        flat_logits, labels = [], []
        for lo in range(0, len(subset), 8):
            part = [sel_loader(e) for e in subset[lo : lo + 8]]
            stacks = [p[0] for p in part]
            logits = bundle.pass_selection.logits(stacks)
            n, h, w, _ = logits.shape
            flat_logits.append(logits.reshape(n, h * w).astype(np.float64))
            labels.extend(p[1][0] * w + p[1][1] for p in part)
        z = np.concatenate(flat_logits)
        record(
            "pass_selection",
            fit_temperature(z, np.array(labels)),
            len(subset),
        )
    else:
        skip("pass_selection", len(examples))

    # Drive probability: binary on the validation drives.
    x_val, y_val = point_dataset(matches, split.validation, "drive_probability", {})
    if x_val.shape[0] >= 100:
        z = bundle.drive_probability.logits(x_val).reshape(-1)
        record("drive_probability", fit_temperature(z, y_val), int(x_val.shape[0]))
    else:
        skip("drive_probability", int(x_val.shape[0]))

    # Action selection: three-way categorical.
    x_val, y_val = point_dataset(
        matches, split.validation, "action_selection", {"xg": bundle.xg}
    )
    if x_val.shape[0] >= 100:
        z = bundle.action_selection.logits(x_val)
        labels = np.argmax(y_val, axis=1)
        record("action_selection", fit_temperature(z, labels), int(x_val.shape[0]))
    else:
        skip("action_selection", int(x_val.shape[0]))

    return out


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def evaluate_bundle(
    bundle: ModelBundle,
    matches: dict[str, Match],
    split: DatasetSplit,
) -> dict[str, dict]:
    """Held-out scores per component, with reliability summaries.

    Probability models report log loss, the constant-rate baseline
    (event rate estimated on train+validation), and quantile-binned
    calibration error; the selection and value heads report their own
    losses.
    """
    out: dict[str, dict] = {}
    fit_ids = split.train | split.validation

    def binary_block(preds: np.ndarray, y: np.ndarray, train_rate: float) -> dict:
        report = expected_calibration_error(preds, y, bins=10)
        return {
            "examples": int(y.size),
            "logloss": logloss_metric(preds, y),
            "baseline_logloss": logloss_metric(np.full(y.size, train_rate), y),
            "ece": report.ece,
            "calibration_csv": report.to_csv(),
        }

    # Pass success.
    test_ex = surface_examples(matches, split.test, "pass_success")
    if test_ex:
        loader = surface_stack_loader("pass_success")
        z, y = _surface_pixel_logits(bundle.pass_success, test_ex, loader)
        preds = 1.0 / (1.0 + np.exp(-z / bundle.pass_success.temperature))
        fit_ex = surface_examples(matches, fit_ids, "pass_success")
        rate = float(np.mean([e[2] for e in fit_ex]))
        out["pass_success"] = binary_block(preds, y, rate)

    # Pass selection: mean negative log probability of the chosen cell.
    sel_ex = surface_examples(matches, split.test, "pass_selection")
    if sel_ex:
        sel_loader = surface_stack_loader("pass_selection")
        total = 0.0
        for lo in range(0, len(sel_ex), 8):
            part = [sel_loader(e) for e in sel_ex[lo : lo + 8]]
            stacks = [p[0] for p in part]
            logits = bundle.pass_selection.logits(stacks)
            t = bundle.pass_selection.temperature
            n, h, w, _ = logits.shape
            flat = logits.reshape(n, h * w).astype(np.float64) / t
            flat -= flat.max(axis=1, keepdims=True)
            logp = flat - np.log(np.exp(flat).sum(axis=1, keepdims=True))
            for (_, (ix, iy), _t2), row in zip(part, logp):
                total += -row[ix * w + iy]
        out["pass_selection"] = {
            "examples": len(sel_ex),
            "cell_nll": total / len(sel_ex),
            "cells": DEFAULT_GRID.n_cells,
        }

    # Pass value surfaces: squared error at the destination, [0,1] space.
    for role in ("pass_value_success", "pass_value_miss"):
        ex = surface_examples(matches, split.test, role)
        if not ex:
            continue
        loader = surface_stack_loader(role, bundle.pass_success)
        z, y01 = _surface_pixel_logits(getattr(bundle, role), ex, loader)
        pred01 = 1.0 / (1.0 + np.exp(-z))
        out[role] = {
            "examples": len(ex),
            "mse": float(np.mean((pred01 - y01) ** 2)),
        }

    # Drive probability.
    x_test, y_test = point_dataset(matches, split.test, "drive_probability", {})
    if x_test.shape[0]:
        preds = bundle.drive_probability.predict(x_test)
        x_fit, y_fit = point_dataset(matches, fit_ids, "drive_probability", {})
        out["drive_probability"] = binary_block(preds, y_test, float(y_fit.mean()))

    # Drive and shot values.
    deps = {"drive_probability": bundle.drive_probability, "xg": bundle.xg}
    for role in ("drive_value_success", "drive_value_miss", "shot_value"):
        x_test, y01 = point_dataset(matches, split.test, role, deps)
        if not x_test.shape[0]:
            continue
        pred01 = (getattr(bundle, role).predict(x_test) + 1.0) / 2.0
        out[role] = {
            "examples": int(x_test.shape[0]),
            "mse": float(np.mean((pred01 - y01) ** 2)),
        }

    # Action selection.
    x_test, y_test = point_dataset(
        matches, split.test, "action_selection", {"xg": bundle.xg}
    )
    if x_test.shape[0]:
        probs = bundle.action_selection.predict(x_test)
        labels = np.argmax(y_test, axis=1)
        picked = np.clip(probs[np.arange(len(labels)), labels], 1e-7, None)
        out["action_selection"] = {
            "examples": int(x_test.shape[0]),
            "ce": float(-np.mean(np.log(picked))),
        }

    # Expected goals.
    x_test, y_test = xg_dataset(matches, split.test)
    if x_test.shape[0]:
        preds = bundle.xg.predict(x_test)
        x_fit, y_fit = xg_dataset(matches, fit_ids)
        out["xg"] = {
            "examples": int(x_test.shape[0]),
            "logloss": logloss_metric(preds, y_test),
            "baseline_logloss": logloss_metric(
                np.full(y_test.size, float(y_fit.mean())), y_test
            ),
        }

    return out
