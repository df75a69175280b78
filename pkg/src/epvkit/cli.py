"""Command-line entry point for the whole pipeline.

Subcommands cover the artifact chain end to end: ``synth`` (corpus),
``features`` (point-model design matrices), ``train`` (one role or all),
``calibrate`` (temperatures), ``eval`` (held-out metrics), ``compose``
(one frame's value breakdown), ``analyze`` (tags, densities, zone maps,
pair matrix), and ``serve`` (the HTTP API).

Every run writes a manifest listing its inputs, outputs, seeds, and the
config hash. Manifests carry no timestamps: rerunning a command with an
identical config produces byte-identical artifacts.

Failures exit nonzero with a single JSON error object on stderr.
"""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import pipeline
from .analytics import (
    ALL_TAGS,
    epv_added_density,
    pair_matrix_to_csv,
    pair_pass_matrix,
    split_possessions,
    tag_actions,
    zone_advantage_maps,
    zone_map_to_csv,
)
from .compose import compose_epv
from .models.bundle import ModelBundle, load_model_file, save_model_file
from .pipeline import PipelineConfig, TRAIN_ORDER, ConfigError, config_hash

# Short aliases accepted wherever a model role is named.
ROLE_ALIASES = {
    "pass_prob": "pass_success",
    "selection": "pass_selection",
    "drive_prob": "drive_probability",
}

_PROBABILITY_ROLES = ("pass_success", "pass_selection",
                      "drive_probability", "action_selection")


class CliError(Exception):
    """User-facing failure: rendered as error JSON, exit code 1."""

    def __init__(self, code: str, message: str, **detail):
        super().__init__(message)
        self.code = code
        self.detail = detail


def _fail(code: str, message: str, **detail) -> None:
    raise CliError(code, message, **detail)


def _resolve_role(name: str) -> str:
    role = ROLE_ALIASES.get(name, name)
    if role not in TRAIN_ORDER:
        _fail("unknown_model", f"unknown model {name!r}",
              known=sorted(TRAIN_ORDER), aliases=ROLE_ALIASES)
    return role


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _canonical_json(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _write_artifact(path: Path, text: str) -> str:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return hashlib.sha256(text.encode()).hexdigest()


def write_manifest(
    directory: Path,
    command: str,
    config: PipelineConfig,
    inputs: dict[str, str],
    outputs: dict[str, str],
) -> Path:
    manifest = {
        "command": command,
        "config_hash": config_hash(config),
        "seed": config.seed,
        "inputs": inputs,
        "outputs": outputs,
    }
    path = directory / "manifest.json"
    _write_artifact(path, _canonical_json(manifest))
    return path


def _corpus_inputs(config: PipelineConfig) -> dict[str, str]:
    directory = config.matches_dir
    if not directory.exists():
        _fail("missing_corpus", f"no corpus at {directory}; run `epv synth` first")
    return {
        p.name: _sha256_file(p)
        for p in sorted(directory.iterdir())
        if p.suffix in (".tracking", ".events")
    }


def _load_corpus(config: PipelineConfig):
    _corpus_inputs(config)  # existence check
    matches = pipeline.read_corpus(config.matches_dir, config.epsilon_s)
    split = pipeline.corpus_split(matches, config)
    return matches, split


def _load_bundle(config: PipelineConfig) -> ModelBundle:
    directory = config.bundle_dir
    missing = [r for r in TRAIN_ORDER if not (directory / f"{r}.epvm").exists()]
    if missing:
        _fail("missing_models", f"bundle at {directory} lacks {missing}; "
              "run `epv train all` first")
    bundle = ModelBundle(**{r: load_model_file(directory, r) for r in TRAIN_ORDER})
    bundle.validate()
    return bundle


# ---------------------------------------------------------------------------
# command group
# ---------------------------------------------------------------------------

@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="JSON config file; defaults plus EPV_DATA_DIR otherwise.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Override the artifact root (config data_dir).")
@click.pass_context
def cli(ctx, config_path, seed, out_dir):
    """Possession-value pipeline: data, training, analysis, serving."""
    try:
        config = pipeline.load_config(
            config_path, overrides={"seed": seed, "data_dir": out_dir}
        )
    except ConfigError as exc:
        raise CliError("bad_config", str(exc)) from exc
    ctx.obj = config


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except CliError as exc:
        payload = {"error": exc.code, "message": str(exc)}
        if exc.detail:
            payload["detail"] = exc.detail
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return 1
    except click.ClickException as exc:
        print(json.dumps({"error": "usage", "message": exc.format_message()},
                         sort_keys=True), file=sys.stderr)
        return 1
    except click.exceptions.Abort:
        return 130


# ---------------------------------------------------------------------------
# synth / features
# ---------------------------------------------------------------------------

@cli.command()
@click.pass_obj
def synth(config: PipelineConfig):
    """Generate the synthetic corpus into <data_dir>/matches."""
    matches = pipeline.synthesize_corpus(config)
    checksums = pipeline.write_corpus(matches, config.matches_dir)
    write_manifest(config.matches_dir, "synth", config, inputs={}, outputs=checksums)
    click.echo(json.dumps({
        "matches": len(matches),
        "events": sum(len(m.events) for m in matches.values()),
        "directory": str(config.matches_dir),
    }, sort_keys=True))


@cli.command()
@click.pass_obj
def features(config: PipelineConfig):
    """Materialize point-model design matrices per split.

    Surface-model inputs stay lazy (they are rasterized per training
    batch); this writes the small dense matrices that the point and
    expected-goals models consume, so later stages can skip the
    feature pass.
    """
    matches, split = _load_corpus(config)
    directory = Path(config.data_dir) / "features"
    directory.mkdir(parents=True, exist_ok=True)
    outputs: dict[str, str] = {}
    for split_name, ids in (("train", split.train),
                            ("validation", split.validation),
                            ("test", split.test)):
        arrays: dict[str, np.ndarray] = {}
        x, y = pipeline.xg_dataset(matches, ids)
        arrays["xg_x"], arrays["xg_y"] = x, y
        x, y = pipeline.point_dataset(matches, ids, "drive_probability", {})
        arrays["drive_probability_x"], arrays["drive_probability_y"] = x, y
        path = directory / f"{split_name}.npz"
        with path.open("wb") as fh:
            np.savez(fh, **arrays)
        outputs[path.name] = _sha256_file(path)
    write_manifest(directory, "features", config,
                   inputs=_corpus_inputs(config), outputs=outputs)
    click.echo(json.dumps({"directory": str(directory),
                           "files": sorted(outputs)}, sort_keys=True))


# ---------------------------------------------------------------------------
# train / calibrate / eval
# ---------------------------------------------------------------------------

@cli.command()
@click.argument("model_name")
@click.pass_obj
def train(config: PipelineConfig, model_name: str):
    """Train one model role, or `all` for the full dependency chain."""
    matches, split = _load_corpus(config)
    directory = config.bundle_dir
    outputs: dict[str, str] = {}

    if model_name == "all":
        bundle, report = pipeline.train_bundle(config, matches, split,
                                               save_dir=directory)
        for role in TRAIN_ORDER:
            outputs[f"{role}.epvm"] = _sha256_file(directory / f"{role}.epvm")
        outputs["training_report.json"] = _write_artifact(
            directory / "training_report.json", _canonical_json(report))
        summary = {"bundle_checksum": bundle.checksum()}
    else:
        role = _resolve_role(model_name)
        deps = {}
        for dep in pipeline.ROLE_DEPS.get(role, ()):
            dep_path = directory / f"{dep}.epvm"
            if not dep_path.exists():
                _fail("missing_dependency",
                      f"{role} needs a trained {dep}; run `epv train {dep}` first")
            deps[dep] = load_model_file(directory, dep)
        try:
            model, report = pipeline.train_role(role, config, matches, split, deps)
        except ValueError as exc:
            raise CliError("training_failed", str(exc)) from exc
        sha = save_model_file(directory, role, model)
        outputs[f"{role}.epvm"] = sha
        outputs[f"{role}_report.json"] = _write_artifact(
            directory / f"{role}_report.json", _canonical_json(report.to_dict()))
        summary = {"role": role, "checksum": sha}

    write_manifest(directory, f"train {model_name}", config,
                   inputs=_corpus_inputs(config), outputs=outputs)
    click.echo(json.dumps(summary, sort_keys=True))


@cli.command()
@click.pass_obj
def calibrate(config: PipelineConfig):
    """Fit temperatures on validation data and update the stored models."""
    matches, split = _load_corpus(config)
    bundle = _load_bundle(config)
    report = pipeline.calibrate_bundle(bundle, matches, split, config)
    directory = Path(config.data_dir) / "calibration"
    outputs = {}
    for role in report:
        if "temperature" in report[role]:
            outputs[f"../bundle/{role}.epvm"] = save_model_file(
                config.bundle_dir, role, getattr(bundle, role))
    outputs["calibration.json"] = _write_artifact(
        directory / "calibration.json", _canonical_json(report))
    write_manifest(directory, "calibrate", config,
                   inputs=_corpus_inputs(config), outputs=outputs)
    click.echo(json.dumps(report, sort_keys=True))


@cli.command("eval")
@click.option("--model", "model_name", default="all",
              help="One role (aliases accepted) or `all`.")
@click.pass_obj
def eval_cmd(config: PipelineConfig, model_name: str):
    """Held-out metrics; probability models also get a reliability CSV."""
    matches, split = _load_corpus(config)
    bundle = _load_bundle(config)
    full = pipeline.evaluate_bundle(bundle, matches, split)
    if model_name != "all":
        role = _resolve_role(model_name)
        if role not in full:
            _fail("no_examples", f"no held-out examples for {role}")
        full = {role: full[role]}
    directory = Path(config.data_dir) / "eval"
    outputs: dict[str, str] = {}
    metrics = {}
    for role, block in full.items():
        block = dict(block)
        csv = block.pop("calibration_csv", None)
        if csv is not None:
            outputs[f"{role}_calibration.csv"] = _write_artifact(
                directory / f"{role}_calibration.csv", csv)
        metrics[role] = block
    payload = {"config_hash": config_hash(config), "metrics": metrics}
    outputs["metrics.json"] = _write_artifact(
        directory / "metrics.json", _canonical_json(payload))
    write_manifest(directory, f"eval {model_name}", config,
                   inputs=_corpus_inputs(config), outputs=outputs)
    click.echo(json.dumps(metrics, sort_keys=True))


# ---------------------------------------------------------------------------
# compose / analyze
# ---------------------------------------------------------------------------

@cli.command()
@click.option("--match", "match_id", required=True)
@click.option("--frame", type=int, required=True)
@click.pass_obj
def compose(config: PipelineConfig, match_id: str, frame: int):
    """Print one frame's expected-value breakdown as JSON."""
    matches, _split = _load_corpus(config)
    bundle = _load_bundle(config)
    if match_id not in matches:
        _fail("unknown_match", f"no match {match_id!r}",
              known=sorted(matches))
    match = matches[match_id]
    if not match.has_frame(frame):
        _fail("unknown_frame", f"match {match_id} has no frame {frame}")
    breakdown = compose_epv(match.snapshot_at(frame), bundle)
    click.echo(json.dumps(breakdown.to_json_dict(), sort_keys=True))


@cli.command()
@click.option("--split", "split_name", default="test",
              type=click.Choice(["train", "validation", "test", "all"]))
@click.pass_obj
def analyze(config: PipelineConfig, split_name: str):
    """Tag actions and write density, zone-map, and pair-matrix reports."""
    matches, split = _load_corpus(config)
    bundle = _load_bundle(config)
    if split_name == "all":
        ids = sorted(matches)
    else:
        ids = sorted(getattr(split, split_name))
    chosen = [matches[i] for i in ids]
    if not chosen:
        _fail("empty_split", f"split {split_name!r} holds no matches")

    directory = Path(config.data_dir) / "analysis"
    outputs: dict[str, str] = {}

    tagged = []
    for match in chosen:
        tagged.extend(tag_actions(match, bundle))
    tag_rows = ["match_id,frame_index,action,epv_added,tags"]
    for t in tagged:
        tags = ";".join(sorted(t.tags))
        value = "" if np.isnan(t.epv_added) else f"{t.epv_added:.6f}"
        tag_rows.append(f"{t.event.match_id},{t.event.frame_index},"
                        f"{t.event.action.value},{value},{tags}")
    outputs["tagged_actions.csv"] = _write_artifact(
        directory / "tagged_actions.csv", "\n".join(tag_rows) + "\n")

    densities = {}
    for tag in ALL_TAGS:
        try:
            curve = epv_added_density(tagged, tag)
        except ValueError:
            continue  # too few events carry this tag in the chosen split
        outputs[f"density_{tag}.csv"] = _write_artifact(
            directory / f"density_{tag}.csv", curve.to_csv())
        densities[tag] = curve.count

    possessions = []
    for match in chosen:
        possessions.extend(split_possessions(match))
    by_team: dict[str, list] = {}
    for p in possessions:
        by_team.setdefault(p.team, []).append(p)
    zone_files = 0
    if len(by_team) > 1:
        for mode in ("on_ball", "off_ball"):
            maps = zone_advantage_maps(by_team, bundle, mode=mode)
            for team, zone_map in maps.items():
                outputs[f"zones_{mode}_{team}.csv"] = _write_artifact(
                    directory / f"zones_{mode}_{team}.csv",
                    zone_map_to_csv(zone_map))
                zone_files += 1

    pairs = pair_pass_matrix(chosen, bundle)
    outputs["pair_matrix.csv"] = _write_artifact(
        directory / "pair_matrix.csv", pair_matrix_to_csv(pairs))

    write_manifest(directory, f"analyze {split_name}", config,
                   inputs=_corpus_inputs(config), outputs=outputs)
    click.echo(json.dumps({
        "matches": len(chosen),
        "tagged_actions": len(tagged),
        "densities": densities,
        "zone_maps": zone_files,
        "pairs": len(pairs),
    }, sort_keys=True))


# ---------------------------------------------------------------------------
# serve
# ---------------------------------------------------------------------------

@cli.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=None,
              help="Defaults to the config service_port.")
@click.pass_obj
def serve(config: PipelineConfig, host: str, port: int | None):
    """Serve the frame-analysis HTTP API over the trained bundle."""
    import uvicorn

    from .service import build_app

    matches, _split = _load_corpus(config)
    bundle = _load_bundle(config)
    app = build_app(bundle, matches)
    uvicorn.run(app, host=host, port=port or config.service_port, log_level="info")


if __name__ == "__main__":
    sys.exit(main())
