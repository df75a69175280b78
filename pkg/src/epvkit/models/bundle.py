"""Model persistence: single-model parameter files and the full bundle.

Each trained model is stored in a self-describing binary container:

    magic ``EPVM`` | format version | head kind | catalog id | channel
    count | tensor count | (name, shape, little-endian float32 data) per
    tensor, names sorted | SHA-256 over everything preceding the trailer

A ``ModelBundle`` groups every trained component the value engine needs
(four surface models, five point models, the event-based shot baseline)
plus the two fitted calibration temperatures, and is persisted as a
directory of ``.epvm`` files with a JSON manifest of checksums. Loading
re-verifies every checksum and the mutual consistency of feature-catalog
versions; a loaded bundle is the canonical serving artifact.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..features.layers import CATALOG_VERSION, CATALOGS
from .point import POINT_CATALOGS, POINT_CATALOG_VERSION, PointModel
from .soccermap import SurfaceModel
from .xg import Tree, XG_FEATURES, XgModel

MAGIC = b"EPVM"
FORMAT_VERSION = 1


class BundleError(ValueError):
    """Raised for malformed, corrupted, or inconsistent parameter files."""


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _read_str(buf: memoryview, offset: int) -> tuple[str, int]:
    (n,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    s = bytes(buf[offset : offset + n]).decode("utf-8")
    return s, offset + n


def write_params(
    path: str | Path,
    head: str,
    catalog: str,
    channels: int,
    tensors: dict[str, np.ndarray],
) -> str:
    """Write one model's tensors; returns the hex SHA-256 of the payload."""
    body = bytearray()
    body += MAGIC
    body += struct.pack("<I", FORMAT_VERSION)
    body += _pack_str(head)
    body += _pack_str(catalog)
    body += struct.pack("<I", channels)
    body += struct.pack("<I", len(tensors))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        body += _pack_str(name)
        body += struct.pack("<I", arr.ndim)
        body += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
        body += arr.tobytes()
    digest = hashlib.sha256(bytes(body)).hexdigest()
    with open(path, "wb") as fh:
        fh.write(bytes(body))
        fh.write(bytes.fromhex(digest))
    return digest


def read_params(path: str | Path) -> tuple[str, str, int, dict[str, np.ndarray], str]:
    """Read and checksum-verify one model file.

    Returns (head, catalog, channels, tensors, hex checksum).
    """
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 4 + 32:
        raise BundleError(f"{path}: truncated parameter file")
    body, trailer = raw[:-32], raw[-32:]
    digest = hashlib.sha256(body).hexdigest()
    if digest != trailer.hex():
        raise BundleError(f"{path}: checksum mismatch")
    buf = memoryview(body)
    if bytes(buf[:4]) != MAGIC:
        raise BundleError(f"{path}: bad magic")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != FORMAT_VERSION:
        raise BundleError(f"{path}: unsupported format version {version}")
    offset = 8
    head, offset = _read_str(buf, offset)
    catalog, offset = _read_str(buf, offset)
    (channels,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    (count,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name, offset = _read_str(buf, offset)
        (ndim,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        shape = struct.unpack_from(f"<{ndim}I", buf, offset) if ndim else ()
        offset += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(buf, dtype="<f4", count=size, offset=offset).reshape(shape)
        tensors[name] = arr.copy()
        offset += 4 * size
    if offset != len(body):
        raise BundleError(f"{path}: trailing bytes after last tensor")
    return head, catalog, channels, tensors, digest


# ---------------------------------------------------------------------------
# per-model tensor (de)composition


def surface_tensors(model: SurfaceModel) -> dict[str, np.ndarray]:
    out = dict(model.net.params())
    out["__temperature"] = np.array([model.temperature], dtype=np.float32)
    return out


def surface_from_tensors(
    head: str, catalog: str, tensors: dict[str, np.ndarray]
) -> SurfaceModel:
    model = SurfaceModel.create(catalog, head, seed=0)
    params = model.net.params()
    expected = set(params) | {"__temperature"}
    if set(tensors) != expected:
        raise BundleError(
            f"surface tensor names mismatch: {sorted(set(tensors) ^ expected)}"
        )
    for name, value in params.items():
        stored = tensors[name]
        if stored.shape != value.shape:
            raise BundleError(f"tensor {name}: shape {stored.shape} != {value.shape}")
        value[...] = stored
    model.temperature = float(tensors["__temperature"][0])
    return model


def point_tensors(model: PointModel) -> dict[str, np.ndarray]:
    out = dict(model.net.params())
    out["__mean"] = model.mean.astype(np.float32)
    out["__scale"] = model.scale.astype(np.float32)
    out["__temperature"] = np.array([model.temperature], dtype=np.float32)
    out["__hidden"] = np.array(model.net.hidden, dtype=np.float32)
    return out


def point_from_tensors(
    head: str, catalog: str, tensors: dict[str, np.ndarray]
) -> PointModel:
    hidden = tuple(int(v) for v in tensors["__hidden"])
    model = PointModel.create(catalog, head, seed=0, hidden=hidden)
    params = model.net.params()
    expected = set(params) | {"__mean", "__scale", "__temperature", "__hidden"}
    if set(tensors) != expected:
        raise BundleError(
            f"point tensor names mismatch: {sorted(set(tensors) ^ expected)}"
        )
    for name, value in params.items():
        stored = tensors[name]
        if stored.shape != value.shape:
            raise BundleError(f"tensor {name}: shape {stored.shape} != {value.shape}")
        value[...] = stored
    model.mean = tensors["__mean"].astype(np.float64)
    model.scale = tensors["__scale"].astype(np.float64)
    model.temperature = float(tensors["__temperature"][0])
    return model


def xg_tensors(model: XgModel) -> dict[str, np.ndarray]:
    out = {
        "__mean": model.mean.astype(np.float32),
        "__scale": model.scale.astype(np.float32),
        "__meta": np.array(
            [model.base_logit, model.shrinkage, float(model.max_depth), len(model.trees)],
            dtype=np.float32,
        ),
    }
    for i, tree in enumerate(model.trees):
        prefix = f"tree{i:04d}"
        out[f"{prefix}/feature"] = tree.feature.astype(np.float32)
        out[f"{prefix}/threshold"] = tree.threshold.astype(np.float32)
        out[f"{prefix}/left"] = tree.left.astype(np.float32)
        out[f"{prefix}/right"] = tree.right.astype(np.float32)
        out[f"{prefix}/value"] = tree.value.astype(np.float32)
    return out


def xg_from_tensors(tensors: dict[str, np.ndarray]) -> XgModel:
    meta = tensors["__meta"]
    n_trees = int(meta[3])
    model = XgModel(
        mean=tensors["__mean"].astype(np.float64),
        scale=tensors["__scale"].astype(np.float64),
        base_logit=float(meta[0]),
        shrinkage=float(meta[1]),
        max_depth=int(meta[2]),
    )
    for i in range(n_trees):
        prefix = f"tree{i:04d}"
        model.trees.append(
            Tree(
                feature=tensors[f"{prefix}/feature"].astype(np.int64),
                threshold=tensors[f"{prefix}/threshold"].astype(np.float64),
                left=tensors[f"{prefix}/left"].astype(np.int64),
                right=tensors[f"{prefix}/right"].astype(np.int64),
                value=tensors[f"{prefix}/value"].astype(np.float64),
            )
        )
    return model


# ---------------------------------------------------------------------------
# the full bundle

SURFACE_ROLES = ("pass_success", "pass_selection", "pass_value_success", "pass_value_miss")
POINT_ROLES = (
    "drive_probability",
    "drive_value_success",
    "drive_value_miss",
    "shot_value",
    "action_selection",
)

# role -> point catalog (two drive-value variants share one catalog)
_POINT_ROLE_CATALOG = {
    "drive_probability": "drive_probability",
    "drive_value_success": "drive_value",
    "drive_value_miss": "drive_value",
    "shot_value": "shot_value",
    "action_selection": "action_selection",
}

# Hidden widths for point models; the shot model is wider than the rest.
_POINT_ROLE_HIDDEN = {
    "drive_probability": (8, 8),
    "drive_value_success": (8, 8),
    "drive_value_miss": (8, 8),
    "shot_value": (10, 10),
    "action_selection": (8, 8),
}

_SURFACE_ROLE_SPEC = {
    "pass_success": ("pass_success", "sigmoid"),
    "pass_selection": ("pass_selection", "grid_softmax"),
    "pass_value_success": ("pass_value", "sigmoid_affine"),
    "pass_value_miss": ("pass_value", "sigmoid_affine"),
}

_POINT_ROLE_HEAD = {
    "drive_probability": "sigmoid",
    "drive_value_success": "sigmoid_affine",
    "drive_value_miss": "sigmoid_affine",
    "shot_value": "sigmoid_affine",
    "action_selection": "softmax3",
}

ALL_ROLES = SURFACE_ROLES + POINT_ROLES + ("xg",)


def create_role_model(role: str, seed: int) -> SurfaceModel | PointModel:
    """A freshly initialized model with the right shape for a bundle role."""
    if role in SURFACE_ROLES:
        catalog, head = _SURFACE_ROLE_SPEC[role]
        return SurfaceModel.create(catalog, head, seed=seed)
    if role in POINT_ROLES:
        return PointModel.create(
            _POINT_ROLE_CATALOG[role],
            _POINT_ROLE_HEAD[role],
            seed=seed,
            hidden=_POINT_ROLE_HIDDEN[role],
        )
    raise BundleError(f"unknown trainable role {role!r}")


@dataclass
class ModelBundle:
    """Every trained component the composer needs, as one artifact."""

    pass_success: SurfaceModel
    pass_selection: SurfaceModel
    pass_value_success: SurfaceModel
    pass_value_miss: SurfaceModel
    drive_probability: PointModel
    drive_value_success: PointModel
    drive_value_miss: PointModel
    shot_value: PointModel
    action_selection: PointModel
    xg: XgModel
    surface_catalog_version: str = CATALOG_VERSION
    point_catalog_version: str = POINT_CATALOG_VERSION

    def surface_models(self) -> dict[str, SurfaceModel]:
        return {role: getattr(self, role) for role in SURFACE_ROLES}

    def point_models(self) -> dict[str, PointModel]:
        return {role: getattr(self, role) for role in POINT_ROLES}

    def validate(self) -> None:
        for role, (catalog, head) in _SURFACE_ROLE_SPEC.items():
            model = getattr(self, role)
            if model.catalog != catalog or model.head != head:
                raise BundleError(
                    f"{role}: expected ({catalog}, {head}), "
                    f"got ({model.catalog}, {model.head})"
                )
        for role in POINT_ROLES:
            model = getattr(self, role)
            if model.catalog != _POINT_ROLE_CATALOG[role]:
                raise BundleError(
                    f"{role}: wrong catalog {model.catalog!r}"
                )
            if model.head != _POINT_ROLE_HEAD[role]:
                raise BundleError(f"{role}: wrong head {model.head!r}")
            if model.catalog_version != self.point_catalog_version:
                raise BundleError(f"{role}: point catalog version mismatch")

    def checksum(self) -> str:
        """Order-independent digest over all component checksums."""
        digest = hashlib.sha256()
        for role in SURFACE_ROLES:
            digest.update(role.encode())
            digest.update(getattr(self, role).checksum().encode())
        for role in POINT_ROLES:
            digest.update(role.encode())
            digest.update(getattr(self, role).checksum().encode())
        digest.update(b"xg")
        digest.update(self.xg.checksum().encode())
        return digest.hexdigest()


def save_bundle(bundle: ModelBundle, directory: str | Path) -> dict:
    """Write one .epvm file per model plus a manifest; returns the manifest."""
    bundle.validate()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest: dict = {
        "format_version": FORMAT_VERSION,
        "surface_catalog_version": bundle.surface_catalog_version,
        "point_catalog_version": bundle.point_catalog_version,
        "models": {},
    }
    for role, model in bundle.surface_models().items():
        path = directory / f"{role}.epvm"
        sha = write_params(
            path, model.head, model.catalog,
            len(CATALOGS[model.catalog]), surface_tensors(model),
        )
        manifest["models"][role] = {"file": path.name, "sha256": sha}
    for role, model in bundle.point_models().items():
        path = directory / f"{role}.epvm"
        sha = write_params(
            path, model.head, model.catalog,
            len(POINT_CATALOGS[model.catalog]), point_tensors(model),
        )
        manifest["models"][role] = {"file": path.name, "sha256": sha}
    path = directory / "xg.epvm"
    sha = write_params(path, "sigmoid", "xg", len(XG_FEATURES), xg_tensors(bundle.xg))
    manifest["models"]["xg"] = {"file": path.name, "sha256": sha}
    manifest["bundle_checksum"] = _manifest_checksum(manifest)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def _manifest_checksum(manifest: dict) -> str:
    digest = hashlib.sha256()
    for role in sorted(manifest["models"]):
        digest.update(role.encode())
        digest.update(manifest["models"][role]["sha256"].encode())
    return digest.hexdigest()


def load_bundle(directory: str | Path) -> ModelBundle:
    """Load and verify a bundle directory written by save_bundle."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise BundleError(f"{directory}: missing manifest.json")
    manifest = json.loads(manifest_path.read_text())
    expected_roles = set(SURFACE_ROLES) | set(POINT_ROLES) | {"xg"}
    if set(manifest.get("models", {})) != expected_roles:
        raise BundleError(
            f"{directory}: manifest roles {sorted(manifest.get('models', {}))} "
            f"!= expected {sorted(expected_roles)}"
        )
    loaded: dict[str, object] = {}
    for role, entry in manifest["models"].items():
        path = directory / entry["file"]
        head, catalog, channels, tensors, sha = read_params(path)
        if sha != entry["sha256"]:
            raise BundleError(f"{path}: manifest checksum disagrees with file")
        if role == "xg":
            loaded[role] = xg_from_tensors(tensors)
        elif role in SURFACE_ROLES:
            loaded[role] = surface_from_tensors(head, catalog, tensors)
        else:
            loaded[role] = point_from_tensors(head, catalog, tensors)
    bundle = ModelBundle(
        surface_catalog_version=manifest["surface_catalog_version"],
        point_catalog_version=manifest["point_catalog_version"],
        **loaded,
    )
    if bundle.surface_catalog_version != CATALOG_VERSION:
        raise BundleError(
            f"surface catalog version {bundle.surface_catalog_version!r} "
            f"unsupported (engine speaks {CATALOG_VERSION!r})"
        )
    if bundle.point_catalog_version != POINT_CATALOG_VERSION:
        raise BundleError(
            f"point catalog version {bundle.point_catalog_version!r} "
            f"unsupported (engine speaks {POINT_CATALOG_VERSION!r})"
        )
    bundle.validate()
    return bundle


def save_model_file(directory: str | Path, role: str, model) -> str:
    """Write one role's .epvm file; returns its checksum."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{role}.epvm"
    if role == "xg":
        return write_params(path, "sigmoid", "xg", len(XG_FEATURES), xg_tensors(model))
    if role in SURFACE_ROLES:
        return write_params(
            path, model.head, model.catalog,
            len(CATALOGS[model.catalog]), surface_tensors(model),
        )
    if role in POINT_ROLES:
        return write_params(
            path, model.head, model.catalog,
            len(POINT_CATALOGS[model.catalog]), point_tensors(model),
        )
    raise BundleError(f"unknown role {role!r}")


def load_model_file(directory: str | Path, role: str):
    """Read one role's .epvm file back into its model type."""
    path = Path(directory) / f"{role}.epvm"
    if not path.exists():
        raise BundleError(f"{path}: missing model file for role {role!r}")
    head, catalog, _channels, tensors, _sha = read_params(path)
    if role == "xg":
        return xg_from_tensors(tensors)
    if role in SURFACE_ROLES:
        return surface_from_tensors(head, catalog, tensors)
    if role in POINT_ROLES:
        return point_from_tensors(head, catalog, tensors)
    raise BundleError(f"unknown role {role!r}")


def initial_bundle(seed: int = 0) -> ModelBundle:
    """Fresh untrained bundle (useful for tests and fixtures)."""
    from .xg import fit_xg, xg_features

    rng = np.random.default_rng(seed)
    xs = rng.uniform(60, 104, 64)
    ys = rng.uniform(14, 54, 64)
    feats = np.stack([xg_features(x, y) for x, y in zip(xs, ys)])
    outcomes = (rng.uniform(size=64) < 0.3).astype(float)
    outcomes[:2] = [0.0, 1.0]  # guarantee both classes
    xg = fit_xg(feats, outcomes, n_trees=5, max_depth=3, shrinkage=0.1)
    trainable = SURFACE_ROLES + POINT_ROLES
    models = {
        role: create_role_model(role, seed=seed + i)
        for i, role in enumerate(trainable)
    }
    return ModelBundle(xg=xg, **models)
