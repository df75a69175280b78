"""HTTP API serving per-frame value analysis to the control-room UI.

All routes live under ``/v1``. Responses are pure functions of (bundle
checksum, match data, query): the active bundle is held as one immutable
snapshot whose checksum is echoed in the ``X-Bundle-Checksum`` header of
every response, and swapping in a new bundle is a single atomic
assignment. Clients may send ``X-Expected-Bundle`` (or a
``bundle_checksum`` field in POST bodies) to insist on the bundle they
rendered against; a mismatch is a 409.

The UI performs no model math: derived views (expected value added per
pass destination, pitch control) are served as their own surface kinds.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from threading import Lock

import numpy as np
from fastapi import FastAPI, Query, Request, Response
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .compose import EpvBreakdown, compose_epv
from .data.records import Match, TrackingSnapshot
from .features.influence import pitch_control_grid
from .models.bundle import ModelBundle
from .pitch import DEFAULT_GRID, GridSpec

CHECKSUM_HEADER = "X-Bundle-Checksum"
EXPECTED_HEADER = "X-Expected-Bundle"

# Surfaces straight off the breakdown, in the order surfaces() yields.
BREAKDOWN_KINDS = ("pass_success", "selection", "pass_value_success",
                   "pass_value_miss", "pass_value")
# Derived kinds the service computes so the UI never has to.
SURFACE_KINDS = BREAKDOWN_KINDS + ("pass_epv_added", "pitch_control")

BREAKDOWN_CACHE_SIZE = 256


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code


class WhatIfPass(BaseModel):
    match_id: str
    frame: int
    cell: tuple[int, int]
    bundle_checksum: str | None = None


@dataclass
class ServiceState:
    """Shared state: an immutable bundle snapshot plus pure-value caches."""

    bundle: ModelBundle
    matches: dict[str, Match]
    grid: GridSpec = DEFAULT_GRID
    checksum: str = ""
    _cache: OrderedDict = field(default_factory=OrderedDict)
    _lock: Lock = field(default_factory=Lock)

    def __post_init__(self):
        self.checksum = self.bundle.checksum()

    def swap_bundle(self, bundle: ModelBundle) -> None:
        """Atomically replace the serving bundle (old cache keys expire
        naturally because every key carries the checksum)."""
        bundle.validate()
        checksum = bundle.checksum()
        self.bundle, self.checksum = bundle, checksum

    # -- lookups -----------------------------------------------------------

    def match(self, match_id: str) -> Match:
        match = self.matches.get(match_id)
        if match is None:
            raise ApiError(404, "unknown_match", f"no match {match_id!r}")
        return match

    def snapshot(self, match_id: str, frame: int) -> TrackingSnapshot:
        match = self.match(match_id)
        if not match.has_frame(frame):
            raise ApiError(404, "unknown_frame",
                           f"match {match_id} has no frame {frame}")
        return match.snapshot_at(frame)

    def breakdown(self, match_id: str, frame: int) -> EpvBreakdown:
        key = (self.checksum, match_id, frame)
        with self._lock:
            hit = self._cache.get(key)
            if hit is not None:
                self._cache.move_to_end(key)
                return hit
        value = compose_epv(self.snapshot(match_id, frame), self.bundle,
                            grid=self.grid)
        with self._lock:
            self._cache[key] = value
            while len(self._cache) > BREAKDOWN_CACHE_SIZE:
                self._cache.popitem(last=False)
        return value

    def surface(self, match_id: str, frame: int, kind: str) -> np.ndarray:
        if kind not in SURFACE_KINDS:
            raise ApiError(404, "unknown_surface",
                           f"no surface kind {kind!r}; have {list(SURFACE_KINDS)}")
        if kind == "pitch_control":
            snap = self.snapshot(match_id, frame)
            return pitch_control_grid(
                snap, self.grid.x_centers()[:, None], self.grid.y_centers()[None, :]
            )
        b = self.breakdown(match_id, frame)
        if kind == "pass_epv_added":
            return b.pass_value_surface - b.epv
        return b.surfaces()[kind]


def _snapshot_json(snap: TrackingSnapshot) -> dict:
    return {
        "frame": snap.frame_index,
        "timestamp": snap.timestamp,
        "ball": {"x": snap.ball_x, "y": snap.ball_y},
        "players": [
            {
                "id": p.player_id,
                "team": p.team,
                "x": p.x,
                "y": p.y,
                "vx": p.vx,
                "vy": p.vy,
                "goalkeeper": p.is_goalkeeper,
            }
            for p in snap.players
        ],
    }


def build_app(bundle: ModelBundle, matches: dict[str, Match],
              grid: GridSpec = DEFAULT_GRID) -> FastAPI:
    bundle.validate()
    state = ServiceState(bundle=bundle, matches=dict(matches), grid=grid)
    app = FastAPI(title="possession value service", docs_url=None, redoc_url=None)
    app.state.service = state

    @app.exception_handler(ApiError)
    async def on_api_error(_request: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status,
            content={"error": exc.code, "message": str(exc)},
            headers={CHECKSUM_HEADER: state.checksum},
        )

    @app.middleware("http")
    async def bundle_headers(request: Request, call_next):
        expected = request.headers.get(EXPECTED_HEADER)
        if expected is not None and expected != state.checksum:
            return JSONResponse(
                status_code=409,
                content={
                    "error": "bundle_mismatch",
                    "message": "serving a different bundle than the client expects",
                    "serving": state.checksum,
                },
                headers={CHECKSUM_HEADER: state.checksum},
            )
        response: Response = await call_next(request)
        response.headers[CHECKSUM_HEADER] = state.checksum
        return response

    @app.get("/v1/matches")
    def list_matches():
        out = []
        for match_id in sorted(state.matches):
            match = state.matches[match_id]
            first, last = match.frame_range
            out.append({
                "id": match_id,
                "first_frame": first,
                "last_frame": last,
                "frames": len(match.snapshots),
                "events": len(match.events),
            })
        return {"matches": out}

    @app.get("/v1/match/{match_id}/frames")
    def frames(
        match_id: str,
        start: int | None = Query(None, alias="from"),
        to: int | None = Query(None),
    ):
        match = state.match(match_id)
        chosen = [
            s for s in match.snapshots
            if (start is None or s.frame_index >= start)
            and (to is None or s.frame_index <= to)
        ]
        return {"match_id": match_id,
                "frames": [_snapshot_json(s) for s in chosen]}

    @app.get("/v1/match/{match_id}/frame/{frame}/breakdown")
    def breakdown(match_id: str, frame: int):
        b = state.breakdown(match_id, frame)
        return {"match_id": match_id, "frame": frame, **b.to_json_dict()}

    @app.get("/v1/match/{match_id}/frame/{frame}/surface/{kind}")
    def surface(match_id: str, frame: int, kind: str):
        surf = state.surface(match_id, frame, kind)
        return {
            "match_id": match_id,
            "frame": frame,
            "kind": kind,
            "shape": list(surf.shape),
            "values": [float(v) for v in surf.reshape(-1)],
        }

    @app.get("/v1/match/{match_id}/epv_series")
    def epv_series(
        match_id: str,
        start: int | None = Query(None, alias="from"),
        to: int | None = Query(None),
    ):
        match = state.match(match_id)
        rows = []
        for snap in match.snapshots:
            if start is not None and snap.frame_index < start:
                continue
            if to is not None and snap.frame_index > to:
                continue
            b = state.breakdown(match_id, snap.frame_index)
            added = b.pass_value_surface - b.epv
            best = int(np.argmax(added))
            ix, iy = divmod(best, added.shape[1])
            rows.append({
                "frame": snap.frame_index,
                "epv": b.epv,
                "best_pass_epv_added": float(added[ix, iy]),
                "best_pass_cell": [int(ix), int(iy)],
            })
        return {"match_id": match_id, "series": rows}

    @app.post("/v1/whatif/pass")
    def whatif_pass(body: WhatIfPass):
        if body.bundle_checksum is not None and body.bundle_checksum != state.checksum:
            raise ApiError(409, "bundle_mismatch",
                           "serving a different bundle than the client expects")
        ix, iy = body.cell
        h, w = state.grid.width, state.grid.height
        if not (0 <= ix < h and 0 <= iy < w):
            raise ApiError(422, "invalid_cell",
                           f"cell {body.cell} outside the {h}x{w} grid")
        b = state.breakdown(body.match_id, body.frame)
        return {
            "match_id": body.match_id,
            "frame": body.frame,
            "cell": [ix, iy],
            "success_prob": float(b.pass_success_surface[ix, iy]),
            "value_if_success": float(b.pass_value_success_surface[ix, iy]),
            "value_if_miss": float(b.pass_value_miss_surface[ix, iy]),
            "epv_added_if_chosen": float(b.pass_value_surface[ix, iy] - b.epv),
        }

    return app
