"""HTTP+JSON service exposing datasets, parsing, overlays, and sessions.

Every endpoint is a thin adapter over the engine modules: requests are
deserialized, the corresponding module operation runs against immutable
snapshots, and the result is serialized through the same ``to_json``
schemas the modules define, so API responses byte-match direct module
calls.  Mutations on one session are serialized by a per-session lock; a
second concurrent writer receives 409 rather than interleaving.

Datasets live under a data root (one subdirectory per dataset containing
``manifest.json``, FMAP feature files, and saved model JSON files); session
state is persisted as JSON under ``<data_root>/sessions``.
"""

from __future__ import annotations

import base64
import hashlib
import itertools
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import Response
from pydantic import BaseModel

from .aog import AogValidationError, ParseTree, SemanticPartAOG, load_aog
from .evaluation import evaluate
from .geometry import GeometryError, Rect
from .interaction import (
    AnnotatedRegionSet,
    InteractionSession,
    SessionError,
    apply_prunes,
    load_session,
    propose_prunes,
    proposed_ids,
    undo,
)
from .parsing import EmptyAogError
from .tensor_store import LAYER_GROUPS, FeatureStore, ManifestError, load_manifest
from .viz import build_heatmap_layer, render_overlay

SCHEMA_VERSION = 1


class CreateSessionRequest(BaseModel):
    manifest: str
    aog: str


class ParseRequest(BaseModel):
    image_id: str


class RectModel(BaseModel):
    x: float
    y: float
    w: float
    h: float


class AnnotateRequest(BaseModel):
    image_id: str
    rectangles: list[RectModel]
    scope: str


class PruneRequest(BaseModel):
    pattern_ids: list[str]


class UndoRequest(BaseModel):
    k: int = 1


@dataclass
class SessionRuntime:
    session: InteractionSession
    dataset_id: str
    aog_ref: str
    lock: threading.Lock = field(default_factory=threading.Lock)
    active_image: str | None = None
    parse_cache: dict = field(default_factory=dict)


def _wrap(payload: dict) -> dict:
    return {"schema_version": SCHEMA_VERSION, **payload}


def _aog_hash(aog: SemanticPartAOG) -> str:
    blob = json.dumps(aog.to_json(), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _invalid(field_path: str, message: str) -> HTTPException:
    return HTTPException(status_code=422, detail={"field": field_path, "error": message})


def create_app(data_root) -> FastAPI:
    root = Path(data_root)
    app = FastAPI(title="aoglab", version="1.0")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    stores: dict[str, FeatureStore] = {}
    sessions: dict[str, SessionRuntime] = {}
    session_counter = itertools.count(1)
    sessions_dir = root / "sessions"
    app.state.sessions = sessions  # exposed for lock-contention tests

    def dataset_dirs() -> dict[str, Path]:
        if not root.is_dir():
            return {}
        return {
            p.name: p
            for p in sorted(root.iterdir())
            if p.is_dir() and (p / "manifest.json").is_file()
        }

    def get_store(dataset_id: str) -> FeatureStore:
        if dataset_id not in stores:
            dirs = dataset_dirs()
            if dataset_id not in dirs:
                raise HTTPException(404, detail=f"unknown dataset {dataset_id!r}")
            manifest = load_manifest(dirs[dataset_id] / "manifest.json")
            stores[dataset_id] = FeatureStore(manifest, dirs[dataset_id])
        return stores[dataset_id]

    def persist(runtime: SessionRuntime) -> None:
        sessions_dir.mkdir(parents=True, exist_ok=True)
        state = runtime.session.to_json()
        state["dataset_id"] = runtime.dataset_id
        state["aog_ref"] = runtime.aog_ref
        path = sessions_dir / f"{runtime.session.session_id}.json"
        path.write_text(json.dumps(state, indent=2, sort_keys=True), encoding="utf-8")

    def get_runtime(session_id: str) -> SessionRuntime:
        if session_id in sessions:
            return sessions[session_id]
        path = sessions_dir / f"{session_id}.json"
        if not path.is_file():
            raise HTTPException(404, detail=f"unknown session {session_id!r}")
        state = json.loads(path.read_text(encoding="utf-8"))
        store = get_store(state["dataset_id"])
        runtime = SessionRuntime(
            session=load_session(state, store),
            dataset_id=state["dataset_id"],
            aog_ref=state["aog_ref"],
        )
        sessions[session_id] = runtime
        return runtime

    def mutation_lock(runtime: SessionRuntime) -> threading.Lock:
        if not runtime.lock.acquire(blocking=False):
            raise HTTPException(409, detail=f"session {runtime.session.session_id} is busy")
        return runtime.lock

    def descriptor(runtime: SessionRuntime) -> dict:
        session = runtime.session
        aog = session.aog
        manifest = session.store.manifest
        tree = session.trees.get(runtime.active_image) if runtime.active_image else None
        patterns = []
        for tpl in aog.templates:
            for p in tpl.patterns:
                contribution = None
                if tree is not None and tree.chosen_template_id == tpl.template_id:
                    for a in tree.pattern_assignments:
                        if a.pattern_id == p.pattern_id:
                            contribution = a.contribution
                patterns.append(
                    {
                        "pattern_id": p.pattern_id,
                        "template_id": tpl.template_id,
                        "group": manifest.group_of(p.layer_id),
                        "active": p.active,
                        "contribution": contribution,
                    }
                )
        return {
            "session_id": session.session_id,
            "manifest": runtime.dataset_id,
            "aog": runtime.aog_ref,
            "part_name": aog.part_name,
            "active_image": runtime.active_image,
            "undo_depth": len(session.ops),
            "patterns": patterns,
        }

    def parse_cached(runtime: SessionRuntime, image_id: str) -> ParseTree:
        key = (image_id, _aog_hash(runtime.session.aog))
        if key not in runtime.parse_cache:
            try:
                runtime.parse_cache[key] = runtime.session.parse_image(image_id)
            except (ManifestError, KeyError):
                raise HTTPException(404, detail=f"unknown image {image_id!r}")
            except EmptyAogError as exc:
                raise _invalid("aog", str(exc))
        else:
            runtime.session.trees[image_id] = runtime.parse_cache[key]
        return runtime.parse_cache[key]

    @app.get("/v1/datasets")
    def list_datasets():
        out = []
        for dataset_id, path in dataset_dirs().items():
            store = get_store(dataset_id)
            out.append(
                {
                    "dataset_id": dataset_id,
                    "category": store.manifest.category,
                    "part_name": store.manifest.part_name,
                    "n_images": len(store.manifest.records),
                    "aogs": sorted(
                        p.name for p in path.glob("*.json") if p.name not in ("manifest.json", "ground_truth.json")
                    ),
                }
            )
        return _wrap({"datasets": out})

    @app.get("/v1/datasets/{dataset_id}/images")
    def list_images(dataset_id: str):
        store = get_store(dataset_id)
        return _wrap({"images": [r.to_json() for r in store.manifest.records]})

    @app.post("/v1/sessions")
    def create_session(req: CreateSessionRequest):
        store = get_store(req.manifest)
        aog_path = dataset_dirs()[req.manifest] / req.aog
        if not aog_path.is_file():
            raise HTTPException(404, detail=f"unknown aog {req.aog!r} in dataset {req.manifest!r}")
        try:
            aog = load_aog(aog_path)
        except AogValidationError as exc:
            raise _invalid("aog", str(exc))
        session_id = f"s{next(session_counter):04d}"
        while (sessions_dir / f"{session_id}.json").exists() or session_id in sessions:
            session_id = f"s{next(session_counter):04d}"
        runtime = SessionRuntime(
            session=InteractionSession(session_id=session_id, store=store, base_aog=aog),
            dataset_id=req.manifest,
            aog_ref=req.aog,
        )
        sessions[session_id] = runtime
        persist(runtime)
        return _wrap({"session": descriptor(runtime)})

    @app.get("/v1/sessions/{session_id}")
    def get_session(session_id: str):
        return _wrap({"session": descriptor(get_runtime(session_id))})

    @app.post("/v1/sessions/{session_id}/parse")
    def parse_image(session_id: str, req: ParseRequest):
        runtime = get_runtime(session_id)
        lock = mutation_lock(runtime)
        try:
            tree = parse_cached(runtime, req.image_id)
            runtime.active_image = req.image_id
            persist(runtime)
            return _wrap({"tree": tree.to_json()})
        finally:
            lock.release()

    @app.get("/v1/sessions/{session_id}/overlay/{image_id}")
    def overlay(session_id: str, image_id: str, group: str = "low", format: str = "json"):
        if group not in LAYER_GROUPS:
            raise _invalid("group", f"{group!r} not in {LAYER_GROUPS}")
        runtime = get_runtime(session_id)
        lock = mutation_lock(runtime)
        try:
            tree = parse_cached(runtime, image_id)
            session = runtime.session
            record = session.store.manifest.record(image_id)
            size = (record.width_px, record.height_px)
            layer = build_heatmap_layer(
                session.store.load(image_id), session.aog, tree, session.store.manifest, group, size
            )
            png, layout = render_overlay(image_id, [layer], tree, size)
        finally:
            lock.release()
        if format == "png":
            return Response(content=png, media_type="image/png")
        return _wrap({"layout": layout, "png_base64": base64.b64encode(png).decode("ascii")})

    @app.post("/v1/sessions/{session_id}/annotate")
    def annotate(session_id: str, req: AnnotateRequest):
        runtime = get_runtime(session_id)
        lock = mutation_lock(runtime)
        try:
            if not req.rectangles:
                raise _invalid("rectangles", "annotated region set must be nonempty")
            try:
                regions = AnnotatedRegionSet(
                    image_id=req.image_id,
                    rectangles=tuple(Rect(r.x, r.y, r.w, r.h) for r in req.rectangles),
                    layer_group_scope=req.scope,
                )
            except (SessionError, GeometryError) as exc:
                raise _invalid("rectangles", str(exc))
            parse_cached(runtime, req.image_id)
            session = runtime.session
            try:
                evidence = propose_prunes(
                    session, req.image_id, regions, session.store.saliency_map
                )
            except SessionError as exc:
                raise _invalid("rectangles", str(exc))
            return _wrap(
                {
                    "proposals": proposed_ids(evidence),
                    "evidence": [e.to_json() for e in evidence],
                }
            )
        finally:
            lock.release()

    @app.post("/v1/sessions/{session_id}/prune")
    def prune(session_id: str, req: PruneRequest):
        runtime = get_runtime(session_id)
        lock = mutation_lock(runtime)
        try:
            session = runtime.session
            aog = session.aog
            for pattern_id in req.pattern_ids:
                try:
                    pattern = aog.pattern(pattern_id)
                except AogValidationError:
                    raise HTTPException(404, detail=f"unknown pattern {pattern_id!r}")
                if not pattern.active:
                    raise _invalid("pattern_ids", f"pattern {pattern_id!r} is already pruned")
            apply_prunes(session, req.pattern_ids)
            persist(runtime)
            return _wrap({"session": descriptor(runtime)})
        finally:
            lock.release()

    @app.post("/v1/sessions/{session_id}/undo")
    def undo_ops(session_id: str, req: UndoRequest):
        runtime = get_runtime(session_id)
        lock = mutation_lock(runtime)
        try:
            try:
                undo(runtime.session, req.k)
            except SessionError as exc:
                raise _invalid("k", str(exc))
            persist(runtime)
            return _wrap({"session": descriptor(runtime)})
        finally:
            lock.release()

    @app.get("/v1/sessions/{session_id}/metrics")
    def metrics(session_id: str):
        runtime = get_runtime(session_id)
        lock = mutation_lock(runtime)
        try:
            report = evaluate(runtime.session.aog, runtime.session.store)
        finally:
            lock.release()
        return _wrap({"report": report.to_json()})

    return app
