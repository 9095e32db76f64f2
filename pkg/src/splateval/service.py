"""HTTP service backing the scene-composition UI.

Sessions hold a mutable scene-descriptor draft with an undo stack and a
version counter for optimistic concurrency; every preview pixel is
rendered server-side by the same rasterizer evaluation uses, so the UI
never computes geometry. Mutating endpoints honor an Idempotency-Key
header (same key -> replayed response). Evaluation jobs run on
background threads with polled status.
"""

from __future__ import annotations

import copy
import io
import json
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import Body, FastAPI, Header, HTTPException, Response

from .robot import JointConfig
from .render import RenderConfig, render
from .scene import (
    ComposeError,
    PREDICATE_KINDS,
    load_scene,
    load_scene_dict,
    save_scene_descriptor,
)
from .splats import Camera, ValidationError
from .splat_io import load_splats_file

UNDO_DEPTH = 100


@dataclass
class Session:
    session_id: str
    base_dir: Path
    draft: dict
    version: int = 0
    dirty: bool = False
    undo_stack: list = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)
    idempotent: dict = field(default_factory=dict)

    def snapshot(self) -> None:
        self.undo_stack.append(copy.deepcopy(self.draft))
        if len(self.undo_stack) > UNDO_DEPTH:
            self.undo_stack.pop(0)

    def summary(self) -> dict:
        return {
            "session": self.session_id,
            "version": self.version,
            "dirty": self.dirty,
            "draft": self.draft,
            "validation": self.validation_problems(),
        }

    def validation_problems(self) -> list[str]:
        problems = []
        try:
            load_scene_dict(copy.deepcopy(self.draft), self.base_dir, where=self.session_id)
        except (ComposeError, ValidationError, FileNotFoundError, KeyError) as exc:
            problems.append(str(exc))
        return problems


@dataclass
class EvalJob:
    job_id: str
    state: str = "queued"  # queued | running | done | failed
    completed: int = 0
    total: int = 0
    scores: list = field(default_factory=list)
    error: str | None = None
    summary: dict = field(default_factory=dict)


def _asset_entries(asset_roots: list[Path]) -> dict[str, Path]:
    entries: dict[str, Path] = {}
    for root in asset_roots:
        if not root.is_dir():
            continue
        for sub in sorted(root.iterdir()):
            if (sub / "object.pspl").exists():
                entries[sub.name] = sub
    return entries


AUTOSAVE_EVERY = 20  # mutations between draft autosaves


def create_app(asset_roots: list[Path] | None = None, scene_root: Path | None = None) -> FastAPI:
    asset_roots = asset_roots or []
    scene_root = scene_root or Path(".")
    for root in asset_roots:
        if not root.is_dir():
            raise ValidationError(f"asset root {root} is not a readable directory")
    sessions: dict[str, Session] = {}
    jobs: dict[str, EvalJob] = {}

    def autosave(session: Session) -> None:
        out = scene_root / ".autosave"
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{session.session_id}.json").write_text(json.dumps(session.draft, sort_keys=True))

    def flush_sessions() -> None:
        for session in sessions.values():
            with session.lock:
                if session.dirty:
                    autosave(session)

    from contextlib import asynccontextmanager

    @asynccontextmanager
    async def lifespan(_app):
        yield
        flush_sessions()  # graceful shutdown keeps dirty drafts recoverable

    app = FastAPI(title="splateval composer service", lifespan=lifespan)

    def get_session(session_id: str) -> Session:
        if session_id not in sessions:
            raise HTTPException(404, f"unknown session {session_id!r}")
        return sessions[session_id]

    def mutate(session: Session, key: str | None, fn):
        with session.lock:
            if key is not None and key in session.idempotent:
                return session.idempotent[key]
            session.snapshot()
            result = fn(session.draft)
            session.version += 1
            session.dirty = True
            if session.version % AUTOSAVE_EVERY == 0:
                autosave(session)
            payload = {"version": session.version, **(result or {})}
            if key is not None:
                session.idempotent[key] = payload
            return payload

    @app.get("/schema")
    def schema():
        return {
            "predicates": {
                "inside_region": ["a", "box_min", "box_max"],
                "on_top_of": ["a", "b", "overlap", "gap"],
                "near": ["a", "b", "distance"],
                "lifted": ["a", "height"],
                "reached": ["a", "distance"],
                "grasped": ["a", "width", "distance"],
            },
            "predicate_kinds": list(PREDICATE_KINDS),
            "endpoints": [
                "GET /assets", "GET /assets/{id}/thumbnail", "POST /session",
                "GET /scene/{session}", "GET /scene/{session}/placements",
                "POST /scene/{session}/placements", "POST /scene/{session}/camera",
                "POST /scene/{session}/rubric", "POST /scene/{session}/undo",
                "POST /render/preview", "POST /scene/{session}/save",
                "POST /eval/start", "GET /eval/{job}/status", "GET /metrics/{job}",
            ],
        }

    @app.get("/assets")
    def list_assets():
        out = []
        for asset_id, path in _asset_entries(asset_roots).items():
            scene = load_splats_file(path / "object.pspl")
            lo = scene.means.min(axis=0).tolist() if len(scene) else [0, 0, 0]
            hi = scene.means.max(axis=0).tolist() if len(scene) else [0, 0, 0]
            out.append(
                {
                    "id": asset_id,
                    "splats": len(scene),
                    "bbox": {"min": lo, "max": hi},
                    "thumbnail": f"/assets/{asset_id}/thumbnail",
                }
            )
        return out

    @app.get("/assets/{asset_id}/thumbnail")
    def asset_thumbnail(asset_id: str):
        entries = _asset_entries(asset_roots)
        if asset_id not in entries:
            raise HTTPException(404, f"unknown asset {asset_id!r}")
        scene = load_splats_file(entries[asset_id] / "object.pspl")
        span = float(np.max(scene.means.max(axis=0) - scene.means.min(axis=0))) if len(scene) else 0.1
        center = scene.means.mean(axis=0) if len(scene) else np.zeros(3)
        from .synthetic import look_at

        eye = center + np.array([1.6, -1.6, 1.2]) * max(span, 0.05)
        cam = Camera(look_at(eye, center), 60.0, 60.0, 32.0, 32.0, 64, 64)
        buf = render(scene, cam, RenderConfig())
        return Response(content=_png_bytes(buf.color), media_type="image/png")

    @app.post("/session")
    def open_session(body: dict = Body(default={})):
        session_id = uuid.uuid4().hex[:12]
        base = Path(body.get("base_dir", scene_root))
        if "descriptor" in body:
            desc_path = base / body["descriptor"] if not Path(body["descriptor"]).is_absolute() else Path(body["descriptor"])
            draft = json.loads(Path(desc_path).read_text())
            base = Path(desc_path).parent
        else:
            raise HTTPException(400, "session needs a 'descriptor' to start from")
        sessions[session_id] = Session(session_id, base, draft)
        return {"session": session_id, "version": 0, "draft": draft}

    @app.get("/scene/{session_id}")
    def get_scene(session_id: str):
        return get_session(session_id).summary()

    @app.get("/scene/{session_id}/placements")
    def get_placements(session_id: str):
        s = get_session(session_id)
        return {"version": s.version, "placements": s.draft.get("placements", [])}

    @app.post("/scene/{session_id}/placements")
    def post_placements(
        session_id: str,
        body: dict = Body(...),
        idempotency_key: str | None = Header(default=None),
    ):
        s = get_session(session_id)
        expect = body.get("version")
        if expect is not None and expect != s.version:
            raise HTTPException(409, f"version conflict: draft at {s.version}, request at {expect}")

        def apply(draft):
            placements = draft.setdefault("placements", [])
            op = body.get("op", "add")
            if op == "add":
                placements.append(body["placement"])
            elif op == "update":
                inst = body["placement"].get("instance")
                for i, p in enumerate(placements):
                    if p.get("instance") == inst:
                        placements[i] = body["placement"]
                        break
                else:
                    raise HTTPException(404, f"unknown placement instance {inst!r}")
            elif op == "remove":
                inst = body.get("instance")
                before = len(placements)
                draft["placements"] = [p for p in placements if p.get("instance") != inst]
                if len(draft["placements"]) == before:
                    raise HTTPException(404, f"unknown placement instance {inst!r}")
            else:
                raise HTTPException(400, f"unknown op {op!r}")
            return {"placements": draft.get("placements", [])}

        return mutate(s, idempotency_key, apply)

    @app.post("/scene/{session_id}/camera")
    def post_camera(
        session_id: str,
        body: dict = Body(...),
        idempotency_key: str | None = Header(default=None),
    ):
        s = get_session(session_id)

        def apply(draft):
            cams = draft.setdefault("cameras", [])
            name = body.get("name")
            if not name:
                raise HTTPException(400, "camera needs a name")
            for i, c in enumerate(cams):
                if c.get("name") == name:
                    cams[i] = body
                    break
            else:
                cams.append(body)
            return {"cameras": cams}

        return mutate(s, idempotency_key, apply)

    @app.post("/scene/{session_id}/rubric")
    def post_rubric(
        session_id: str,
        body: dict = Body(...),
        idempotency_key: str | None = Header(default=None),
    ):
        s = get_session(session_id)
        for step in body.get("steps", []):
            if step.get("kind") not in PREDICATE_KINDS:
                raise HTTPException(400, f"unknown predicate kind {step.get('kind')!r}")

        def apply(draft):
            draft["rubric"] = body
            return {"rubric": draft["rubric"]}

        return mutate(s, idempotency_key, apply)

    @app.post("/scene/{session_id}/undo")
    def post_undo(session_id: str):
        s = get_session(session_id)
        with s.lock:
            if not s.undo_stack:
                raise HTTPException(409, "nothing to undo")
            s.draft = s.undo_stack.pop()
            s.version += 1
            s.dirty = True
            return {"version": s.version, "draft": s.draft}

    @app.post("/render/preview")
    def render_preview(body: dict = Body(...)):
        s = get_session(body["session"])
        with s.lock:
            draft = copy.deepcopy(s.draft)
        try:
            scene = load_scene_dict(draft, s.base_dir, where=s.session_id)
        except (ComposeError, ValidationError) as exc:
            raise HTTPException(422, f"draft does not compose: {exc}") from exc
        cam_name = body.get("camera")
        if cam_name in scene.external_cameras:
            cam = scene.external_cameras[cam_name]
        elif cam_name == scene.wrist_camera[0]:
            from .world import wrist_camera_at

            q = scene.initial_q()
            cam = wrist_camera_at(scene, q.q[:-1], q.q[-1])
        else:
            raise HTTPException(404, f"unknown camera {cam_name!r}")
        if body.get("resolution"):
            w, h = body["resolution"]
            sx = w / cam.width
            cam = Camera(cam.pose, cam.fx * sx, cam.fy * sx, cam.cx * sx, cam.cy * sx, int(w), int(h))
        flat = scene.flatten(scene.initial_q(), scene.nominal_poses())
        buf = render(flat, cam, RenderConfig())
        return Response(content=_png_bytes(buf.color), media_type="image/png")

    @app.post("/scene/{session_id}/save")
    def save_scene(session_id: str, body: dict = Body(...)):
        s = get_session(session_id)
        rel = body.get("path")
        if not rel:
            raise HTTPException(400, "save needs a 'path'")
        out = Path(rel) if Path(rel).is_absolute() else s.base_dir / rel
        with s.lock:
            problems = s.validation_problems()
            if problems:
                raise HTTPException(422, f"draft does not validate: {problems}")
            digest = save_scene_descriptor(copy.deepcopy(s.draft), out)
            s.dirty = False
        return {"path": str(out), "content_hash": digest, "version": s.version}

    @app.post("/eval/start")
    def eval_start(body: dict = Body(...)):
        scene_path = body.get("scene")
        policy = body.get("policy")
        episodes = int(body.get("episodes", 10))
        if not scene_path or not policy:
            raise HTTPException(400, "eval needs 'scene' and 'policy'")
        job = EvalJob(uuid.uuid4().hex[:12], total=episodes)
        jobs[job.job_id] = job

        def work():
            from .episode import run_episode

            job.state = "running"
            try:
                scene = load_scene(scene_path if Path(scene_path).is_absolute() else scene_root / scene_path)
                scores = []
                for i in range(episodes):
                    rec = run_episode(
                        scene, policy, int(body.get("seed", 1000)) + i,
                        max_steps=int(body.get("max_steps", 400)),
                    )
                    if not rec.failed_infrastructure:
                        scores.append(rec.final_score)
                    job.completed = i + 1
                    job.scores = scores
                job.summary = {
                    "mean_score": float(np.mean(scores)) if scores else None,
                    "episodes": len(scores),
                    "infrastructure_failures": episodes - len(scores),
                    "environment": scene.rubric.task,
                    "policy": policy,
                }
                job.state = "done"
            except Exception as exc:  # noqa: BLE001 (job boundary)
                job.state = "failed"
                job.error = str(exc)

        threading.Thread(target=work, daemon=True).start()
        return {"job": job.job_id}

    @app.get("/eval/{job_id}/status")
    def eval_status(job_id: str):
        if job_id not in jobs:
            raise HTTPException(404, f"unknown job {job_id!r}")
        job = jobs[job_id]
        return {
            "state": job.state, "completed": job.completed, "total": job.total, "error": job.error,
        }

    @app.get("/metrics/{job_id}")
    def job_metrics(job_id: str):
        if job_id not in jobs:
            raise HTTPException(404, f"unknown job {job_id!r}")
        job = jobs[job_id]
        if job.state != "done":
            raise HTTPException(409, f"job is {job.state}")
        return {"summary": job.summary, "scores": job.scores}

    return app


def _png_bytes(color: np.ndarray) -> bytes:
    from PIL import Image

    u8 = np.clip(np.round(color * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(u8).save(buf, format="PNG")
    return buf.getvalue()
