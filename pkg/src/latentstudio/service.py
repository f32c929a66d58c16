"""Session server: photo projection, live constrained editing with frame
streaming, candidate exploration, relative-edit interpolation, edit
transfer and photo-to-photo transformation over HTTP + WebSocket.

Each session owns private graph instances (weights shared, caches not),
an append-only history of mutation events, and a step log that records
the latent behind every streamed frame. Mutations are serialized per
session with queue depth one: a second writer gets a busy error instead
of waiting. History replay reproduces the current latent, which is how
sessions are restored from disk.
"""

from __future__ import annotations

import json
import queue
import threading
import time
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from . import editing, flow, weights
from .config import ServiceConfig
from .editing import ConstraintError, EditState, make_edit_state
from .hog import HogConfig
from .images import (
    decode_png_b64,
    encode_png_b64,
    nchw_to_hwc,
    resize_image,
    save_image,
    load_image,
)
from .models import graph_from_params, sample_latent
from .nn import DTYPE
from .projection import FeatureExtractor, ReconLoss, project_hybrid
from .wire import materialize_all, validate_spec


class ApiError(Exception):
    def __init__(self, status: int, code: str, detail: str = ""):
        super().__init__(detail or code)
        self.status = status
        self.code = code
        self.detail = detail or code


def _not_found(what: str) -> ApiError:
    return ApiError(404, "not_found", what)


def _busy() -> ApiError:
    return ApiError(409, "busy", "another mutation is in flight for this session")


class ModelBundle:
    """Loaded weights for one model id plus shared helper handles."""

    def __init__(self, model_id: str, gen_params, disc_params, enc_params):
        self.model_id = model_id
        self.gen_params = gen_params
        self.disc_params = disc_params
        self.enc_params = enc_params
        self.descriptor = gen_params.descriptor
        self._gen = graph_from_params(gen_params)
        self._disc = graph_from_params(disc_params)
        self._enc = graph_from_params(enc_params)

    def graphs(self):
        """Fresh-cache graph handles over the shared weights."""
        return self._gen.clone_shared(), self._disc.clone_shared(), self._enc.clone_shared()


class ModelStore:
    def __init__(self, model_dir: str):
        self.model_dir = Path(model_dir)
        self._bundles: dict[str, ModelBundle] = {}
        self._lock = threading.Lock()

    def list_ids(self):
        if not self.model_dir.is_dir():
            return []
        ids = []
        if (self.model_dir / "generator.gvmw").exists():
            ids.append("default")
        for sub in sorted(self.model_dir.iterdir()):
            if sub.is_dir() and (sub / "generator.gvmw").exists():
                ids.append(sub.name)
        return ids

    def get(self, model_id: str) -> ModelBundle:
        with self._lock:
            if model_id in self._bundles:
                return self._bundles[model_id]
            base = self.model_dir if model_id == "default" else self.model_dir / model_id
            if not (base / "generator.gvmw").exists():
                raise _not_found(f"unknown model {model_id!r}")
            try:
                bundle = ModelBundle(
                    model_id,
                    weights.load_params(base / "generator.gvmw"),
                    weights.load_params(base / "discriminator.gvmw"),
                    weights.load_params(base / "encoder.gvmw"),
                )
            except (OSError, weights.WeightsError) as exc:
                raise ApiError(500, "model_load_failed", str(exc)) from exc
            self._bundles[model_id] = bundle
            return bundle


class Session:
    def __init__(self, session_id: str, model: ModelBundle, cfg: ServiceConfig,
                 photo: np.ndarray | None, seed: int):
        self.id = session_id
        self.model = model
        self.cfg = cfg
        self.photo = photo
        self.seed = seed
        self.created = time.time()
        self.updated = self.created
        self.generator, self.discriminator, self.encoder = model.graphs()
        self.recon_cfg = ReconLoss(extractor=FeatureExtractor.from_params(model.disc_params))
        self.hog_cfg = HogConfig()
        self.state: EditState | None = None
        self.projection_loss: float | None = None
        self.blank = photo is None
        self.constraint_specs: list = []
        self.history: list = []
        self.step_log: list = []  # (seq, z as list)
        self.seq = 0
        self.subscribers: list[queue.Queue] = []
        self.mutation_lock = threading.Lock()
        self.io_lock = threading.Lock()

    # -- lifecycle ----------------------------------------------------------

    def initialize(self):
        res = self.model.descriptor.resolution
        if self.blank:
            z0 = sample_latent(np.random.default_rng(self.seed), self.model.descriptor.latent_dim)
            # no anchor until the user accepts a state: pure data objective
            self.state = make_edit_state(z0, smooth_weight=0.0)
        else:
            small = resize_image(self.photo, res, res)
            result = project_hybrid(
                small, self.encoder, self.generator, self.recon_cfg,
                steps=self.cfg.projection_steps,
            )
            self.projection_loss = result.loss
            self.state = make_edit_state(result.z)
        self.history.append(
            {
                "type": "create",
                "model": self.model.model_id,
                "blank": self.blank,
                "seed": self.seed,
                "z0": [float(v) for v in self.state.z0],
            }
        )

    def current_frame(self) -> np.ndarray:
        return nchw_to_hwc(self.generator.forward(self.state.z[None], "inference"))

    def touch(self):
        self.updated = time.time()

    # -- mutations (caller holds mutation_lock) ------------------------------

    def apply_constraints(self, specs: list):
        canonical = [validate_spec(s) for s in specs]
        constraints = materialize_all(
            canonical, self.current_frame(), self.model.descriptor.resolution, self.hog_cfg
        )
        self.constraint_specs = canonical
        self.state = self.state.with_constraints(constraints)
        self.history.append({"type": "constraints", "specs": canonical})
        self.touch()

    def run_steps(self, k: int, record_history: bool = True):
        """k single steps, streaming every intermediate frame."""
        last = None
        for _ in range(k):
            self.state, frame = editing.step(
                self.state, self.generator,
                self.discriminator if self.state.realism else None, k=1,
            )
            energy, _ = editing.edit_energy(
                self.state, self.generator,
                self.discriminator if self.state.realism else None,
            )
            self.seq += 1
            self.step_log.append((self.seq, [float(v) for v in self.state.z]))
            last = {
                "seq": self.seq,
                "png": encode_png_b64(frame),
                "energy": float(energy),
            }
            self._publish(last)
        if record_history and k > 0:
            self.history.append({"type": "step", "k": int(k)})
            self.touch()
        if last is None:  # k == 0: re-emit the current frame
            energy, _ = editing.edit_energy(
                self.state, self.generator,
                self.discriminator if self.state.realism else None,
            )
            last = {
                "seq": self.seq,
                "png": encode_png_b64(self.current_frame()),
                "energy": float(energy),
            }
            self._publish(last)
        return last

    def accept_latent(self, z):
        z = np.asarray(z, DTYPE)
        if z.shape != self.state.z.shape:
            raise ApiError(400, "bad_latent", "latent has the wrong dimension")
        if not np.all(np.isfinite(z)):
            raise ApiError(400, "bad_latent", "latent has non-finite values")
        smooth = self.state.smooth_weight
        if self.blank and smooth == 0.0:
            smooth = editing.DEFAULT_SMOOTH_WEIGHT  # anchor engages on first accept
        self.state = EditState(
            z0=z.copy(), z=z.copy(),
            constraints=self.state.constraints,
            smooth_weight=smooth,
            realism_weight=self.state.realism_weight,
            realism=self.state.realism,
            hog_cache=self.state.hog_cache,
        )
        self.history.append({"type": "accept", "z": [float(v) for v in z]})
        self.touch()

    # -- streaming ----------------------------------------------------------

    def _publish(self, message: dict):
        for q in list(self.subscribers):
            q.put(message)

    def subscribe(self) -> queue.Queue:
        q = queue.Queue()
        self.subscribers.append(q)
        return q

    def unsubscribe(self, q):
        if q in self.subscribers:
            self.subscribers.remove(q)

    # -- queries -------------------------------------------------------------

    def info(self) -> dict:
        return {
            "id": self.id,
            "model": self.model.model_id,
            "resolution": self.model.descriptor.resolution,
            "latent_dim": self.model.descriptor.latent_dim,
            "blank": self.blank,
            "created": self.created,
            "updated": self.updated,
            "projection_loss": self.projection_loss,
            "z0": [float(v) for v in self.state.z0],
            "z": [float(v) for v in self.state.z],
            "constraints": self.constraint_specs,
            "history_length": len(self.history),
            "step_log": self.step_log,
            "busy": self.mutation_lock.locked(),
        }

    # -- persistence ----------------------------------------------------------

    def save(self, sessions_dir: Path) -> Path:
        with self.io_lock:
            root = sessions_dir / self.id
            root.mkdir(parents=True, exist_ok=True)
            meta = {
                "id": self.id,
                "model": self.model.model_id,
                "blank": self.blank,
                "seed": self.seed,
                "created": self.created,
                "updated": self.updated,
                "projection_loss": self.projection_loss,
                "z": [float(v) for v in self.state.z],
                "seq": self.seq,
            }
            (root / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1))
            (root / "history.json").write_text(
                json.dumps(self.history, sort_keys=True, indent=1)
            )
            if self.photo is not None and not (root / "photo.png").exists():
                save_image(self.photo, root / "photo.png")
            return root

    @classmethod
    def load(cls, sessions_dir: Path, session_id: str, store: ModelStore,
             cfg: ServiceConfig) -> "Session":
        root = sessions_dir / session_id
        if not (root / "meta.json").exists():
            raise _not_found(f"no saved session {session_id!r}")
        meta = json.loads((root / "meta.json").read_text())
        history = json.loads((root / "history.json").read_text())
        photo = load_image(root / "photo.png") if (root / "photo.png").exists() else None
        model = store.get(meta["model"])
        session = cls(session_id, model, cfg, photo, int(meta["seed"]))
        session.created = meta["created"]
        session.replay(history)
        session.updated = meta["updated"]
        session.projection_loss = meta.get("projection_loss")
        replayed = np.asarray(session.state.z, np.float64)
        stored = np.asarray(meta["z"], np.float64)
        if np.max(np.abs(replayed - stored)) > 1e-6:
            raise ApiError(500, "replay_mismatch",
                           f"history replay diverged from stored state for {session_id}")
        return session

    def replay(self, history: list):
        """Rebuild state by re-running the recorded mutation events."""
        if not history or history[0]["type"] != "create":
            raise ApiError(500, "bad_history", "history must start with a create event")
        create = history[0]
        z0 = np.asarray(create["z0"], DTYPE)
        self.blank = bool(create["blank"])
        self.state = make_edit_state(z0, smooth_weight=0.0 if self.blank else editing.DEFAULT_SMOOTH_WEIGHT)
        self.history = [create]
        for event in history[1:]:
            kind = event["type"]
            if kind == "constraints":
                self.apply_constraints(event["specs"])
            elif kind == "step":
                self.run_steps(int(event["k"]), record_history=True)
            elif kind == "accept":
                self.accept_latent(event["z"])
            else:
                raise ApiError(500, "bad_history", f"unknown history event {kind!r}")
        # replay re-appended the events; keep the canonical list
        self.history = history


# ---------------------------------------------------------------------------
# application
# ---------------------------------------------------------------------------

def create_app(cfg: ServiceConfig) -> FastAPI:
    app = FastAPI(title="latentstudio", version="0.1.0")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    store = ModelStore(cfg.model_dir)
    sessions: dict[str, Session] = {}
    sessions_lock = threading.Lock()
    sessions_dir = Path(cfg.sessions_dir)

    app.state.config = cfg
    app.state.sessions = sessions

    @app.exception_handler(ApiError)
    async def _api_error(_, exc: ApiError):
        return JSONResponse(status_code=exc.status,
                            content={"error": exc.code, "detail": exc.detail})

    @app.exception_handler(ConstraintError)
    async def _constraint_error(_, exc: ConstraintError):
        return JSONResponse(status_code=400,
                            content={"error": "bad_constraint", "detail": str(exc)})

    def get_session(session_id: str) -> Session:
        with sessions_lock:
            if session_id in sessions:
                return sessions[session_id]
        session = Session.load(sessions_dir, session_id, store, cfg)
        with sessions_lock:
            return sessions.setdefault(session_id, session)

    def mutation(session: Session):
        if not session.mutation_lock.acquire(blocking=False):
            raise _busy()
        return session.mutation_lock

    @app.get("/models")
    def list_models():
        return {"models": store.list_ids()}

    @app.post("/sessions")
    def create_session(body: dict):
        model_id = body.get("model", "default")
        seed = int(body.get("seed", 0))
        bundle = store.get(model_id)
        photo = None
        if body.get("photo"):
            try:
                photo = decode_png_b64(body["photo"])
            except Exception as exc:
                raise ApiError(400, "bad_photo", f"undecodable photo: {exc}") from exc
        session = Session(uuid.uuid4().hex[:12], bundle, cfg, photo, seed)
        session.initialize()
        with sessions_lock:
            sessions[session.id] = session
        return {
            "id": session.id,
            "resolution": bundle.descriptor.resolution,
            "latent_dim": bundle.descriptor.latent_dim,
            "blank": session.blank,
            "projection_loss": session.projection_loss,
            "frame": encode_png_b64(session.current_frame()),
        }

    @app.get("/sessions/{session_id}")
    def session_info(session_id: str):
        return get_session(session_id).info()

    @app.post("/sessions/{session_id}/constraints")
    def put_constraints(session_id: str, body: dict):
        session = get_session(session_id)
        specs = body.get("constraints")
        if not isinstance(specs, list) or not specs:
            raise ApiError(400, "bad_constraint", "constraints must be a non-empty list")
        lock = mutation(session)
        try:
            session.apply_constraints(specs)
        finally:
            lock.release()
        return {"count": len(specs)}

    @app.post("/sessions/{session_id}/step")
    def step_session(session_id: str, body: dict | None = None):
        session = get_session(session_id)
        body = body or {}
        k = int(body.get("k", cfg.default_steps))
        if k < 0 or k > cfg.step_budget:
            raise ApiError(400, "bad_step_count",
                           f"k must be between 0 and the step budget {cfg.step_budget}")
        lock = mutation(session)
        try:
            result = session.run_steps(k)
        finally:
            lock.release()
        return result

    @app.get("/sessions/{session_id}/candidates")
    def get_candidates(session_id: str):
        session = get_session(session_id)
        lock = mutation(session)
        try:
            results = editing.candidates(
                session.state, session.generator,
                session.discriminator if session.state.realism else None,
                count=cfg.candidate_count, keep=cfg.candidate_keep,
                steps=cfg.candidate_steps, seed=session.seed,
            )
        finally:
            lock.release()
        return {
            "candidates": [
                {
                    "z": [float(v) for v in c.z],
                    "png": encode_png_b64(c.frame),
                    "energy": float(c.energy),
                }
                for c in results
            ]
        }

    @app.post("/sessions/{session_id}/accept")
    def accept_candidate(session_id: str, body: dict):
        session = get_session(session_id)
        if "z" not in body:
            raise ApiError(400, "bad_latent", "body needs a z array")
        lock = mutation(session)
        try:
            session.accept_latent(body["z"])
            frame = session.current_frame()
        finally:
            lock.release()
        return {"frame": encode_png_b64(frame)}

    @app.get("/sessions/{session_id}/interpolation")
    def get_interpolation(session_id: str, frames: int = 7):
        session = get_session(session_id)
        if frames < 1:
            raise ApiError(400, "bad_frame_count", "frames must be at least 1")
        # a private graph clone keeps this read safe alongside mutations
        gen = session.generator.clone_shared()
        seq = editing.relative_sequence(session.state, gen, frames)
        return {"frames": [encode_png_b64(f) for f in seq]}

    @app.post("/sessions/{session_id}/transfer")
    def run_transfer(session_id: str):
        session = get_session(session_id)
        if session.photo is None:
            raise ApiError(400, "no_photo", "blank sessions have no photo to transfer onto")
        lock = mutation(session)
        try:
            seq = flow.transfer_edit(
                session.photo, session.state.z0, session.state.z, session.generator
            )
        finally:
            lock.release()
        return {"frames": [encode_png_b64(f) for f in seq]}

    @app.post("/transform")
    def run_transform(body: dict):
        model_id = body.get("model", "default")
        mode = body.get("mode", "shape+color")
        if mode not in ("shape+color", "shape-only"):
            raise ApiError(400, "bad_mode", f"unknown transform mode {mode!r}")
        try:
            photo_a = decode_png_b64(body["photo_a"])
            photo_b = decode_png_b64(body["photo_b"])
        except KeyError as exc:
            raise ApiError(400, "bad_photo", f"missing {exc} photo") from exc
        except Exception as exc:
            raise ApiError(400, "bad_photo", f"undecodable photo: {exc}") from exc
        bundle = store.get(model_id)
        gen, _, enc = bundle.graphs()
        recon = ReconLoss(extractor=FeatureExtractor.from_params(bundle.disc_params))
        seq = flow.generative_transform(
            photo_a, photo_b, gen, enc, recon, mode=mode,
            steps=cfg.projection_steps,
        )
        return {"frames": [encode_png_b64(f) for f in seq]}

    @app.post("/sessions/{session_id}/save")
    def save_session(session_id: str):
        session = get_session(session_id)
        path = session.save(sessions_dir)
        return {"path": str(path)}

    @app.websocket("/sessions/{session_id}/stream")
    async def stream(ws: WebSocket, session_id: str):
        import asyncio

        await ws.accept()
        try:
            session = get_session(session_id)
        except ApiError as exc:
            await ws.send_json({"error": exc.code, "detail": exc.detail})
            await ws.close()
            return
        q = session.subscribe()
        try:
            while True:
                try:
                    message = q.get_nowait()
                except queue.Empty:
                    await asyncio.sleep(0.01)
                    continue
                await ws.send_json(message)
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            session.unsubscribe(q)

    if cfg.ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=cfg.ui_dir, html=True), name="ui")

    return app


def run_server(cfg: ServiceConfig):
    import uvicorn

    uvicorn.run(create_app(cfg), host=cfg.host, port=cfg.port, log_level="warning")
