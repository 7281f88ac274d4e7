"""HTTP generation service.

Jobs move QUEUED -> RUNNING -> DONE | FAILED, executed FIFO by a small
worker pool (default 1, which serializes model execution). Job metadata and
result images live in an on-disk store, so completed work survives
restarts; jobs interrupted mid-flight are marked FAILED on startup.
"""

from __future__ import annotations

import io
import json
import os
import queue
import threading
import time
import uuid
from typing import Optional

import numpy as np
from fastapi import Body, FastAPI, HTTPException, Response
from fastapi.middleware.cors import CORSMiddleware
from PIL import Image

from .diffusion.checkpoint import load_checkpoint
from .diffusion.sampling import ddim_sample
from .guidance import ConditionSet, GuidanceSpec
from .representation import build_binary, build_st_infer
from .scene import concat_prompts, encode_rle, parse_scene, serialize_scene, to_rst

_REQUEST_KEYS = ("guidance", "checkpoint", "seed", "steps")

QUEUED = "QUEUED"
RUNNING = "RUNNING"
DONE = "DONE"
FAILED = "FAILED"


class CheckpointRegistry:
    """Lazy-loading registry over a directory of .ckpt files."""

    def __init__(self, root: str):
        self.root = root
        self._cache: dict = {}
        self._lock = threading.Lock()

    def ids(self) -> list:
        if not os.path.isdir(self.root):
            return []
        return sorted(
            os.path.splitext(name)[0] for name in os.listdir(self.root) if name.endswith(".ckpt")
        )

    def get(self, checkpoint_id: str):
        with self._lock:
            if checkpoint_id not in self._cache:
                path = os.path.join(self.root, checkpoint_id + ".ckpt")
                if not os.path.exists(path):
                    raise KeyError(checkpoint_id)
                self._cache[checkpoint_id] = load_checkpoint(path)
            return self._cache[checkpoint_id]

    def describe(self) -> list:
        out = []
        for cid in self.ids():
            ckpt = self.get(cid)
            out.append(
                {
                    "id": cid,
                    "space": ckpt.space,
                    "resolution": list(ckpt.resolution),
                    "d_embed": ckpt.denoiser.d_text,
                    "representation": ckpt.representation,
                }
            )
        return out


class JobStore:
    """Thread-safe job records persisted as JSON + PNG files."""

    def __init__(self, root: str):
        self.root = root
        os.makedirs(root, exist_ok=True)
        self._lock = threading.Lock()
        self._jobs: dict = {}
        for name in os.listdir(root):
            if name.endswith(".json"):
                with open(os.path.join(root, name), encoding="utf-8") as f:
                    job = json.load(f)
                if job["state"] in (QUEUED, RUNNING):
                    job["state"] = FAILED
                    job["error"] = "interrupted by service restart"
                    self._persist(job)
                self._jobs[job["id"]] = job

    def _persist(self, job: dict) -> None:
        path = os.path.join(self.root, job["id"] + ".json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump(job, f)

    def create(self, request: dict) -> dict:
        job = {
            "id": uuid.uuid4().hex,
            "state": QUEUED,
            "error": None,
            "created": time.time(),
            "started": None,
            "finished": None,
            "request": request,
        }
        with self._lock:
            self._jobs[job["id"]] = job
            self._persist(job)
        return job

    def get(self, job_id: str) -> dict:
        with self._lock:
            if job_id not in self._jobs:
                raise KeyError(job_id)
            return dict(self._jobs[job_id])

    def transition(self, job_id: str, state: str, error: Optional[str] = None) -> None:
        with self._lock:
            job = self._jobs[job_id]
            allowed = {QUEUED: (RUNNING,), RUNNING: (DONE, FAILED)}
            if state not in allowed.get(job["state"], ()):
                raise RuntimeError(f"illegal job transition {job['state']} -> {state}")
            job["state"] = state
            job["error"] = error
            key = "started" if state == RUNNING else "finished"
            job[key] = time.time()
            self._persist(job)

    def image_path(self, job_id: str) -> str:
        return os.path.join(self.root, job_id + ".png")

    def store_image(self, job_id: str, png: bytes) -> None:
        with open(self.image_path(job_id), "wb") as f:
            f.write(png)


def _render_png(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.round(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)).save(
        buf, format="PNG"
    )
    return buf.getvalue()


def _status_view(job: dict) -> dict:
    return {
        "id": job["id"],
        "state": job["state"],
        "error": job["error"],
        "created": job["created"],
        "started": job["started"],
        "finished": job["finished"],
        "checkpoint": job["request"]["checkpoint"],
        "seed": job["request"]["seed"],
    }


def create_app(
    checkpoint_dir: str,
    job_dir: str = "jobs",
    workers: int = 1,
    default_seed: int = 0,
    cors_origins: tuple = ("*",),
) -> FastAPI:
    registry = CheckpointRegistry(checkpoint_dir)
    store = JobStore(job_dir)
    work: "queue.Queue[str]" = queue.Queue()

    def run_job(job_id: str) -> None:
        job = store.get(job_id)
        store.transition(job_id, RUNNING)
        try:
            request = job["request"]
            ckpt = registry.get(request["checkpoint"])
            scene = parse_scene(json.dumps(request["scene"]).encode("utf-8"))
            if tuple(scene.canvas) != tuple(ckpt.resolution):
                raise ValueError(
                    f"scene canvas {scene.canvas} does not match checkpoint resolution "
                    f"{tuple(ckpt.resolution)}"
                )
            rst = to_rst(scene)
            prompt = scene.global_prompt
            if scene.segments:
                prompt = concat_prompts(prompt, [s.prompt for s in scene.segments])
            text = ckpt.embedder.embed_text(prompt)
            if len(rst.prompts) == 0:
                st = None
            elif ckpt.representation == "binary":
                st = build_binary(rst)
            else:
                st = build_st_infer(rst, ckpt.embedder, prior=ckpt.prior)
            image = ddim_sample(
                ckpt,
                ConditionSet(global_text=text, st=st),
                guidance=GuidanceSpec.from_dict(request["guidance"]),
                steps=request.get("steps"),
                seed=request["seed"],
            )
            store.store_image(job_id, _render_png(image))
            store.transition(job_id, DONE)
        except Exception as e:  # noqa: BLE001 - job isolation boundary
            store.transition(job_id, FAILED, error=f"{type(e).__name__}: {e}")

    def worker_loop() -> None:
        while True:
            run_job(work.get())
            work.task_done()

    for _ in range(max(1, workers)):
        threading.Thread(target=worker_loop, daemon=True).start()

    app = FastAPI(title="scenediff generation service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(cors_origins),
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.get("/api/v1/health")
    def health() -> dict:
        return {"ok": True}

    @app.get("/api/v1/checkpoints")
    def checkpoints() -> list:
        return registry.describe()

    @app.post("/api/v1/generate", status_code=202)
    def generate(body: dict = Body(...)) -> dict:
        checkpoint_id = body.get("checkpoint")
        if not isinstance(checkpoint_id, str):
            raise HTTPException(400, "request needs a checkpoint id")
        if checkpoint_id not in registry.ids():
            raise HTTPException(404, f"unknown checkpoint {checkpoint_id!r}")
        scene_doc = {k: v for k, v in body.items() if k not in _REQUEST_KEYS}
        try:
            scene = parse_scene(json.dumps(scene_doc).encode("utf-8"))
            guidance = GuidanceSpec.from_dict(
                body.get("guidance", GuidanceSpec().to_dict())
            )
        except ValueError as e:
            raise HTTPException(400, str(e)) from None
        steps = body.get("steps")
        if steps is not None and (not isinstance(steps, int) or steps < 1):
            raise HTTPException(400, "steps must be a positive integer")
        job = store.create(
            {
                "scene": json.loads(serialize_scene(scene).decode("utf-8")),
                "guidance": guidance.to_dict(),
                "checkpoint": checkpoint_id,
                "seed": int(body.get("seed", default_seed)),
                "steps": steps,
            }
        )
        work.put(job["id"])
        return {"job_id": job["id"]}

    @app.get("/api/v1/jobs/{job_id}")
    def poll(job_id: str) -> dict:
        try:
            return _status_view(store.get(job_id))
        except KeyError:
            raise HTTPException(404, f"unknown job {job_id!r}") from None

    @app.get("/api/v1/jobs/{job_id}/image")
    def fetch_image(job_id: str) -> Response:
        try:
            job = store.get(job_id)
        except KeyError:
            raise HTTPException(404, f"unknown job {job_id!r}") from None
        if job["state"] != DONE:
            detail = f"job is {job['state']}"
            if job["state"] == FAILED:
                detail += f": {job['error']}"
            raise HTTPException(409, detail)
        with open(store.image_path(job_id), "rb") as f:
            return Response(content=f.read(), media_type="image/png")

    @app.post("/api/v1/scenes/rasterize")
    def rasterize(body: dict = Body(...)) -> dict:
        """Validate a scene and return each segment's server-side raster.

        Lets clients that draw polygons verify their own rasterization
        matches the one generation will use.
        """
        try:
            scene = parse_scene(json.dumps(body).encode("utf-8"))
        except ValueError as e:
            raise HTTPException(400, str(e)) from None
        return {
            "canvas": list(scene.canvas),
            "segments": [
                {"prompt": seg.prompt, "mask_rle": encode_rle(seg.mask)} for seg in scene.segments
            ],
        }

    return app
