"""JSON-over-HTTP service exposing the trained pipeline to the UI.

All edits are pure: every request returns a fresh content-addressed
latent id, so replaying a request yields identical ids and image bytes.
History lives client-side. The only shared mutable state is the
content-addressed latent/image cache, guarded by a lock.
"""

from __future__ import annotations

import base64
import hashlib
import threading

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response

from .. import pipeline as pl
from ..imageio import decode_png, png_bytes


class SessionState:
    """Loaded model set plus the content-addressed caches."""

    def __init__(self, models: pl.ModelSet | None):
        self.models = models
        self._lock = threading.Lock()
        self._latents: dict[str, np.ndarray] = {}
        self._images: dict[str, bytes] = {}
        self._thumbnails: list[dict] = []
        if models is not None:
            for record in models.ds.split_records("test"):
                img_id = self.put_image(models.ds.image(record, 0))
                self._thumbnails.append({"id": record["id"],
                                         "thumbnail": f"/api/image/{img_id}"})

    def put_latent(self, w: np.ndarray) -> str:
        w = np.ascontiguousarray(w, dtype=np.float32)
        key = "lt" + hashlib.sha1(w.tobytes()).hexdigest()[:16]
        with self._lock:
            self._latents[key] = w
        return key

    def get_latent(self, key: str) -> np.ndarray | None:
        with self._lock:
            return self._latents.get(key)

    def put_image(self, img: np.ndarray) -> str:
        data = png_bytes(img)
        key = "im" + hashlib.sha1(data).hexdigest()[:16]
        with self._lock:
            self._images[key] = data
        return key

    def get_image(self, key: str) -> bytes | None:
        with self._lock:
            return self._images.get(key)

    @property
    def thumbnails(self) -> list[dict]:
        return list(self._thumbnails)


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse({"error": message}, status_code=status)


async def _json_body(request: Request) -> dict | JSONResponse:
    try:
        body = await request.json()
    except Exception:
        return _error(400, "request body is not valid JSON")
    if not isinstance(body, dict):
        return _error(400, "request body must be a JSON object")
    return body


def create_app(run: pl.Run | None = None, models: pl.ModelSet | None = None,
               joint: bool = True) -> FastAPI:
    """App factory; a missing model set leaves endpoints answering 409."""
    if models is None and run is not None:
        try:
            models = pl.ModelSet.load(run, joint=joint)
        except (pl.MissingStageError, FileNotFoundError):
            models = None
    state = SessionState(models)
    app = FastAPI(title="partbridge", docs_url=None, redoc_url=None)
    app.state.session = state

    def need_models() -> pl.ModelSet | JSONResponse:
        if state.models is None:
            return _error(409, "model set incomplete: train all stages, then serve")
        return state.models

    @app.get("/api/meta")
    def meta():
        ms = need_models()
        if isinstance(ms, JSONResponse):
            return ms
        cfg = ms.cfg
        return {
            "category": cfg.category,
            "parts": cfg.parts,
            "resizable_parts": sorted(ms.trajectories.keys()),
            "views": 12,
            "dims": {"d": cfg.d, "z": cfg.z, "n_c": cfg.n_c,
                     "image_size": cfg.image_size},
        }

    @app.get("/api/shapes")
    def shapes(split: str = "test"):
        ms = need_models()
        if isinstance(ms, JSONResponse):
            return ms
        if split != "test":
            return _error(422, "only the test split is exposed as a gallery")
        return {"shapes": state.thumbnails}

    @app.get("/api/image/{image_id}")
    def image(image_id: str):
        data = state.get_image(image_id)
        if data is None:
            return _error(404, f"unknown image id {image_id}")
        return Response(content=data, media_type="image/png")

    @app.post("/api/invert")
    async def invert(request: Request):
        ms = need_models()
        if isinstance(ms, JSONResponse):
            return ms
        body = await _json_body(request)
        if isinstance(body, JSONResponse):
            return body
        has_image = "image" in body
        has_shape = "shape_id" in body
        if has_image == has_shape:
            return _error(400, "provide exactly one of 'image' or 'shape_id'")
        if has_image:
            if not isinstance(body["image"], str):
                return _error(400, "'image' must be base64 PNG")
            try:
                img = decode_png(base64.b64decode(body["image"], validate=True))
            except Exception:
                return _error(400, "'image' is not decodable base64 PNG")
            if img.shape != (ms.cfg.image_size, ms.cfg.image_size):
                return _error(422, f"image must be {ms.cfg.image_size}px square")
        else:
            record = next((r for r in ms.ds.records if r["id"] == body["shape_id"]), None)
            if record is None:
                return _error(404, f"unknown shape id {body['shape_id']}")
            view = body.get("view_index", 0)
            if not isinstance(view, int) or not 0 <= view < 12:
                return _error(422, "view_index must be an int in [0, 12)")
            img = ms.ds.image(record, view)
        w = ms.invert_image(img, steps=ms.cfg.service_invert_steps)
        return {"latent_id": state.put_latent(w)}

    def _resolve_latent(body: dict, key: str):
        value = body.get(key)
        if not isinstance(value, str):
            return _error(400, f"'{key}' must be a latent id string")
        w = state.get_latent(value)
        if w is None:
            return _error(404, f"unknown latent id {value}")
        return w

    def _edit_response(result) -> dict:
        image_id = state.put_image(result.image)
        latent_id = state.put_latent(result.w_out)
        return {"image_url": f"/api/image/{image_id}", "image_id": image_id,
                "latent_id": latent_id}

    @app.post("/api/replace")
    async def replace(request: Request):
        ms = need_models()
        if isinstance(ms, JSONResponse):
            return ms
        body = await _json_body(request)
        if isinstance(body, JSONResponse):
            return body
        for key in ("src_latent_id", "tgt_latent_id", "part"):
            if key not in body:
                return _error(400, f"missing field '{key}'")
        w_src = _resolve_latent(body, "src_latent_id")
        if isinstance(w_src, JSONResponse):
            return w_src
        w_tgt = _resolve_latent(body, "tgt_latent_id")
        if isinstance(w_tgt, JSONResponse):
            return w_tgt
        if body["part"] not in ms.cfg.parts:
            return _error(422, f"invalid part {body['part']!r}; choose from {ms.cfg.parts}")
        return _edit_response(ms.edit_replace(w_src, w_tgt, body["part"]))

    @app.post("/api/resize")
    async def resize(request: Request):
        ms = need_models()
        if isinstance(ms, JSONResponse):
            return ms
        body = await _json_body(request)
        if isinstance(body, JSONResponse):
            return body
        for key in ("latent_id", "part", "weight"):
            if key not in body:
                return _error(400, f"missing field '{key}'")
        w = _resolve_latent(body, "latent_id")
        if isinstance(w, JSONResponse):
            return w
        if not isinstance(body["weight"], (int, float)) or isinstance(body["weight"], bool):
            return _error(400, "'weight' must be a number")
        mode = body.get("mode", "finetuner")
        if mode not in ("finetuner", "raw"):
            return _error(422, f"invalid mode {mode!r}")
        if body["part"] not in ms.trajectories:
            return _error(422, f"invalid part {body['part']!r}; resizable: "
                               f"{sorted(ms.trajectories)}")
        return _edit_response(ms.edit_resize(w, body["part"], float(body["weight"]),
                                             mode=mode))

    @app.post("/api/view")
    async def view(request: Request):
        ms = need_models()
        if isinstance(ms, JSONResponse):
            return ms
        body = await _json_body(request)
        if isinstance(body, JSONResponse):
            return body
        for key in ("latent_id", "view_index"):
            if key not in body:
                return _error(400, f"missing field '{key}'")
        w = _resolve_latent(body, "latent_id")
        if isinstance(w, JSONResponse):
            return w
        k = body["view_index"]
        if not isinstance(k, int) or isinstance(k, bool) or not 0 <= k < 12:
            return _error(422, "view_index must be an int in [0, 12)")
        return _edit_response(ms.edit_view(w, k))

    return app
