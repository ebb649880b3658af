"""HTTP inference service: checkpoint-backed prompt-conditioned segmentation.

The model is loaded once and treated as read-only; a lock serializes forward
passes so identical requests produce byte-identical responses.
"""

from __future__ import annotations

import base64
import os
import threading
import time
from pathlib import Path

import cv2
import numpy as np
from fastapi import FastAPI, File, Form, HTTPException, UploadFile
from fastapi.middleware.cors import CORSMiddleware

from .metrics import dice
from .training import SegmenterBundle, load_checkpoint

MAX_UPLOAD_BYTES = 16 * 1024 * 1024
MAX_SIDE = 4096


class ServiceState:
    def __init__(self) -> None:
        self.bundle: SegmenterBundle | None = None
        self.lock = threading.Lock()

    def load(self, path: str | Path) -> None:
        bundle = load_checkpoint(path)
        with self.lock:
            self.bundle = bundle

    def require_bundle(self) -> SegmenterBundle:
        if self.bundle is None:
            raise HTTPException(status_code=503, detail="model not loaded")
        return self.bundle


def _decode_image(raw: bytes, channels: int) -> np.ndarray:
    if len(raw) > MAX_UPLOAD_BYTES:
        raise HTTPException(status_code=413, detail="image exceeds upload size cap")
    flag = cv2.IMREAD_GRAYSCALE if channels == 1 else cv2.IMREAD_COLOR
    arr = cv2.imdecode(np.frombuffer(raw, np.uint8), flag)
    if arr is None:
        raise HTTPException(status_code=400, detail="image not decodable")
    if arr.shape[0] > MAX_SIDE or arr.shape[1] > MAX_SIDE:
        raise HTTPException(status_code=413, detail=f"image larger than {MAX_SIDE}px cap")
    return arr.astype(np.float32) / 255.0


def _png_b64(arr: np.ndarray) -> str:
    ok, buf = cv2.imencode(".png", arr)
    if not ok:
        raise HTTPException(status_code=500, detail="mask encoding failed")
    return base64.b64encode(buf.tobytes()).decode("ascii")


def _parse_bool(value: str) -> bool:
    return value.strip().lower() in {"1", "true", "yes", "on"}


def create_app(checkpoint: str | Path | None = None, cors_origins: list[str] | None = None) -> FastAPI:
    app = FastAPI(title="tmca inference service")
    state = ServiceState()
    app.state.tmca = state
    if checkpoint is not None:
        state.load(checkpoint)

    origins = cors_origins
    if origins is None:
        env = os.environ.get("TMCA_CORS_ORIGINS", "*")
        origins = [o.strip() for o in env.split(",") if o.strip()]
    app.add_middleware(
        CORSMiddleware,
        allow_origins=origins,
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.get("/api/v1/health")
    def health() -> dict:
        bundle = state.require_bundle()
        return {"status": "ok", "model_fingerprint": bundle.fingerprint}

    @app.get("/api/v1/model")
    def model_summary() -> dict:
        bundle = state.require_bundle()
        cfg = bundle.config
        return {
            "image_size": cfg.image_size,
            "in_channels": cfg.in_channels,
            "widths": list(cfg.widths),
            "text_dim": cfg.text_dim,
            "levels": list(cfg.levels),
            "temperatures": {
                "target": cfg.target_temp,
                "logit": cfg.logit_temp,
                "attention": cfg.attn_temp,
            },
            "vocab_size": len(bundle.vocab),
            "max_len": cfg.max_len,
            "model_fingerprint": bundle.fingerprint,
        }

    @app.post("/api/v1/segment")
    async def segment(
        image: UploadFile = File(...),
        text: str = Form(""),
        threshold: float = Form(0.5),
        probs: str = Form("false"),
        reference_mask: UploadFile | None = File(None),
    ) -> dict:
        t0 = time.perf_counter()
        bundle = state.require_bundle()
        if not text.strip():
            raise HTTPException(status_code=422, detail="text must be non-empty")
        if not 0.0 <= threshold <= 1.0:
            raise HTTPException(status_code=400, detail="threshold outside [0, 1]")
        img = _decode_image(await image.read(), bundle.config.in_channels)
        want_probs = _parse_bool(probs)

        with state.lock:
            probmap = bundle.segment_image(img, text)
        mask = (probmap >= threshold).astype(np.uint8) * 255

        response = {
            "mask": _png_b64(mask),
            "probabilities_available": want_probs,
            "dice_vs_reference": None,
            "latency_ms": None,
            "model_fingerprint": bundle.fingerprint,
            "shape": [int(mask.shape[0]), int(mask.shape[1])],
            "threshold": threshold,
        }
        if want_probs:
            response["probabilities"] = _png_b64(np.round(probmap * 255.0).astype(np.uint8))
        if reference_mask is not None:
            ref_raw = await reference_mask.read()
            ref = cv2.imdecode(np.frombuffer(ref_raw, np.uint8), cv2.IMREAD_GRAYSCALE)
            if ref is None:
                raise HTTPException(status_code=400, detail="reference mask not decodable")
            if ref.shape != mask.shape:
                raise HTTPException(status_code=400, detail="reference mask dimensions differ from image")
            response["dice_vs_reference"] = float(dice((mask > 127).astype(np.uint8), (ref > 127).astype(np.uint8)))
        response["latency_ms"] = round((time.perf_counter() - t0) * 1000.0, 3)
        return response

    return app


def run_server(checkpoint: str | Path, host: str = "127.0.0.1", port: int = 8000) -> None:
    import uvicorn

    app = create_app(checkpoint)
    uvicorn.run(app, host=host, port=port, log_level="warning")
