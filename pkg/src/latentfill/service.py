"""HTTP inference service.

JSON in, JSON out, with images as base64 PNG strings. Inference is
serialized through a single model owner, so concurrent requests observe
the same results as a serialized execution. Configure with environment
variables:

    LATENTFILL_CKPT  checkpoint directory to load at startup (optional)
    LATENTFILL_PORT  port for `python -m latentfill.service` (default 8000)
"""

from __future__ import annotations

import base64
import io
import os
import threading
import time
from contextlib import asynccontextmanager
from typing import Optional

import cv2
import numpy as np
from fastapi import FastAPI, HTTPException
from PIL import Image
from pydantic import BaseModel

MAX_SIDE = 4096


class InpaintRequest(BaseModel):
    image: str  # base64 PNG
    mask: str  # base64 PNG, 255 = missing
    edge_hint: Optional[str] = None
    seg_hint: Optional[str] = None  # single-channel PNG of labels
    seed: Optional[int] = None


class InpaintResponse(BaseModel):
    result: str  # composited, unmasked pixels equal the resized input
    raw: str  # pre-composite synthesis
    timings_ms: dict


class HealthResponse(BaseModel):
    status: str
    checkpoint: Optional[str] = None
    resolution: Optional[int] = None
    num_labels: Optional[int] = None
    queue_depth: int = 0


class ModelHost:
    """Owns the model; one inference at a time."""

    def __init__(self):
        self.model = None
        self.config_hash = None
        self.lock = threading.Lock()
        self._depth = 0
        self._depth_lock = threading.Lock()

    def load(self, ckpt_path: str) -> None:
        from latentfill.training import load_model_for_inference

        model, meta = load_model_for_inference(ckpt_path)
        self.model = model
        self.config_hash = meta.get("config_hash")

    @property
    def queue_depth(self) -> int:
        return self._depth

    def run(self, fn):
        with self._depth_lock:
            self._depth += 1
        try:
            with self.lock:
                return fn()
        finally:
            with self._depth_lock:
                self._depth -= 1


host = ModelHost()


@asynccontextmanager
async def _lifespan(app: FastAPI):
    ckpt = os.environ.get("LATENTFILL_CKPT")
    if ckpt and host.model is None:
        host.load(ckpt)
    yield


app = FastAPI(title="latentfill inference service", lifespan=_lifespan)


def _decode_png(b64: str, what: str) -> np.ndarray:
    try:
        raw = base64.b64decode(b64, validate=True)
        img = Image.open(io.BytesIO(raw))
        img.load()
    except Exception:
        raise HTTPException(status_code=400, detail=f"undecodable {what} PNG")
    return np.asarray(img)


def _encode_png(arr: np.ndarray) -> str:
    img = Image.fromarray(arr)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _to_rgb(arr: np.ndarray, what: str) -> np.ndarray:
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=-1)
    if arr.ndim != 3 or arr.shape[2] < 3:
        raise HTTPException(status_code=400, detail=f"{what} must be RGB or grayscale")
    return arr[:, :, :3]


def _to_gray(arr: np.ndarray) -> np.ndarray:
    return arr[:, :, 0] if arr.ndim == 3 else arr


@app.get("/v1/health", response_model=HealthResponse)
def health() -> HealthResponse:
    if host.model is None:
        return HealthResponse(status="unloaded", queue_depth=host.queue_depth)
    return HealthResponse(
        status="ready",
        checkpoint=host.config_hash,
        resolution=host.model.cfg.resolution,
        num_labels=host.model.cfg.num_labels,
        queue_depth=host.queue_depth,
    )


@app.post("/v1/inpaint", response_model=InpaintResponse)
def inpaint(req: InpaintRequest) -> InpaintResponse:
    if host.model is None:
        raise HTTPException(status_code=409, detail="no checkpoint loaded")
    t0 = time.perf_counter()
    image = _to_rgb(_decode_png(req.image, "image"), "image")
    mask_img = _to_gray(_decode_png(req.mask, "mask"))
    if image.shape[:2] != mask_img.shape[:2]:
        raise HTTPException(
            status_code=400,
            detail=f"image {image.shape[:2]} and mask {mask_img.shape[:2]} differ",
        )
    if max(image.shape[:2]) > MAX_SIDE:
        raise HTTPException(status_code=413, detail=f"image exceeds {MAX_SIDE}px")

    s = host.model.cfg.resolution
    k = host.model.cfg.num_labels
    image_s = cv2.resize(image, (s, s), interpolation=cv2.INTER_LINEAR)
    mask_s = (cv2.resize(mask_img, (s, s), interpolation=cv2.INTER_NEAREST) > 127)
    mask_f = mask_s.astype(np.float32)[None]

    edge = None
    if req.edge_hint is not None:
        e = _to_gray(_decode_png(req.edge_hint, "edge_hint"))
        e = cv2.resize(e, (s, s), interpolation=cv2.INTER_NEAREST)
        edge = (e > 127).astype(np.float32)[None]  # binarized at 0.5
    seg = None
    if req.seg_hint is not None:
        g = _to_gray(_decode_png(req.seg_hint, "seg_hint"))
        g = cv2.resize(g, (s, s), interpolation=cv2.INTER_NEAREST).astype(np.int64)
        if g.max() >= k:
            raise HTTPException(
                status_code=400, detail=f"seg_hint label {int(g.max())} >= K={k}"
            )
        seg = g

    norm = np.transpose(image_s, (2, 0, 1)).astype(np.float32) / 127.5 - 1.0
    t_pre = time.perf_counter()
    seed = req.seed if req.seed is not None else 0

    def _run():
        raw, _ = host.model.infer(norm, mask_f, edge, seg, seed=seed)
        return raw

    raw = host.run(_run)
    t_model = time.perf_counter()

    raw_u8 = np.clip((np.transpose(raw, (1, 2, 0)) + 1.0) * 127.5, 0, 255).round()
    raw_u8 = raw_u8.astype(np.uint8)
    # uint8-space selection keeps unmasked pixels bitwise equal to the input
    composited = np.where(mask_s[:, :, None], raw_u8, image_s)
    t_post = time.perf_counter()
    return InpaintResponse(
        result=_encode_png(composited),
        raw=_encode_png(raw_u8),
        timings_ms={
            "decode": (t_pre - t0) * 1e3,
            "model": (t_model - t_pre) * 1e3,
            "encode": (t_post - t_model) * 1e3,
            "total": (t_post - t0) * 1e3,
        },
    )


def main():
    import uvicorn

    port = int(os.environ.get("LATENTFILL_PORT", "8000"))
    uvicorn.run(app, host="0.0.0.0", port=port)


if __name__ == "__main__":
    main()
