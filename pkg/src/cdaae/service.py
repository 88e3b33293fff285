"""HTTP inference service exposing a frozen checkpoint for interactive editing.

One model per process, loaded at startup. The model is only ever read, so
request handlers may run concurrently without locking. Every 4xx/5xx body
carries a machine-readable ``error.code`` and a human ``error.message``.
"""
from __future__ import annotations

import base64
import hashlib
import io
import time
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel, Field

from . import data, evaluate
from .model import LATENT_DIM, CdaaeModel
from .tensor import NumericError, Tensor


class GridAxis(BaseModel):
    index: int
    values: list[float]


class GridRequest(BaseModel):
    axis_x: GridAxis
    axis_y: GridAxis


class SynthesisRequest(BaseModel):
    image: str = Field(description="base64-encoded PNG of any size")
    label: list[float]
    grid: GridRequest | None = None


def _error(status: int, code: str, message: str) -> HTTPException:
    return HTTPException(status_code=status, detail={"code": code, "message": message})


def _decode_image(payload: str) -> np.ndarray:
    try:
        raw = base64.b64decode(payload, validate=True)
        with Image.open(io.BytesIO(raw)) as img:
            return np.asarray(img.convert("RGB"))
    except Exception:
        raise _error(400, "bad_image", "image is not decodable base64 PNG data")


def _encode_png(image: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(image, mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _validate_label(label: list[float], expected: int) -> np.ndarray:
    if len(label) != expected:
        raise _error(400, "label_length", f"expected {expected} label entries, got {len(label)}")
    arr = np.asarray(label, dtype=np.float32)
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise _error(400, "label_range", "label entries must lie in [0, 1]")
    return arr


def create_app(checkpoint_path: str | Path | None = None, cors_origins: tuple[str, ...] = ("*",)) -> FastAPI:
    app = FastAPI(title="expression synthesis service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(cors_origins),
        allow_methods=["*"],
        allow_headers=["*"],
    )
    app.state.model = None
    app.state.model_info = None

    if checkpoint_path is not None:
        load_model(app, checkpoint_path)

    @app.exception_handler(HTTPException)
    async def http_error(request: Request, exc: HTTPException):
        detail = exc.detail if isinstance(exc.detail, dict) else {"code": "http_error", "message": str(exc.detail)}
        return JSONResponse(status_code=exc.status_code, content={"error": detail})

    @app.exception_handler(RequestValidationError)
    async def validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400,
            content={"error": {"code": "invalid_request", "message": str(exc.errors()[:3])}},
        )

    @app.exception_handler(NumericError)
    async def numeric_error(request: Request, exc: NumericError):
        return JSONResponse(
            status_code=500, content={"error": {"code": "numeric_error", "message": str(exc)}}
        )

    @app.get("/health")
    def health():
        if app.state.model is None:
            raise _error(503, "model_not_loaded", "no checkpoint has been loaded")
        return {"status": "ok"}

    @app.get("/model/info")
    def model_info():
        if app.state.model is None:
            raise _error(503, "model_not_loaded", "no checkpoint has been loaded")
        return app.state.model_info

    @app.post("/synthesize")
    def synthesize(request: SynthesisRequest):
        model: CdaaeModel | None = app.state.model
        if model is None:
            raise _error(503, "model_not_loaded", "no checkpoint has been loaded")
        started = time.perf_counter()
        source = data.preprocess(_decode_image(request.image))
        label = _validate_label(request.label, model.label_dim)
        if request.grid is not None:
            try:
                spec = evaluate.GridSpec(
                    axis_x=(request.grid.axis_x.index, request.grid.axis_x.values),
                    axis_y=(request.grid.axis_y.index, request.grid.axis_y.values),
                    base_label=label,
                    source=source,
                )
            except ValueError as exc:
                raise _error(400, "bad_grid", str(exc))
            tile, _ = evaluate.manifold_grid(model, spec)
            image_out = tile
        else:
            out = model.synthesize(Tensor(source[None]), Tensor(label[None]))
            image_out = data.postprocess(out.data[0])
        latency_ms = (time.perf_counter() - started) * 1000.0
        return {
            "image": _encode_png(image_out),
            "latency_ms": latency_ms,
            "model_info": app.state.model_info,
        }

    return app


def load_model(app: FastAPI, checkpoint_path: str | Path) -> None:
    from .training import model_from_checkpoint

    model, ckpt = model_from_checkpoint(checkpoint_path)
    app.state.model = model
    app.state.model_info = {
        "label_mode": model.label_mode,
        "label_dim": model.label_dim,
        "skip_position": model.skip.value,
        "z_dim": LATENT_DIM,
        "checkpoint_hash": hashlib.sha256(Path(checkpoint_path).read_bytes()).hexdigest(),
    }


def serve(checkpoint_path: str | Path, port: int = 8000, host: str = "127.0.0.1",
          cors_origins: tuple[str, ...] = ("*",)) -> None:
    import uvicorn

    app = create_app(checkpoint_path, cors_origins=cors_origins)
    uvicorn.run(app, host=host, port=port)
