"""HTTP prediction service around a loaded classifier.

POST /predict accepts a multipart upload (field ``image``), applies the
model's training-time preprocessing contract, and returns per-class
probabilities. Uploads live only for the duration of the request; nothing is
written to durable storage.
"""

from __future__ import annotations

import io
import time
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, File, Request, UploadFile
from fastapi.responses import JSONResponse
from PIL import Image, UnidentifiedImageError

from . import model as mod
from .augment import preprocess_for_inference
from .data import CLASS_NAMES

SEVERITY = {"normal": "none", "benign": "low", "malignant": "high"}
ACCEPTED_FORMATS = ("PNG", "JPEG", "BMP")
DEFAULT_MAX_UPLOAD = 10 * 1024 * 1024


class UnsupportedImageError(Exception):
    """Upload bytes do not decode to an accepted raster format."""


class PayloadTooLargeError(Exception):
    """Upload exceeds the configured size limit."""


@dataclass(frozen=True)
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8000
    checkpoint: str = ""
    max_upload_bytes: int = DEFAULT_MAX_UPLOAD
    accepted_formats: tuple[str, ...] = ACCEPTED_FORMATS

    def __post_init__(self):
        if self.max_upload_bytes <= 0:
            raise ValueError("max_upload_bytes must be positive")


@dataclass(frozen=True)
class PredictionResult:
    predicted_label: str
    probabilities: dict[str, float]
    percent_display: dict[str, float]
    severity: str
    model_version: str
    elapsed_ms: int

    def to_json(self) -> dict:
        return {
            "predicted_label": self.predicted_label,
            "probabilities": self.probabilities,
            "percent_display": self.percent_display,
            "severity": self.severity,
            "model_version": self.model_version,
            "elapsed_ms": self.elapsed_ms,
        }


def _decode_upload(image_bytes: bytes, accepted: tuple[str, ...]) -> np.ndarray:
    try:
        img = Image.open(io.BytesIO(image_bytes))
        img.load()
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise UnsupportedImageError(f"unsupported image: {exc}") from exc
    if img.format not in accepted:
        raise UnsupportedImageError(f"unsupported image format {img.format}")
    if img.width == 0 or img.height == 0:
        raise UnsupportedImageError("unsupported image: zero area")
    return np.asarray(img.convert("RGB"), dtype=np.uint8)


def predict_tumor(
    classifier: mod.TrainedClassifier,
    image_bytes: bytes,
    accepted_formats: tuple[str, ...] = ACCEPTED_FORMATS,
) -> PredictionResult:
    """Resize, rescale, and classify one uploaded image.

    The raster goes through exactly the model's preprocessing contract, so the
    result is bit-identical to offline inference on the same bytes.
    """
    start = time.monotonic()
    raster = _decode_upload(image_bytes, accepted_formats)
    pixels = preprocess_for_inference(
        raster,
        classifier.preprocessing.target_size,
        classifier.preprocessing.rescale_factor,
    )
    probs = mod.predict_batch(classifier, pixels[None, ...])[0]
    predicted = CLASS_NAMES[int(np.argmax(probs))]
    probabilities = {name: float(probs[i]) for i, name in enumerate(CLASS_NAMES)}
    percent = {name: round(p * 100.0, 1) for name, p in probabilities.items()}
    return PredictionResult(
        predicted_label=predicted,
        probabilities=probabilities,
        percent_display=percent,
        severity=SEVERITY[predicted],
        model_version=classifier.version,
        elapsed_ms=int((time.monotonic() - start) * 1000.0),
    )


def create_app(classifier: mod.TrainedClassifier, config: ServiceConfig | None = None) -> FastAPI:
    """FastAPI app over an already-loaded classifier."""
    config = config or ServiceConfig()
    app = FastAPI(title="busclass prediction service")
    started = time.monotonic()

    @app.get("/health")
    def health():
        return {
            "status": "ok",
            "model_version": classifier.version,
            "uptime_s": round(time.monotonic() - started, 3),
        }

    @app.post("/predict")
    async def predict(request: Request, image: UploadFile = File(...)):
        declared = request.headers.get("content-length")
        if declared and declared.isdigit() and int(declared) > config.max_upload_bytes + 4096:
            return JSONResponse(status_code=413, content={"error": "payload too large"})
        image_bytes = await image.read()
        if len(image_bytes) > config.max_upload_bytes:
            return JSONResponse(status_code=413, content={"error": "payload too large"})
        try:
            result = predict_tumor(classifier, image_bytes, config.accepted_formats)
        except UnsupportedImageError:
            return JSONResponse(status_code=400, content={"error": "unsupported image"})
        return result.to_json()

    return app


def serve(config: ServiceConfig) -> None:
    """Load the checkpoint and block serving HTTP (used by the CLI)."""
    import uvicorn

    classifier = mod.load(config.checkpoint)
    app = create_app(classifier, config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
