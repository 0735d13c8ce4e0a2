"""The classify protocol over HTTP/1.1 + JSON.

GET  /v1/info      -> {model_id, num_classes, input_shape, labels?}
POST /v1/classify  -> {"probs": [[...], ...], "model_id": str}

Request bodies are validated by hand so the status codes match the protocol
exactly: 400 for shape problems, 422 for out-of-range pixel values, 413 for
oversized batches.  Response row order always matches request order.
"""

import math

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

DEFAULT_MAX_BATCH = 256


def create_app(model, max_batch: int = DEFAULT_MAX_BATCH) -> FastAPI:
    app = FastAPI(title="rlab model server", docs_url=None, redoc_url=None)
    expected = math.prod(model.input_shape)

    @app.get("/v1/info")
    def info():
        payload = {
            "model_id": model.model_id,
            "num_classes": model.num_classes,
            "input_shape": list(model.input_shape),
        }
        if getattr(model, "labels", None):
            payload["labels"] = model.labels
        return payload

    @app.post("/v1/classify")
    async def classify(request: Request):
        try:
            body = await request.json()
        except Exception:
            return JSONResponse({"error": "body is not valid JSON"}, status_code=400)
        if not isinstance(body, dict) or "shape" not in body or "images" not in body:
            return JSONResponse({"error": "body needs 'shape' and 'images'"}, status_code=400)

        shape = body["shape"]
        if list(shape) != list(model.input_shape):
            return JSONResponse(
                {"error": f"shape {shape} does not match model input {list(model.input_shape)}"},
                status_code=400,
            )
        images = body["images"]
        if not isinstance(images, list) or not images:
            return JSONResponse({"error": "'images' must be a nonempty list"}, status_code=400)
        if len(images) > max_batch:
            return JSONResponse(
                {"error": f"batch {len(images)} exceeds maximum {max_batch}"},
                status_code=413,
            )

        rows = []
        for i, image in enumerate(images):
            if not isinstance(image, list) or len(image) != expected:
                return JSONResponse(
                    {"error": f"image {i} has {len(image) if isinstance(image, list) else '?'} values, expected {expected}"},
                    status_code=400,
                )
            rows.append(image)
        batch = np.asarray(rows, dtype=np.float64)
        if not np.all(np.isfinite(batch)) or batch.min() < 0.0 or batch.max() > 1.0:
            return JSONResponse({"error": "pixel values must lie in [0, 1]"}, status_code=422)

        probs = model.predict(batch)
        return {"probs": probs.tolist(), "model_id": model.model_id}

    return app
