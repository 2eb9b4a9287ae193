"""FastAPI application exposing the editor/embedder wire protocol.

Endpoints (JSON over HTTP, images as base64 PNG):

    POST /edit         {original, render, prompt, s_image, s_text, steps, seed}
                       -> {image}
    POST /embed_image  {image} -> {dim, values}
    POST /embed_text   {text}  -> {dim, values}
    GET  /health       -> {status, models: {editor, embedder}}

Error codes: 400 malformed input, 413 oversized payload, 503 model not
loaded. Requests are serialized per model; responses preserve the input
resolution on /edit and embedding vectors are unit-normalized.
"""

from __future__ import annotations

import argparse

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .models import ImagePayloadError, ModelRegistry, decode_image, encode_image

DEFAULT_PORT = 8191
MAX_PAYLOAD_BYTES = 64 * 1024 * 1024  # generous for <=512^2 PNG pairs


class EditRequest(BaseModel):
    original: str
    render: str
    prompt: str
    s_image: float = 1.5
    s_text: float = 7.5
    steps: int = Field(default=20, ge=1)
    seed: int = 0


class EmbedImageRequest(BaseModel):
    image: str


class EmbedTextRequest(BaseModel):
    text: str = Field(min_length=1)


def create_app(mode: str = "stub", autoload: bool = True,
               max_payload: int = MAX_PAYLOAD_BYTES) -> FastAPI:
    app = FastAPI(title="model-backend-service")
    registry = ModelRegistry(mode=mode)
    app.state.registry = registry
    if autoload:
        registry.load()

    @app.exception_handler(RequestValidationError)
    async def validation_as_400(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": str(exc.errors()[:3])})

    @app.middleware("http")
    async def payload_cap(request: Request, call_next):
        length = request.headers.get("content-length")
        if length is not None and int(length) > max_payload:
            return JSONResponse(status_code=413, content={"error": "payload too large"})
        return await call_next(request)

    def model_unavailable(name: str) -> JSONResponse:
        return JSONResponse(status_code=503, content={"error": f"{name} model not loaded"})

    @app.get("/health")
    def health():
        return {"status": "ok", "models": {"editor": registry.editor is not None,
                                           "embedder": registry.embedder is not None}}

    @app.post("/edit")
    def edit(req: EditRequest):
        if registry.editor is None:
            return model_unavailable("editor")
        try:
            original = decode_image("original", req.original)
            render = decode_image("render", req.render)
        except ImagePayloadError as exc:
            return JSONResponse(status_code=400, content={"error": str(exc)})
        if original.size != render.size:
            return JSONResponse(status_code=400,
                                content={"error": "original and render resolutions differ"})
        with registry.editor_lock:
            edited = registry.editor.edit(original, render, req.prompt, req.s_image,
                                          req.s_text, req.steps, req.seed)
        if edited.size != original.size:
            edited = edited.resize(original.size)
        return {"image": encode_image(edited)}

    @app.post("/embed_image")
    def embed_image(req: EmbedImageRequest):
        if registry.embedder is None:
            return model_unavailable("embedder")
        try:
            image = decode_image("image", req.image)
        except ImagePayloadError as exc:
            return JSONResponse(status_code=400, content={"error": str(exc)})
        with registry.embedder_lock:
            values = registry.embedder.embed_image(image)
        return {"dim": len(values), "values": [float(v) for v in values]}

    @app.post("/embed_text")
    def embed_text(req: EmbedTextRequest):
        if registry.embedder is None:
            return model_unavailable("embedder")
        with registry.embedder_lock:
            values = registry.embedder.embed_text(req.text)
        return {"dim": len(values), "values": [float(v) for v in values]}

    return app


def main(argv: list[str] | None = None) -> int:
    import sys

    import uvicorn

    parser = argparse.ArgumentParser(prog="model-backend-service", description=__doc__)
    parser.add_argument("--port", type=int, default=DEFAULT_PORT)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--stub", action="store_true",
                        help="serve deterministic fake models (no GPU weights)")
    args = parser.parse_args(argv)
    try:
        app = create_app(mode="stub" if args.stub else "real")
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
