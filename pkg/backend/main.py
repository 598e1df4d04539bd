import logging
import os
import time
from pathlib import Path

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from starlette.middleware.base import BaseHTTPMiddleware

from backend.app.api import routes_detect, routes_jobs
from backend.app.api.dependencies import WEIGHTS_DIR_ENV
from backend.domain.config import STAGE_KINDS
from backend.infrastructure.weights_store import weights_path

logger = logging.getLogger("uvicorn.access")

# Comma-separated list; "*" allows any origin.
CORS_ORIGINS_ENV = "MTCNN_CORS_ORIGINS"

app = FastAPI(title="MTCNN Toy Cascade API", version="0.1.0")


class TimedRequestsMiddleware(BaseHTTPMiddleware):
    """Log each request on arrival and again with its status and latency once answered."""

    async def dispatch(self, request, call_next):
        started = time.perf_counter()
        logger.info("Request started: %s %s", request.method, request.url.path)
        response = await call_next(request)
        elapsed_ms = (time.perf_counter() - started) * 1000.0
        logger.info(
            "Request finished: %s %s -> %d in %.1f ms",
            request.method, request.url.path, response.status_code, elapsed_ms,
        )
        return response


app.add_middleware(TimedRequestsMiddleware)
app.add_middleware(
    CORSMiddleware,
    allow_origins=[o.strip() for o in os.environ.get(CORS_ORIGINS_ENV, "*").split(",") if o.strip()],
    allow_methods=["GET", "POST"],
    allow_headers=["*"],
)

app.include_router(routes_detect.router)
app.include_router(routes_jobs.router)


@app.get("/health")
async def health():
    weights_dir = Path(os.environ.get(WEIGHTS_DIR_ENV, "weights"))
    stages = {kind: weights_path(weights_dir, kind).is_file() for kind in STAGE_KINDS}
    return {"status": "ok", "weights_dir": str(weights_dir), "stages": stages}
