import os
from pathlib import Path

from fastapi import APIRouter, Depends, File, HTTPException, UploadFile
from starlette.concurrency import run_in_threadpool

from backend.app.api.dependencies import get_nets, get_settings
from backend.app.schemas.detections import DetectionOut, DetectResponse
from backend.domain.config import Settings, flat_config
from backend.domain.errors import ImageFormatError
from backend.domain.services.cascade import CascadeNets, detect
from backend.domain.services.evaluation import detection_records
from backend.infrastructure.image_io import decode_ppm

# Optional max upload size in MB (0 = no limit). Set MAX_UPLOAD_MB in env to cap size.
MAX_UPLOAD_MB = int(os.environ.get("MAX_UPLOAD_MB", "0"))  # 0 means no limit
MAX_UPLOAD_BYTES = MAX_UPLOAD_MB * 1024 * 1024 if MAX_UPLOAD_MB else 0
CHUNK_SIZE = 1024 * 1024  # 1 MB per read

router = APIRouter(prefix="/api", tags=["detect"])


@router.post("/detect", response_model=DetectResponse)
async def detect_faces(
    file: UploadFile = File(...),
    nets: CascadeNets = Depends(get_nets),
    settings: Settings = Depends(get_settings),
):
    """
    Run the full cascade on an uploaded binary PPM (P6) image.
    """
    if not file.filename:
        raise HTTPException(status_code=400, detail="No file uploaded")

    data = bytearray()
    while True:
        chunk = await file.read(CHUNK_SIZE)
        if not chunk:
            break
        data.extend(chunk)
        if MAX_UPLOAD_BYTES and len(data) > MAX_UPLOAD_BYTES:
            raise HTTPException(
                status_code=413,
                detail=f"File too large. Maximum size is {MAX_UPLOAD_MB} MB.",
            )
    if not data:
        raise HTTPException(status_code=400, detail="Uploaded file is empty")

    try:
        image = decode_ppm(bytes(data))
    except ImageFormatError as e:
        raise HTTPException(status_code=400, detail=f"Invalid image: {e}") from e

    detections = await run_in_threadpool(detect, image, nets, settings.cascade)
    return DetectResponse(
        image=Path(file.filename).name,
        width=int(image.shape[2]),
        height=int(image.shape[1]),
        config=flat_config(settings),
        detections=[DetectionOut(**record) for record in detection_records(detections)],
    )
