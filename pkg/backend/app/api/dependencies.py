import logging
import os
from functools import lru_cache
from pathlib import Path

from fastapi import HTTPException

from backend.domain.config import Settings, load_config
from backend.domain.errors import ConfigError, WeightsFormatError
from backend.domain.services.cascade import CascadeNets
from backend.infrastructure.weights_store import load_cascade_nets

logger = logging.getLogger(__name__)

# Directory holding pnet.bin, rnet.bin and onet.bin.
WEIGHTS_DIR_ENV = "MTCNN_WEIGHTS_DIR"
# Optional flat TOML/JSON config file.
CONFIG_ENV = "MTCNN_CONFIG"


@lru_cache(maxsize=4)
def _cached_nets(weights_dir: str) -> CascadeNets:
    return load_cascade_nets(Path(weights_dir))


def get_nets() -> CascadeNets:
    weights_dir = os.environ.get(WEIGHTS_DIR_ENV, "weights")
    try:
        return _cached_nets(weights_dir)
    except WeightsFormatError as exc:
        logger.warning("Cascade weights unavailable in %s: %s", weights_dir, exc)
        raise HTTPException(
            status_code=503,
            detail=f"Cascade weights unavailable: {exc}. Set {WEIGHTS_DIR_ENV} to a trained weights directory.",
        ) from exc


def get_settings() -> Settings:
    path = os.environ.get(CONFIG_ENV)
    try:
        return load_config(Path(path) if path else None)
    except ConfigError as exc:
        raise HTTPException(status_code=500, detail=f"Invalid configuration: {exc}") from exc
