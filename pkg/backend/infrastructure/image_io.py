"""
Binary PPM (P6, maxval 255) images held as 3×H×W uint8 arrays, plus
rendering of detections into a copy of the image.
"""
import logging
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from backend.domain.errors import ImageFormatError
from backend.domain.models import Box, Detection

logger = logging.getLogger(__name__)

_WHITESPACE = b" \t\r\n\x0b\x0c"

BOX_COLOR = (255, 40, 40)
LANDMARK_COLOR = (40, 255, 40)


def _header_fields(data: bytes) -> Tuple[List[Tuple[bytes, int]], int]:
    """Four header tokens with their line numbers, and the offset of the raster."""
    tokens: List[Tuple[bytes, int]] = []
    pos, line = 0, 1
    while len(tokens) < 4:
        if pos >= len(data):
            raise ImageFormatError(f"line {line}: header ends after {len(tokens)} of 4 fields")
        byte = data[pos:pos + 1]
        if byte == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end
            continue
        if byte in _WHITESPACE:
            line += byte == b"\n"
            pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos:pos + 1] not in _WHITESPACE and data[pos:pos + 1] != b"#":
            pos += 1
        tokens.append((data[start:pos], line))
    if pos >= len(data) or data[pos:pos + 1] not in _WHITESPACE:
        raise ImageFormatError(f"line {line}: expected a single whitespace byte after maxval")
    return tokens, pos + 1


def _positive_int(token: bytes, line: int, what: str) -> int:
    try:
        value = int(token.decode("ascii"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise ImageFormatError(f"line {line}: {what} {token!r} is not an integer") from exc
    if value <= 0:
        raise ImageFormatError(f"line {line}: {what} must be positive, got {value}")
    return value


def decode_ppm(data: bytes) -> np.ndarray:
    tokens, offset = _header_fields(data)
    (magic, magic_line), (w_tok, w_line), (h_tok, h_line), (max_tok, max_line) = tokens
    if magic != b"P6":
        raise ImageFormatError(f"line {magic_line}: expected magic P6, got {magic!r}")
    width = _positive_int(w_tok, w_line, "width")
    height = _positive_int(h_tok, h_line, "height")
    maxval = _positive_int(max_tok, max_line, "maxval")
    if maxval != 255:
        raise ImageFormatError(f"line {max_line}: only maxval 255 is supported, got {maxval}")
    expected = width * height * 3
    raster = data[offset:]
    if len(raster) != expected:
        raise ImageFormatError(f"raster holds {len(raster)} bytes, expected {expected} for {width}×{height}")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
    return np.ascontiguousarray(pixels.transpose(2, 0, 1))


def encode_ppm(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3 or image.dtype != np.uint8:
        raise ImageFormatError(f"expected a 3×H×W uint8 image, got {image.dtype} {image.shape}")
    _, h, w = image.shape
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(image.transpose(1, 2, 0)).tobytes()


def load_image(path: Path) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ImageFormatError(f"cannot read image {path}: {exc}") from exc
    try:
        return decode_ppm(data)
    except ImageFormatError as exc:
        raise ImageFormatError(f"{path}: {exc}") from exc


def save_image(path: Path, image: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_ppm(image))


def _paint(image: np.ndarray, ys: np.ndarray, xs: np.ndarray, color) -> None:
    _, h, w = image.shape
    inside = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
    image[:, ys[inside], xs[inside]] = np.asarray(color, dtype=np.uint8)[:, None]


def _outline(image: np.ndarray, box: Box, color) -> None:
    x1, y1 = int(np.floor(box.x1)), int(np.floor(box.y1))
    x2, y2 = int(np.ceil(box.x2)) - 1, int(np.ceil(box.y2)) - 1
    xs = np.arange(x1, x2 + 1)
    ys = np.arange(y1, y2 + 1)
    _paint(image, np.full_like(xs, y1), xs, color)
    _paint(image, np.full_like(xs, y2), xs, color)
    _paint(image, ys, np.full_like(ys, x1), color)
    _paint(image, ys, np.full_like(ys, x2), color)


def _dot(image: np.ndarray, point, color, radius: int = 1) -> None:
    cx, cy = int(np.floor(point[0])), int(np.floor(point[1]))
    offsets = np.arange(-radius, radius + 1)
    ys, xs = np.meshgrid(cy + offsets, cx + offsets, indexing="ij")
    _paint(image, ys.ravel(), xs.ravel(), color)


def render_detections(image: np.ndarray, detections: Sequence[Detection]) -> np.ndarray:
    """Copy of `image` with box outlines and landmark dots burned in."""
    out = np.array(image, dtype=np.uint8, copy=True)
    for det in detections:
        _outline(out, det.box, BOX_COLOR)
        for point in det.landmarks or ():
            _dot(out, point, LANDMARK_COLOR)
    return out
