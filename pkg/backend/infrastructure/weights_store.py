"""
Binary weights files and the per-stage weights directory.

Layout (little-endian): b"MTCN", u32 version, u32 record count, then per
record: u32 name length, UTF-8 name, u32 ndim, u32 dims[ndim], f32 values.
Record names carry the network kind as a prefix ("pnet.conv1.weight").
"""
import hashlib
import logging
import struct
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from backend.domain.errors import WeightsFormatError
from backend.domain.nn.networks import INPUT_SIZES, Network, build_network
from backend.domain.services.cascade import CascadeNets

logger = logging.getLogger(__name__)

MAGIC = b"MTCN"
VERSION = 1
_U32 = struct.Struct("<I")


def weights_path(weights_dir: Path, kind: str) -> Path:
    return Path(weights_dir) / f"{kind}.bin"


def encode_weights(net: Network) -> bytes:
    chunks: List[bytes] = [MAGIC, _U32.pack(VERSION)]
    params = net.parameters()
    chunks.append(_U32.pack(len(params)))
    for name, tensor in params.items():
        full = f"{net.kind}.{name}".encode("utf-8")
        chunks.append(_U32.pack(len(full)))
        chunks.append(full)
        chunks.append(_U32.pack(len(tensor.dims)))
        chunks.extend(_U32.pack(d) for d in tensor.dims)
        chunks.append(np.ascontiguousarray(tensor.values, dtype="<f4").tobytes())
    return b"".join(chunks)


def save_weights(net: Network, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_weights(net))
    logger.info("Saved %s weights (%d parameters) to %s", net.kind, net.parameter_count(), path)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, size: int, what: str) -> bytes:
        if self.pos + size > len(self.data):
            raise WeightsFormatError(f"truncated weights file while reading {what} at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]


def decode_records(data: bytes) -> List[Tuple[str, Tuple[int, ...], np.ndarray]]:
    reader = _Reader(data)
    if reader.take(4, "magic") != MAGIC:
        raise WeightsFormatError("bad magic: not an MTCN weights file")
    version = reader.u32("version")
    if version != VERSION:
        raise WeightsFormatError(f"unsupported weights version {version} (expected {VERSION})")
    count = reader.u32("record count")
    records = []
    for i in range(count):
        name_len = reader.u32(f"record {i} name length")
        try:
            name = reader.take(name_len, f"record {i} name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WeightsFormatError(f"record {i} name is not UTF-8") from exc
        ndim = reader.u32(f"{name} ndim")
        dims = tuple(reader.u32(f"{name} dims") for _ in range(ndim))
        size = int(np.prod(dims)) if dims else 0
        values = np.frombuffer(reader.take(4 * size, f"{name} values"), dtype="<f4").reshape(dims)
        records.append((name, dims, values))
    if reader.pos != len(data):
        raise WeightsFormatError(f"{len(data) - reader.pos} trailing bytes after the last record")
    return records


def decode_weights(data: bytes) -> Network:
    records = decode_records(data)
    if not records:
        raise WeightsFormatError("weights file holds no records")
    kind = records[0][0].split(".", 1)[0]
    if kind not in INPUT_SIZES:
        raise WeightsFormatError(f"unknown network kind prefix {kind!r}")
    net = build_network(kind)
    params = net.parameters()
    seen: Dict[str, bool] = {}
    for full_name, dims, values in records:
        prefix, _, name = full_name.partition(".")
        if prefix != kind or name not in params:
            raise WeightsFormatError(f"unexpected record {full_name!r} for a {kind} network")
        if name in seen:
            raise WeightsFormatError(f"duplicate record {full_name!r}")
        if dims != params[name].dims:
            raise WeightsFormatError(f"{full_name}: dims {dims} do not match {params[name].dims}")
        seen[name] = True
    missing = sorted(set(params) - set(seen))
    if missing:
        raise WeightsFormatError(f"missing records: {', '.join(missing)}")
    for full_name, _, values in records:
        params[full_name.partition(".")[2]].values = values.astype(np.float32)
    net.trained = True
    return net


def load_weights(path: Path) -> Network:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise WeightsFormatError(f"cannot read weights file {path}: {exc}") from exc
    return decode_weights(data)


def weights_checksum(paths: List[Path]) -> str:
    digest = hashlib.sha256()
    for path in paths:
        digest.update(Path(path).read_bytes())
    return digest.hexdigest()


def cascade_weight_paths(weights_dir: Path) -> List[Path]:
    return [weights_path(weights_dir, kind) for kind in INPUT_SIZES]


def load_cascade_nets(weights_dir: Path) -> CascadeNets:
    """P-Net, R-Net and O-Net from `{kind}.bin` files in one directory."""
    nets = {}
    for kind in INPUT_SIZES:
        net = load_weights(weights_path(weights_dir, kind))
        if net.kind != kind:
            raise WeightsFormatError(f"{weights_path(weights_dir, kind)} holds {net.kind} weights, expected {kind}")
        nets[kind] = net
    return CascadeNets(pnet=nets["pnet"], rnet=nets["rnet"], onet=nets["onet"])
