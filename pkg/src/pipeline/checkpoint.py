"""
Checkpoint: Versioned binary storage of named float32 tensors, plus a YAML sidecar.

Layout (all integers little-endian):
    b"SNWG" | version u32 | tensor count u32 |
    per tensor: name length u16 | name (utf-8) | rank u8 | dims u32 * rank | float32 data
Tensors are written in sorted name order so equal parameter sets give equal bytes.
The sidecar `<file>.yaml` carries kind, config echo and training metadata.
"""
import math
import struct
from pathlib import Path
from typing import Mapping

import numpy as np
import yaml

from src.utils.errors import DataIOError, FormatError
from src.utils.logger import module_logger

logger = module_logger(__name__)

MAGIC = b"SNWG"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sII")
_NAME_LEN = struct.Struct("<H")
_RANK = struct.Struct("<B")


def encode_tensors(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, len(tensors))]
    for name in sorted(tensors):
        array = np.asarray(tensors[name])
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise FormatError(f"tensor name too long ({len(encoded)} bytes): {name[:40]}...")
        if array.ndim > 0xFF:
            raise FormatError(f"tensor '{name}' has rank {array.ndim} > 255")
        parts.append(_NAME_LEN.pack(len(encoded)))
        parts.append(encoded)
        parts.append(_RANK.pack(array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_tensors(payload: bytes) -> dict[str, np.ndarray]:
    """Parse a complete payload; any truncation or trailing data is a FormatError."""
    view = memoryview(payload)
    offset = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal offset
        if offset + n > len(view):
            raise FormatError(f"truncated checkpoint while reading {what} at byte {offset}")
        chunk = view[offset:offset + n]
        offset += n
        return chunk

    magic, version, count = _HEADER.unpack(take(_HEADER.size, "header"))
    if magic != MAGIC:
        raise FormatError(f"bad magic {bytes(magic)!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}, expected {FORMAT_VERSION}")

    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = _NAME_LEN.unpack(take(_NAME_LEN.size, "name length"))
        try:
            name = bytes(take(name_len, "name")).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"tensor name is not utf-8 at byte {offset}") from exc
        (rank,) = _RANK.unpack(take(_RANK.size, f"rank of '{name}'"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"dims of '{name}'"))
        n_bytes = 4 * math.prod(dims)
        if n_bytes > len(view) - offset:
            raise FormatError(f"tensor '{name}' declares {dims}, more data than the {len(view) - offset} bytes left")
        data = np.frombuffer(take(n_bytes, f"data of '{name}'"), dtype="<f4")
        if name in tensors:
            raise FormatError(f"duplicate tensor name '{name}'")
        try:
            tensors[name] = data.astype(np.float32).reshape(dims)
        except ValueError as exc:
            raise FormatError(f"tensor '{name}' cannot take shape {dims}") from exc
    if offset != len(view):
        raise FormatError(f"{len(view) - offset} unexpected trailing bytes")
    return tensors


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".yaml")


def save_checkpoint(path: str | Path, tensors: Mapping[str, np.ndarray], sidecar: dict | None = None) -> Path:
    path = Path(path)
    payload = encode_tensors(tensors)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(payload)
        if sidecar is not None:
            with open(sidecar_path(path), "w", encoding="utf-8") as f:
                yaml.safe_dump(sidecar, f, sort_keys=False)
    except OSError as exc:
        raise DataIOError(f"cannot write checkpoint ({exc.strerror})", path) from exc
    logger.info("Checkpoint written: %s (%d tensors, %d bytes)", path, len(tensors), len(payload))
    return path


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise DataIOError(f"cannot read checkpoint ({exc.strerror})", path) from exc
    try:
        return decode_tensors(payload)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def load_sidecar(path: str | Path) -> dict:
    side = sidecar_path(path)
    if not side.exists():
        raise DataIOError("checkpoint sidecar not found", side)
    with open(side, "r", encoding="utf-8") as f:
        return yaml.safe_load(f) or {}


def split_prefixed(tensors: Mapping[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    """Tensors whose name starts with `prefix`, with the prefix removed."""
    return {name[len(prefix):]: array for name, array in tensors.items() if name.startswith(prefix)}


def join_prefixed(**groups: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """join_prefixed(G=gen, D=disc) -> {"G.<name>": ..., "D.<name>": ...}."""
    return {f"{prefix}.{name}": array for prefix, arrays in groups.items() for name, array in arrays.items()}
