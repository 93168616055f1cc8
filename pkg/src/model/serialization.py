"""
Binary model container.

Layout: one line of JSON header (magic, version, model config, tensor table,
optional metadata) terminated by a newline, followed by the raw
little-endian float32 payloads in table order.
"""
import json
import logging
import zlib
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from src.errors import ConfigurationError, CorruptFileError, VersionError
from src.model.config import ModelConfig
from src.model.weights import ModelWeights

logger = logging.getLogger(__name__)

MAGIC = "KVWM"
FORMAT_VERSION = 1
TENSOR_DTYPE = "<f4"


def save_model(
    weights: ModelWeights,
    config: ModelConfig,
    path: Union[str, Path],
    metadata: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write ``weights`` to ``path``; returns the path written."""
    weights.validate(config)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    table = []
    chunks = []
    offset = 0
    with weights.lock:
        for name, array in weights.named_tensors().items():
            raw = np.ascontiguousarray(array, dtype=TENSOR_DTYPE).tobytes()
            table.append({
                "name": name,
                "shape": list(array.shape),
                "dtype": TENSOR_DTYPE,
                "offset": offset,
                "length": len(raw),
                "crc32": zlib.crc32(raw),
            })
            chunks.append(raw)
            offset += len(raw)

    payload = b"".join(chunks)
    header = {
        "magic": MAGIC,
        "version": FORMAT_VERSION,
        "config": config.to_dict(),
        "tensors": table,
        "payload_length": len(payload),
        "payload_crc32": zlib.crc32(payload),
        "metadata": metadata or {},
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8"))
        f.write(b"\n")
        f.write(payload)

    logger.info(f"Saved model ({len(table)} tensors, {len(payload)} bytes) to {path}")
    return path


def read_header(path: Union[str, Path]) -> Tuple[Dict[str, Any], bytes]:
    """Parse the header line; returns (header, payload bytes)."""
    path = Path(path)
    data = path.read_bytes()
    newline = data.find(b"\n")
    if newline < 0:
        raise CorruptFileError(f"{path}: missing header terminator")
    try:
        header = json.loads(data[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptFileError(f"{path}: unreadable header ({e})")
    if not isinstance(header, dict) or header.get("magic") != MAGIC:
        raise CorruptFileError(f"{path}: not a model container")
    if header.get("version") != FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported container version {header.get('version')!r}")
    return header, data[newline + 1:]


def load_model(path: Union[str, Path]) -> Tuple[ModelWeights, ModelConfig]:
    """
    Load a container written by :func:`save_model`.

    Raises:
        CorruptFileError: Truncated payload or a tensor whose bytes do not
            match its declared shape or checksum.
        VersionError: Unknown container version or configuration tags.
    """
    header, payload = read_header(path)
    try:
        config = ModelConfig.from_dict(header["config"])
    except (KeyError, TypeError, ValueError, AttributeError, ConfigurationError) as e:
        raise CorruptFileError(f"{path}: bad model config in header ({e!r})")

    declared = header.get("payload_length")
    if declared is not None and len(payload) < declared:
        raise CorruptFileError(f"{path}: truncated payload ({len(payload)} of {declared} bytes)")

    tensors: Dict[str, np.ndarray] = {}
    for entry in header.get("tensors", []):
        try:
            name = entry["name"]
            dtype = entry.get("dtype")
            shape = tuple(int(s) for s in entry["shape"])
            start, length = int(entry["offset"]), int(entry["length"])
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise CorruptFileError(f"{path}: bad tensor table entry ({e!r})")
        if dtype != TENSOR_DTYPE:
            raise VersionError(f"{path}: unsupported dtype {dtype!r} for tensor '{name}'")
        expected = int(np.prod(shape, dtype=np.int64)) * 4
        if length != expected:
            raise CorruptFileError(
                f"{path}: payload length {length} does not match shape {list(shape)}", tensor=name
            )
        raw = payload[start:start + length]
        if len(raw) != length:
            raise CorruptFileError(f"{path}: truncated payload", tensor=name)
        if zlib.crc32(raw) != entry.get("crc32"):
            raise CorruptFileError(f"{path}: checksum mismatch", tensor=name)
        tensors[name] = np.frombuffer(raw, dtype=TENSOR_DTYPE).reshape(shape).astype(np.float32)

    try:
        weights = ModelWeights.from_named(tensors, config)
        weights.check_finite()
    except ConfigurationError as e:
        raise CorruptFileError(f"{path}: {e}")

    logger.debug(f"Loaded model {config.num_layers}x{config.d_model} from {path}")
    return weights, config
