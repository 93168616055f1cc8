"""
Coefficient cache files.

Layout (little-endian):
    magic "KVWC" | u16 version | u32 num_layers | u32 m | u64 token_count
    | u8 source | u8 mode | u8 ans_only | u32 meta length | meta JSON
    | num_layers * m float32 payload | u32 crc32 of the payload
"""
import json
import logging
import struct
import zlib
from pathlib import Path
from typing import Optional, Union

import numpy as np

from src.errors import CorruptFileError, VersionError
from src.model.config import ModelConfig
from src.coefficients.extract import CoefficientMode, CoefficientSource, KnowledgeCoefficients

logger = logging.getLogger(__name__)

MAGIC = b"KVWC"
CACHE_VERSION = 1
_FIXED = struct.Struct("<4sHIIQBBBI")

_SOURCE_TAGS = {CoefficientSource.FORGET: 0, CoefficientSource.RETAIN: 1}
_MODE_TAGS = {CoefficientMode.ABS: 0, CoefficientMode.CLAMP: 1}


def save_coeffs(coeffs: KnowledgeCoefficients, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = json.dumps(
        {"dataset_hash": coeffs.dataset_hash, "seed": coeffs.seed}, sort_keys=True
    ).encode("utf-8")
    payload = np.ascontiguousarray(coeffs.per_layer, dtype="<f4").tobytes()
    fixed = _FIXED.pack(
        MAGIC, CACHE_VERSION, coeffs.num_layers, coeffs.ffn_dim, coeffs.token_count,
        _SOURCE_TAGS[coeffs.source], _MODE_TAGS[coeffs.mode], int(coeffs.ans_only), len(meta),
    )
    with open(path, "wb") as f:
        f.write(fixed)
        f.write(meta)
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(payload)))
    logger.info(f"Saved {coeffs.source.value} coefficients ({coeffs.token_count} positions) to {path}")
    return path


def load_coeffs(path: Union[str, Path], config: Optional[ModelConfig] = None) -> KnowledgeCoefficients:
    """
    Read a cache file, optionally checking it against a target model.

    Raises:
        CorruptFileError: Truncated file or checksum mismatch.
        VersionError: Unknown version, source or mode tag.
        CompatibilityError: ``config`` given and dimensions differ.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _FIXED.size:
        raise CorruptFileError(f"{path}: truncated coefficient header")
    magic, version, num_layers, m, token_count, source_tag, mode_tag, ans_only, meta_len = (
        _FIXED.unpack_from(data, 0)
    )
    if magic != MAGIC:
        raise CorruptFileError(f"{path}: not a coefficient cache")
    if version != CACHE_VERSION:
        raise VersionError(f"{path}: unsupported cache version {version}")

    sources = {tag: source for source, tag in _SOURCE_TAGS.items()}
    modes = {tag: mode for mode, tag in _MODE_TAGS.items()}
    if source_tag not in sources:
        raise VersionError(f"{path}: unknown source tag {source_tag}")
    if mode_tag not in modes:
        raise VersionError(f"{path}: unknown mode tag {mode_tag}")

    offset = _FIXED.size
    payload_len = num_layers * m * 4
    if len(data) != offset + meta_len + payload_len + 4:
        raise CorruptFileError(
            f"{path}: expected {offset + meta_len + payload_len + 4} bytes, found {len(data)}"
        )
    try:
        meta = json.loads(data[offset:offset + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptFileError(f"{path}: unreadable metadata ({e})")
    offset += meta_len
    payload = data[offset:offset + payload_len]
    (crc,) = struct.unpack_from("<I", data, offset + payload_len)
    if zlib.crc32(payload) != crc:
        raise CorruptFileError(f"{path}: checksum mismatch")

    coeffs = KnowledgeCoefficients(
        per_layer=np.frombuffer(payload, dtype="<f4").reshape(num_layers, m).astype(np.float32),
        token_count=token_count,
        source=sources[source_tag],
        mode=modes[mode_tag],
        ans_only=bool(ans_only),
        dataset_hash=meta.get("dataset_hash"),
        seed=meta.get("seed"),
    )
    if config is not None:
        coeffs.check_compatible(config)
    return coeffs
