"""Binary checkpoint format.

Layout (little-endian): magic ``WSDLM\\x01``, u32 version, u32 V, p, h, u64 seed,
32-byte vocabulary digest, the parameter matrices E, W_x, W_h, b, W_c, O, b_o as
row-major float64, and a trailing CRC32 over everything before it.
"""
from __future__ import annotations

import os
import struct
import tempfile
import zlib

import numpy as np

from .model import PARAM_NAMES, LstmParams, ModelConfig

MAGIC = b"WSDLM\x01"
VERSION = 1
_HEADER = struct.Struct("<6sIIIIQ32s")


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class DigestMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


def _shapes(V: int, p: int, h: int) -> dict[str, tuple[int, ...]]:
    return {"E": (V, p), "W_x": (p, 4 * h), "W_h": (h, 4 * h), "b": (4 * h,),
            "W_c": (h, p), "O": (V, p), "b_o": (V,)}


def checkpoint_bytes(params: LstmParams, seed: int, vocab_digest: bytes) -> bytes:
    if len(vocab_digest) != 32:
        raise ValueError("vocabulary digest must be 32 bytes")
    params.check()
    V, p, h = params.dims
    parts = [_HEADER.pack(MAGIC, VERSION, V, p, h, seed, vocab_digest)]
    for name in PARAM_NAMES:
        parts.append(np.ascontiguousarray(getattr(params, name), dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(params: LstmParams, config: ModelConfig, vocab_digest: bytes, path) -> None:
    """Write atomically: temp file in the target directory, then rename."""
    data = checkpoint_bytes(params, config.seed, vocab_digest)
    atomic_write(path, data)


def atomic_write(path, data: bytes) -> None:
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def parse_checkpoint(data: bytes, vocab_digest: bytes | None = None) -> tuple[LstmParams, ModelConfig, bytes]:
    if len(data) < len(MAGIC):
        raise TruncatedCheckpointError(f"file too short ({len(data)} bytes)")
    if data[:len(MAGIC)] != MAGIC:
        raise BadMagicError("bad magic: not a senselab checkpoint")
    if len(data) < _HEADER.size:
        raise TruncatedCheckpointError("truncated header")
    _, version, V, p, h, seed, digest = _HEADER.unpack_from(data)
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {VERSION}")
    shapes = _shapes(V, p, h)
    n_floats = sum(int(np.prod(s)) for s in shapes.values())
    expected = _HEADER.size + 8 * n_floats + 4
    if len(data) < expected:
        raise TruncatedCheckpointError(f"truncated: {len(data)} bytes, expected {expected}")
    if len(data) > expected:
        raise ChecksumError(f"{len(data) - expected} trailing bytes after checkpoint")
    (crc,) = struct.unpack_from("<I", data, expected - 4)
    if zlib.crc32(data[:expected - 4]) != crc:
        raise ChecksumError("CRC32 mismatch: checkpoint is corrupted")
    if vocab_digest is not None and digest != vocab_digest:
        raise DigestMismatchError("vocabulary digest mismatch: checkpoint was trained with a different vocabulary")
    arrays = {}
    off = _HEADER.size
    for name in PARAM_NAMES:
        shape = shapes[name]
        n = int(np.prod(shape))
        arrays[name] = np.frombuffer(data, dtype="<f8", count=n, offset=off).astype(np.float64).reshape(shape)
        off += 8 * n
    params = LstmParams(**arrays)
    params.check()
    return params, ModelConfig(V=V, p=p, h=h, seed=seed), digest


def load_checkpoint(path, vocab_digest: bytes | None = None) -> tuple[LstmParams, ModelConfig]:
    """Read a checkpoint; if ``vocab_digest`` is given it must match the stored one."""
    with open(path, "rb") as f:
        data = f.read()
    params, config, _ = parse_checkpoint(data, vocab_digest)
    return params, config
