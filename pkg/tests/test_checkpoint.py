import hashlib
import struct
import zlib

import numpy as np
import pytest

from conftest import perturbed_params
from senselab.lstm_lm import (PARAM_NAMES, BadMagicError, ChecksumError, DigestMismatchError, ModelConfig,
                              TruncatedCheckpointError, VersionMismatchError, load_checkpoint, save_checkpoint)
from senselab.lstm_lm.checkpoint import MAGIC, checkpoint_bytes, parse_checkpoint

DIGEST = hashlib.sha256(b"vocab").digest()
CFG = ModelConfig(V=12, p=4, h=6, seed=77)


@pytest.fixture
def blob():
    return checkpoint_bytes(perturbed_params(), CFG.seed, DIGEST)


def test_roundtrip_bit_exact(tmp_path):
    params = perturbed_params()
    path = tmp_path / "lm.ckpt"
    save_checkpoint(params, CFG, DIGEST, path)
    loaded, cfg = load_checkpoint(path, DIGEST)
    assert (cfg.V, cfg.p, cfg.h, cfg.seed) == (12, 4, 6, 77)
    for n in PARAM_NAMES:
        assert getattr(loaded, n).tobytes() == getattr(params, n).tobytes()
    save_checkpoint(loaded, cfg, DIGEST, tmp_path / "again.ckpt")
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()


def test_layout_header_and_crc(blob):
    assert blob[:6] == MAGIC == b"WSDLM\x01"
    version, V, p, h, seed = struct.unpack_from("<IIIIQ", blob, 6)
    assert (version, V, p, h, seed) == (1, 12, 4, 6, 77)
    assert blob[30:62] == DIGEST
    n = 12 * 4 + 4 * 24 + 6 * 24 + 24 + 6 * 4 + 12 * 4 + 12
    assert len(blob) == 62 + 8 * n + 4
    assert struct.unpack("<I", blob[-4:])[0] == zlib.crc32(blob[:-4])
    E = np.frombuffer(blob, "<f8", count=48, offset=62).reshape(12, 4)
    assert np.array_equal(E, perturbed_params().E)


def test_bad_magic(blob):
    with pytest.raises(BadMagicError):
        parse_checkpoint(b"XXXXX\x01" + blob[6:])


def test_version_mismatch(blob):
    bad = blob[:6] + struct.pack("<I", 2) + blob[10:]
    with pytest.raises(VersionMismatchError):
        parse_checkpoint(bad)


@pytest.mark.parametrize("cut", [3, 20, 100, -1])
def test_truncated(blob, cut):
    with pytest.raises(TruncatedCheckpointError):
        parse_checkpoint(blob[:cut])


def test_flipped_byte_fails_crc(blob):
    bad = bytearray(blob)
    bad[200] ^= 0x01
    with pytest.raises(ChecksumError):
        parse_checkpoint(bytes(bad))


def test_trailing_bytes_rejected(blob):
    with pytest.raises(ChecksumError):
        parse_checkpoint(blob + b"\0")


def test_digest_mismatch(blob):
    parse_checkpoint(blob)  # no expectation given: accepted
    with pytest.raises(DigestMismatchError):
        parse_checkpoint(blob, hashlib.sha256(b"other").digest())


def test_failed_save_leaves_old_file(tmp_path, monkeypatch):
    path = tmp_path / "lm.ckpt"
    save_checkpoint(perturbed_params(), CFG, DIGEST, path)
    before = path.read_bytes()
    import os

    def boom(*a):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        save_checkpoint(perturbed_params(seed=3), CFG, DIGEST, path)
    assert path.read_bytes() == before
    assert sorted(p.name for p in tmp_path.iterdir()) == ["lm.ckpt"]
