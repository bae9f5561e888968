"""Binary checkpoint format.

Layout: 4 magic bytes "SPCE", uint32 LE version, uint64 LE metadata length,
UTF-8 JSON metadata (encoder config, train config, BPE model, language
profile, tensor manifest), then the raw little-endian float32 payload.
Manifest offsets are in float units, contiguous and non-overlapping; a
load(save(params)) round trip is bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .bpe import BpeModel
from .lexer import LanguageProfile
from .model import EncoderConfig, EncoderParams
from .tensor import Tensor
from .training import TrainConfig

MAGIC = b"SPCE"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedPayloadError(CheckpointError):
    pass


class ManifestError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    params: EncoderParams
    encoder_config: EncoderConfig
    train_config: TrainConfig
    bpe: BpeModel
    profile: LanguageProfile


def save_checkpoint(params: EncoderParams, encoder_config: EncoderConfig,
                    train_config: TrainConfig, bpe: BpeModel,
                    profile: LanguageProfile, path):
    manifest = []
    offset = 0
    blobs = []
    for name, tensor in params.items():
        size = int(np.prod(tensor.shape))
        manifest.append({"name": name, "shape": list(tensor.shape), "offset": offset})
        blobs.append(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())
        offset += size
    meta = {
        "version": VERSION,
        "encoder_config": encoder_config.to_dict(),
        "train_config": train_config.to_dict(),
        "bpe": bpe.to_dict(),
        "profile": profile.to_dict(),
        "manifest": manifest,
    }
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(meta_bytes)))
        fh.write(meta_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise BadMagicError("file too short to be a checkpoint")
    magic, version, meta_len = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    if len(raw) < _HEADER.size + meta_len:
        raise TruncatedPayloadError("metadata extends past end of file")
    meta = json.loads(raw[_HEADER.size: _HEADER.size + meta_len].decode("utf-8"))

    manifest = meta["manifest"]
    expected = 0
    for entry in manifest:
        size = int(np.prod(entry["shape"]))
        if entry["offset"] != expected:
            raise ManifestError(
                f"manifest offset {entry['offset']} for {entry['name']!r}, expected {expected}")
        expected += size

    payload = raw[_HEADER.size + meta_len:]
    if len(payload) < expected * 4:
        raise TruncatedPayloadError(
            f"payload holds {len(payload) // 4} floats, manifest declares {expected}")
    if len(payload) > expected * 4:
        raise ManifestError(
            f"payload holds {len(payload) // 4} floats, manifest declares {expected}")

    flat = np.frombuffer(payload, dtype="<f4")
    encoder_config = EncoderConfig.from_dict(meta["encoder_config"])
    tensors = {}
    for entry in manifest:
        size = int(np.prod(entry["shape"]))
        values = flat[entry["offset"]: entry["offset"] + size].reshape(entry["shape"])
        tensors[entry["name"]] = Tensor(values.copy(), requires_grad=True)
    params = EncoderParams(tensors, encoder_config)
    return Checkpoint(params=params,
                      encoder_config=encoder_config,
                      train_config=TrainConfig.from_dict(meta["train_config"]),
                      bpe=BpeModel.from_dict(meta["bpe"]),
                      profile=LanguageProfile.from_dict(meta["profile"]))
