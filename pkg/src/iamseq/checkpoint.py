"""Binary checkpoint files.

Layout (all integers little-endian)::

    bytes 0..7    magic  b"IAMSEQ" + two ASCII digits of the format version
    bytes 8..15   uint64 header length N
    bytes 16..    N bytes of UTF-8 JSON header (sorted keys, no whitespace)
    then          payload: float32 records back to back

The header holds ``format_version``, ``config``, ``seed``, ``metadata``,
``payload_bytes`` and ``params``: a list of ``{name, shape, offset, nbytes,
crc32}`` in registry order, with offsets relative to the payload start.
"""
from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointIntegrityError, CheckpointVersionError, ContractError, NumericError, ParameterError
from .model import ModelConfig, ParameterRegistry
from .tensor import Tensor

MAGIC_PREFIX = b"IAMSEQ"
FORMAT_VERSION = 1
_LEN = struct.Struct("<Q")


@dataclass
class Checkpoint:
    registry: ParameterRegistry
    config: ModelConfig
    seed: int | None = None
    metadata: dict = field(default_factory=dict)


def encode_checkpoint(registry: ParameterRegistry, config: ModelConfig,
                      seed: int | None = None, metadata: dict | None = None) -> bytes:
    records, blobs, offset = [], [], 0
    for name, t in registry.items():
        with np.errstate(over="ignore"):
            arr = t.data.astype("<f4")
        if not np.isfinite(arr).all():
            raise NumericError(f"parameter {name!r} is not finite in float32")
        blob = arr.tobytes(order="C")
        records.append({"name": name, "shape": list(t.shape), "offset": offset,
                        "nbytes": len(blob), "crc32": zlib.crc32(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format_version": FORMAT_VERSION,
        "config": config.to_dict(),
        "seed": seed,
        "metadata": metadata or {},
        "payload_bytes": offset,
        "params": records,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    magic = MAGIC_PREFIX + f"{FORMAT_VERSION:02d}".encode("ascii")
    return magic + _LEN.pack(len(hbytes)) + hbytes + b"".join(blobs)


def save_checkpoint(registry: ParameterRegistry, config: ModelConfig, path,
                    seed: int | None = None, metadata: dict | None = None) -> Path:
    path = Path(path)
    data = encode_checkpoint(registry, config, seed, metadata)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    return path


def decode_checkpoint(raw: bytes) -> Checkpoint:
    try:
        return _decode(raw)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, (CheckpointIntegrityError, CheckpointVersionError, ParameterError, ContractError)):
            raise
        raise CheckpointIntegrityError(f"header is malformed ({type(exc).__name__}: {exc})") from exc


def _decode(raw: bytes) -> Checkpoint:
    if len(raw) < 16 or raw[:6] != MAGIC_PREFIX:
        raise CheckpointIntegrityError("not an IAMSEQ checkpoint (bad magic)")
    tag = raw[6:8]
    if not tag.isdigit() or int(tag) != FORMAT_VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {tag!r}; this build reads {FORMAT_VERSION:02d}")
    (hlen,) = _LEN.unpack(raw[8:16])
    if 16 + hlen > len(raw):
        raise CheckpointIntegrityError("header truncated")
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointIntegrityError(f"header unreadable: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointVersionError(f"header declares version {header.get('format_version')!r}")
    payload = raw[16 + hlen:]
    if len(payload) != header["payload_bytes"]:
        raise CheckpointIntegrityError(
            f"payload is {len(payload)} bytes, header declares {header['payload_bytes']}"
            + _first_short_record(header["params"], len(payload)))
    registry = ParameterRegistry()
    for rec in header["params"]:
        name, shape = rec["name"], tuple(rec["shape"])
        blob = payload[rec["offset"]:rec["offset"] + rec["nbytes"]]
        if len(blob) != rec["nbytes"] or rec["nbytes"] != 4 * int(np.prod(shape, dtype=np.int64)):
            raise CheckpointIntegrityError(f"record {name!r}: length does not match shape {shape}")
        if zlib.crc32(blob) != rec["crc32"]:
            raise CheckpointIntegrityError(f"record {name!r}: checksum mismatch")
        arr = np.frombuffer(blob, dtype="<f4").astype(np.float64).reshape(shape)
        registry.register(name, Tensor(arr, requires_grad=True))
    return Checkpoint(registry, ModelConfig.from_dict(header["config"]), header.get("seed"), header.get("metadata", {}))


def _first_short_record(records: list[dict], available: int) -> str:
    for rec in records:
        if rec["offset"] + rec["nbytes"] > available:
            return f" (record {rec['name']!r} is cut off)"
    return ""


def read_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())


def load_checkpoint(path) -> tuple[ParameterRegistry, ModelConfig]:
    ckpt = read_checkpoint(path)
    return ckpt.registry, ckpt.config
