"""Binary network checkpoints.

Layout (all integers little-endian)::

    b"DFKDCKPT"                 8-byte magic
    uint32 header_len
    header_len bytes            UTF-8 JSON header with the tensor manifest
    payload                     float32 LE values, row-major, tensors back to back

Manifest offsets are byte offsets from the start of the payload.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .nn import Network, init_network

MAGIC = b"DFKDCKPT"
FORMAT_VERSION = 1
_LE_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


def to_bytes(net: Network, step: int = 0, seed: int | None = None) -> bytes:
    manifest, chunks, offset = [], [], 0
    for name, t in net.named_parameters():
        raw = np.ascontiguousarray(t.data, dtype=_LE_F32).tobytes()
        manifest.append({"name": name, "shape": list(t.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "role": net.role,
        "arch": str(net.arch),
        "feature_tap": net.feature_tap,
        "seed": net.seed if seed is None else seed,
        "step": step,
        "payload_bytes": offset,
        "manifest": manifest,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<I", len(blob)) + blob + b"".join(chunks)


def save(net: Network, path, step: int = 0, seed: int | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(net, step, seed))
    return path


def from_bytes(raw: bytes, source: str = "<bytes>") -> tuple[Network, dict]:
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (bad magic)")
    if len(raw) < 12:
        raise CheckpointError(f"{source}: truncated at byte offset {len(raw)} inside the header length")
    (hlen,) = struct.unpack("<I", raw[8:12])
    start = 12 + hlen
    if len(raw) < start:
        raise CheckpointError(f"{source}: truncated at byte offset {len(raw)}, header needs {start} bytes")
    try:
        header = json.loads(raw[12:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{source}: unreadable header: {e}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{source}: unsupported format version {header.get('format_version')}")

    net = init_network(header["arch"], header["role"], seed=0, feature_tap=header["feature_tap"])
    net.seed = header["seed"]
    params = dict(net.named_parameters())
    expected = header["payload_bytes"]
    payload = raw[start:]
    if len(payload) < expected:
        raise CheckpointError(
            f"{source}: payload truncated at byte offset {len(raw)} "
            f"(expected {start + expected} bytes)")
    if len(payload) > expected:
        raise CheckpointError(f"{source}: {len(payload) - expected} trailing bytes after payload")

    cursor = 0
    for entry in header["manifest"]:
        name, shape, off = entry["name"], tuple(entry["shape"]), entry["offset"]
        if name not in params:
            raise CheckpointError(f"{source}: tensor {name!r} not in architecture {header['arch']}")
        if params[name].shape != shape:
            raise CheckpointError(f"{source}: tensor {name!r} has shape {list(shape)}, "
                                  f"architecture expects {list(params[name].shape)}")
        if off != cursor:
            raise CheckpointError(f"{source}: tensor {name!r} at offset {off}, expected {cursor}")
        size = int(np.prod(shape)) * 4
        params[name].data[...] = np.frombuffer(payload, dtype=_LE_F32, count=size // 4,
                                               offset=off).reshape(shape)
        cursor += size
    if cursor != expected or len(header["manifest"]) != len(params):
        raise CheckpointError(f"{source}: manifest does not cover the architecture's parameters")
    return net, header


def load(path) -> tuple[Network, dict]:
    path = Path(path)
    return from_bytes(path.read_bytes(), str(path))


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
