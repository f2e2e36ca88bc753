"""Flat binary checkpoints.

Layout, all integers little-endian uint32 unless noted:

    magic  8 bytes  b"RAINSRv1"
    config u32 byte length + UTF-8 text block
    count  u32 number of parameter records
    then per record, sorted by name:
        u32 name length, name UTF-8
        u32 rank, rank * u32 dims
        row-major float64 little-endian payload

Sorting plus the fixed encoding makes save(load(x)) byte-identical, which
the round-trip tests assert.  The config text block is opaque to this
module; callers stash run configuration and counters there.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"RAINSRv1"


class CheckpointError(ValueError):
    """Malformed or truncated checkpoint data."""


def dump_bytes(config_text, arrays):
    """Serialize a config string and name -> float array mapping."""
    out = [MAGIC]
    cfg = config_text.encode("utf-8")
    out.append(struct.pack("<I", len(cfg)))
    out.append(cfg)
    out.append(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        # asarray, not ascontiguousarray: the latter promotes 0-d to 1-d
        arr = np.asarray(arrays[name], dtype="<f8")
        enc = name.encode("utf-8")
        out.append(struct.pack("<I", len(enc)))
        out.append(enc)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        out.append(arr.tobytes())
    return b"".join(out)


def parse_bytes(blob):
    """Inverse of :func:`dump_bytes`; returns (config_text, arrays)."""
    view = memoryview(blob)
    if bytes(view[:8]) != MAGIC:
        raise CheckpointError(f"bad magic {bytes(view[:8])!r}")
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError(f"truncated at byte {pos} (wanted {n} more)")
        piece = view[pos : pos + n]
        pos += n
        return piece

    def u32():
        return struct.unpack("<I", take(4))[0]

    config_text = bytes(take(u32())).decode("utf-8")
    arrays = {}
    for _ in range(u32()):
        name = bytes(take(u32())).decode("utf-8")
        rank = u32()
        shape = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        n_vals = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(take(8 * n_vals), dtype="<f8").reshape(shape)
        arrays[name] = data.astype(np.float64)  # writable copy, native order
    if pos != len(view):
        raise CheckpointError(f"{len(view) - pos} trailing bytes")
    return config_text, arrays


def save_checkpoint(path, config_text, arrays):
    with open(path, "wb") as fh:
        fh.write(dump_bytes(config_text, arrays))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return parse_bytes(fh.read())
