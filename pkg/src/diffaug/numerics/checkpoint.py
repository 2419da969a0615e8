"""Binary tensor container.

Layout::

    magic      8 bytes   b"DFAUGCK\\x00"
    version    uint32 LE
    mlen       uint64 LE  length of the manifest
    manifest   mlen bytes UTF-8 JSON, keys sorted
    data       concatenated little-endian float64 buffers

The manifest lists ``{name, shape, offset, nbytes}`` per tensor (offsets are
relative to the start of the data section) plus a free-form ``meta`` dict.
Output depends only on the inputs, so identical tensors give identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ParseError

MAGIC = b"DFAUGCK\x00"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIQ")


def save_checkpoint(path, tensors: dict, meta: dict | None = None) -> None:
    entries, buffers, offset = [], [], 0
    for name, arr in tensors.items():
        buf = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(buf)})
        buffers.append(buf)
        offset += len(buf)
    manifest = {"format_version": FORMAT_VERSION, "tensors": entries, "meta": meta or {}}
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for buf in buffers:
            fh.write(buf)


def load_checkpoint(path):
    """Return ``(tensors, meta)`` with tensors in file order."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ParseError(f"{path}: truncated checkpoint header")
    magic, version, mlen = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ParseError(f"{path}: not a checkpoint file")
    if version != FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {version}")
    start = _HEADER.size
    try:
        manifest = json.loads(raw[start : start + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: corrupt manifest ({exc})") from None
    data = memoryview(raw)[start + mlen :]
    tensors = {}
    for e in manifest["tensors"]:
        end = e["offset"] + e["nbytes"]
        if end > len(data):
            raise ParseError(f"{path}: tensor {e['name']} runs past end of file")
        arr = np.frombuffer(data[e["offset"] : end], dtype="<f8").astype(np.float64)
        tensors[e["name"]] = arr.reshape(e["shape"])
    return tensors, manifest.get("meta", {})
