"""Flat binary container of named float arrays.

Layout (all integers little-endian):

    bytes 0..7    magic b"ESIHGNN1"
    bytes 8..15   uint64 length M of the manifest
    next M bytes  UTF-8 JSON manifest
    remainder     data section: arrays back to back, C order, '<f4'

The manifest is ``{"format": "esihgnn-checkpoint", "version": 1,
"dtype": "<f4", "meta": {...}, "arrays": [{"name", "shape", "offset",
"nbytes"}, ...]}`` where each offset is relative to the start of the data
section. Keys are sorted so identical contents give identical bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import ParseError

MAGIC = b"ESIHGNN1"


def encode_checkpoint(arrays, meta=None):
    entries = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    manifest = {
        "format": "esihgnn-checkpoint",
        "version": 1,
        "dtype": "<f4",
        "meta": meta or {},
        "arrays": entries,
    }
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(header)) + header + b"".join(chunks)


def decode_checkpoint(blob):
    if blob[:8] != MAGIC:
        raise ParseError("not an ESIHGNN checkpoint (bad magic)")
    (length,) = struct.unpack("<Q", blob[8:16])
    try:
        manifest = json.loads(blob[16:16 + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"corrupt checkpoint manifest: {exc}") from exc
    data = memoryview(blob)[16 + length:]
    arrays = {}
    for entry in manifest["arrays"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(data):
            raise ParseError(f"checkpoint array {entry['name']!r} runs past end of file")
        arr = np.frombuffer(data[start:start + nbytes], dtype="<f4").reshape(entry["shape"])
        arrays[entry["name"]] = arr.copy()
    return arrays, manifest.get("meta", {})


def save_checkpoint(path, arrays, meta=None):
    blob = encode_checkpoint(arrays, meta)
    with open(path, "wb") as fh:
        fh.write(blob)
    return blob


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
