"""JSON-header + little-endian float64 container.

Layout: an 8-byte little-endian unsigned header length, the UTF-8 JSON header,
then the arrays back to back (``<f8``, C order).  The header lists each array's
name, shape and byte offset relative to the start of the data block.  Used for
eigenbasis caches, tabulated kernels and field snapshots.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def write(path, meta: dict, arrays: dict[str, np.ndarray]) -> Path:
    path = Path(path)
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(data.shape), "offset": offset})
        blobs.append(data.tobytes())
        offset += data.nbytes
    header = {"format_version": FORMAT_VERSION, "meta": meta, "arrays": entries}
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)
    tmp.replace(path)
    return path


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) != 8:
            raise FormatError(f"{path}: truncated header")
        (n,) = struct.unpack("<Q", head)
        try:
            header = json.loads(fh.read(n).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: unreadable JSON header") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {header.get('format_version')}")
    return header


def read(path) -> tuple[dict, dict[str, np.ndarray]]:
    header = read_header(path)
    with open(path, "rb") as fh:
        (n,) = struct.unpack("<Q", fh.read(8))
        fh.seek(8 + n)
        data = fh.read()
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        stop = start + 8 * count
        if stop > len(data):
            raise FormatError(f"{path}: array {entry['name']!r} runs past end of file")
        arrays[entry["name"]] = np.frombuffer(data[start:stop], dtype="<f8").reshape(shape).copy()
    return header["meta"], arrays
