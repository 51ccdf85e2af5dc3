"""Deterministic binary container for models, datasets and checkpoints.

Layout: 8-byte magic, 4-byte format version, 8-byte header length, a canonical
JSON header (sorted keys, no whitespace), then the raw float64 bytes of each
array in the order listed by the header. Identical inputs produce identical
bytes, which the reproducibility contract relies on.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"ELGN\x00\x01\x00\x00"
FORMAT_VERSION = 1


class ContainerError(Exception):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_container(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write meta (JSON-serializable) plus named float64 arrays to path."""
    order = sorted(arrays)
    header = {
        "meta": meta,
        "arrays": [
            {"name": name, "shape": list(np.asarray(arrays[name]).shape)}
            for name in order
        ],
    }
    header_bytes = canonical_json(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for name in order:
            arr = np.ascontiguousarray(arrays[name], dtype=np.float64)
            f.write(arr.tobytes())


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a container written by write_container; returns (meta, arrays)."""
    path = Path(path)
    if not path.is_file():
        raise ContainerError(f"no such file: {path}")
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ContainerError(f"{path}: not an elastogan container")
        (version,) = struct.unpack("<I", f.read(4))
        if version != FORMAT_VERSION:
            raise ContainerError(f"{path}: unsupported container version {version}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        arrays = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(count * 8)
            if len(buf) != count * 8:
                raise ContainerError(f"{path}: truncated array {spec['name']!r}")
            arrays[spec["name"]] = np.frombuffer(buf, dtype=np.float64).reshape(shape).copy()
    return header["meta"], arrays
