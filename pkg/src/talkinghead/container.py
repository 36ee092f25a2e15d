"""Binary array container shared by bases, features and checkpoints.

Layout::

    b"THC1" | uint32 LE header length | JSON header (utf-8) | array payload

The header holds ``meta`` (free-form JSON) and ``arrays``, an ordered list of
``{"name", "dtype", "shape", "offset", "nbytes"}`` records.  Offsets are
relative to the start of the payload.  Arrays are stored little-endian as
32-bit floats (``<f4``) or 32-bit ints (``<i4``).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

MAGIC = b"THC1"
_DTYPES = {"f4": np.dtype("<f4"), "i4": np.dtype("<i4")}


class ContainerError(ValueError):
    pass


def _kind(arr: np.ndarray) -> str:
    if np.issubdtype(arr.dtype, np.integer) or arr.dtype == np.bool_:
        return "i4"
    if np.issubdtype(arr.dtype, np.floating):
        return "f4"
    raise ContainerError(f"unsupported dtype {arr.dtype}")


def dumps(arrays: Mapping[str, np.ndarray], meta: Mapping[str, Any] | None = None) -> bytes:
    records = []
    chunks = []
    offset = 0
    for name, value in arrays.items():
        arr = np.asarray(value)
        kind = _kind(arr)
        data = np.ascontiguousarray(arr, dtype=_DTYPES[kind]).tobytes()
        records.append({"name": name, "dtype": kind, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    header = json.dumps({"meta": dict(meta or {}), "arrays": records},
                        sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<I", len(header)) + header + b"".join(chunks)


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    if blob[:4] != MAGIC:
        raise ContainerError("bad magic; not a container file")
    (hlen,) = struct.unpack("<I", blob[4:8])
    try:
        header = json.loads(blob[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"corrupt header: {exc}") from exc
    base = 8 + hlen
    arrays: dict[str, np.ndarray] = {}
    for rec in header["arrays"]:
        start = base + rec["offset"]
        raw = blob[start:start + rec["nbytes"]]
        if len(raw) != rec["nbytes"]:
            raise ContainerError(f"truncated payload for {rec['name']!r}")
        arr = np.frombuffer(raw, dtype=_DTYPES[rec["dtype"]]).reshape(rec["shape"])
        arrays[rec["name"]] = arr.copy()
    return arrays, header.get("meta", {})


def save(path: str | Path, arrays: Mapping[str, np.ndarray],
         meta: Mapping[str, Any] | None = None) -> None:
    Path(path).write_bytes(dumps(arrays, meta))


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    return loads(Path(path).read_bytes())
