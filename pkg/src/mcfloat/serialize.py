"""MCTensor blobs: a compact binary layout and a JSON layout, both bit-exact.

Binary layout::

    b"MCT1" | uint32 little-endian header length | UTF-8 JSON header | raw data

The header holds ``shape``, ``nc`` and ``precision``; the data are the
components in row-major order with the component index varying fastest,
stored little-endian.  The JSON layout stores every float as ``float.hex``
so signed zeros and NaN payload-free values survive the round trip.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .eft import Precision
from .mct import MCTensor

MAGIC = b"MCT1"

_TAGS = {Precision.B16: "b16", Precision.B32: "b32", Precision.B64: "b64"}


def _header(x: MCTensor) -> dict:
    return {"shape": list(x.shape), "nc": x.nc, "precision": _TAGS[x.precision]}


def _check(header: dict, count: int):
    shape = tuple(int(s) for s in header["shape"])
    nc = int(header["nc"])
    if nc < 1:
        raise ValueError(f"invalid component count {nc}")
    if int(np.prod(shape, dtype=np.int64)) * nc != count:
        raise ValueError(f"blob holds {count} values, header expects shape {shape} x nc {nc}")
    return shape, nc, Precision.of(header["precision"])


def to_bytes(x: MCTensor) -> bytes:
    head = json.dumps(_header(x), separators=(",", ":")).encode()
    le = x.data.astype(x.data.dtype.newbyteorder("<"), copy=False)
    return MAGIC + struct.pack("<I", len(head)) + head + np.ascontiguousarray(le).tobytes()


def from_bytes(blob: bytes) -> MCTensor:
    if blob[:4] != MAGIC:
        raise ValueError("not an MCTensor blob (bad magic)")
    (n,) = struct.unpack("<I", blob[4:8])
    header = json.loads(blob[8:8 + n].decode())
    prec = Precision.of(header["precision"])
    dt = np.dtype(prec.dtype).newbyteorder("<")
    raw = blob[8 + n:]
    if len(raw) % dt.itemsize:
        raise ValueError("truncated MCTensor blob")
    flat = np.frombuffer(raw, dtype=dt)
    shape, nc, _ = _check(header, flat.size)
    return MCTensor(flat.astype(prec.dtype).reshape(shape + (nc,)))


def to_json(x: MCTensor) -> str:
    doc = _header(x)
    doc["data"] = [float(v).hex() for v in x.data.reshape(-1)]
    return json.dumps(doc)


def from_json(text: str | dict) -> MCTensor:
    doc = json.loads(text) if isinstance(text, str) else text
    vals = doc["data"]
    shape, nc, prec = _check(doc, len(vals))
    flat = np.array([float.fromhex(v) for v in vals], dtype=np.float64).astype(prec.dtype)
    return MCTensor(flat.reshape(shape + (nc,)))


def save(x: MCTensor, path) -> None:
    """Write ``x`` to ``path``; a ``.json`` suffix selects the JSON layout."""
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(to_json(x))
    else:
        path.write_bytes(to_bytes(x))


def load(path) -> MCTensor:
    path = Path(path)
    if path.suffix == ".json":
        return from_json(path.read_text())
    return from_bytes(path.read_bytes())
