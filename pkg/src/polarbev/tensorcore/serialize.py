"""Binary tensor files with a JSON sidecar.

Layout (all little-endian)::

    magic   4 bytes  b"PBVT"
    version u8       1
    dtype   u8       see DTYPE_CODES
    pad     u16      0
    rank    u32
    extents u64 * rank
    data    C-order payload

The sidecar ``<file>.json`` names the tensor and repeats dtype and shape so
the files can be inspected without a binary reader.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PBVT"
VERSION = 1
SCHEMA = "polarbev.tensor/1"
DTYPE_CODES = {
    np.dtype("<f8"): 1,
    np.dtype("<f4"): 2,
    np.dtype("<i8"): 3,
    np.dtype("<i4"): 4,
    np.dtype("u1"): 5,
}
_CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}


def encode(array: np.ndarray) -> bytes:
    arr = np.asarray(array)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder not in ("|",) else arr.dtype
    if dt not in DTYPE_CODES:
        raise TypeError(f"unsupported dtype {arr.dtype}")
    arr = np.ascontiguousarray(arr, dtype=dt)
    header = MAGIC + struct.pack("<BBHI", VERSION, DTYPE_CODES[dt], 0, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + arr.tobytes(order="C")


def decode(buf: bytes) -> np.ndarray:
    if buf[:4] != MAGIC:
        raise ValueError("not a tensor file (bad magic)")
    version, code, _, rank = struct.unpack_from("<BBHI", buf, 4)
    if version != VERSION:
        raise ValueError(f"unsupported tensor file version {version}")
    if code not in _CODE_DTYPES:
        raise ValueError(f"unknown dtype code {code}")
    shape = struct.unpack_from(f"<{rank}Q", buf, 12)
    offset = 12 + 8 * rank
    dtype = _CODE_DTYPES[code]
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    expected = offset + count * dtype.itemsize
    if len(buf) != expected:
        raise ValueError(f"tensor payload is {len(buf) - offset} bytes, expected {expected - offset}")
    return np.frombuffer(buf, dtype=dtype, count=count, offset=offset).reshape(shape).copy()


def save_tensor(path: str | Path, array, name: str | None = None) -> Path:
    from .tensor import Tensor

    if isinstance(array, Tensor):
        name = name or array.name
        array = array.data
    path = Path(path)
    blob = encode(array)
    path.write_bytes(blob)
    arr = np.asarray(array)
    sidecar = {
        "schema": SCHEMA,
        "name": name or path.stem,
        "dtype": str(arr.dtype),
        "shape": list(arr.shape),
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return path


def load_tensor(path: str | Path) -> np.ndarray:
    return decode(Path(path).read_bytes())


def load_named(path: str | Path) -> tuple[str, np.ndarray]:
    path = Path(path)
    side = Path(str(path) + ".json")
    name = json.loads(side.read_text())["name"] if side.exists() else path.stem
    return name, load_tensor(path)
