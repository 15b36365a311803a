"""Binary containers.

VBDS (data matrix)::

    b"VBDS" | version u16 | rows u64 | cols u64 | rows*cols float64, row-major

VBNN (network)::

    b"VBNN" | version u16 | spec_len u32 | spec JSON (utf-8) | n_tensors u32 |
    per tensor: name_len u16 | name | ndim u8 | shape u64 * ndim | float64 data

All integers and floats are little-endian.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

VBDS_MAGIC = b"VBDS"
VBNN_MAGIC = b"VBNN"
VERSION = 1


def write_vbds(path, matrix) -> None:
    matrix = np.ascontiguousarray(matrix, dtype="<f8")
    if matrix.ndim != 2:
        raise ValueError("VBDS stores 2-D matrices only")
    with open(path, "wb") as fh:
        fh.write(VBDS_MAGIC + struct.pack("<HQQ", VERSION, *matrix.shape))
        fh.write(matrix.tobytes())


def read_vbds(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing data file {path}")
    raw = path.read_bytes()
    if raw[:4] != VBDS_MAGIC:
        raise DataError(f"{path}: not a VBDS file")
    version, rows, cols = struct.unpack_from("<HQQ", raw, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported VBDS version {version}")
    body = raw[22:]
    if len(body) != rows * cols * 8:
        raise DataError(f"{path}: truncated payload")
    return np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(np.float64)


def write_csv_matrix(path, matrix, header=None) -> None:
    matrix = np.asarray(matrix, dtype=np.float64)
    with open(path, "w") as fh:
        if header:
            fh.write(",".join(header) + "\n")
        for row in matrix:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_csv_matrix(path) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2, comments="#",
                          skiprows=_header_rows(path))
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from exc


def _header_rows(path) -> int:
    with open(path) as fh:
        first = fh.readline().split(",")[0].strip()
    try:
        float(first)
        return 0
    except ValueError:
        return 1


def save_network(network, path) -> None:
    spec = json.dumps(network.spec(), sort_keys=True).encode()
    tensors = list(network.named_params())
    with open(path, "wb") as fh:
        fh.write(VBNN_MAGIC + struct.pack("<HI", VERSION, len(spec)) + spec)
        fh.write(struct.pack("<I", len(tensors)))
        for name, value in tensors:
            encoded = name.encode()
            fh.write(struct.pack("<H", len(encoded)) + encoded)
            fh.write(struct.pack("<B", value.ndim) + struct.pack(f"<{value.ndim}Q", *value.shape))
            fh.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def load_network(path):
    from .neural.network import Network

    path = Path(path)
    if not path.exists():
        raise DataError(f"missing model file {path}")
    raw = path.read_bytes()
    if raw[:4] != VBNN_MAGIC:
        raise DataError(f"{path}: not a VBNN file")
    version, spec_len = struct.unpack_from("<HI", raw, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported VBNN version {version}")
    pos = 10
    spec = json.loads(raw[pos:pos + spec_len])
    pos += spec_len
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    params = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos:pos + name_len].decode()
        pos += name_len
        (ndim,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}Q", raw, pos)
        pos += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        params[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    return Network.from_spec(spec, params)
