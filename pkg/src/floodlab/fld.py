"""FLD1 binary raster-stack format and the NNB1 checkpoint blob.

FLD1 layout (little-endian):
    bytes 0-3   magic "FLD1"
    u32         version (1)
    u32         nx
    u32         ny
    u32         n_snapshots
    u32         n_vars
    u8          dtype code (0 = float64)
    u8          mask flag (1 = packed mask bitmap follows)
    [bitmap]    ceil(nx*ny/8) bytes, row-major cells (j=0 row first, i fastest),
                little bit order (bit 0 of byte 0 = cell (0, 0))
    payload     float64 snapshots, time-major, variable-major, row-major

Masked cells carry quiet NaN in the payload.

NNB1 layout (little-endian):
    bytes 0-3   magic "NNB1"
    u32         version (1)
    u32         header length in bytes
    header      UTF-8 JSON: {"meta": {...}, "arrays": [{"name", "shape"}...]}
    payload     float64 arrays concatenated in header order
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ContractError, FormatError

FLD_MAGIC = b"FLD1"
FLD_VERSION = 1
BLOB_MAGIC = b"NNB1"
BLOB_VERSION = 1

_HEADER = struct.Struct("<4sIIIIIBB")


def write_fld(path, data: np.ndarray, mask: np.ndarray | None = None) -> None:
    """Write a (n_snapshots, n_vars, ny, nx) float64 stack as FLD1."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 4:
        raise ContractError(f"FLD1 payload must be 4-D (time, var, ny, nx), got shape {arr.shape}")
    n_snap, n_vars, ny, nx = arr.shape
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (ny, nx):
            raise ContractError(f"mask shape {mask.shape} does not match raster ({ny}, {nx})")
        arr = np.where(mask[None, None], arr, np.nan)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FLD_MAGIC, FLD_VERSION, nx, ny, n_snap, n_vars,
                              0, 1 if mask is not None else 0))
        if mask is not None:
            fh.write(np.packbits(mask.reshape(-1), bitorder="little").tobytes())
        fh.write(arr.astype("<f8").tobytes())


def read_fld(path):
    """Read an FLD1 file; returns (data (t, var, ny, nx), mask or None)."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise FormatError(f"{path}: truncated FLD1 header")
        magic, version, nx, ny, n_snap, n_vars, dtype_code, mask_flag = _HEADER.unpack(raw)
        if magic != FLD_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {FLD_MAGIC!r}")
        if version != FLD_VERSION:
            raise FormatError(f"{path}: unsupported FLD1 version {version}")
        if dtype_code != 0:
            raise FormatError(f"{path}: unsupported dtype code {dtype_code}")
        mask = None
        if mask_flag:
            nbytes = (nx * ny + 7) // 8
            bits = np.frombuffer(fh.read(nbytes), dtype=np.uint8)
            if bits.size != nbytes:
                raise FormatError(f"{path}: truncated mask bitmap")
            mask = np.unpackbits(bits, count=nx * ny, bitorder="little").astype(bool).reshape(ny, nx)
        count = n_snap * n_vars * ny * nx
        payload = np.frombuffer(fh.read(count * 8), dtype="<f8")
        if payload.size != count:
            raise FormatError(f"{path}: expected {count} payload values, found {payload.size}")
        data = payload.reshape(n_snap, n_vars, ny, nx).astype(np.float64)
    return data, mask


def write_blob(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write named float64 arrays plus JSON metadata as an NNB1 blob.

    Byte-deterministic for identical content: keys are written in insertion
    order with a canonical JSON encoding.
    """
    entries = []
    payload = bytearray()
    for name, arr in arrays.items():
        a = np.asarray(arr, dtype=np.float64)
        entries.append({"name": name, "shape": list(a.shape)})
        payload += a.astype("<f8").tobytes()
    header = json.dumps({"meta": meta, "arrays": entries},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(BLOB_MAGIC)
        fh.write(struct.pack("<II", BLOB_VERSION, len(header)))
        fh.write(header)
        fh.write(bytes(payload))


def read_blob(path):
    """Read an NNB1 blob; returns (meta dict, {name: array})."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != BLOB_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {BLOB_MAGIC!r}")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != BLOB_VERSION:
            raise FormatError(f"{path}: unsupported blob version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = np.frombuffer(fh.read(count * 8), dtype="<f8")
            if buf.size != count:
                raise FormatError(f"{path}: truncated array '{entry['name']}'")
            arrays[entry["name"]] = buf.reshape(shape).astype(np.float64)
    return header["meta"], arrays
