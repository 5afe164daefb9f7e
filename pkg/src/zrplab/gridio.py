"""Shared on-disk formats: flat binary grids and CSV field dumps.

Binary layout (little-endian throughout):
    8 x uint64 header: magic, version, d, N, dtype code, field count,
    seed, reserved (zero).
    Then `field count` arrays of N^d values each, C order.

Dtype codes: 0 = float64, 1 = int64.
"""
from __future__ import annotations

import numpy as np

MAGIC = int.from_bytes(b"ZRPLGRID", "little")
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8")}
_CODES = {np.dtype(np.float64): 0, np.dtype(np.int64): 1}


def write_grid(path, fields, seed: int = 0) -> None:
    """Write one or more same-shape lattice fields to `path`."""
    fields = [np.ascontiguousarray(f) for f in fields]
    if not fields:
        raise ValueError("need at least one field")
    shape = fields[0].shape
    dtype = fields[0].dtype
    if any(f.shape != shape or f.dtype != dtype for f in fields):
        raise ValueError("all fields must share shape and dtype")
    if dtype not in _CODES:
        raise ValueError(f"unsupported dtype {dtype}")
    d = len(shape)
    n = shape[0]
    if shape != (n,) * d:
        raise ValueError("fields must be cubic (N,)*d arrays")
    header = np.array(
        [MAGIC, VERSION, d, n, _CODES[dtype], len(fields), np.uint64(seed), 0],
        dtype="<u8",
    )
    with open(path, "wb") as fh:
        fh.write(header.tobytes())
        for f in fields:
            fh.write(f.astype(f.dtype.newbyteorder("<"), copy=False).tobytes())


def read_grid(path):
    """Read a grid file; returns (list of arrays, meta dict)."""
    with open(path, "rb") as fh:
        header = np.frombuffer(fh.read(64), dtype="<u8")
        if header.shape[0] != 8 or int(header[0]) != MAGIC:
            raise ValueError(f"{path}: not a grid file")
        version, d, n, code, nfields, seed = (int(x) for x in header[1:7])
        if version != VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        dtype = _DTYPES[code]
        count = n**d
        fields = []
        for _ in range(nfields):
            buf = fh.read(count * dtype.itemsize)
            fields.append(np.frombuffer(buf, dtype=dtype).reshape((n,) * d).copy())
    meta = {"d": d, "N": n, "seed": seed, "fields": nfields}
    return fields, meta


def write_field_csv(path, values: np.ndarray, header_cols) -> None:
    """CSV dump of a cubic field: one row per cell, index columns then value.

    Cell coordinates are written as cell-center positions (j + 0.5)/M so
    the file is directly plottable against continuum profiles.
    """
    values = np.asarray(values)
    d = values.ndim
    m = values.shape[0]
    coords = np.indices(values.shape).reshape(d, -1).T
    centers = (coords + 0.5) / m
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header_cols) + "\n")
        flat = values.ravel()
        for row, val in zip(centers, flat):
            fh.write(",".join(repr(float(c)) for c in row) + "," + repr(float(val)) + "\n")


def write_environment_csv(path, zeta, p) -> None:
    """CSV dump of an environment: site index columns, molecule count, rate."""
    p = np.asarray(p)
    d = p.ndim
    coords = np.indices(p.shape).reshape(d, -1).T
    zflat = None if zeta is None else np.asarray(zeta).ravel()
    pflat = p.ravel()
    with open(path, "w", newline="") as fh:
        fh.write(",".join(f"x{i}" for i in range(d)) + ",zeta,p\n")
        for i, row in enumerate(coords):
            z = "" if zflat is None else str(int(zflat[i]))
            fh.write(",".join(str(int(c)) for c in row) + f",{z},{float(pflat[i])!r}\n")
