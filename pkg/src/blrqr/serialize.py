"""BLR1 binary dump format.

Layout: magic ``BLR1``, little-endian u64 m, n, b, then p*q block records in
row-major grid order.  Each record is a tag byte (0 dense, 1 low-rank); dense
records carry b*b little-endian f64 values, low-rank records a u64 rank
followed by b*rank u-values and b*rank v-values (row-major).
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from .core import BlrMatrix, BlrStructure, LowRankBlock, is_lowrank

MAGIC = b"BLR1"

__all__ = ["dump_blr1", "load_blr1", "dumps_blr1"]


def _write_f64(fh: BinaryIO, arr: np.ndarray) -> None:
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def dump_blr1(a: BlrMatrix, fh: BinaryIO) -> None:
    s = a.structure
    fh.write(MAGIC)
    fh.write(struct.pack("<QQQ", s.m, s.n, s.b))
    for row in a.blocks:
        for blk in row:
            if is_lowrank(blk):
                fh.write(b"\x01")
                fh.write(struct.pack("<Q", blk.rank))
                _write_f64(fh, blk.u)
                _write_f64(fh, blk.v)
            else:
                fh.write(b"\x00")
                _write_f64(fh, blk)


def dumps_blr1(a: BlrMatrix) -> bytes:
    import io

    buf = io.BytesIO()
    dump_blr1(a, buf)
    return buf.getvalue()


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ValueError("truncated BLR1 stream")
    return data


def _read_f64(fh: BinaryIO, shape: tuple[int, int]) -> np.ndarray:
    count = shape[0] * shape[1]
    data = _read_exact(fh, 8 * count)
    return np.frombuffer(data, dtype="<f8").reshape(shape).copy()


def load_blr1(fh: BinaryIO) -> BlrMatrix:
    if _read_exact(fh, 4) != MAGIC:
        raise ValueError("not a BLR1 stream")
    m, n, b = struct.unpack("<QQQ", _read_exact(fh, 24))
    p, q = m // b, n // b
    admissible = np.zeros((p, q), dtype=bool)
    blocks = []
    for i in range(p):
        row = []
        for j in range(q):
            tag = _read_exact(fh, 1)[0]
            if tag == 0:
                row.append(_read_f64(fh, (b, b)))
            elif tag == 1:
                (rank,) = struct.unpack("<Q", _read_exact(fh, 8))
                u = _read_f64(fh, (b, rank))
                v = _read_f64(fh, (b, rank))
                row.append(LowRankBlock(u, v))
                admissible[i, j] = True
            else:
                raise ValueError(f"bad block tag {tag} at cell ({i},{j})")
        blocks.append(row)
    d = min(p, q)
    if d and admissible[np.arange(d), np.arange(d)].any():
        raise ValueError("BLR1 stream has a low-rank diagonal block")
    return BlrMatrix(BlrStructure(m, n, b, admissible), blocks)
