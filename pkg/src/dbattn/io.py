"""Binary containers: DBT1 (real tensors), DBF1 (DBFP tensors), DLT1 (tables).

All integers are little-endian.

DBT1: ``b"DBT1"``, u32 rank, u32 dims[rank], u8 dtype (0=f32, 1=f64),
row-major payload.

DBF1: ``b"DBF1"``, u8 M, u8 E, u8 pivot policy, u32 block_size, u32 rank,
u32 dims[rank], u32 n_groups; then per group: u32 row, u32 block,
u32 count, i8 shared_exp, u32 saturation_count, count x i16 mantissas,
count x u32 column indices.

DLT1: ``b"DLT1"``, u32 m, u32 k, f64 lo, f64 hi, u8 target length, target
name, u8 M, u8 E, u8 pivot policy, u32 grid_bits, u32 swap_latency,
m x f64 breakpoints; then per interval: u32 count, i8 shared_exp,
count x i16 mantissas.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from .formats import BfpBlock, BfpConfig, DbfpGroup, DbfpTensor
from .lut import DhLut, LutConfig, Partition, _error_bound

POLICIES = ("max", "median", "min", "given")


class FormatError(ValueError):
    """Malformed or truncated container file."""


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise FormatError("unexpected end of file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        vals = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return vals if len(vals) > 1 else vals[0]

    def array(self, dtype: str, count: int) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        return np.frombuffer(self.take(count * dt.itemsize), dtype=dt).copy()

    def magic(self, expected: bytes) -> None:
        got = self.take(4)
        if got != expected:
            raise FormatError(f"bad magic {got!r}, expected {expected!r}")

    def done(self) -> None:
        if self.pos != len(self.data):
            raise FormatError(f"{len(self.data) - self.pos} trailing bytes")


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _policy_code(policy: str) -> int:
    return POLICIES.index(policy)


def _policy(code: int) -> str:
    if code >= len(POLICIES):
        raise FormatError(f"unknown pivot policy code {code}")
    return POLICIES[code]


def _config(r: _Reader) -> BfpConfig:
    m, e, p = r.unpack("BBB")
    try:
        return BfpConfig(mantissa_bits=m, exponent_bits=e, pivot_policy=_policy(p))
    except ValueError as exc:
        raise FormatError(f"invalid format header: {exc}") from None


def _write_config(fh: BinaryIO, c: BfpConfig) -> None:
    fh.write(struct.pack("<BBB", c.mantissa_bits, c.exponent_bits, _policy_code(c.pivot_policy)))


# ---------------------------------------------------------------------------
# DBT1
# ---------------------------------------------------------------------------

def write_tensor(path, data, dtype: str = "f64") -> None:
    arr = np.asarray(data, dtype=np.float64 if dtype == "f64" else np.float32)
    if dtype not in ("f32", "f64"):
        raise ValueError("dtype must be 'f32' or 'f64'")
    with open(path, "wb") as fh:
        fh.write(b"DBT1")
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(struct.pack("<B", 0 if dtype == "f32" else 1))
        fh.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())


def read_tensor(path) -> np.ndarray:
    r = _Reader(_read_bytes(path))
    r.magic(b"DBT1")
    rank = r.unpack("I")
    if rank > 32:
        raise FormatError(f"implausible rank {rank}")
    dims = [r.unpack("I") for _ in range(rank)]
    code = r.unpack("B")
    if code not in (0, 1):
        raise FormatError(f"unknown dtype code {code}")
    n = int(np.prod(dims, dtype=np.int64))
    arr = r.array("f4" if code == 0 else "f8", n)
    r.done()
    return arr.astype(np.float64).reshape(dims)


# ---------------------------------------------------------------------------
# DBF1
# ---------------------------------------------------------------------------

def write_dbfp(path, t: DbfpTensor) -> None:
    with open(path, "wb") as fh:
        fh.write(b"DBF1")
        _write_config(fh, t.config)
        fh.write(struct.pack("<II", t.block_size, len(t.shape)))
        fh.write(struct.pack(f"<{len(t.shape)}I", *t.shape))
        fh.write(struct.pack("<I", len(t.groups)))
        for g in t.groups:
            b = g.data
            fh.write(struct.pack("<IIIbI", g.row, g.block, len(b.mantissas),
                                 b.shared_exponent, b.saturation_count))
            fh.write(np.asarray(b.mantissas, dtype="<i2").tobytes())
            fh.write(np.asarray(g.columns, dtype="<u4").tobytes())


def read_dbfp(path) -> DbfpTensor:
    r = _Reader(_read_bytes(path))
    r.magic(b"DBF1")
    config = _config(r)
    block_size, rank = r.unpack("II")
    if block_size < 1 or rank < 1 or rank > 32:
        raise FormatError("invalid block size or rank")
    shape = tuple(r.unpack("I") for _ in range(rank))
    n_groups = r.unpack("I")
    rows = int(np.prod(shape[:-1], dtype=np.int64)) if rank > 1 else 1
    cols = shape[-1]
    seen = np.zeros((rows, cols), dtype=np.int64)
    groups = []
    for _ in range(n_groups):
        row, block, count, sexp, sat = r.unpack("IIIbI")
        mant = r.array("i2", count).astype(np.int64)
        idx = r.array("u4", count).astype(np.int64)
        if row >= rows or np.any(idx >= cols) or np.any(np.abs(mant) > config.max_mantissa):
            raise FormatError("group out of range")
        if np.any(idx // block_size != block):
            raise FormatError("group columns outside their block")
        seen[row, idx] += 1
        groups.append(DbfpGroup(row, block, idx, BfpBlock(sexp, mant, sat)))
    r.done()
    if not np.all(seen == 1):
        raise FormatError("groups do not partition the tensor")
    return DbfpTensor(shape, block_size, groups, config)


# ---------------------------------------------------------------------------
# DLT1
# ---------------------------------------------------------------------------

def write_lut(path, lut: DhLut) -> None:
    c = lut.config
    name = c.target.encode()
    with open(path, "wb") as fh:
        fh.write(b"DLT1")
        fh.write(struct.pack("<IIdd", c.table_size, c.index_bits, *map(float, c.domain)))
        fh.write(struct.pack("<B", len(name)) + name)
        _write_config(fh, c.entry_format)
        fh.write(struct.pack("<II", c.grid_bits, c.swap_latency))
        fh.write(np.asarray(lut.partition.opp, dtype="<f8").tobytes())
        for b in lut.intervals:
            fh.write(struct.pack("<Ib", len(b.mantissas), b.shared_exponent))
            fh.write(np.asarray(b.mantissas, dtype="<i2").tobytes())


def read_lut(path) -> DhLut:
    r = _Reader(_read_bytes(path))
    r.magic(b"DLT1")
    m, k, lo, hi = r.unpack("IIdd")
    target = r.take(r.unpack("B")).decode(errors="replace")
    entry = _config(r)
    grid_bits, swap = r.unpack("II")
    try:
        config = LutConfig(m, k, (lo, hi), target, entry, grid_bits, swap)
        partition = Partition(r.array("f8", m))
    except ValueError as exc:
        raise FormatError(f"invalid table header: {exc}") from None
    blocks, counts = [], []
    for _ in range(m - 1):
        count, sexp = r.unpack("Ib")
        mant = r.array("i2", count).astype(np.int64)
        blocks.append(BfpBlock(sexp, mant, 0))
        counts.append(count)
    r.done()
    if sum(counts) != 1 << k:
        raise FormatError(f"table holds {sum(counts)} entries, expected {1 << k}")
    lut = DhLut(partition, np.asarray(counts, dtype=np.int64), blocks, config)
    lut.max_error = _error_bound(lut)
    return lut
