"""Dynamic hierarchical lookup tables (DH-LUT).

A table covers ``[lo, hi]`` with ``m`` breakpoints (``m - 1`` intervals)
chosen greedily to minimize the piecewise-linear interpolation error of
the target function.  The ``2**k`` entries are split evenly across the
intervals, so narrow intervals are sampled more densely.  Each interval's
entries are stored as one BFP block.

Lookups are direct-indexed: a query returns the stored entry of the cell
that contains it, with out-of-domain queries clamped to the end cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .formats import BfpBlock, BfpConfig, encode_block

TARGETS: dict = {
    "exp": np.exp,
}


def _target(name: str) -> Callable:
    try:
        return TARGETS[name]
    except KeyError:
        raise ValueError(f"unknown LUT target {name!r}") from None


@dataclass(frozen=True)
class LutConfig:
    table_size: int = 6
    index_bits: int = 7
    domain: tuple = (-20.0, 0.0)
    target: str = "exp"
    entry_format: BfpConfig = BfpConfig()
    grid_bits: int = 12
    swap_latency: int = 4

    def __post_init__(self):
        if self.table_size < 2:
            raise ValueError("table_size must be >= 2")
        if self.index_bits < 1:
            raise ValueError("index_bits must be >= 1")
        lo, hi = self.domain
        if not lo < hi:
            raise ValueError("domain must satisfy lo < hi")
        if (1 << self.index_bits) < self.table_size - 1:
            raise ValueError("2**index_bits must cover every interval with at least one entry")
        if (1 << self.grid_bits) < self.table_size:
            raise ValueError("sample grid is smaller than the number of breakpoints")
        _target(self.target)


@dataclass(frozen=True)
class Partition:
    opp: np.ndarray

    def __post_init__(self):
        opp = np.asarray(self.opp, dtype=np.float64)
        if opp.ndim != 1 or opp.size < 2 or not np.all(np.diff(opp) > 0):
            raise ValueError("breakpoints must be a strictly increasing list of length >= 2")
        object.__setattr__(self, "opp", opp)


@dataclass
class DhLut:
    partition: Partition
    counts: np.ndarray
    intervals: list
    config: LutConfig
    max_error: float = math.nan
    current_exponent: Optional[int] = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_entries(self) -> int:
        return int(self.counts.sum())

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.counts)[:-1]]).astype(np.int64)

    @property
    def swap_latency(self) -> int:
        return self.config.swap_latency

    @property
    def memory_bits(self) -> int:
        return self.n_entries * self.config.entry_format.element_bits

    def cell_midpoints(self) -> np.ndarray:
        if "mid" not in self._cache:
            opp = self.partition.opp
            mids = [opp[i] + (np.arange(c) + 0.5) * (opp[i + 1] - opp[i]) / c
                    for i, c in enumerate(self.counts)]
            self._cache["mid"] = np.concatenate(mids)
        return self._cache["mid"]

    def cell_edges(self):
        """Left and right edge of every cell."""
        opp = self.partition.opp
        left, right = [], []
        for i, c in enumerate(self.counts):
            e = opp[i] + np.arange(c + 1) * (opp[i + 1] - opp[i]) / c
            e[-1] = opp[i + 1]
            left.append(e[:-1])
            right.append(e[1:])
        return np.concatenate(left), np.concatenate(right)

    def entry_mantissas(self) -> np.ndarray:
        if "mant" not in self._cache:
            self._cache["mant"] = np.concatenate([b.mantissas for b in self.intervals])
        return self._cache["mant"]

    def entry_exponents(self) -> np.ndarray:
        """Shared exponent of the interval owning each entry."""
        if "exp" not in self._cache:
            self._cache["exp"] = np.repeat([b.shared_exponent for b in self.intervals],
                                           self.counts).astype(np.int64)
        return self._cache["exp"]

    def entry_values(self) -> np.ndarray:
        return np.ldexp(self.entry_mantissas().astype(np.float64),
                        self.entry_exponents() - self.config.entry_format.fraction_bits)


def _interp_mae(f_vals: np.ndarray, v: np.ndarray, a: int, b: int) -> float:
    """MAE of the chord from index ``a`` to ``b`` over ``v[a..b]``."""
    xs = v[a:b + 1]
    t = (xs - v[a]) / (v[b] - v[a])
    chord = f_vals[a] + t * (f_vals[b] - f_vals[a])
    return float(np.mean(np.abs(chord - f_vals[a:b + 1])))


def _uniform_from(opp: list, i: int, n: int) -> None:
    """Respace breakpoints after ``i`` evenly up to the last grid index."""
    m = len(opp)
    step = (n - 1 - opp[i]) // (m - 1 - i)
    for j in range(1, m - 1 - i):
        opp[i + j] = opp[i] + j * step
    opp[m - 1] = n - 1


def select_best_opp_indices(f_vals: np.ndarray, v: np.ndarray, m: int) -> list:
    """Greedy breakpoint placement over grid indices.

    Each interior breakpoint is moved to the position between its
    neighbours that minimizes the summed interpolation MAE of its two
    adjacent segments.  The incumbent position is kept unless a candidate
    is strictly better; after a move the remaining breakpoints are respaced
    uniformly.
    """
    n = len(v)
    if n < m:
        raise ValueError(f"grid has {n} points, need at least m={m}")
    opp = [0] * m
    _uniform_from(opp, 0, n)
    for i in range(1, m - 1):
        pre, nxt = opp[i - 1], opp[i + 1]
        best = opp[i]
        best_d = _interp_mae(f_vals, v, pre, best) + _interp_mae(f_vals, v, best, nxt)
        for j in range(pre + 1, nxt):
            d = _interp_mae(f_vals, v, pre, j) + _interp_mae(f_vals, v, j, nxt)
            if d < best_d:
                best, best_d = j, d
        if best != opp[i]:
            opp[i] = best
            _uniform_from(opp, i, n)
    return opp


def select_best_opp(target, grid, m: int) -> Partition:
    """Choose ``m`` breakpoints on a sorted sample grid.

    Args:
        target: callable or registered target name evaluated on the grid.
        grid: sorted sample points ``V``.
        m: number of breakpoints (``m - 1`` intervals).
    """
    f = _target(target) if isinstance(target, str) else target
    v = np.asarray(grid, dtype=np.float64)
    if v.size < m:
        raise ValueError(f"grid has {v.size} points, need at least m={m}")
    if np.any(np.diff(v) <= 0):
        raise ValueError("grid must be strictly increasing")
    idx = select_best_opp_indices(np.asarray(f(v), dtype=np.float64), v, m)
    return Partition(v[idx])


def midpoint_grid(lo: float, hi: float, bits: int) -> np.ndarray:
    n = 1 << bits
    return lo + (np.arange(n) + 0.5) * (hi - lo) / n


def allocate_entries(n_entries: int, n_intervals: int) -> np.ndarray:
    """Even split with the remainder going to the leftmost intervals."""
    base, rem = divmod(n_entries, n_intervals)
    counts = np.full(n_intervals, base, dtype=np.int64)
    counts[:rem] += 1
    return counts


def _partition_for(config: LutConfig) -> Partition:
    lo, hi = config.domain
    grid = midpoint_grid(lo, hi, config.grid_bits)
    inner = select_best_opp(config.target, grid, config.table_size)
    # the grid lives strictly inside the domain; pin the outer breakpoints
    opp = inner.opp.copy()
    opp[0], opp[-1] = lo, hi
    return Partition(opp)


_partition_cache: dict = {}


def build_dh_lut(config: Optional[LutConfig] = None, partition: Optional[Partition] = None) -> DhLut:
    """Build a table: breakpoints, entry allocation, and BFP-stored values.

    The partition depends only on target, domain, grid and ``table_size``, so
    it is cached across builds that differ only in ``index_bits``.
    """
    config = config or LutConfig()
    if partition is None:
        key = (config.target, tuple(config.domain), config.grid_bits, config.table_size)
        if key not in _partition_cache:
            _partition_cache[key] = _partition_for(config)
        partition = _partition_cache[key]
    if partition.opp.size != config.table_size:
        raise ValueError("partition size does not match table_size")
    f = _target(config.target)
    counts = allocate_entries(1 << config.index_bits, config.table_size - 1)
    opp = partition.opp
    blocks = []
    for i, c in enumerate(counts):
        mids = opp[i] + (np.arange(c) + 0.5) * (opp[i + 1] - opp[i]) / c
        blocks.append(encode_block(f(mids), config.entry_format))
    lut = DhLut(partition, counts, blocks, config)
    lut.max_error = _error_bound(lut)
    return lut


def _error_bound(lut: DhLut) -> float:
    """Worst-case |lookup(x) - f(x)| for x <= hi, valid for monotone targets."""
    f = _target(lut.config.target)
    left, right = lut.cell_edges()
    vals = lut.entry_values()
    err = np.maximum(np.abs(f(left) - vals), np.abs(f(right) - vals))
    bound = float(err.max())
    lo = lut.partition.opp[0]
    # below the domain the target sweeps (lim_{-inf} f, f(lo)]
    tail = f(np.array([lo - 1e6, lo]))
    bound = max(bound, float(np.max(np.abs(tail - vals[0]))))
    return bound


def lut_index(lut: DhLut, x) -> np.ndarray:
    """Global cell index for each query, clamping outside the domain."""
    opp = lut.partition.opp
    x = np.clip(np.asarray(x, dtype=np.float64), opp[0], opp[-1])
    n_int = opp.size - 1
    interval = np.clip(np.searchsorted(opp, x, side="right") - 1, 0, n_int - 1)
    counts = lut.counts[interval]
    width = (opp[interval + 1] - opp[interval]) / counts
    cell = np.floor((x - opp[interval]) / width)
    cell = np.clip(np.nan_to_num(cell, nan=0.0), 0, counts - 1).astype(np.int64)
    return lut.offsets[interval] + cell


def lut_lookup(lut: DhLut, x):
    """Return the stored entry ``(shared_exponent, mantissa)`` for ``x``.

    Scalars give a pair of ints; arrays give a pair of int arrays.
    """
    idx = lut_index(lut, x)
    e, m = lut.entry_exponents()[idx], lut.entry_mantissas()[idx]
    if np.ndim(x) == 0:
        return int(e), int(m)
    return e, m


def lut_values(lut: DhLut, x) -> np.ndarray:
    """Decoded lookup results as floats."""
    return lut.entry_values()[lut_index(lut, x)]


def lut_mae(lut: DhLut, grid) -> float:
    f = _target(lut.config.target)
    v = np.asarray(grid, dtype=np.float64)
    return float(np.mean(np.abs(lut_values(lut, v) - f(v))))




@dataclass
class DhLutBank:
    """Sub-tables selected by the shared exponent of the incoming group.

    A group with shared exponent ``s`` only holds magnitudes below
    ``2**(s + 1)``, so its table covers the domain clipped to that range and
    spends all ``2**k`` entries there.  Loading a table for a different
    exponent than the current one counts as a swap.
    """

    config: LutConfig
    tables: dict = field(default_factory=dict)
    current_exponent: Optional[int] = None
    swaps: int = 0

    def domain_for(self, exponent: int) -> tuple:
        lo, hi = self.config.domain
        reach = 2.0 ** (int(exponent) + 1)
        sub = (max(lo, -reach), min(hi, reach))
        return sub if sub[0] < sub[1] else (lo, hi)

    def table_for(self, exponent: int) -> DhLut:
        dom = self.domain_for(exponent)
        if dom not in self.tables:
            cfg = LutConfig(self.config.table_size, self.config.index_bits, dom,
                            self.config.target, self.config.entry_format,
                            self.config.grid_bits, self.config.swap_latency)
            self.tables[dom] = build_dh_lut(cfg)
        return self.tables[dom]

    def load(self, exponent: int) -> DhLut:
        exponent = int(exponent)
        if self.current_exponent is not None and exponent != self.current_exponent:
            self.swaps += 1
        self.current_exponent = exponent
        table = self.table_for(exponent)
        table.current_exponent = exponent
        return table

    @property
    def memory_bits(self) -> int:
        """Storage of one loaded sub-table."""
        return (1 << self.config.index_bits) * self.config.entry_format.element_bits


def build_dh_lut_bank(config: Optional[LutConfig] = None) -> DhLutBank:
    return DhLutBank(config or LutConfig())
