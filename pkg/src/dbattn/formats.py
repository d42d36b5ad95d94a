"""Block floating point (BFP) and grouped DBFP value representations.

A BFP block stores one shared exponent ``s`` and signed integer mantissas
``m``; element ``i`` decodes to ``m[i] * 2**(s - F)`` where ``F`` is the
number of fraction bits (``M - 1`` for an ``M``-bit magnitude field).
Rounding is round-half-to-even everywhere and decoding is exact.

Mantissa magnitudes are clamped to ``2**M - 1``.  Aligning an element to a
shared exponent smaller than its own (median or min pivot) can overflow the
field; such elements saturate and are counted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

PIVOT_POLICIES = ("max", "median", "min", "given")

# Number of DbfpTensor/BfpBlock -> real conversions performed through the
# public decode functions.  Used to check that cascaded kernels stay in
# block form.
_conversions = 0


def conversion_count() -> int:
    """Return how many block-to-real conversions have run so far."""
    return _conversions


def reset_conversion_count() -> None:
    global _conversions
    _conversions = 0


def _bump_conversions() -> None:
    global _conversions
    _conversions += 1


@dataclass(frozen=True)
class FloatComponents:
    sign: int
    exponent: int
    mantissa: float
    is_zero: bool = False

    def value(self) -> float:
        if self.is_zero:
            return 0.0
        return (-1.0) ** self.sign * math.ldexp(self.mantissa, self.exponent)


@dataclass(frozen=True)
class BfpConfig:
    """Bit widths and policies for BFP encoding.

    Args:
        mantissa_bits: magnitude bits ``M`` per element (a sign bit is extra).
        exponent_bits: width ``E`` of the two's complement shared exponent.
        rounding: only ``"nearest-even"`` is supported.
        pivot_policy: which element exponent becomes the shared exponent.
    """

    mantissa_bits: int = 8
    exponent_bits: int = 5
    rounding: str = "nearest-even"
    pivot_policy: str = "max"

    def __post_init__(self):
        if self.mantissa_bits < 2 or self.mantissa_bits > 15:
            raise ValueError(f"mantissa_bits must be in [2, 15], got {self.mantissa_bits}")
        if self.exponent_bits < 2 or self.exponent_bits > 8:
            raise ValueError(f"exponent_bits must be in [2, 8], got {self.exponent_bits}")
        if self.rounding != "nearest-even":
            raise ValueError(f"unsupported rounding mode {self.rounding!r}")
        if self.pivot_policy not in PIVOT_POLICIES:
            raise ValueError(f"unknown pivot policy {self.pivot_policy!r}")

    @property
    def fraction_bits(self) -> int:
        return self.mantissa_bits - 1

    @property
    def max_mantissa(self) -> int:
        return (1 << self.mantissa_bits) - 1

    @property
    def exp_min(self) -> int:
        return -(1 << (self.exponent_bits - 1))

    @property
    def exp_max(self) -> int:
        return (1 << (self.exponent_bits - 1)) - 1

    @property
    def element_bits(self) -> int:
        """Storage width of one private field: sign plus magnitude."""
        return self.mantissa_bits + 1

    def with_policy(self, policy: str) -> "BfpConfig":
        return BfpConfig(self.mantissa_bits, self.exponent_bits, self.rounding, policy)


@dataclass
class BfpBlock:
    shared_exponent: int
    mantissas: np.ndarray
    saturation_count: int = 0

    def __post_init__(self):
        self.mantissas = np.asarray(self.mantissas, dtype=np.int64)

    def __len__(self):
        return len(self.mantissas)


def decompose(x: float, config: Optional[BfpConfig] = None) -> FloatComponents:
    """Split ``x`` into sign, unbiased exponent and a mantissa in [1, 2).

    Zero maps to ``is_zero=True`` carrying the minimum exponent of
    ``config`` (default ``BfpConfig()``).
    """
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot decompose non-finite value {x!r}")
    if x == 0.0:
        cfg = config or BfpConfig()
        return FloatComponents(sign=int(math.copysign(1.0, x) < 0), exponent=cfg.exp_min,
                               mantissa=1.0, is_zero=True)
    m, e = math.frexp(abs(x))
    return FloatComponents(sign=int(x < 0), exponent=e - 1, mantissa=m * 2.0, is_zero=False)


def element_exponents(values: np.ndarray) -> np.ndarray:
    """Unbiased exponents ``floor(log2|x|)`` of each element.

    Zeros get ``np.iinfo(int64).min`` so that callers can mask them out.
    """
    values = np.asarray(values, dtype=np.float64)
    _, e = np.frexp(values)
    e = e.astype(np.int64) - 1
    e[values == 0] = np.iinfo(np.int64).min
    return e


def _check_finite(values: np.ndarray) -> None:
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite values cannot be encoded; apply masks before encoding")


def _align(values: np.ndarray, shared_exp: int, config: BfpConfig):
    """Vectorized align: returns (clamped integer mantissas, saturation mask)."""
    scaled = np.ldexp(values, config.fraction_bits - shared_exp)
    m = np.rint(scaled)  # numpy rint rounds half to even
    lim = config.max_mantissa
    sat = np.abs(m) > lim
    m = np.clip(m, -lim, lim)
    return m.astype(np.int64), sat


def align_to_shared(x: float, shared_exp: int, config: Optional[BfpConfig] = None):
    """Quantize ``x`` onto the grid of shared exponent ``shared_exp``.

    Returns:
        ``(m_int, saturated)`` where ``m_int * 2**(shared_exp - F)``
        approximates ``x``.
    """
    config = config or BfpConfig()
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot align non-finite value {x!r}")
    m, sat = _align(np.array([x]), int(shared_exp), config)
    return int(m[0]), bool(sat[0])


def select_pivot(exponents: np.ndarray, policy: str, pivot: Optional[int] = None) -> Optional[int]:
    """Pick the shared exponent from nonzero element exponents.

    Returns None when there are no nonzero elements (and no given pivot).
    """
    if policy == "given":
        if pivot is None:
            raise ValueError("pivot_policy='given' requires an explicit pivot")
        return int(pivot)
    if len(exponents) == 0:
        return None
    if policy == "max":
        return int(np.max(exponents))
    if policy == "min":
        return int(np.min(exponents))
    if policy == "median":
        srt = np.sort(exponents)
        return int(srt[(len(srt) - 1) // 2])
    raise ValueError(f"unknown pivot policy {policy!r}")


def encode_block(values, config: Optional[BfpConfig] = None, pivot: Optional[int] = None,
                 policy: Optional[str] = None) -> BfpBlock:
    """Encode a 1-D array into one block sharing a single exponent.

    ``policy`` overrides ``config.pivot_policy`` for this call.  Under the
    max policy a mantissa that rounds past ``2**M - 1`` moves the block up
    one exponent instead of saturating.  The shared
    exponent is clamped to the E-bit range; a clamp adds one to the
    saturation count, as does every clamped mantissa.
    """
    config = config or BfpConfig()
    policy = policy or config.pivot_policy
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("cannot encode an empty block")
    _check_finite(values)
    exps = element_exponents(values)
    shared = select_pivot(exps[values != 0], policy, pivot)
    if shared is None:
        return BfpBlock(config.exp_min, np.zeros(values.size, dtype=np.int64), 0)
    clamped = min(max(shared, config.exp_min), config.exp_max)
    mant, sat = _align(values, clamped, config)
    if policy == "max" and sat.any() and clamped == shared < config.exp_max:
        # rounding carried into the next binade
        shared = clamped = shared + 1
        mant, sat = _align(values, clamped, config)
    return BfpBlock(clamped, mant, int(sat.sum()) + int(clamped != shared))


def decode_block(block: BfpBlock, config: Optional[BfpConfig] = None) -> np.ndarray:
    config = config or BfpConfig()
    _bump_conversions()
    return np.ldexp(block.mantissas.astype(np.float64), block.shared_exponent - config.fraction_bits)


# ---------------------------------------------------------------------------
# Integer-domain encoding (used by kernels whose results are exact dyadics)
# ---------------------------------------------------------------------------

def shift_round(ints: np.ndarray, shift) -> np.ndarray:
    """Compute ``round_half_even(ints * 2**shift)`` on integers.

    ``shift`` may be an array.  Positive shifts are exact left shifts.
    """
    ints = np.asarray(ints, dtype=np.int64)
    shift = np.broadcast_to(np.asarray(shift, dtype=np.int64), ints.shape)
    out = np.empty_like(ints)
    left = shift >= 0
    out[left] = ints[left] << shift[left]
    r = ~left
    if np.any(r):
        n = np.minimum(-shift[r], 62)
        v = ints[r]
        q = v >> n  # floor division by 2**n
        rem = v - (q << n)
        half = np.int64(1) << (n - 1)
        up = (rem > half) | ((rem == half) & ((q & 1) == 1))
        out[r] = q + up.astype(np.int64)
    return out


def int_exponents(ints: np.ndarray, lsb_exp) -> np.ndarray:
    """Exponents of dyadic values ``ints * 2**lsb_exp`` via bit length."""
    ints = np.asarray(ints, dtype=np.int64)
    a = np.abs(ints)
    # frexp on float64 is exact for the bit length as long as |a| < 2**53
    _, bl = np.frexp(a.astype(np.float64))
    e = bl.astype(np.int64) - 1 + np.asarray(lsb_exp, dtype=np.int64)
    return np.where(a == 0, np.iinfo(np.int64).min, e)


def encode_block_int(ints, lsb_exp, config: BfpConfig, policy: Optional[str] = None) -> BfpBlock:
    """Like :func:`encode_block` for exact dyadic inputs ``ints * 2**lsb_exp``.

    Produces bit-identical results to ``encode_block`` on the same values.
    """
    policy = policy or config.pivot_policy
    ints = np.asarray(ints, dtype=np.int64).ravel()
    lsb_exp = np.broadcast_to(np.asarray(lsb_exp, dtype=np.int64), ints.shape)
    exps = int_exponents(ints, lsb_exp)
    shared = select_pivot(exps[ints != 0], policy)
    if shared is None:
        return BfpBlock(config.exp_min, np.zeros(ints.size, dtype=np.int64), 0)
    clamped = min(max(shared, config.exp_min), config.exp_max)
    m = shift_round(ints, lsb_exp + config.fraction_bits - clamped)
    lim = config.max_mantissa
    sat = np.abs(m) > lim
    if policy == "max" and sat.any() and clamped == shared < config.exp_max:
        shared = clamped = shared + 1
        m = shift_round(ints, lsb_exp + config.fraction_bits - clamped)
        sat = np.abs(m) > lim
    return BfpBlock(clamped, np.clip(m, -lim, lim), int(sat.sum()) + int(clamped != shared))


# ---------------------------------------------------------------------------
# Tensors
# ---------------------------------------------------------------------------

@dataclass
class DbfpGroup:
    """One exponent-sharing group inside a row-block of a 2-D view."""

    row: int
    block: int
    columns: np.ndarray
    data: BfpBlock


@dataclass
class DbfpTensor:
    """Grouped BFP tensor.

    The tensor is viewed as ``rows x cols`` with ``cols`` the last dimension.
    Each row is cut into contiguous blocks of ``block_size`` columns and each
    block is partitioned into groups.
    """

    shape: tuple
    block_size: int
    groups: list
    config: BfpConfig
    _maps: Optional[tuple] = field(default=None, repr=False, compare=False)

    @property
    def rows(self) -> int:
        return int(np.prod(self.shape[:-1], dtype=np.int64)) if len(self.shape) > 1 else 1

    @property
    def cols(self) -> int:
        return int(self.shape[-1])

    def _build_maps(self):
        if self._maps is None:
            mant = np.zeros((self.rows, self.cols), dtype=np.int64)
            expo = np.zeros((self.rows, self.cols), dtype=np.int64)
            for g in self.groups:
                mant[g.row, g.columns] = g.data.mantissas
                expo[g.row, g.columns] = g.data.shared_exponent
            self._maps = (mant, expo)
        return self._maps

    def mantissa_map(self) -> np.ndarray:
        """Per-element integer mantissas as a ``rows x cols`` array."""
        return self._build_maps()[0]

    def exponent_map(self) -> np.ndarray:
        """Per-element shared exponent as a ``rows x cols`` array."""
        return self._build_maps()[1]

    @property
    def saturation_count(self) -> int:
        return sum(g.data.saturation_count for g in self.groups)

    def scaled(self, k: int) -> "DbfpTensor":
        """Multiply by ``2**k`` by shifting every shared exponent."""
        groups = [DbfpGroup(g.row, g.block, g.columns,
                            BfpBlock(g.data.shared_exponent + k, g.data.mantissas,
                                     g.data.saturation_count))
                  for g in self.groups]
        return DbfpTensor(self.shape, self.block_size, groups, self.config)


def _as_2d(data: np.ndarray) -> np.ndarray:
    if data.ndim == 0:
        return data.reshape(1, 1)
    if data.ndim == 1:
        return data.reshape(1, -1)
    return data.reshape(-1, data.shape[-1])


def block_ranges(cols: int, block_size: int):
    return [(b, min(b + block_size, cols)) for b in range(0, cols, block_size)]


def _normalize_grouping(grouping, n_blocks: int, block_lens: Sequence[int]):
    """Return one list of block-local index arrays per row-block."""
    if grouping is None:
        return [[np.arange(n)] for n in block_lens]
    grouping = list(grouping)
    # a single partition (list of index lists) applies to every block
    single = len(grouping) > 0 and all(
        all(isinstance(i, (int, np.integer)) for i in g) for g in grouping)
    per_block = [grouping] * n_blocks if single else grouping
    if len(per_block) != n_blocks:
        raise ValueError(f"grouping covers {len(per_block)} blocks, tensor has {n_blocks}")
    out = []
    for part, n in zip(per_block, block_lens):
        idx = [np.asarray(p, dtype=np.int64) for p in part if len(p) > 0]
        flat = np.concatenate(idx) if idx else np.array([], dtype=np.int64)
        if flat.size != n or not np.array_equal(np.sort(flat), np.arange(n)):
            raise ValueError("grouping is not a partition of the block")
        out.append(idx)
    return out


def encode_tensor(data, config: Optional[BfpConfig] = None, grouping=None,
                  block_size: int = 128) -> DbfpTensor:
    """Encode a real tensor into row-blocks of ``block_size`` columns.

    Args:
        grouping: optional partition of each block. Either a single list of
            block-local index lists applied to every block, or a list with
            one such partition per row-block (row-major block order).
    """
    config = config or BfpConfig()
    data = np.asarray(data, dtype=np.float64)
    if data.ndim >= 1 and data.shape[-1] < 1:
        raise ValueError("last dimension must be at least 1")
    if block_size < 1:
        raise ValueError("block_size must be positive")
    _check_finite(data)
    shape = tuple(data.shape) if data.ndim else (1,)
    flat = _as_2d(data)
    ranges = block_ranges(flat.shape[1], block_size)
    parts = _normalize_grouping(grouping, flat.shape[0] * len(ranges),
                                [hi - lo for lo, hi in ranges] * flat.shape[0])
    groups = []
    bi = 0
    for r in range(flat.shape[0]):
        for b, (lo, hi) in enumerate(ranges):
            for idx in parts[bi]:
                cols = lo + idx
                groups.append(DbfpGroup(r, b, cols, encode_block(flat[r, cols], config)))
            bi += 1
    return DbfpTensor(shape, block_size, groups, config)


def encode_tensor_int(ints, lsb_exp, shape, config: BfpConfig, block_size: int = 128,
                      policy: Optional[str] = None) -> DbfpTensor:
    """Encode exact dyadic values ``ints * 2**lsb_exp`` without going through floats."""
    ints = _as_2d(np.asarray(ints, dtype=np.int64))
    lsb = np.broadcast_to(np.asarray(lsb_exp, dtype=np.int64), ints.shape)
    groups = []
    for r in range(ints.shape[0]):
        for b, (lo, hi) in enumerate(block_ranges(ints.shape[1], block_size)):
            cols = np.arange(lo, hi)
            groups.append(DbfpGroup(r, b, cols,
                                    encode_block_int(ints[r, lo:hi], lsb[r, lo:hi], config, policy)))
    return DbfpTensor(tuple(shape), block_size, groups, config)


def decode_tensor(t: DbfpTensor) -> np.ndarray:
    _bump_conversions()
    mant, expo = t.mantissa_map(), t.exponent_map()
    out = np.ldexp(mant.astype(np.float64), expo - t.config.fraction_bits)
    return out.reshape(t.shape)


def bfp_error_variance(exponent_pmf, mantissa_length: int) -> float:
    """Predicted variance of round-to-nearest BFP quantization error.

    Args:
        exponent_pmf: iterable of ``(gamma, p)`` pairs giving the probability
            that an element's block exponent is ``gamma``.
        mantissa_length: fraction bits of the block mantissa.
    """
    pmf = [(float(g), float(p)) for g, p in exponent_pmf]
    if mantissa_length < 1:
        raise ValueError("mantissa_length must be >= 1")
    if not pmf or any(p < 0 for _, p in pmf) or abs(sum(p for _, p in pmf) - 1.0) > 1e-12:
        raise ValueError("exponent PMF must be non-negative and sum to 1")
    return 2.0 ** (-2 * mantissa_length) / 12.0 * sum(p * 2.0 ** (2 * g) for g, p in pmf)
