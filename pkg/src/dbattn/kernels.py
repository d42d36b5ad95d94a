"""Numeric kernels on DBFP data.

Softmax follows the four-stage engine: max, max-subtraction and shared
exponent selection, table exponentials summed over a hit histogram, and a
reciprocal-table divider.  Matrix multiply runs on integer mantissas with
exact wide accumulation; only the re-alignment across exponent groups and
the final re-encode round.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .formats import (BfpBlock, BfpConfig, DbfpTensor, decode_tensor, encode_block_int,
                      encode_tensor, encode_tensor_int, shift_round)
from .grouping import GroupingConfig, build_dbfp
from .lut import DhLut, DhLutBank, build_dh_lut_bank, lut_index


# ---------------------------------------------------------------------------
# Divider
# ---------------------------------------------------------------------------

@dataclass
class DividerConfig:
    """Reciprocal table divider.

    ``recip_table[j]`` holds ``round(2**t / (1 + j * 2**-t))`` with ``t``
    fraction bits.  ``out_fraction_bits`` trims the quotient mantissa; the
    default keeps the full product.
    """

    recip_bits: int = 10
    out_fraction_bits: Optional[int] = None
    recip_table: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not 1 <= self.recip_bits <= 24:
            raise ValueError("recip_bits must be in [1, 24]")
        t = self.recip_bits
        if self.recip_table is None:
            j = np.arange(1 << t, dtype=np.float64)
            self.recip_table = np.rint(2.0 ** t / (1.0 + j * 2.0 ** -t)).astype(np.int64)
        elif len(self.recip_table) != 1 << t:
            raise ValueError("recip_table must have 2**recip_bits entries")
        if self.out_fraction_bits is None:
            self.out_fraction_bits = t


def reciprocal(den_mantissa: int, den_exp: int, div: DividerConfig):
    """Table reciprocal of ``den_mantissa * 2**den_exp``.

    Returns ``(r, r_exp)`` with ``1/den ~= r * 2**r_exp``.  Only the ``t``
    fraction bits after the leading one index the table (truncation).
    """
    dm = int(den_mantissa)
    if dm == 0:
        raise ValueError("division by zero")
    sign = -1 if dm < 0 else 1
    a = abs(dm)
    t = div.recip_bits
    lead = a.bit_length() - 1
    idx = ((a << t) >> lead) - (1 << t)
    r = int(div.recip_table[idx])
    # den = (a / 2**lead) * 2**(den_exp + lead); 1/den = r * 2**(-t - den_exp - lead)
    return sign * r, -t - int(den_exp) - lead


def approx_divide(num, den, div: Optional[DividerConfig] = None, recip=None):
    """Divide DBFP values ``(mantissa, exponent)`` with a table reciprocal.

    ``num`` mantissas may be an array sharing one exponent.  A precomputed
    ``recip`` from :func:`reciprocal` can be passed to reuse it across a row.

    Returns:
        ``(q_mantissa, q_exp)`` so that ``num / den ~= q_mantissa * 2**q_exp``.
    """
    div = div or DividerConfig()
    nm, ne = num
    if recip is None:
        recip = reciprocal(den[0], den[1], div)
    r, r_exp = recip
    prod = np.asarray(nm, dtype=np.int64) * np.int64(r)
    shift = div.out_fraction_bits - div.recip_bits
    q = shift_round(prod, shift) if shift < 0 else prod
    q_exp = int(ne) + r_exp - min(shift, 0)
    if np.ndim(nm) == 0:
        return int(q), q_exp
    return q, q_exp


# ---------------------------------------------------------------------------
# Softmax
# ---------------------------------------------------------------------------

@dataclass
class SoftmaxOutput:
    """Result of the integer softmax path.

    ``probabilities`` are the divider quotients stored in the output BFP
    format (``output_block``); ``quotient_mantissas`` keep the full divider
    product.  ``exact_probabilities`` are the integer ratios ``e_int / sum(e_int)``
    before any division error.  ``exponent_trace`` lists the group
    exponents in table-load order.
    """

    probabilities: np.ndarray
    integer_numerators: np.ndarray
    integer_denominator: int
    shared_exponent: int
    quotient_mantissas: np.ndarray
    quotient_exponent: int
    exact_probabilities: np.ndarray
    exponent_trace: list = field(default_factory=list)
    swaps: int = 0
    shared_exponent_cancelled: bool = True
    output_block: Optional[BfpBlock] = None


def softmax_reference(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.longdouble)
    if x.size == 0:
        raise ValueError("softmax of an empty vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("softmax input must be finite")
    z = np.exp(x - x.max())
    return (z / z.sum()).astype(np.float64)


def histogram_sum(indices, lut: DhLut):
    """Sum table entries selected by ``indices`` via per-cell hit counts.

    The hit histogram is multiplied with the entry mantissas (all shifted
    onto the table's smallest exponent) and reduced, so each cell costs one
    multiply however often it is hit.

    Returns:
        ``(integer_sum, shared_exponent)``.
    """
    values, shared = _common_entries(lut)
    hist = np.bincount(np.asarray(indices, dtype=np.int64), minlength=lut.n_entries)
    return int(hist @ values), shared


def _common_entries(lut: DhLut):
    """Table entries shifted onto the smallest interval exponent (exact)."""
    if "common" not in lut._cache:
        exps = lut.entry_exponents()
        s = int(exps.min())
        lut._cache["common"] = (lut.entry_mantissas() << (exps - s), s)
    return lut._cache["common"]


def _grouped_lookup(t: DbfpTensor, y_q: np.ndarray, lut):
    """Look up every group of row 0 of ``t``; one table load per group.

    Returns per-element numerators and the hit-histogram denominator, both
    on one common exponent, plus the sequence of loaded group exponents.
    """
    parts = []
    trace = []
    for g in t.groups:
        table = lut.load(g.data.shared_exponent) if isinstance(lut, DhLutBank) else lut
        trace.append(g.data.shared_exponent)
        idx = lut_index(table, y_q[g.columns])
        values, s_t = _common_entries(table)
        hsum, _ = histogram_sum(idx, table)
        parts.append((g.columns, values[idx], hsum, s_t))
    s = min(p[3] for p in parts)
    e_int = np.zeros(y_q.size, dtype=np.int64)
    den = 0
    for cols, vals, hsum, s_t in parts:
        e_int[cols] = vals << (s_t - s)
        den += hsum << (s_t - s)
    return e_int, den, s, trace


def _finish_softmax(e_int, den, s, trace, div, integer_only, out_config):
    if integer_only:
        nm, ne, dm, de = e_int, 0, den, 0
    else:
        # 2**s-scaled operands; the divider normalizes s away
        nm, ne, dm, de = e_int, s, den, s
    recip = reciprocal(dm, de, div)
    q, q_exp = approx_divide((nm, ne), (dm, de), div, recip=recip)
    block = encode_block_int(q, q_exp, out_config)
    probs = np.ldexp(block.mantissas.astype(np.float64),
                     block.shared_exponent - out_config.fraction_bits)
    # both operands are exact in float64, so this is the correctly rounded ratio
    exact = e_int / den
    swaps = sum(1 for a, b in zip(trace, trace[1:]) if a != b)
    return SoftmaxOutput(probs, e_int, den, s, q, q_exp, exact, trace, swaps,
                         output_block=block)


def softmax_dbfp(x, lut=None, config: Optional[BfpConfig] = None,
                 grouping: Optional[GroupingConfig] = None,
                 div: Optional[DividerConfig] = None, integer_only: bool = True,
                 out_config: Optional[BfpConfig] = None) -> SoftmaxOutput:
    """Softmax of one row through the DBFP pipeline.

    Steps: max, subtract, encode the shifted row with adaptive grouping,
    table exponentials per group, renormalize to one exponent, integer sum
    via the hit histogram, divide.

    Args:
        lut: a :class:`DhLutBank` (default) loading one sub-table per group
            exponent, or a single :class:`DhLut` used for every group.
        config: encoding of the shifted inputs; clusters use
            ``config.pivot_policy`` (max by default) and outliers use max.
        grouping: grouping of the shifted inputs; ``None`` uses the default
            :class:`GroupingConfig`.  Pass ``False`` to encode one block.
        integer_only: divide the bare integers, or the ``2**s``-scaled
            values; both give bit-identical output.
        out_config: format of the stored probabilities (default 8-bit
            mantissa, max pivot).
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("softmax of an empty vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("softmax input must be finite; apply masks as large negative values")
    y = x - x.max()
    return _softmax_shifted(y, lut, config, grouping, div, integer_only, out_config,
                            decode=True)


def _softmax_shifted(y, lut, config, grouping, div, integer_only, out_config, decode):
    lut = lut if lut is not None else default_lut_bank()
    config = config or BfpConfig()
    out_config = out_config or BfpConfig()
    div = div or DividerConfig()
    if grouping is False:
        t = encode_tensor(y, config, block_size=y.size)
    else:
        t = build_dbfp(y, config, grouping, block_size=y.size)
    if decode:
        y_q = decode_tensor(t)
    else:
        # addressing only: the table index needs the value, not a tensor
        y_q = np.ldexp(t.mantissa_map()[0].astype(np.float64),
                       t.exponent_map()[0] - config.fraction_bits)
    e_int, den, s, trace = _grouped_lookup(t, np.ravel(y_q), lut)
    return _finish_softmax(e_int, den, s, trace, div, integer_only, out_config)


def softmax_dbfp_rows(scores: DbfpTensor, lut=None, config: Optional[BfpConfig] = None,
                      grouping: Optional[GroupingConfig] = None,
                      div: Optional[DividerConfig] = None,
                      out_config: Optional[BfpConfig] = None) -> list:
    """Row softmax over a DBFP tensor without decoding it.

    Max and subtraction run on exact fixed-point integers built from the
    mantissas; the shifted row is then re-grouped and fed to the tables.
    """
    mant, expo = scores.mantissa_map(), scores.exponent_map()
    outs = []
    for r in range(mant.shape[0]):
        lsb = int(expo[r].min())
        fixed = mant[r] << (expo[r] - lsb)
        diff = fixed - fixed.max()
        # exact dyadic y = diff * 2**(lsb - F); float64 holds it exactly
        y = np.ldexp(diff.astype(np.float64), lsb - scores.config.fraction_bits)
        outs.append(_softmax_shifted(y, lut, config, grouping, div, True, out_config,
                                     decode=False))
    return outs


_default_bank = None


def default_lut_bank() -> DhLutBank:
    global _default_bank
    if _default_bank is None:
        _default_bank = build_dh_lut_bank()
    return _default_bank


# ---------------------------------------------------------------------------
# Matrix multiply
# ---------------------------------------------------------------------------

def matmul_accumulate(a: DbfpTensor, b: DbfpTensor):
    """Exact products grouped by exponent, aligned to the largest one.

    ``b`` is given with its rows along the inner dimension, i.e. it encodes
    the transpose of the right operand.

    Returns:
        ``(acc, acc_exp)``: integer results and per-element exponents of
        their least significant bit.
    """
    if a.cols != b.cols:
        raise ValueError(f"inner dimensions differ: {a.cols} vs {b.cols}")
    am, ae = a.mantissa_map(), a.exponent_map()
    bm, be = b.mantissa_map(), b.exponent_map()
    fa, fb = a.config.fraction_bits, b.config.fraction_bits
    partials = {}
    present = {}
    for ea in np.unique(ae):
        ma = np.where(ae == ea, am, 0)
        ha = (ae == ea).astype(np.int64)
        for eb in np.unique(be):
            mb = np.where(be == eb, bm, 0)
            c = int(ea + eb)
            p = ma @ mb.T  # exact: int64 and |m| < 2**15
            h = (ha @ (be == eb).astype(np.int64).T) > 0
            if c in partials:
                partials[c] += p
                present[c] |= h
            else:
                partials[c] = p
                present[c] = h
    exps = sorted(partials, reverse=True)
    top = np.full(partials[exps[0]].shape, np.iinfo(np.int64).min, dtype=np.int64)
    for c in exps:
        top = np.where((top == np.iinfo(np.int64).min) & present[c], c, top)
    acc = np.zeros_like(top)
    for c in exps:
        acc += shift_round(partials[c], np.where(present[c], c - top, 0)) * present[c]
    return acc, top - fa - fb


def matmul_dbfp(a: DbfpTensor, b: DbfpTensor, out_config: Optional[BfpConfig] = None,
                block_size: Optional[int] = None) -> DbfpTensor:
    """``A @ B`` for DBFP operands, returning a DBFP tensor.

    ``b`` encodes ``B.T`` (its rows run along the inner dimension).  Group
    products are exact integer dot products scaled by ``2**(e_a + e_b)``;
    partials at different exponents are right-shifted (round half even)
    onto the largest one before the integer add.  The result is re-encoded
    per row-block with ``out_config`` (default: ``a.config``).
    """
    if len(a.shape) != 2 or len(b.shape) != 2:
        raise ValueError("matmul_dbfp expects 2-D operands")
    acc, lsb = matmul_accumulate(a, b)
    out_config = out_config or a.config
    return encode_tensor_int(acc, lsb, (a.shape[0], b.shape[0]), out_config,
                             block_size or a.block_size)


def scale_dbfp(t: DbfpTensor, factor: float, const_bits: int = 15) -> DbfpTensor:
    """Multiply a DBFP tensor by a positive constant.

    Powers of two only shift the shared exponents.  Other constants use a
    rounded fixed-point multiplier on the mantissas.
    """
    if not factor > 0:
        raise ValueError("scale factor must be positive")
    m, e = math.frexp(factor)
    if m == 0.5:
        return t.scaled(e - 1)
    c = int(round(factor * 2 ** const_bits))
    mant, expo = t.mantissa_map(), t.exponent_map()
    ints = mant * c
    return encode_tensor_int(ints, expo - t.config.fraction_bits - const_bits, t.shape,
                             t.config, t.block_size)


@dataclass
class AttentionConfig:
    """Formats used along the attention datapath."""

    input_config: BfpConfig = BfpConfig()
    score_config: BfpConfig = BfpConfig()
    prob_config: BfpConfig = BfpConfig()
    softmax_config: BfpConfig = BfpConfig()
    grouping: GroupingConfig = GroupingConfig()
    lut: object = None
    divider: DividerConfig = field(default_factory=DividerConfig)
    block_size: int = 128


def attention_forward(q, k, v, cfg: Optional[AttentionConfig] = None, return_trace: bool = False):
    """Single-head attention ``softmax(Q K^T / sqrt(d)) V`` in DBFP.

    Scores, probabilities and the output stay in block form between
    stages; only the final output is decoded.
    """
    from .formats import conversion_count

    cfg = cfg or AttentionConfig()
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ValueError("attention expects 2-D Q, K, V")
    if q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise ValueError(f"incompatible shapes Q{q.shape} K{k.shape} V{v.shape}")
    bs = cfg.block_size
    qd = encode_tensor(q, cfg.input_config, block_size=bs)
    kd = encode_tensor(k, cfg.input_config, block_size=bs)
    vtd = encode_tensor(v.T, cfg.input_config, block_size=bs)
    before = conversion_count()
    scores = matmul_dbfp(qd, kd, cfg.score_config, bs)
    scores = scale_dbfp(scores, 1.0 / math.sqrt(q.shape[1]))
    rows = softmax_dbfp_rows(scores, cfg.lut, cfg.softmax_config, cfg.grouping, cfg.divider)
    q_m = np.stack([r.quotient_mantissas for r in rows])
    q_e = np.array([[r.quotient_exponent] for r in rows])
    probs = encode_tensor_int(q_m, q_e, scores.shape, cfg.prob_config, bs)
    out = matmul_dbfp(probs, vtd, cfg.score_config, bs)
    conversions = conversion_count() - before
    if conversions:
        raise RuntimeError(f"{conversions} real conversions inside the attention datapath")
    result = decode_tensor(out)
    if return_trace:
        return result, {"scores": scores, "probs": probs, "out": out, "softmax": rows,
                        "conversions": conversions}
    return result
