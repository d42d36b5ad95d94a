import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dbattn.formats import BfpConfig, decode_block, encode_block
from dbattn.lut import (TARGETS, DhLut, LutConfig, Partition, allocate_entries, build_dh_lut,
                        build_dh_lut_bank, lut_index, lut_lookup, lut_mae, lut_values,
                        midpoint_grid, select_best_opp, select_best_opp_indices)

getcontext().prec = 40


def dexp(x: float) -> Decimal:
    return Decimal(x).exp()


def chord_mae(f, v, a, b):
    xs = v[a:b + 1]
    chord = f[a] + (xs - v[a]) / (v[b] - v[a]) * (f[b] - f[a])
    return np.mean(np.abs(chord - f[a:b + 1]))


@pytest.fixture(scope="module")
def lut7():
    return build_dh_lut(LutConfig())


# -- breakpoint selection -----------------------------------------------------

@pytest.mark.parametrize("f", [lambda x: 3 * x - 1, lambda x: np.full_like(x, 2.0)])
def test_exact_targets_keep_uniform_partition(f):
    v = np.linspace(0, 1, 33)
    for m in (2, 3, 5, 9):
        p = select_best_opp(f, v, m)
        idx = np.searchsorted(v, p.opp)
        step = (v.size - 1) // (m - 1)
        assert idx[:-1].tolist() == [i * step for i in range(m - 1)] and idx[-1] == v.size - 1


def test_exp_m3_matches_brute_force():
    v = np.linspace(-4, 0, 16)
    f = np.exp(v)
    scores = {j: chord_mae(f, v, 0, j) + chord_mae(f, v, j, 15) for j in range(1, 15)}
    best = min(scores.values())
    idx = select_best_opp_indices(f, v, 3)
    assert scores[idx[1]] == best
    assert idx[1] == min(j for j, s in scores.items() if s == best)


def test_select_best_opp_errors():
    with pytest.raises(ValueError):
        select_best_opp("exp", [0.0, 1.0], 3)
    with pytest.raises(ValueError):
        select_best_opp("exp", [0.0, 2.0, 1.0], 2)
    with pytest.raises(ValueError):
        Partition([0.0, 0.0, 1.0])


def test_allocate_entries():
    assert allocate_entries(128, 5).tolist() == [26, 26, 26, 25, 25]
    assert allocate_entries(8, 4).tolist() == [2, 2, 2, 2]


# -- build --------------------------------------------------------------------

def test_one_interval_two_entries():
    lut = build_dh_lut(LutConfig(table_size=2, index_bits=1, domain=(-1.0, 0.0)))
    assert lut.cell_midpoints().tolist() == [-0.75, -0.25]
    ref = np.exp([-0.75, -0.25])
    assert np.all(np.abs(lut.entry_values() - ref) <= 2.0 ** (lut.intervals[0].shared_exponent - 8))


def test_structure(lut7):
    assert lut7.n_entries == 128 and lut7.counts.sum() == 128
    opp = lut7.partition.opp
    assert opp[0] == -20.0 and opp[-1] == 0.0 and np.all(np.diff(opp) > 0)
    assert lut7.memory_bits == 128 * 9


def test_entries_within_half_ulp_of_high_precision(lut7):
    mids = lut7.cell_midpoints()
    vals = lut7.entry_values()
    exps = lut7.entry_exponents()
    for x, v, e in zip(mids, vals, exps):
        err = abs(Decimal(float(v)) - dexp(float(x)))
        assert err <= Decimal(2) ** int(e - 8)


def test_entry_storage_idempotent(lut7):
    for blk in lut7.intervals:
        again = encode_block(decode_block(blk, lut7.config.entry_format), lut7.config.entry_format)
        assert again.shared_exponent == blk.shared_exponent
        assert np.array_equal(again.mantissas, blk.mantissas)


# -- lookup -------------------------------------------------------------------

def test_lookup_at_midpoint_and_clamp(lut7):
    mids = lut7.cell_midpoints()
    for c in (0, 17, 64, 127):
        e, m = lut_lookup(lut7, mids[c])
        assert (e, m) == (int(lut7.entry_exponents()[c]), int(lut7.entry_mantissas()[c]))
    assert lut_lookup(lut7, -1e6) == lut_lookup(lut7, mids[0])
    assert lut_values(lut7, -1e6)[()] == pytest.approx(math.exp(-20), abs=2.0 ** -24)
    assert lut_lookup(lut7, 1e6) == lut_lookup(lut7, mids[-1])


def test_random_lookups_within_recorded_bound(lut7):
    x = np.random.default_rng(0).uniform(-25, 0, 10_000)
    err = np.abs(lut_values(lut7, x) - np.exp(x))
    assert err.max() <= lut7.max_error


@given(st.floats(allow_nan=False, allow_infinity=True))
def test_lookup_total(x):
    e, m = lut_lookup(build_dh_lut(LutConfig(index_bits=4)), x)
    assert isinstance(e, int) and isinstance(m, int)


# -- MAE ----------------------------------------------------------------------

def test_mae_constant_target(monkeypatch):
    monkeypatch.setitem(TARGETS, "const", lambda x: np.full_like(np.asarray(x, float), 0.75))
    lut = build_dh_lut(LutConfig(target="const", index_bits=3, domain=(-2.0, 1.0)))
    assert lut_mae(lut, midpoint_grid(-2.0, 1.0, 8)) == 0.0


def test_mae_single_cell_closed_form():
    # a one-entry table over [-1, 0] holding exp(-0.5)
    cfg = LutConfig(table_size=2, index_bits=1, domain=(-1.0, 0.0))
    blk = encode_block([math.exp(-0.5)])
    lut = DhLut(Partition([-1.0, 0.0]), np.array([1]), [blk], cfg)
    c = float(decode_block(blk)[0])
    n = 256
    h = 1.0 / n
    # grid v_i = -1 + (i + 1/2) h, geometric in exp(v_i); split where exp(v_i) crosses c
    split = int(np.ceil((math.log(c) + 1) / h - 0.5))
    r = math.exp(h)
    first = math.exp(-1 + h / 2)

    def geo(a, b):  # sum_{i=a}^{b-1} exp(v_i)
        return first * (r ** b - r ** a) / (r - 1)

    total = (split * c - geo(0, split)) + (geo(split, n) - (n - split) * c)
    assert lut_mae(lut, midpoint_grid(-1.0, 0.0, 8)) == pytest.approx(total / n, rel=1e-12)


def test_mae_monotone_in_index_bits():
    grid = midpoint_grid(-20.0, 0.0, 14)
    maes = [lut_mae(build_dh_lut(LutConfig(index_bits=k)), grid) for k in range(4, 10)]
    assert all(b <= a for a, b in zip(maes, maes[1:]))
    assert maes[3] <= maes[1]  # k=7 vs k=5


def test_config_validation():
    for kw in ({"table_size": 1}, {"index_bits": 0}, {"domain": (0.0, 0.0)}, {"target": "gelu"},
               {"table_size": 10, "index_bits": 2}):
        with pytest.raises(ValueError):
            LutConfig(**kw)


# -- bank ---------------------------------------------------------------------

def test_bank_domains_and_swaps():
    bank = build_dh_lut_bank(LutConfig(index_bits=5))
    assert bank.domain_for(15) == (-20.0, 0.0)
    assert bank.domain_for(1) == (-4.0, 0.0)
    assert bank.domain_for(-3) == (-0.25, 0.0)
    t = bank.load(1)
    assert t.config.domain == (-4.0, 0.0) and t.current_exponent == 1
    bank.load(1)
    bank.load(-3)
    bank.load(1)
    assert bank.swaps == 2
    assert bank.memory_bits == 32 * 9


@settings(max_examples=30, deadline=None)
@given(st.integers(-16, 5))
def test_bank_subtable_covers_group_range(e):
    bank = build_dh_lut_bank(LutConfig(index_bits=5))
    lo, hi = bank.domain_for(e)
    assert lo >= -20.0 and hi == 0.0
    x = -np.random.default_rng(e + 100).uniform(0, min(2.0 ** (e + 1), 20), 200)
    t = bank.table_for(e)
    assert np.all(np.abs(lut_values(t, x) - np.exp(x)) <= t.max_error)


def test_index_respects_intervals(lut7):
    opp = lut7.partition.opp
    idx = lut_index(lut7, opp[:-1] + 1e-9)
    assert idx.tolist() == lut7.offsets.tolist()


def test_entry_format_override():
    lut = build_dh_lut(LutConfig(entry_format=BfpConfig(mantissa_bits=12), index_bits=5))
    assert lut.memory_bits == 32 * 13
