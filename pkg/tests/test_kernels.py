import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dbattn.formats import (conversion_count, decode_tensor, encode_tensor,
                            reset_conversion_count)
from dbattn.kernels import (DividerConfig, approx_divide, attention_forward, default_lut_bank,
                            histogram_sum, matmul_accumulate, matmul_dbfp, reciprocal, scale_dbfp,
                            softmax_dbfp, softmax_dbfp_rows, softmax_reference)
from dbattn.lut import LutConfig, build_dh_lut, lut_index

DIV = DividerConfig()


def q_value(q):
    m, e = q
    return Fraction(int(m)) * Fraction(2) ** int(e)


# -- divider ------------------------------------------------------------------

def test_recip_table_accuracy():
    t = DIV.recip_bits
    j = np.arange(1 << t)
    assert np.all(np.abs(DIV.recip_table / 2.0 ** t - 1 / (1 + j * 2.0 ** -t)) <= 2.0 ** -t)
    with pytest.raises(ValueError):
        DividerConfig(recip_bits=4, recip_table=np.ones(8))


@given(st.integers(1, 2 ** 40), st.integers(-30, 30))
def test_self_division(a, e):
    q = q_value(approx_divide((a, e), (a, e)))
    assert abs(q - 1) <= Fraction(2) ** (-DIV.recip_bits + 1)


@given(st.integers(-2 ** 40, 2 ** 40), st.integers(-30, 30), st.integers(0, 20))
def test_power_of_two_divisor_exact(a, e, k):
    assert q_value(approx_divide((a, e), (1 << k, 0))) == Fraction(a) * Fraction(2) ** (e - k)


def test_random_division_relative_error():
    rng = np.random.default_rng(0)
    worst = Fraction(0)
    for a, b in zip(rng.integers(1, 2 ** 30, 10_000), rng.integers(1, 2 ** 30, 10_000)):
        exact = Fraction(int(a), int(b))
        worst = max(worst, abs(q_value(approx_divide((int(a), 0), (int(b), 0))) - exact) / exact)
    assert worst <= Fraction(1, 2 ** 9)


def test_divide_by_zero_and_reuse():
    with pytest.raises(ValueError):
        approx_divide((1, 0), (0, 0))
    r = reciprocal(3000, -2, DIV)
    nums = np.array([5, 77, 1000])
    q, e = approx_divide((nums, 4), (3000, -2), recip=r)
    q2 = [approx_divide((int(n), 4), (3000, -2)) for n in nums]
    assert q.tolist() == [a for a, _ in q2] and all(e == b for _, b in q2)
    assert approx_divide((-6, 0), (-3, 0)) == approx_divide((6, 0), (3, 0))


# -- reference softmax ----------------------------------------------------------

def test_reference_examples():
    assert softmax_reference([0.0, 0.0]).tolist() == [0.5, 0.5]
    assert softmax_reference([math.log(2), 0.0]) == pytest.approx([2 / 3, 1 / 3], abs=1e-15)
    p = softmax_reference([0.0, -1000.0])
    assert np.all(np.isfinite(p)) and p[0] == 1.0 and p[1] < 1e-300
    x = np.random.default_rng(1).normal(0, 5, 300)
    assert abs(softmax_reference(x).sum() - 1) <= 1e-12
    with pytest.raises(ValueError):
        softmax_reference([])


# -- histogram ------------------------------------------------------------------

@pytest.fixture(scope="module")
def lut5():
    return build_dh_lut(LutConfig(index_bits=5))


def test_histogram_examples(lut5):
    vals = lut5.entry_mantissas() << (lut5.entry_exponents() - lut5.entry_exponents().min())
    assert histogram_sum(np.full(9, 7), lut5)[0] == 9 * int(vals[7])
    assert histogram_sum(np.array([], dtype=int), lut5) == (0, int(lut5.entry_exponents().min()))


@given(st.lists(st.integers(0, 31), max_size=300))
def test_histogram_equals_loop(idx):
    lut = build_dh_lut(LutConfig(index_bits=5))
    s_min = int(lut.entry_exponents().min())
    loop = 0
    for i in idx:
        loop += int(lut.entry_mantissas()[i]) << int(lut.entry_exponents()[i] - s_min)
    assert histogram_sum(np.array(idx, dtype=int), lut)[0] == loop


# -- DBFP softmax -----------------------------------------------------------------

def test_shift_by_ten_dyadic_row():
    x = np.array([0.5, -1.25, 3.0, 2.75, -6.0])
    assert np.array_equal(softmax_dbfp(x + 10).probabilities, softmax_dbfp(x).probabilities)


def test_uniform_rows():
    for n in (1, 2, 3, 4, 7, 128):
        for c in (-3.7, 0.0, 12.5):
            out = softmax_dbfp(np.full(n, c))
            assert len(set(out.integer_numerators.tolist())) == 1
            assert np.all(out.exact_probabilities == 1 / n)
            assert len(set(out.probabilities.tolist())) == 1
            if n & (n - 1) == 0:
                assert np.all(out.probabilities == 1 / n)
    assert softmax_dbfp([0.0, 0.0]).probabilities.tolist() == [0.5, 0.5]


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=1, max_size=64))
def test_shift_invariance_and_integer_identity(x):
    x = np.asarray(x)
    base = softmax_dbfp(x)
    # bit-identical whenever adding 10 does not round the max-subtracted row
    if np.array_equal((x + 10.0) - (x + 10.0).max(), x - x.max()):
        assert np.array_equal(softmax_dbfp(x + 10.0).probabilities, base.probabilities)
    scaled = softmax_dbfp(x, integer_only=False)
    assert np.array_equal(scaled.probabilities, base.probabilities)
    assert np.array_equal(scaled.quotient_mantissas, base.quotient_mantissas)
    assert int(base.integer_numerators.sum()) == base.integer_denominator
    assert abs(base.exact_probabilities.sum() - 1) <= 1e-6
    # output block error: divider (2**-9 relative) plus one half-ulp per element
    half_ulp = 2.0 ** (base.output_block.shared_exponent - 8)
    assert abs(base.probabilities.sum() - 1) <= 2.0 ** -9 + x.size * half_ulp


def test_softmax_accuracy_sample():
    rng = np.random.default_rng(2)
    for x in rng.normal(0, 2, (50, 128)):
        assert np.max(np.abs(softmax_dbfp(x).probabilities - softmax_reference(x))) <= 1e-2


def test_softmax_single_table_and_single_block():
    x = np.random.default_rng(3).normal(0, 1, 64)
    lut = build_dh_lut(LutConfig(index_bits=9))
    out = softmax_dbfp(x, lut, grouping=False)
    assert out.exponent_trace == [out.exponent_trace[0]] and out.swaps == 0
    assert np.max(np.abs(out.probabilities - softmax_reference(x))) <= 2e-2


def test_softmax_rejects_bad_input():
    with pytest.raises(ValueError):
        softmax_dbfp([])
    with pytest.raises(ValueError):
        softmax_dbfp([0.0, -np.inf])


def test_softmax_rows_match_decoded_rows():
    x = np.random.default_rng(4).normal(0, 2, (4, 32))
    t = encode_tensor(x)
    reset_conversion_count()
    rows = softmax_dbfp_rows(t)
    assert conversion_count() == 0
    xd = decode_tensor(t)
    for r, out in zip(xd, rows):
        assert np.array_equal(out.probabilities, softmax_dbfp(r).probabilities)


# -- matmul -------------------------------------------------------------------------

def test_matmul_small_exact():
    a = encode_tensor(np.array([[1.0, 2.0]]))
    b = encode_tensor(np.array([[3.0, 4.0]]))  # rows of B.T
    assert decode_tensor(matmul_dbfp(a, b)).tolist() == [[11.0]]
    with pytest.raises(ValueError):
        matmul_dbfp(a, encode_tensor(np.ones((1, 3))))


def test_accumulator_exact_against_rational_oracle():
    rng = np.random.default_rng(5)
    a = encode_tensor(rng.uniform(-1, 1, (3, 20)) * 2.0 ** rng.integers(-4, 4, (3, 20)),
                      block_size=8)
    b = encode_tensor(rng.uniform(-1, 1, (2, 20)), block_size=8)
    acc, lsb = matmul_accumulate(a, b)
    ad = [[Fraction(v) for v in row] for row in decode_tensor(a)]
    bd = [[Fraction(v) for v in row] for row in decode_tensor(b)]
    for i in range(3):
        for j in range(2):
            exact = sum(x * y for x, y in zip(ad[i], bd[j]))
            got = Fraction(int(acc[i, j])) * Fraction(2) ** int(lsb[i, j])
            # one nearest-even alignment shift per exponent pair at most
            assert abs(got - exact) <= len(np.unique(a.exponent_map()[i])) * Fraction(
                2) ** int(lsb[i, j])


def test_single_group_accumulator_is_exact():
    rng = np.random.default_rng(6)
    a = encode_tensor(rng.uniform(-1, 1, (4, 16)))
    b = encode_tensor(rng.uniform(-1, 1, (5, 16)))
    acc, lsb = matmul_accumulate(a, b)
    exact = decode_tensor(a) @ decode_tensor(b).T
    assert np.array_equal(np.ldexp(acc.astype(float), lsb), exact)


@settings(max_examples=20, deadline=None)
@given(st.integers(-4, 4), st.integers(0, 2 ** 31))
def test_matmul_scaling_equivariance(k, seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(-1, 1, (6, 10))
    b = encode_tensor(rng.uniform(-1, 1, (7, 10)))
    c0 = matmul_dbfp(encode_tensor(a), b)
    c1 = matmul_dbfp(encode_tensor(np.ldexp(a, k)), b)
    assert np.array_equal(c0.mantissa_map(), c1.mantissa_map())
    assert np.array_equal(c1.exponent_map(), c0.exponent_map() + k)


def test_matmul_order_invariance():
    rng = np.random.default_rng(7)
    a, b = rng.uniform(-1, 1, (5, 40)), rng.uniform(-1, 1, (6, 40))
    perm = rng.permutation(40)
    c0 = matmul_dbfp(encode_tensor(a), encode_tensor(b))
    c1 = matmul_dbfp(encode_tensor(a[:, perm]), encode_tensor(b[:, perm]))
    assert np.array_equal(decode_tensor(c0), decode_tensor(c1))


def test_cascade_closure():
    rng = np.random.default_rng(8)
    a, b, c = (encode_tensor(rng.uniform(-1, 1, (8, 8))) for _ in range(3))
    reset_conversion_count()
    ab = matmul_dbfp(a, b)
    abc = matmul_dbfp(ab, c)
    assert conversion_count() == 0
    assert abc.config == ab.config and abc.shape == (8, 8)


def test_scale_dbfp():
    x = np.random.default_rng(9).uniform(-1, 1, (3, 16))
    t = encode_tensor(x)
    s = scale_dbfp(t, 0.25)
    assert np.array_equal(s.mantissa_map(), t.mantissa_map())
    assert np.array_equal(s.exponent_map(), t.exponent_map() - 2)
    r = decode_tensor(scale_dbfp(t, 1 / math.sqrt(8)))
    assert np.max(np.abs(r - decode_tensor(t) / math.sqrt(8))) <= 2.0 ** -8
    with pytest.raises(ValueError):
        scale_dbfp(t, 0.0)


# -- attention ------------------------------------------------------------------------

def attention_ref(q, k, v):
    s = q @ k.T / math.sqrt(q.shape[1])
    return np.stack([softmax_reference(r) for r in s]) @ v


def test_attention_singleton():
    assert attention_forward([[1.0]], [[1.0]], [[1.0]]).tolist() == [[1.0]]


def test_attention_uniform_scores_average_rows():
    n = 8
    v = np.eye(n)
    out = attention_forward(np.zeros((n, 4)), np.ones((n, 4)), v)
    assert np.allclose(out, v.mean(axis=0), atol=2.0 ** -9)


def test_attention_random_16():
    rng = np.random.default_rng(10)
    q, k, v = (rng.normal(size=(16, 16)) for _ in range(3))
    out, trace = attention_forward(q, k, v, return_trace=True)
    assert trace["conversions"] == 0
    assert np.max(np.abs(out - attention_ref(q, k, v))) <= 3e-2


def test_attention_shape_errors():
    with pytest.raises(ValueError):
        attention_forward(np.ones((2, 3)), np.ones((2, 4)), np.ones((2, 4)))


def test_default_bank_is_shared():
    assert default_lut_bank() is default_lut_bank()
    t = default_lut_bank().table_for(0)
    assert lut_index(t, np.array([-1.0])).shape == (1,)
