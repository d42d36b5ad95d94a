"""Integer softmax and a full attention head in block floating point.

Numerators come from the exp table as integers on a common exponent, so
the shared exponent cancels in the ratio and the denominator is an exact
integer sum. Division goes through a small reciprocal table.
"""
import numpy as np

from dbattn import attention_forward, softmax_dbfp, softmax_reference
from dbattn.kernels import default_lut_bank

bank = default_lut_bank()

# %% one row
x = np.random.default_rng(2).normal(0, 2, 128)
out = softmax_dbfp(x, bank)
print("integer numerators sum to the denominator:",
      int(out.integer_numerators.sum()) == out.integer_denominator)
print(f"max |p - softmax| {np.abs(out.probabilities - softmax_reference(x)).max():.4f}, "
      f"table swaps {out.swaps}")

# exact cases
print("softmax([0, 0]) =", softmax_dbfp(np.zeros(2), bank).probabilities.tolist())
print("softmax(zeros(8)) =", softmax_dbfp(np.zeros(8), bank).probabilities.tolist())

# %% attention head against float64
rng = np.random.default_rng(3)
q, k, v = (rng.normal(size=(16, 16)) for _ in range(3))
s = q @ k.T / 4.0
p = np.exp(s - s.max(1, keepdims=True))
ref = (p / p.sum(1, keepdims=True)) @ v
got = attention_forward(q, k, v)
print(f"\nattention 16x16: max |err| {np.abs(got - ref).max():.4f}")
