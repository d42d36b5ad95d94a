"""A non-uniform lookup table for exp on the softmax input range.

The greedy breakpoint search puts short intervals where exp bends most and
spreads the entries evenly across intervals.
"""
import numpy as np

from dbattn import LutConfig, build_dh_lut, lut_mae
from dbattn.lut import lut_values

grid = np.linspace(-20, 0, 1 << 14)
for k in (4, 5, 6, 7, 8):
    lut = build_dh_lut(LutConfig(index_bits=k))
    print(f"k={k}: {lut.n_entries:4d} entries, {lut.memory_bits:5d} bits, "
          f"MAE {lut_mae(lut, grid):.2e}, max err {lut.max_error:.2e}")

lut = build_dh_lut(LutConfig(index_bits=6))
print("\nbreakpoints", np.round(lut.partition.opp, 3).tolist())
print("entries per interval", lut.counts.tolist())

for x in (-0.1, -1.0, -4.0, -12.0):
    print(f"exp({x:6.1f}) = {np.exp(x):.5f}  table {lut_values(lut, np.array([x]))[0]:.5f}")
