"""Encoding a tensor into block floating point and back.

Every block of up to 128 values shares one exponent; each element keeps an
8-bit magnitude and a sign. The pivot policy decides which element's
exponent becomes the shared one.
"""
import numpy as np

from dbattn import BfpConfig, decode_tensor, encode_block, decode_block, encode_tensor

# %% one block, two pivot policies
x = np.array([0.011, 0.09, 0.75, 1.5, 6.0, 40.0])
for policy in ("max", "median"):
    cfg = BfpConfig(pivot_policy=policy)
    blk = encode_block(x, cfg)
    print(f"{policy:>6}: shared exp {blk.shared_exponent:3d}  mantissas {blk.mantissas.tolist()}"
          f"  saturated {blk.saturation_count}")
    print("        decoded", np.round(decode_block(blk, cfg), 4).tolist())

# The max pivot never saturates but flushes small values toward zero.
# The median pivot keeps the middle of the block precise and clamps the top.

# %% a whole tensor, with the error against float64
rng = np.random.default_rng(0)
a = rng.normal(0, 1, (4, 256))
t = encode_tensor(a)
err = decode_tensor(t) - a
print(f"\ntensor {a.shape}: {len(t.groups)} blocks, max |err| {np.abs(err).max():.2e}, "
      f"rms {np.sqrt(np.mean(err ** 2)):.2e}")
