"""Matrix products that stay in block form, and how their error compares
with the analytic quantization variance."""
import numpy as np

from dbattn import (bfp_error_variance, conversion_count, decode_tensor, encode_tensor,
                    matmul_dbfp, reset_conversion_count)
from dbattn.analysis import empirical_error_report, exponent_pmf

rng = np.random.default_rng(4)
A, B, C = (rng.uniform(-1, 1, (64, 64)) for _ in range(3))
a, bt, ct = encode_tensor(A), encode_tensor(B.T), encode_tensor(C.T)

# %% a chain of products without leaving the format
reset_conversion_count()
abc = matmul_dbfp(matmul_dbfp(a, bt), ct)
print("float conversions inside the chain:", conversion_count())
ref = A @ B @ C
print(f"relative rms error of (AB)C: {np.sqrt(np.mean((decode_tensor(abc) - ref) ** 2)) / ref.std():.2e}")

# %% measured vs predicted error of one product
c = matmul_dbfp(a, bt)
measured = np.mean((decode_tensor(c) - A @ B) ** 2)
F = 7
predicted = (64 * (bfp_error_variance(exponent_pmf(a), F) * np.mean(B ** 2)
                   + bfp_error_variance(exponent_pmf(bt), F) * np.mean(A ** 2))
             + bfp_error_variance(exponent_pmf(c), F))
print(f"error variance measured {measured:.3e}, predicted {predicted:.3e}")

# %% encoding error alone
rep = empirical_error_report(rng.uniform(1, 2, (200, 128)))
print(f"encode only: measured {rep['measured_variance']:.3e}, "
      f"predicted {rep['predicted_variance']:.3e}, ratio {rep['ratio']:.3f}")
