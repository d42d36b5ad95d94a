"""Cycle counts for the streaming softmax pipeline and the hardware
figure-of-merit comparison."""
from dbattn import PipelineConfig, compute_fom, simulate_softmax_pipeline, sweep_sequence_lengths
from dbattn.pipeline import PUBLISHED_DESIGNS

# %% latency vs sequence length
for r in sweep_sequence_lengths([8, 64, 512, 4096]):
    busiest = max(r.per_stage_fraction, key=r.per_stage_fraction.get)
    print(f"seq_len {r.seq_len:5d}: {r.total_cycles:4d} cycles, busiest stage {busiest} "
          f"({r.per_stage_fraction[busiest]:.2f})")

# table reloads cost cycles
trace = [0, 0, -1, -1, 0, -2]
r = simulate_softmax_pipeline(64, PipelineConfig(lut_swap_penalty=4), exponent_trace=trace)
print(f"\nwith {r.swaps} table swaps: {r.total_cycles} cycles")

# %% figure of merit
print()
for name, n, w, lut, ff, fmax, printed in PUBLISHED_DESIGNS:
    print(f"{name:>14}: {compute_fom(fmax, n, w, lut, ff).fom:8.3f}  (reported {printed})")
