"""Beat-level timing model of the four-stage softmax engine, plus FOM.

Stages are Max, SE (shared exponent and max subtraction), Exp (table
lookups summed through an adder tree) and Div.  A row of ``seq_len``
elements enters ``B`` elements per beat.  Timing:

    total = sum(stage depths) + adder tree levels     (fill)
          + (beats - 1)                               (steady state)
          + swaps * lut_swap_penalty                  (table reload stalls)

Per-stage cycles report occupancy: each stage is busy ``depth`` cycles
per beat, the adder tree drains once in Exp, and table reload stalls are
charged to SE, which issues them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

STAGES = ("Max", "SE", "Exp", "Div")


@dataclass(frozen=True)
class PipelineConfig:
    bandwidth: int = 64
    stage_depths: tuple = (1, 2, 3, 1)
    lut_swap_penalty: int = 4

    def __post_init__(self):
        if self.bandwidth < 1:
            raise ValueError("bandwidth must be positive")
        if len(self.stage_depths) != len(STAGES) or any(d < 1 for d in self.stage_depths):
            raise ValueError("stage_depths needs four positive entries (Max, SE, Exp, Div)")
        if self.lut_swap_penalty < 0:
            raise ValueError("lut_swap_penalty must be non-negative")

    @property
    def adder_tree_levels(self) -> int:
        return math.ceil(math.log2(self.bandwidth))

    def to_dict(self) -> dict:
        return {"bandwidth": self.bandwidth, "stage_depths": list(self.stage_depths),
                "lut_swap_penalty": self.lut_swap_penalty,
                "adder_tree_levels": self.adder_tree_levels}


@dataclass
class SimReport:
    seq_len: int
    beats: int
    total_cycles: int
    fill_cycles: int
    steady_cycles: int
    stall_cycles: int
    swaps: int
    per_stage_cycles: dict
    per_stage_fraction: dict
    attention_cycles: Optional[int] = None

    def to_json(self) -> dict:
        out = {"total_cycles": self.total_cycles, "stages": dict(self.per_stage_cycles),
               "fractions": dict(self.per_stage_fraction), "swaps": self.swaps,
               "seq_len": self.seq_len, "beats": self.beats, "fill_cycles": self.fill_cycles,
               "steady_cycles": self.steady_cycles, "stall_cycles": self.stall_cycles}
        if self.attention_cycles is not None:
            out["attention_cycles"] = self.attention_cycles
        return out


def count_swaps(trace: Optional[Sequence[int]]) -> int:
    if not trace:
        return 0
    return sum(1 for a, b in zip(trace, trace[1:]) if a != b)


def simulate_softmax_pipeline(seq_len: int, cfg: Optional[PipelineConfig] = None,
                              exponent_trace: Optional[Sequence[int]] = None) -> SimReport:
    """Cycle count for one softmax row of ``seq_len`` elements."""
    cfg = cfg or PipelineConfig()
    if seq_len < 1:
        raise ValueError("seq_len must be >= 1")
    beats = -(-seq_len // cfg.bandwidth)
    levels = cfg.adder_tree_levels
    swaps = count_swaps(exponent_trace)
    stall = swaps * cfg.lut_swap_penalty
    fill = sum(cfg.stage_depths) + levels
    steady = beats - 1
    busy = {s: d * beats for s, d in zip(STAGES, cfg.stage_depths)}
    busy["Exp"] += levels
    busy["SE"] += stall
    occ = sum(busy.values())
    frac = {s: busy[s] / occ for s in STAGES}
    return SimReport(seq_len, beats, fill + steady + stall, fill, steady, stall, swaps,
                     busy, frac)


def sweep_sequence_lengths(lengths: Sequence[int], cfg: Optional[PipelineConfig] = None,
                           traces: Optional[dict] = None) -> list:
    """Simulate each length; ``attention_cycles`` extrapolates to ``seq_len`` rows."""
    if not lengths:
        raise ValueError("need at least one sequence length")
    traces = traces or {}
    out = []
    for n in lengths:
        rep = simulate_softmax_pipeline(n, cfg, traces.get(n))
        rep.attention_cycles = n * rep.total_cycles
        out.append(rep)
    return out


# ---------------------------------------------------------------------------
# Figure of merit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FomRecord:
    fmax: float
    n: int
    w: int
    lut_count: int
    ff_count: int
    fom: float
    name: str = ""


def compute_fom(fmax: float, n: int, w: int, lut_count: int, ff_count: int,
                name: str = "") -> FomRecord:
    """``fmax * n * w / (lut_count + ff_count)``; higher is better."""
    if fmax <= 0 or n <= 0 or w <= 0:
        raise ValueError("fmax, n and w must be positive")
    if lut_count < 0 or ff_count < 0 or lut_count + ff_count <= 0:
        raise ValueError("resource counts must be non-negative with a positive total")
    return FomRecord(fmax, n, w, lut_count, ff_count,
                     fmax * n * w / (lut_count + ff_count), name)


# Published FPGA softmax designs: (name, N, W, LUT, FF, Fmax MHz, printed FOM)
PUBLISHED_DESIGNS = (
    ("Xilinx FP", 8, 32, 13254, 18664, 435, 3.488),
    ("Hyft16", 8, 16, 1072, 824, 625, 42.194),
    ("Hyft32", 8, 32, 2399, 1528, 526, 34.290),
    ("TCAS-I'22", 10, 16, 1476, 698, 500, 36.798),
    ("ISCAS'23", 8, 16, 909, 333, 476, 49.056),
    ("TCAS-II'22", 1, 16, 128, 97, 588, 41.813),
    ("DBFP engine", 1024, 16, 10872, 3743, 455, 509.563),
)


def published_records() -> list:
    return [compute_fom(fmax, n, w, lut, ff, name)
            for name, n, w, lut, ff, fmax, _ in PUBLISHED_DESIGNS]
