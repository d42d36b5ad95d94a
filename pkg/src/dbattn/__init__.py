"""Dynamic block floating point (DBFP) arithmetic for attention."""

from .formats import (BfpBlock, BfpConfig, DbfpTensor, FloatComponents, align_to_shared,
                      bfp_error_variance, conversion_count, decode_block, decode_tensor,
                      decompose, encode_block, encode_tensor, reset_conversion_count)
from .grouping import (OUTLIER, CredalState, GroupingConfig, GroupingResult, build_dbfp,
                       fit_grouping, harden_assignment, objective_j, update_centroids,
                       update_memberships)
from .lut import (DhLut, DhLutBank, LutConfig, Partition, build_dh_lut, build_dh_lut_bank,
                  lut_lookup, lut_mae, select_best_opp)
from .kernels import (AttentionConfig, DividerConfig, SoftmaxOutput, approx_divide,
                      attention_forward, histogram_sum, matmul_dbfp, softmax_dbfp,
                      softmax_reference)
from .pipeline import (FomRecord, PipelineConfig, SimReport, compute_fom,
                       simulate_softmax_pipeline, sweep_sequence_lengths)
from .analysis import (ParetoPoint, compare_alignment_policies, empirical_error_report,
                       pareto_sweep)

__version__ = "0.1.0"
