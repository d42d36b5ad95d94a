"""Experiment harness: LUT precision sweeps, pivot comparison, error reports."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .formats import BfpConfig, bfp_error_variance, decode_tensor, encode_tensor
from .kernels import DividerConfig, softmax_dbfp, softmax_reference
from .lut import LutConfig, build_dh_lut, build_dh_lut_bank, lut_mae, midpoint_grid


def max_workers() -> int:
    """Worker cap from ``DBFP_THREADS`` (default: CPU count)."""
    env = os.environ.get("DBFP_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def gaussian_rows(n_rows: int, length: int = 128, std: float = 2.0, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).normal(0.0, std, size=(n_rows, length))


def heavy_tailed_rows(n_rows: int, length: int = 128, sigma: float = 2.0,
                      seed: int = 0) -> np.ndarray:
    """Rows with magnitudes ``2**N(0, sigma)`` and random signs.

    The base-2 logarithm of each magnitude is normal, so element exponents
    spread with standard deviation ``sigma``.
    """
    rng = np.random.default_rng(seed)
    mag = np.exp2(rng.normal(0.0, sigma, size=(n_rows, length)))
    return mag * rng.choice([-1.0, 1.0], size=(n_rows, length))


@dataclass
class ParetoPoint:
    index_bits: int
    mae: float
    memory_bits: int
    softmax_max_err: float


def _pareto_point(k, domain, rows, table_size, entry_format, mae_grid):
    cfg = LutConfig(table_size=table_size, index_bits=k, domain=tuple(domain),
                    entry_format=entry_format)
    lut = build_dh_lut(cfg)
    bank = build_dh_lut_bank(cfg)
    err = 0.0
    for x in rows:
        out = softmax_dbfp(x, bank)
        err = max(err, float(np.max(np.abs(out.probabilities - softmax_reference(x)))))
    return ParetoPoint(k, lut_mae(lut, mae_grid), lut.memory_bits, err)


def pareto_sweep(k_range: Sequence[int] = range(4, 10), domain=(-20.0, 0.0), rows=None,
                 table_size: int = 6, entry_format: BfpConfig = BfpConfig(),
                 n_rows: int = 64, seed: int = 0) -> list:
    """Table error, memory and softmax error for each index width ``k``.

    ``rows`` defaults to ``n_rows`` Gaussian rows (std 2, length 128).
    """
    ks = list(k_range)
    if any(k < 3 or k > 12 for k in ks):
        raise ValueError("index bits must lie in [3, 12]")
    rows = gaussian_rows(n_rows, seed=seed) if rows is None else np.atleast_2d(rows)
    grid = midpoint_grid(domain[0], domain[1], 14)
    with ThreadPoolExecutor(max_workers=min(max_workers(), len(ks))) as ex:
        futs = [ex.submit(_pareto_point, k, domain, rows, table_size, entry_format, grid)
                for k in ks]
        return [f.result() for f in futs]


@dataclass
class AlignmentComparison:
    err_max: np.ndarray
    err_median: np.ndarray
    ratio: np.ndarray
    median_not_worse: float
    worst_ratio: float


def compare_alignment_policies(rows, lut=None, config: BfpConfig = BfpConfig(),
                               div: Optional[DividerConfig] = None) -> AlignmentComparison:
    """Softmax error per row with each row encoded as one block, max vs median pivot.

    ``ratio`` is ``err_max / err_median`` (1 when both are zero).
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if rows.shape[0] < 1:
        raise ValueError("need at least one row")
    lut = lut if lut is not None else build_dh_lut_bank()
    errs = {}
    for policy in ("max", "median"):
        cfg = config.with_policy(policy)
        errs[policy] = np.array([
            np.max(np.abs(softmax_dbfp(x, lut, cfg, grouping=False, div=div).probabilities
                          - softmax_reference(x)))
            for x in rows])
    e_max, e_med = errs["max"], errs["median"]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(e_med > 0, e_max / e_med, np.where(e_max > 0, np.inf, 1.0))
    return AlignmentComparison(e_max, e_med, ratio, float(np.mean(e_med <= e_max)),
                               float(np.max(ratio)))


def exponent_pmf(t) -> list:
    """Fraction of elements sharing each block exponent, as ``(gamma, p)`` pairs."""
    expo = t.exponent_map().ravel()
    vals, counts = np.unique(expo, return_counts=True)
    return [(int(v), c / expo.size) for v, c in zip(vals, counts)]


def empirical_error_report(tensor, config: BfpConfig = BfpConfig(), block_size: int = 128) -> dict:
    """Compare measured encode/decode error variance with the BFP prediction.

    The prediction uses the block-exponent PMF measured on the encoded data
    and the format's fraction bits as the mantissa length.
    """
    x = np.asarray(tensor, dtype=np.float64)
    t = encode_tensor(x, config, block_size=block_size)
    err = decode_tensor(t) - x
    pmf = exponent_pmf(t)
    predicted = bfp_error_variance(pmf, config.fraction_bits)
    measured = float(np.mean(err ** 2))
    return {
        "measured_variance": measured,
        "measured_mean": float(np.mean(err)),
        "predicted_variance": predicted,
        "ratio": measured / predicted if predicted > 0 else float("nan"),
        "exponent_pmf": [[g, p] for g, p in pmf],
        "mantissa_length": config.fraction_bits,
        "saturation_count": t.saturation_count,
        "elements": int(x.size),
    }
