"""Adaptive exponent grouping by evidential (credal) c-means.

Element exponents are clustered around ``k`` scalar centroids plus an
empty-set class that absorbs outliers at a fixed distance ``delta``.
The objective

    J = sum_i [ sum_j mu_ij**beta * (e_i - s_j)**2 + mu_i0**beta * delta**2 ]

is minimized by alternating the closed-form membership and centroid
updates.  Each half-step is an exact minimizer of J over its block of
variables, so J never increases.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .formats import (BfpConfig, DbfpGroup, DbfpTensor, block_ranges, element_exponents,
                      encode_block)

OUTLIER = -1


@dataclass(frozen=True)
class GroupingConfig:
    k: int = 3
    beta: float = 2.0
    delta: Union[float, str] = "auto"
    max_iters: int = 100
    tol: float = 1e-6
    objective_tol: float = 1e-10
    init: str = "quantile"
    initial_centroids: Optional[tuple] = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.beta > 1:
            raise ValueError("beta must be > 1")
        if self.delta != "auto" and not float(self.delta) > 0:
            raise ValueError("delta must be positive or 'auto'")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.init not in ("quantile", "given"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.init == "given" and self.initial_centroids is None:
            raise ValueError("init='given' requires initial_centroids")

    @classmethod
    def from_dict(cls, d: dict) -> "GroupingConfig":
        keys = ("k", "beta", "delta", "max_iters", "tol", "objective_tol", "init",
                "initial_centroids")
        unknown = set(d) - set(keys)
        if unknown:
            raise ValueError(f"unknown grouping keys: {sorted(unknown)}")
        kw = dict(d)
        if kw.get("initial_centroids") is not None:
            kw["initial_centroids"] = tuple(kw["initial_centroids"])
        return cls(**kw)


@dataclass
class CredalState:
    memberships: np.ndarray
    centroids: np.ndarray
    objective: float
    iterations: int
    delta: float
    history: list = field(default_factory=list)
    degenerate: bool = False
    converged: bool = False


@dataclass
class GroupingResult:
    state: CredalState
    hard_assignment: np.ndarray
    config: GroupingConfig
    k_reduced: bool = False


def objective_j(exponents, state_or_memberships, centroids=None, delta=None,
                beta=2.0) -> float:
    """Evaluate J for a membership matrix whose last column is the empty set.

    Accepts either a :class:`CredalState` or explicit
    ``(memberships, centroids, delta)``.  ``beta`` may be a
    :class:`GroupingConfig`.
    """
    if isinstance(state_or_memberships, CredalState):
        mu = state_or_memberships.memberships
        centroids = state_or_memberships.centroids
        delta = state_or_memberships.delta
    else:
        mu = np.asarray(state_or_memberships, dtype=np.float64)
    if isinstance(beta, GroupingConfig):
        beta = beta.beta
    e = np.asarray(exponents, dtype=np.float64)
    s = np.asarray(centroids, dtype=np.float64)
    d2 = (e[:, None] - s[None, :]) ** 2
    w = mu ** beta
    return float(np.sum(w[:, :-1] * d2) + np.sum(w[:, -1]) * float(delta) ** 2)


def update_memberships(exponents, centroids, beta: float, delta: float) -> np.ndarray:
    """Optimal memberships for fixed centroids.

    Rows with a zero distance to some centroid put all their mass, split
    equally, on the zero-distance centroids.
    """
    e = np.asarray(exponents, dtype=np.float64)
    s = np.asarray(centroids, dtype=np.float64)
    if s.size == 0:
        raise ValueError("need at least one centroid")
    d2 = (e[:, None] - s[None, :]) ** 2
    zero = d2 == 0
    p = -1.0 / (beta - 1.0)
    with np.errstate(divide="ignore"):
        w = np.where(zero, 0.0, d2 ** p)  # d**(-2/(beta-1)) == (d**2)**(-1/(beta-1))
    w_out = float(delta) ** (2 * p)
    denom = w.sum(axis=1) + w_out
    mu = np.empty((e.size, s.size + 1))
    mu[:, :-1] = w / denom[:, None]
    mu[:, -1] = w_out / denom
    hit = zero.any(axis=1)
    if np.any(hit):
        z = zero[hit].astype(np.float64)
        mu[hit, :-1] = z / z.sum(axis=1, keepdims=True)
        mu[hit, -1] = 0.0
    return mu


def update_centroids(exponents, memberships, beta: float, previous=None):
    """Weighted means of the exponents under weights ``mu**beta``.

    Returns ``(centroids, degenerate)``; a centroid with zero total weight
    keeps its previous value and sets ``degenerate``.
    """
    e = np.asarray(exponents, dtype=np.float64)
    w = np.asarray(memberships, dtype=np.float64)[:, :-1] ** beta
    tot = w.sum(axis=0)
    num = w.T @ e
    bad = tot <= 0
    if np.any(bad):
        if previous is None:
            raise ValueError("centroid with zero total weight and no previous value")
        out = np.asarray(previous, dtype=np.float64).copy()
        out[~bad] = num[~bad] / tot[~bad]
        return out, True
    return num / tot, False


def _initial_centroids(e: np.ndarray, k: int) -> np.ndarray:
    q = np.quantile(e, (np.arange(k) + 0.5) / k)
    if np.unique(q).size == k:
        return q
    u = np.unique(e)
    return u[np.round(np.linspace(0, u.size - 1, k)).astype(int)].astype(np.float64)


def fit_grouping(exponents, config: Optional[GroupingConfig] = None) -> GroupingResult:
    """Alternate membership and centroid updates until the centroids settle.

    Stops when the largest centroid move is below ``tol`` and the last full
    iteration lowered J by less than ``objective_tol``, or after
    ``max_iters`` iterations.
    """
    config = config or GroupingConfig()
    e = np.asarray(exponents, dtype=np.float64).ravel()
    if e.size == 0:
        raise ValueError("cannot group an empty exponent set")
    n_distinct = np.unique(e).size
    k = min(config.k, n_distinct)
    if config.init == "given":
        s = np.asarray(config.initial_centroids, dtype=np.float64)[:k]
    else:
        s = _initial_centroids(e, k)

    if config.delta == "auto":
        d2 = (e[:, None] - s[None, :]) ** 2
        delta = float(np.sqrt(2.0 * d2.mean()))
        if delta == 0.0:
            delta = 1.0  # all exponents equal; any positive outlier distance works
    else:
        delta = float(config.delta)

    beta = config.beta
    history = []
    degenerate = False
    mu = update_memberships(e, s, beta, delta)
    history.append(objective_j(e, mu, s, delta, beta))
    it = 0
    converged = False
    for it in range(1, config.max_iters + 1):
        s_new, deg = update_centroids(e, mu, beta, previous=s)
        degenerate |= deg
        history.append(objective_j(e, mu, s_new, delta, beta))
        shift = np.max(np.abs(s_new - s))
        s = s_new
        # history[-3] is J after the previous centroid update
        gain = history[-3] - history[-1] if len(history) >= 3 else np.inf
        if shift < config.tol and gain < config.objective_tol:
            converged = True
            break
        mu = update_memberships(e, s, beta, delta)
        history.append(objective_j(e, mu, s, delta, beta))

    state = CredalState(mu, s, history[-1], it, delta, history, degenerate, converged)
    return GroupingResult(state, harden_assignment(state), config, k_reduced=k < config.k)


def harden_assignment(state_or_memberships) -> np.ndarray:
    """Argmax of each membership row; ties go to the lowest index.

    Returns 0-based cluster ids, with :data:`OUTLIER` for rows won by the
    empty set.
    """
    mu = state_or_memberships.memberships if isinstance(state_or_memberships, CredalState) \
        else np.asarray(state_or_memberships)
    idx = np.argmax(mu, axis=1)  # argmax returns the first maximum
    return np.where(idx == mu.shape[1] - 1, OUTLIER, idx)


def group_block(values: np.ndarray, grouping: GroupingConfig) -> list:
    """Partition one block into index arrays using fitted exponent clusters.

    Zeros carry no exponent; they join the first group.  Empty clusters are
    dropped and the outlier group, if any, comes last.
    """
    exps = element_exponents(values)
    nz = values != 0
    if not np.any(nz):
        return [np.arange(values.size)], [False]
    res = fit_grouping(exps[nz], grouping)
    labels = np.full(values.size, -2, dtype=np.int64)
    labels[nz] = res.hard_assignment
    order = [g for g in range(res.state.centroids.size) if np.any(labels == g)]
    if np.any(labels == OUTLIER):
        order.append(OUTLIER)
    parts = [np.flatnonzero(labels == g) for g in order]
    zeros = np.flatnonzero(~nz)
    if zeros.size:
        parts[0] = np.sort(np.concatenate([parts[0], zeros]))
    return parts, [g == OUTLIER for g in order]


def build_dbfp(values, config: Optional[BfpConfig] = None,
               grouping: Optional[GroupingConfig] = None, block_size: int = 128) -> DbfpTensor:
    """Encode with adaptive grouping per row-block.

    Clustered groups use ``config.pivot_policy`` (median unless a config is
    given); the outlier group is aligned to its maximum exponent.
    """
    config = config or BfpConfig(pivot_policy="median")
    grouping = grouping or GroupingConfig()
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite values cannot be encoded; apply masks before encoding")
    shape = tuple(values.shape) if values.ndim else (1,)
    flat = values.reshape(1, -1) if values.ndim < 2 else values.reshape(-1, values.shape[-1])
    groups = []
    for r in range(flat.shape[0]):
        for b, (lo, hi) in enumerate(block_ranges(flat.shape[1], block_size)):
            blk = flat[r, lo:hi]
            parts, outlier = group_block(blk, grouping)
            for idx, is_out in zip(parts, outlier):
                enc = encode_block(blk[idx], config, policy="max" if is_out else None)
                groups.append(DbfpGroup(r, b, lo + idx, enc))
    return DbfpTensor(shape, block_size, groups, config)
