"""Girsanov reweighting of the driftless process.

The law of the solution X^x coincides with the law of the driftless process
M^x reweighted by the exponential martingale

    D^x(t) = exp( int_0^t a(s)^T dW(s) - 1/2 int_0^t |a(s)|^2 ds ),
    a(s)   = sigma(s, M^x(s))^{-1} B(s, M^x_s),

so E f(X^x_t) is estimated by the unnormalized weighted Monte Carlo mean of
D_i f(M_i).  Weights are carried in log space; the unnormalized estimator
exponentiates directly and flags per-path overflow, while the normalized
diagnostics (effective sample size) subtract the batch maximum first so
degeneracy stays observable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .models import ModelSpec
from .paths import PathSegment, SamplePath, TimeGrid, increment_block
from .solver import (
    DEFAULT_CLIP,
    SolverConfig,
    clip_drift,
    run_chunked,
    simulate_batch,
)

__all__ = [
    "WeightError",
    "PartitionError",
    "EstimationError",
    "WeightedSample",
    "EstimatorReport",
    "girsanov_weight",
    "weighted_expectation",
    "novikov_partition",
    "ess",
]

SINGULARITY_CONDITION = 1e12


class WeightError(RuntimeError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class PartitionError(RuntimeError):
    pass


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class WeightedSample:
    """A driftless path with its log Girsanov weight and Novikov diagnostics."""

    path: SamplePath
    log_weight: float
    quad_var: float  # int_0^t |a|^2 ds
    window_exponents: tuple[float, ...] = ()
    clip_events: int = 0

    @property
    def weight(self) -> float:
        return float(np.exp(self.log_weight))


@dataclass(frozen=True)
class EstimatorReport:
    estimate: float
    stderr: float
    n: int
    ess: float
    flagged: int = 0
    seed: int = 0
    config_digest: str = ""
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0 < self.ess <= self.n + 1e-9):
            raise ValueError(f"ESS {self.ess} outside (0, {self.n}]")
        if self.stderr < 0:
            raise ValueError("standard error must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "stderr": self.stderr,
            "n": self.n,
            "ess": self.ess,
            "flagged": self.flagged,
            "seed": self.seed,
            "config_digest": self.config_digest,
        }


def _weight_terms(
    model: ModelSpec,
    states: np.ndarray,
    increments: np.ndarray,
    grid: TimeGrid,
    n_steps: int,
    clip: float = DEFAULT_CLIP,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-step weight ingredients over the first ``n_steps`` steps of a batch.

    Returns (stoch_int (N,), step_quads (N, n_steps), clip_counts (N,)) where
    step_quads[:, k] = |a_k|^2 h, plus the running stochastic integral.
    Raises WeightError if sigma is numerically singular at any step.
    """
    n_batch = states.shape[0]
    d = model.dim
    h = grid.h
    n_pre = grid.n_pre
    stoch = np.zeros(n_batch)
    step_quads = np.empty((n_batch, n_steps))
    clip_counts = np.zeros(n_batch, dtype=int)
    for k in range(n_steps):
        t = k * h
        i = n_pre + k
        seg = PathSegment(h, states[:, i - n_pre : i + 1, :])
        b, over = clip_drift(np.asarray(model.drift(t, seg), dtype=float), clip)
        clip_counts += over
        sig = model.diffusion(t, states[:, i, :])
        if d == 1:
            s_abs = np.abs(sig[..., 0, 0])
            if np.any(s_abs == 0.0):
                raise WeightError(f"sigma singular at step {k} (t={t})", step=k)
            a = b / sig[..., 0, 0, None]
        else:
            svals = np.linalg.svd(sig, compute_uv=False)
            cond = svals[..., 0] / np.where(svals[..., -1] > 0, svals[..., -1], np.inf)
            if np.any(~np.isfinite(cond)) or np.any(cond > SINGULARITY_CONDITION):
                raise WeightError(
                    f"sigma condition estimate exceeds {SINGULARITY_CONDITION:g} "
                    f"at step {k} (t={t})",
                    step=k,
                )
            a = np.linalg.solve(sig, b)
        stoch += np.einsum("nd,nd->n", a, increments[:, k, :])
        step_quads[:, k] = np.sum(a**2, axis=-1) * h
    return stoch, step_quads, clip_counts


def girsanov_weight(
    model: ModelSpec,
    path: SamplePath,
    windows: tuple[float, ...] | None = None,
    clip: float = DEFAULT_CLIP,
) -> WeightedSample:
    """Log weight of a driftless path, with per-window Novikov exponents.

    The path must have been generated with B = 0 and carry its increments.
    ``windows`` is an increasing sequence of boundaries 0 = T_0 < ... < T_m
    (default: the single window [0, T]); the i-th reported exponent is
    1/2 int_{T_{i-1}}^{T_i} |a|^2 dt.
    """
    grid = path.grid
    stoch, quads, clips = _weight_terms(
        model, path.states[None], path.increments[None], grid, grid.n_main, clip
    )
    quad_var = float(quads[0].sum())
    log_w = float(stoch[0] - 0.5 * quad_var)
    if windows is None:
        windows = (0.0, grid.T)
    idx = [grid.index_of(b) - grid.n_pre for b in windows]
    if idx[0] != 0 or idx[-1] != grid.n_main or any(
        idx[j] >= idx[j + 1] for j in range(len(idx) - 1)
    ):
        raise ValueError("windows must increase from 0 to T on the grid")
    exponents = tuple(
        0.5 * float(quads[0, idx[j] : idx[j + 1]].sum()) for j in range(len(idx) - 1)
    )
    return WeightedSample(
        path=path,
        log_weight=log_w,
        quad_var=quad_var,
        window_exponents=exponents,
        clip_events=int(clips[0]),
    )


def weighted_expectation(
    model: ModelSpec,
    x0: PathSegment,
    f,
    t: float,
    cfg: SolverConfig,
    f_bound: float | None = None,
) -> EstimatorReport:
    """Estimate E f(X^x_t) by weighted Monte Carlo over driftless paths.

    estimate = (1/N) sum_i D_i f(M_i at t); the weight accumulates over
    [0, t] only.  Paths whose weight overflows in direct exponentiation are
    excluded from the sums and counted in ``flagged`` together with complete
    underflows (weight 0), drift-clip events and |f| > f_bound exceedances
    (f values are capped at the declared bound).  A batch with no finite
    nonzero weight raises EstimationError.
    """
    grid = cfg.grid
    i_t = grid.index_of(t)
    n_steps = i_t - grid.n_pre
    if n_steps <= 0:
        raise ValueError("t must be a positive grid time")

    def chunk(start: int, stop: int):
        incr = increment_block(cfg.seed, grid, model.dim, start, stop)
        states, _ = simulate_batch(
            model, x0, grid, incr, clip=cfg.clip, driftless=True
        )
        stoch, quads, clips = _weight_terms(
            model, states, incr, grid, n_steps, cfg.clip
        )
        log_w = stoch - 0.5 * quads.sum(axis=1)
        seg = PathSegment(grid.h, states[:, i_t - grid.n_pre : i_t + 1, :])
        vals = np.asarray(f(seg), dtype=float)
        n_exceed = 0
        if f_bound is not None:
            exceed = np.abs(vals) > f_bound
            n_exceed = int(np.count_nonzero(exceed))
            vals = np.clip(vals, -f_bound, f_bound)
        with np.errstate(over="ignore"):
            w = np.exp(log_w)
        valid = np.isfinite(w)
        y = w[valid] * vals[valid]
        # zero weights (complete underflow) stay in the sums but are flagged:
        # they are degenerate samples, and a batch of only them is an error.
        flagged = int(np.count_nonzero(~valid | (w == 0.0) | (clips > 0))) + n_exceed
        return {
            "sum": float(y.sum()),
            "sumsq": float((y**2).sum()),
            "wsum": float(w[valid].sum()),
            "wsumsq": float((w[valid] ** 2).sum()),
            "n_valid": int(valid.sum()),
            "n_informative": int(np.count_nonzero(valid & (w > 0.0))),
            "n": stop - start,
            "flagged": flagged,
        }

    parts = run_chunked(cfg.n, cfg.chunk_size, cfg.workers, chunk)
    n_valid = sum(p["n_valid"] for p in parts)
    n_total = sum(p["n"] for p in parts)
    flagged = sum(p["flagged"] for p in parts)
    if n_valid == 0 or sum(p["n_informative"] for p in parts) == 0:
        raise EstimationError("all paths flagged; no informative weights")
    s = sum(p["sum"] for p in parts)
    s2 = sum(p["sumsq"] for p in parts)
    wsum = sum(p["wsum"] for p in parts)
    wsumsq = sum(p["wsumsq"] for p in parts)
    mean = s / n_valid
    var = max(s2 / n_valid - mean**2, 0.0) * (n_valid / max(n_valid - 1, 1))
    stderr = float(np.sqrt(var / n_valid))
    sample_ess = float(wsum**2 / wsumsq) if wsumsq > 0 else 1.0
    return EstimatorReport(
        estimate=float(mean),
        stderr=stderr,
        n=n_total,
        ess=min(sample_ess, float(n_total)),
        flagged=flagged,
        seed=cfg.seed,
        extras={"n_valid": n_valid},
    )


def novikov_partition(
    model: ModelSpec,
    x0: PathSegment,
    T: float,
    target: float,
    pilot_n: int,
    seed: int = 0,
    clip: float = DEFAULT_CLIP,
) -> list[float]:
    """Greedy maximal Novikov windows 0 = T_0 < ... < T_n = T.

    Uses a pilot batch of driftless paths to estimate E exp(1/2 int |a|^2 dt)
    per candidate window and extends each window as far as the estimate stays
    <= target.  This is a diagnostic, not a correctness gate: a heavier
    partition signals heavier weights at this resolution.
    """
    if target <= 1.0:
        raise ValueError("target must exceed 1")
    grid = TimeGrid(r=model.delay, T=T, h=x0.h)
    incr = increment_block(seed, grid, model.dim, 0, pilot_n)
    states, _ = simulate_batch(model, x0, grid, incr, clip=clip, driftless=True)
    _, quads, _ = _weight_terms(model, states, incr, grid, grid.n_main, clip)
    # cumulative half-exponents per path: S[:, j] = 1/2 int_0^{t_j} |a|^2
    S = np.concatenate(
        [np.zeros((pilot_n, 1)), 0.5 * np.cumsum(quads, axis=1)], axis=1
    )
    log_target = np.log(target)
    boundaries = [0.0]
    k0 = 0
    while k0 < grid.n_main:
        # log E exp(S_j - S_k0) is nondecreasing in j; extend while <= target
        j = k0
        while j + 1 <= grid.n_main:
            m = logsumexp(S[:, j + 1] - S[:, k0]) - np.log(pilot_n)
            if m > log_target:
                break
            j += 1
        if j == k0:
            raise PartitionError(
                f"single step at t={k0 * grid.h:g} already exceeds the Novikov "
                f"target {target:g}; model too singular at this resolution"
            )
        boundaries.append(j * grid.h)
        k0 = j
    boundaries[-1] = T
    return boundaries


def ess(weights) -> float:
    """(sum w)^2 / sum w^2 for nonnegative, not-all-zero weights."""
    w = np.asarray(weights, dtype=float)
    if w.size == 0:
        raise ValueError("ess needs at least one weight")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    denom = float((w**2).sum())
    if denom == 0.0:
        raise ValueError("all weights are zero")
    return float(w.sum() ** 2 / denom)


def log_ess(log_weights) -> float:
    """ESS from log weights, stabilized by subtracting the batch maximum."""
    lw = np.asarray(log_weights, dtype=float)
    if lw.size == 0:
        raise ValueError("ess needs at least one weight")
    shifted = lw - lw.max()
    return float(np.exp(2.0 * logsumexp(shifted) - logsumexp(2.0 * shifted)))
