"""Euler-Maruyama integration of the delay equation and its driftless twin.

The explicit scheme evaluates the drift at the left endpoint with the full
segment and the diffusion at the left-endpoint state:

    X(t_{k+1}) = X(t_k) + B(t_k, X_{t_k}) h + sigma(t_k, X(t_k)) dW_k

with X on [-r, 0] pinned to the initial segment.  The delayed reads are
exact grid reads (TimeGrid enforces divisibility), which is what makes the
discontinuous-drift counterexample reproduce its closed forms exactly at
zero noise.

Everything integrates whole replicate batches at once; Monte Carlo entry
points split the replicate range into fixed chunks and reduce the per-chunk
partial sums in replicate order, so results are identical for any worker
count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .models import ModelSpec
from .paths import (
    BrownianDriver,
    PathSegment,
    SamplePath,
    TimeGrid,
    increment_block,
)

__all__ = [
    "SolverConfig",
    "CoupledPair",
    "IntegrationError",
    "euler_maruyama",
    "driftless_path",
    "coupled_paths",
    "simulate_batch",
    "direct_expectation",
    "run_chunked",
]

DEFAULT_CLIP = 1e12
DEFAULT_CHUNK = 8192


class IntegrationError(RuntimeError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


def clip_drift(b: np.ndarray, clip: float) -> tuple[np.ndarray, np.ndarray]:
    """Cap the Euclidean drift magnitude at ``clip``; returns (values, mask).

    Non-finite components (a singular pointwise drift evaluated at its pole)
    are first capped componentwise, then the vector is rescaled onto the
    clip radius.  The mask marks every capped evaluation.
    """
    finite = np.all(np.isfinite(b), axis=-1)
    b = np.nan_to_num(b, nan=0.0, posinf=clip, neginf=-clip)
    norm = np.sqrt(np.sum(b**2, axis=-1))
    over = norm > clip
    if np.any(over):
        scale = np.where(over, clip / np.maximum(norm, clip), 1.0)
        b = b * scale[..., None]
    return b, over | ~finite


@dataclass(frozen=True)
class SolverConfig:
    """Grid, seed, replicate count and drift clip threshold for one batch."""

    grid: TimeGrid
    seed: int = 0
    n: int = 1
    clip: float = DEFAULT_CLIP
    # Replicates per chunk; fixed chunking keeps the floating-point reduction
    # order independent of the worker count.
    chunk_size: int = DEFAULT_CHUNK
    workers: int = 1

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("replicate count N must be >= 1")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")


@dataclass(frozen=True)
class CoupledPair:
    """Two solutions driven by the identical Brownian increments."""

    first: SamplePath
    second: SamplePath

    def __post_init__(self):
        if self.first.increments.shape != self.second.increments.shape or not np.array_equal(
            self.first.increments, self.second.increments
        ):
            raise ValueError("coupled paths must share identical increments")


def _check_initial_segment(model: ModelSpec, x0: PathSegment, grid: TimeGrid) -> None:
    if abs(x0.h - grid.h) > 1e-12 * max(1.0, grid.h):
        raise ValueError(f"initial segment spacing {x0.h} does not match grid h {grid.h}")
    if x0.n_pre != grid.n_pre:
        raise ValueError(
            f"initial segment has {x0.n_pre} steps, grid delay window has {grid.n_pre}"
        )
    if x0.dim != model.dim:
        raise ValueError(f"initial segment dimension {x0.dim} != model dimension {model.dim}")


def simulate_batch(
    model: ModelSpec,
    x0: PathSegment,
    grid: TimeGrid,
    increments: np.ndarray,
    clip: float = DEFAULT_CLIP,
    driftless: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Integrate a batch of replicates sharing the initial segment.

    ``increments`` has shape (N, n_main, d).  Returns (states, clip_counts)
    with states of shape (N, n_nodes, d).  Raises IntegrationError with the
    failing step index if a non-finite state appears.
    """
    _check_initial_segment(model, x0, grid)
    incr = np.asarray(increments, dtype=float)
    n_batch = incr.shape[0]
    d = model.dim
    if incr.shape[1:] != (grid.n_main, d):
        raise ValueError(f"increments shape {incr.shape} != (N, {grid.n_main}, {d})")

    n_pre = grid.n_pre
    h = grid.h
    states = np.empty((n_batch, grid.n_nodes, d))
    states[:, : n_pre + 1] = x0.values[None, :, :]
    clip_counts = np.zeros(n_batch, dtype=int)

    for k in range(grid.n_main):
        t = k * h
        i = n_pre + k
        x = states[:, i, :]
        if driftless:
            b = 0.0
        else:
            seg = PathSegment(h, states[:, i - n_pre : i + 1, :])
            # Cap runaway drift magnitudes; the event count keeps estimator
            # bias visible instead of silently poisoning the batch.
            b, over = clip_drift(model.drift(t, seg), clip)
            clip_counts += over
        sig = model.diffusion(t, x)
        noise = np.einsum("...ij,...j->...i", sig, incr[:, k, :])
        nxt = x + b * h + noise
        if not np.all(np.isfinite(nxt)):
            raise IntegrationError(f"non-finite state at step {k} (t={t})", step=k)
        states[:, i + 1, :] = nxt
    return states, clip_counts


def _single_path(
    model: ModelSpec,
    x0: PathSegment,
    cfg: SolverConfig,
    driver: BrownianDriver | None,
    increments: np.ndarray | None,
    driftless: bool,
) -> SamplePath:
    grid = cfg.grid
    if increments is None:
        if driver is None:
            driver = BrownianDriver(cfg.seed, 0, grid)
        incr = driver.increments(model.dim)
    else:
        incr = np.asarray(increments, dtype=float)
    states, clips = simulate_batch(
        model, x0, grid, incr[None, :, :], clip=cfg.clip, driftless=driftless
    )
    n_clip = int(clips[0])
    return SamplePath(grid, states[0], incr, clip_events=n_clip, flagged=n_clip > 0)


def euler_maruyama(
    model: ModelSpec,
    x0: PathSegment,
    cfg: SolverConfig,
    driver: BrownianDriver | None = None,
    increments: np.ndarray | None = None,
) -> SamplePath:
    """One explicit Euler-Maruyama trajectory.

    Noise comes from ``driver`` (counter-based, reproducible) unless an
    explicit ``increments`` array of shape (n_main, d) is prescribed.
    """
    return _single_path(model, x0, cfg, driver, increments, driftless=False)


def driftless_path(
    model: ModelSpec,
    x0: PathSegment,
    cfg: SolverConfig,
    driver: BrownianDriver | None = None,
    increments: np.ndarray | None = None,
) -> SamplePath:
    """Same scheme with the drift forced to zero: dM = sigma(t, M) dW."""
    return _single_path(model, x0, cfg, driver, increments, driftless=True)


def coupled_paths(
    model: ModelSpec,
    x0: PathSegment,
    y0: PathSegment,
    cfg: SolverConfig,
    driver: BrownianDriver | None = None,
    increments: np.ndarray | None = None,
) -> CoupledPair:
    """Two trajectories from x0 and y0 consuming the identical increment stream."""
    if x0.values.shape != y0.values.shape:
        raise ValueError("x0 and y0 must share grid and dimension")
    if increments is None:
        if driver is None:
            driver = BrownianDriver(cfg.seed, 0, cfg.grid)
        increments = driver.increments(model.dim)
    first = euler_maruyama(model, x0, cfg, increments=increments)
    second = euler_maruyama(model, y0, cfg, increments=increments)
    return CoupledPair(first, second)


# ---------------------------------------------------------------------------
# Chunked Monte Carlo execution
# ---------------------------------------------------------------------------


def run_chunked(n: int, chunk_size: int, workers: int, fn):
    """Apply fn(start, stop) to fixed replicate chunks; results in chunk order.

    The chunk boundaries depend only on (n, chunk_size), never on the worker
    count, and the returned list is ordered by chunk index, so any reduction
    over it is reproducible for any ``workers``.
    """
    bounds = [(s, min(s + chunk_size, n)) for s in range(0, n, chunk_size)]
    if workers <= 1 or len(bounds) <= 1:
        return [fn(s, e) for s, e in bounds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda se: fn(*se), bounds))


def mc_mean(values_by_chunk) -> tuple[float, float, int]:
    """Mean, standard error and count from per-chunk (sum, sumsq, n) triples."""
    s = sum(v[0] for v in values_by_chunk)
    s2 = sum(v[1] for v in values_by_chunk)
    n = sum(v[2] for v in values_by_chunk)
    if n == 0:
        raise ValueError("no samples")
    mean = s / n
    var = max(s2 / n - mean**2, 0.0) * (n / max(n - 1, 1))
    return mean, float(np.sqrt(var / n)), n


def direct_expectation(
    model: ModelSpec,
    x0: PathSegment,
    f,
    t: float,
    cfg: SolverConfig,
):
    """Unweighted Monte Carlo of E f(X_t) under the Euler-Maruyama law.

    ``f`` maps a (batched) PathSegment to per-replicate scalars.  Returns an
    EstimatorReport; weights are identically one so ESS equals N.
    """
    from .girsanov import EstimatorReport  # local import to avoid a cycle

    grid = cfg.grid
    i_t = grid.index_of(t)
    if i_t < grid.n_pre:
        raise ValueError("t must be a grid time in [0, T]")

    def chunk(start: int, stop: int):
        incr = increment_block(cfg.seed, grid, model.dim, start, stop)
        states, clips = simulate_batch(model, x0, grid, incr, clip=cfg.clip)
        seg = PathSegment(grid.h, states[:, i_t - grid.n_pre : i_t + 1, :])
        vals = np.asarray(f(seg), dtype=float)
        return (float(vals.sum()), float((vals**2).sum()), vals.shape[0],
                int(np.count_nonzero(clips)))

    parts = run_chunked(cfg.n, cfg.chunk_size, cfg.workers, chunk)
    mean, se, n = mc_mean([p[:3] for p in parts])
    flagged = sum(p[3] for p in parts)
    return EstimatorReport(
        estimate=mean, stderr=se, n=n, ess=float(n), flagged=flagged, seed=cfg.seed
    )
