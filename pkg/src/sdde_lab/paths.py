"""Time grids, path segments and trajectory containers.

The state of a delay equation at time t is the segment of the trajectory
over the window [t-r, t], re-indexed to [-r, 0] and equipped with the
supremum norm.  Everything here is plain numpy on uniform grids: the delay
r and the horizon T are forced to be exact integer multiples of the step
h, so that delayed reads are grid reads and never interpolate.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TimeGrid",
    "PathSegment",
    "SamplePath",
    "BrownianDriver",
    "constant_segment",
    "segment_at",
    "sup_norm",
    "interpolate",
    "write_path_csv",
    "read_path_csv",
]

# Relative slack when snapping r/h and T/h to integers; grids that miss by
# more than this are rejected rather than silently rounded.
_GRID_RTOL = 1e-9


class GridError(ValueError):
    """Raised when a time grid or a grid-time query is malformed."""


def _exact_steps(span: float, h: float, name: str) -> int:
    n = int(round(span / h))
    if n < 1 or abs(n * h - span) > _GRID_RTOL * max(1.0, abs(span)):
        raise GridError(f"{name}={span!r} is not an integer multiple of h={h!r}")
    return n


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [-r, T] with step h; r and T must be multiples of h."""

    r: float
    T: float
    h: float
    n_pre: int = field(init=False)
    n_main: int = field(init=False)

    def __post_init__(self):
        if self.h <= 0:
            raise GridError(f"h={self.h!r} must be positive")
        if self.r <= 0:
            raise GridError(f"r={self.r!r} must be positive")
        if self.T <= 0:
            raise GridError(f"T={self.T!r} must be positive")
        object.__setattr__(self, "n_pre", _exact_steps(self.r, self.h, "r"))
        object.__setattr__(self, "n_main", _exact_steps(self.T, self.h, "T"))

    @property
    def n_nodes(self) -> int:
        return self.n_pre + self.n_main + 1

    def times(self) -> np.ndarray:
        """All grid times from -r to T inclusive."""
        return (np.arange(self.n_nodes) - self.n_pre) * self.h

    def index_of(self, t: float) -> int:
        """Node index of a grid time in [-r, T]; rejects off-grid queries."""
        i = int(round(t / self.h)) + self.n_pre
        if i < 0 or i >= self.n_nodes:
            raise GridError(f"t={t!r} outside [-r, T] = [{-self.r}, {self.T}]")
        if abs((i - self.n_pre) * self.h - t) > _GRID_RTOL * max(1.0, abs(t)):
            raise GridError(f"t={t!r} is not on the grid (h={self.h!r})")
        return i


@dataclass(frozen=True)
class PathSegment:
    """Trajectory restricted to a delay window, re-indexed to [-r, 0].

    ``values`` has shape (n_pre+1, d) for a single segment; a leading batch
    axis (N, n_pre+1, d) is allowed so drift functionals can evaluate whole
    replicate batches at once.
    """

    h: float
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim < 2:
            raise ValueError("segment values must have shape (..., n_pre+1, d)")
        object.__setattr__(self, "values", v)

    @property
    def n_pre(self) -> int:
        return self.values.shape[-2] - 1

    @property
    def dim(self) -> int:
        return self.values.shape[-1]

    @property
    def r(self) -> float:
        return self.n_pre * self.h

    def value_at(self, s: float) -> np.ndarray:
        """State at grid offset s in [-r, 0]; shape (..., d)."""
        i = int(round(s / self.h)) + self.n_pre
        if i < 0 or i > self.n_pre:
            raise GridError(f"segment offset s={s!r} outside [-r, 0]")
        if abs((i - self.n_pre) * self.h - s) > _GRID_RTOL * max(1.0, abs(s)):
            raise GridError(f"segment offset s={s!r} is not on the grid")
        return self.values[..., i, :]

    def sup_norms(self) -> np.ndarray:
        """Supremum over the window of the Euclidean state norm, per batch entry."""
        return np.sqrt(np.sum(self.values**2, axis=-1)).max(axis=-1)


def constant_segment(grid: TimeGrid, value, dim: int | None = None) -> PathSegment:
    """Segment identically equal to ``value`` (scalar or d-vector) on [-r, 0]."""
    v = np.atleast_1d(np.asarray(value, dtype=float))
    if dim is not None and v.shape != (dim,):
        raise ValueError(f"value has dimension {v.shape}, expected ({dim},)")
    return PathSegment(grid.h, np.tile(v, (grid.n_pre + 1, 1)))


@dataclass(frozen=True)
class SamplePath:
    """A discrete trajectory on [-r, T] plus the Brownian increments driving it.

    ``states`` has shape (n_nodes, d); ``increments`` has shape (n_main, d)
    and holds the d-dimensional increments used on [0, T].  ``clip_events``
    counts drift evaluations that hit the solver's clip threshold; paths
    with events are flagged, never dropped silently.
    """

    grid: TimeGrid
    states: np.ndarray
    increments: np.ndarray
    clip_events: int = 0
    flagged: bool = False

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        incr = np.asarray(self.increments, dtype=float)
        if states.shape[0] != self.grid.n_nodes:
            raise ValueError(
                f"states has {states.shape[0]} rows, grid has {self.grid.n_nodes} nodes"
            )
        if incr.shape[0] != self.grid.n_main:
            raise ValueError(
                f"increments has {incr.shape[0]} rows, grid has {self.grid.n_main} steps"
            )
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "increments", incr)

    @property
    def dim(self) -> int:
        return self.states.shape[-1]

    def initial_segment(self) -> PathSegment:
        return PathSegment(self.grid.h, self.states[: self.grid.n_pre + 1])


def segment_at(path: SamplePath, t: float) -> PathSegment:
    """Restriction of the path to [t-r, t], re-indexed to [-r, 0].

    t must be a grid time in [0, T].
    """
    if t < -_GRID_RTOL:
        raise GridError(f"segment time t={t!r} must lie in [0, T]")
    i = path.grid.index_of(t)
    if i < path.grid.n_pre:
        raise GridError(f"segment time t={t!r} must lie in [0, T]")
    n_pre = path.grid.n_pre
    return PathSegment(path.grid.h, path.states[i - n_pre : i + 1])


def sup_norm(seg: PathSegment) -> float:
    """Maximum over grid points of the Euclidean norm of the state."""
    return float(seg.sup_norms())


def interpolate(path: SamplePath, t: float) -> np.ndarray:
    """Piecewise-linear read of the path at any t in [-r, T]; exact at nodes."""
    g = path.grid
    if t < -g.r - _GRID_RTOL or t > g.T + _GRID_RTOL:
        raise GridError(f"t={t!r} outside [-r, T] = [{-g.r}, {g.T}]")
    pos = np.clip((t + g.r) / g.h, 0.0, g.n_nodes - 1)
    i = min(int(pos), g.n_nodes - 2)
    theta = pos - i
    return (1.0 - theta) * path.states[i] + theta * path.states[i + 1]


# ---------------------------------------------------------------------------
# Brownian increments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BrownianDriver:
    """Counter-based Brownian increment stream keyed by (seed, replicate).

    Each (seed, replicate) pair owns an independent Philox stream, so
    generation is bit-reproducible and independent of worker scheduling:
    the k-th increment is a pure function of (seed, replicate, k).
    """

    seed: int
    replicate: int
    grid: TimeGrid

    def increments(self, dim: int) -> np.ndarray:
        """Increments over [0, T]: shape (n_main, dim), each N(0, h) per coordinate."""
        key = np.array([self.seed, self.replicate], dtype=np.uint64)
        gen = np.random.Generator(np.random.Philox(key=key))
        return gen.standard_normal((self.grid.n_main, dim)) * np.sqrt(self.grid.h)


def increment_block(
    seed: int, grid: TimeGrid, dim: int, start: int, stop: int
) -> np.ndarray:
    """Increments for replicates [start, stop): shape (stop-start, n_main, dim)."""
    out = np.empty((stop - start, grid.n_main, dim))
    for j, rep in enumerate(range(start, stop)):
        out[j] = BrownianDriver(seed, rep, grid).increments(dim)
    return out


# ---------------------------------------------------------------------------
# CSV serialization
# ---------------------------------------------------------------------------
# One row per grid node, time ascending, 17-significant-digit decimals.
# Increment columns are empty on [-r, 0]; the row at t_k (k >= 1) carries the
# increment over [t_{k-1}, t_k].


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_path_csv(path: SamplePath, fileobj) -> None:
    d = path.dim
    header = (
        ["t"]
        + [f"x_{j + 1}" for j in range(d)]
        + [f"dW_{j + 1}" for j in range(d)]
    )
    fileobj.write(",".join(header) + "\n")
    times = path.grid.times()
    n_pre = path.grid.n_pre
    for i, t in enumerate(times):
        row = [_fmt(t)] + [_fmt(v) for v in path.states[i]]
        if i > n_pre:
            row += [_fmt(v) for v in path.increments[i - n_pre - 1]]
        else:
            row += [""] * d
        fileobj.write(",".join(row) + "\n")


def path_csv_text(path: SamplePath) -> str:
    buf = io.StringIO()
    write_path_csv(path, buf)
    return buf.getvalue()


def read_path_csv(fileobj, r: float) -> SamplePath:
    """Inverse of :func:`write_path_csv`; the delay r is not stored in the file."""
    rows = [line.rstrip("\n").split(",") for line in fileobj if line.strip()]
    header, body = rows[0], rows[1:]
    d = sum(1 for name in header if name.startswith("x_"))
    times = np.array([float(row[0]) for row in body])
    h = float(times[1] - times[0])
    grid = TimeGrid(r=r, T=float(times[-1]), h=h)
    states = np.array([[float(v) for v in row[1 : 1 + d]] for row in body])
    incr = np.array(
        [[float(v) for v in row[1 + d :]] for row in body[grid.n_pre + 1 :]]
    )
    return SamplePath(grid, states, incr.reshape(grid.n_main, d))
