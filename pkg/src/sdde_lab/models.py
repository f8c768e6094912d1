"""Model specifications: drift functionals, diffusion fields, validators.

A model is a drift functional B(t, segment), a diffusion field sigma(t, x)
and the structural metadata used by the statistical checks: the ellipticity
and Lipschitz constant of sigma, the integrability envelope of |B|^2
(an L^{d+1} function F plus constants C_1, C_2), an optional strict-past
lag for the functional part of the drift, and superlinear envelopes H, G.

Drift functionals and diffusion fields must be pure functions of their
arguments and must accept batched inputs: a segment carries values of shape
(..., n_pre+1, d) and the drift returns (..., d); the diffusion maps states
(..., d) to matrices (..., d, d).

Built-in families (selectable by name in experiment configs):

* ``sgn_delay``            dX = sgn(X(t-1)) dt + dW, the discontinuity
                           counterexample; sgn(0) = 1 by definition.
* ``kernel``               B(t, x_t) = integral of k(t, x(t+s)) against a
                           measure mu made of grid atoms plus a uniform
                           density on a subinterval of [-r, 0].
* ``pointwise_singular``   B = b(x(t)) with b(x) = |x - x0|^(-alpha),
                           clipped by the solver.
* ``linear``               affine drift a*x(t) + c, for closed-form oracles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .paths import GridError, PathSegment, SamplePath, segment_at

__all__ = [
    "DriftFunctional",
    "DiffusionField",
    "ConditionEnvelopes",
    "ModelSpec",
    "ValidationReport",
    "Measure",
    "sgn",
    "sgn_delay_drift",
    "kernel_drift",
    "constant_diffusion",
    "check_ellipticity",
    "check_lipschitz",
    "check_condition_driftc1",
    "make_model",
    "MODEL_FAMILIES",
]


def sgn(x):
    """Sign with sgn(0) = +1, exactly as in the discontinuity counterexample."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


@dataclass(frozen=True)
class DriftFunctional:
    """Drift B(t, segment) -> (..., d), with optional structural split.

    When the drift satisfies the strict-past decomposition
    B = B_tilde + b(t, x(t)), ``strict_past`` and ``pointwise`` hold the two
    parts and ``func`` must be their sum.  ``bounded_memory`` declares that
    the evaluation depends on the segment only (always true for functions
    written against PathSegment).
    """

    func: Callable[[float, PathSegment], np.ndarray]
    bounded_memory: bool = True
    strict_past: Callable[[float, PathSegment], np.ndarray] | None = None
    pointwise: Callable[[float, np.ndarray], np.ndarray] | None = None

    def __call__(self, t: float, seg: PathSegment) -> np.ndarray:
        return np.asarray(self.func(t, seg), dtype=float)


@dataclass(frozen=True)
class DiffusionField:
    """Diffusion sigma(t, states (..., d)) -> (..., d, d)."""

    func: Callable[[float, np.ndarray], np.ndarray]

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.func(t, x), dtype=float)


def constant_diffusion(value, dim: int) -> DiffusionField:
    """sigma identically equal to a scalar multiple of I or a fixed matrix."""
    mat = np.asarray(value, dtype=float)
    if mat.ndim == 0:
        mat = float(mat) * np.eye(dim)
    if mat.shape != (dim, dim):
        raise ValueError(f"diffusion matrix has shape {mat.shape}, expected ({dim},{dim})")

    def func(t, x):
        x = np.asarray(x)
        return np.broadcast_to(mat, x.shape[:-1] + (dim, dim))

    return DiffusionField(func)


@dataclass(frozen=True)
class ConditionEnvelopes:
    """Declared integrability envelopes for the drift.

    ``F``, ``C1``, ``C2`` bound the squared drift along any path:
    int_0^t |B|^2 <= int_0^t |F(s, x(s))| ds + C1 * sup_{[-r,t]} |x|^2 + C2.
    ``H`` and ``G`` are the superlinear envelope pair
    (H superlinear: H(R)/R -> infinity); they are stored as declared
    metadata and are not inferred.
    """

    F: Callable[[float, np.ndarray], np.ndarray] | None = None
    C1: float = 0.0
    C2: float = 0.0
    H: Callable[[np.ndarray], np.ndarray] | None = None
    G: Callable[[np.ndarray], np.ndarray] | None = None

    def F_values(self, t: float, x: np.ndarray) -> np.ndarray:
        if self.F is None:
            return np.zeros(np.asarray(x).shape[:-1])
        return np.abs(np.asarray(self.F(t, x), dtype=float))


@dataclass(frozen=True)
class ModelSpec:
    """Drift + diffusion + structural metadata of one equation."""

    dim: int
    delay: float
    drift: DriftFunctional
    diffusion: DiffusionField
    c_sigma: float = 1.0
    strict_past_lag: float | None = None
    envelopes: ConditionEnvelopes | None = None
    # Declared (not verified) continuity of x -> B(t, x) for t in [0, r).
    drift_continuous_on_initial_window: bool | None = None
    name: str = ""

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.c_sigma < 1.0:
            raise ValueError("C_sigma must be >= 1")
        if self.strict_past_lag is not None and not (
            0.0 < self.strict_past_lag < self.delay
        ):
            raise ValueError("strict-past lag must lie strictly between 0 and r")


# ---------------------------------------------------------------------------
# Built-in drift families
# ---------------------------------------------------------------------------


def sgn_delay_drift(t: float, seg: PathSegment) -> np.ndarray:
    """sgn(X(t-1)) for the one-dimensional unit-delay counterexample."""
    if seg.dim != 1:
        raise ValueError("sgn-delay drift is one-dimensional")
    return sgn(seg.value_at(-seg.r))


@dataclass(frozen=True)
class Measure:
    """Finite measure on [-r, 0]: weighted grid atoms plus a uniform density.

    ``atoms`` are (offset, weight) pairs with offsets on the segment grid;
    ``density`` is a constant Lebesgue density on [density_lo, density_hi].
    """

    atoms: tuple[tuple[float, float], ...] = ()
    density: float = 0.0
    density_lo: float | None = None
    density_hi: float | None = None


def kernel_drift(
    k: Callable[[float, np.ndarray], np.ndarray], mu: Measure
) -> Callable[[float, PathSegment], np.ndarray]:
    """Drift (t, seg) -> quadrature of k(t, seg(s)) against mu.

    Atoms are evaluated exactly; the density part uses the trapezoid rule on
    the segment grid restricted to [density_lo, density_hi].  Atom offsets or
    density endpoints off the grid raise a domain error.
    """

    def drift(t: float, seg: PathSegment) -> np.ndarray:
        total = np.zeros(seg.values.shape[:-2] + (seg.dim,))
        for s, w in mu.atoms:
            total = total + w * np.asarray(k(t, seg.value_at(s)), dtype=float)
        if mu.density != 0.0:
            lo = -seg.r if mu.density_lo is None else mu.density_lo
            hi = 0.0 if mu.density_hi is None else mu.density_hi
            i_lo = int(round((lo + seg.r) / seg.h))
            i_hi = int(round((hi + seg.r) / seg.h))
            if not (0 <= i_lo < i_hi <= seg.n_pre):
                raise GridError(f"density support [{lo}, {hi}] not within [-r, 0]")
            for bound, idx in ((lo, i_lo), (hi, i_hi)):
                if abs(idx * seg.h - seg.r - bound) > 1e-9 * max(1.0, abs(bound)):
                    raise GridError(f"density endpoint {bound!r} is off the grid")
            vals = np.asarray(k(t, seg.values[..., i_lo : i_hi + 1, :]), dtype=float)
            weights = np.full(i_hi - i_lo + 1, seg.h)
            weights[0] *= 0.5
            weights[-1] *= 0.5
            total = total + mu.density * np.einsum("...kd,k->...d", vals, weights)
        return total

    return drift


# ---------------------------------------------------------------------------
# Numerical condition validators
# ---------------------------------------------------------------------------

_ELLIPTICITY_TOL = 1e-10


@dataclass(frozen=True)
class ValidationReport:
    check: str
    passed: bool
    stats: dict = field(default_factory=dict)
    failures: tuple = ()

    def to_dict(self) -> dict:
        return {
            "check": self.check,
            "passed": bool(self.passed),
            "stats": dict(self.stats),
            "failures": list(self.failures),
        }


def check_ellipticity(
    field_: DiffusionField,
    points: Sequence[tuple[float, np.ndarray]],
    c_sigma: float,
    tol: float = _ELLIPTICITY_TOL,
) -> ValidationReport:
    """Eigenvalue range of sigma sigma^T over a sample of (t, x) points.

    Passes iff the smallest eigenvalue is >= 1/C_sigma - tol and the largest
    is <= C_sigma + tol at every probed point.
    """
    if len(points) == 0:
        raise ValueError("ellipticity check needs a nonempty sample set")
    min_eig, max_eig = np.inf, -np.inf
    failures = []
    for t, x in points:
        mat = field_(t, np.asarray(x, dtype=float))
        if not np.all(np.isfinite(mat)):
            failures.append({"t": float(t), "x": np.asarray(x).tolist(),
                             "error": "non-finite matrix entries"})
            continue
        eigs = np.linalg.eigvalsh(mat @ mat.T)
        min_eig = min(min_eig, float(eigs[0]))
        max_eig = max(max_eig, float(eigs[-1]))
    passed = (
        not failures
        and min_eig >= 1.0 / c_sigma - tol
        and max_eig <= c_sigma + tol
    )
    return ValidationReport(
        check="ellipticity",
        passed=bool(passed),
        stats={"min_eig": min_eig, "max_eig": max_eig, "c_sigma": c_sigma,
               "n_points": len(points)},
        failures=tuple(failures),
    )


def check_lipschitz(
    field_: DiffusionField,
    pairs: Sequence[tuple[float, np.ndarray, np.ndarray]],
    c_sigma: float,
    tol: float = _ELLIPTICITY_TOL,
) -> ValidationReport:
    """Max Hilbert-Schmidt difference quotient of sigma over (t, x, y) pairs."""
    if len(pairs) == 0:
        raise ValueError("Lipschitz check needs a nonempty sample set")
    worst = 0.0
    failures = []
    for t, x, y in pairs:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        dist = float(np.linalg.norm(x - y))
        if dist == 0.0:
            raise ValueError("Lipschitz check pairs must have x != y")
        diff = field_(t, x) - field_(t, y)
        if not np.all(np.isfinite(diff)):
            failures.append({"t": float(t), "x": x.tolist(), "y": y.tolist(),
                             "error": "non-finite matrix entries"})
            continue
        worst = max(worst, float(np.linalg.norm(diff)) / dist)
    passed = not failures and worst <= c_sigma + tol
    return ValidationReport(
        check="lipschitz",
        passed=bool(passed),
        stats={"max_quotient": worst, "c_sigma": c_sigma, "n_pairs": len(pairs)},
        failures=tuple(failures),
    )


def check_condition_driftc1(
    model: ModelSpec,
    probe_paths: Sequence[SamplePath],
    tol: float = 1e-9,
) -> ValidationReport:
    """Quadrature check of the squared-drift envelope along probe paths.

    For every probe path and every grid time t, compares the left Riemann sum
    of |B|^2 on [0, t] against the declared right-hand side
    int |F(s, x(s))| ds + C1 sup_{[-r,t]} |x|^2 + C2.
    """
    env = model.envelopes
    if env is None:
        raise ValueError("model declares no condition envelopes (F, C1, C2)")
    worst_margin = -np.inf
    failures = []
    for ipath, path in enumerate(probe_paths):
        g = path.grid
        lhs = 0.0
        rhs_int = 0.0
        run_sup2 = float(np.max(np.sum(path.states[: g.n_pre + 1] ** 2, axis=-1)))
        for k in range(g.n_main + 1):
            t = k * g.h
            i = g.n_pre + k
            run_sup2 = max(run_sup2, float(np.sum(path.states[i] ** 2)))
            rhs = rhs_int + env.C1 * run_sup2 + env.C2
            margin = lhs - rhs
            worst_margin = max(worst_margin, margin)
            if margin > tol:
                failures.append({"path": ipath, "t": t, "lhs": lhs, "rhs": rhs})
            if k < g.n_main:
                seg = segment_at(path, t)
                b = model.drift(t, seg)
                lhs += float(np.sum(b**2)) * g.h
                rhs_int += float(env.F_values(t, path.states[i])) * g.h
        if len(failures) > 16:
            break
    return ValidationReport(
        check="condition_driftc1",
        passed=not failures,
        stats={"worst_margin": worst_margin, "C1": env.C1, "C2": env.C2,
               "n_paths": len(probe_paths)},
        failures=tuple(failures),
    )


# ---------------------------------------------------------------------------
# Model registry
# ---------------------------------------------------------------------------


def _sgn_delay_model(params: dict, horizon: float) -> ModelSpec:
    sigma = float(params.get("sigma", 1.0))
    env = ConditionEnvelopes(F=None, C1=0.0, C2=float(horizon),
                             H=lambda R: R**2, G=lambda R: float(horizon))
    drift = DriftFunctional(
        func=sgn_delay_drift,
        strict_past=sgn_delay_drift,
        pointwise=None,
    )
    return ModelSpec(
        dim=1,
        delay=1.0,
        drift=drift,
        diffusion=constant_diffusion(sigma, 1),
        c_sigma=max(sigma**2, sigma**-2, 1.0),
        strict_past_lag=0.5,
        envelopes=env,
        drift_continuous_on_initial_window=False,
        name="sgn_delay",
    )


_KERNELS: dict[str, Callable] = {
    "identity": lambda t, x: x,
    "tanh": lambda t, x: np.tanh(x),
    "zero": lambda t, x: np.zeros_like(x),
}


def _kernel_model(params: dict, horizon: float) -> ModelSpec:
    r = float(params.get("r", 1.0))
    sigma = float(params.get("sigma", 1.0))
    kernel_id = params.get("kernel", "tanh")
    if kernel_id not in _KERNELS:
        raise ValueError(f"unknown kernel {kernel_id!r}; have {sorted(_KERNELS)}")
    k = _KERNELS[kernel_id]
    atoms = tuple((float(s), float(w)) for s, w in params.get("atoms", ()))
    density = params.get("density")
    if density is not None:
        mu = Measure(atoms=atoms, density=float(density.get("value", 1.0)),
                     density_lo=float(density.get("lo", -r)),
                     density_hi=float(density.get("hi", 0.0)))
    else:
        mu = Measure(atoms=atoms)
    func = kernel_drift(k, mu)

    # Mass of mu and support upper end, for the envelope and strict-past lag.
    mass = sum(abs(w) for _, w in mu.atoms)
    support_hi = max((s for s, _ in mu.atoms), default=-r)
    if mu.density != 0.0:
        mass += abs(mu.density) * (mu.density_hi - mu.density_lo)
        support_hi = max(support_hi, mu.density_hi)
    lag = -support_hi
    strict = func if 0.0 < lag < r else None

    if kernel_id == "tanh":
        c1, c2 = 0.0, mass**2 * float(horizon)  # |tanh| <= 1
    elif kernel_id == "zero":
        c1, c2 = 0.0, 0.0
    else:  # identity: |B|^2 <= mass^2 sup|x|^2, so int <= T mass^2 sup^2
        c1, c2 = float(horizon) * mass**2, 0.0
    env = ConditionEnvelopes(F=None, C1=c1, C2=c2)
    return ModelSpec(
        dim=1,
        delay=r,
        drift=DriftFunctional(func=func, strict_past=strict),
        diffusion=constant_diffusion(sigma, 1),
        c_sigma=max(sigma**2, sigma**-2, 1.0),
        strict_past_lag=lag if 0.0 < lag < r else None,
        envelopes=env,
        drift_continuous_on_initial_window=True,
        name="kernel",
    )


def _pointwise_singular_model(params: dict, horizon: float) -> ModelSpec:
    r = float(params.get("r", 1.0))
    sigma = float(params.get("sigma", 1.0))
    x0 = float(params.get("x0", 0.0))
    alpha = float(params.get("alpha", 0.2))

    def b(t, x):
        # |x - x0|^(-alpha); the blow-up at x0 is capped by the solver clip.
        with np.errstate(divide="ignore"):
            return np.abs(x - x0) ** (-alpha)

    def func(t, seg):
        return b(t, seg.value_at(0.0))

    env = ConditionEnvelopes(
        F=lambda t, x: np.abs(np.asarray(x).reshape(-1)[0] - x0) ** (-2 * alpha),
        C1=0.0, C2=0.0,
    )
    return ModelSpec(
        dim=1,
        delay=r,
        drift=DriftFunctional(func=func, pointwise=b),
        diffusion=constant_diffusion(sigma, 1),
        c_sigma=max(sigma**2, sigma**-2, 1.0),
        envelopes=env,
        drift_continuous_on_initial_window=False,
        name="pointwise_singular",
    )


def _linear_model(params: dict, horizon: float) -> ModelSpec:
    r = float(params.get("r", 1.0))
    sigma = float(params.get("sigma", 1.0))
    a = float(params.get("a", 0.0))
    c = float(params.get("c", 0.0))

    def b(t, x):
        return a * x + c

    def func(t, seg):
        return b(t, seg.value_at(0.0))

    env = ConditionEnvelopes(F=None, C1=2 * a**2 * float(horizon),
                             C2=2 * c**2 * float(horizon))
    return ModelSpec(
        dim=1,
        delay=r,
        drift=DriftFunctional(func=func, pointwise=b),
        diffusion=constant_diffusion(sigma, 1),
        c_sigma=max(sigma**2, sigma**-2, 1.0),
        envelopes=env,
        drift_continuous_on_initial_window=True,
        name="linear",
    )


MODEL_FAMILIES = {
    "sgn_delay": _sgn_delay_model,
    "kernel": _kernel_model,
    "pointwise_singular": _pointwise_singular_model,
    "linear": _linear_model,
}


def make_model(family: str, params: dict | None = None, horizon: float = 1.0) -> ModelSpec:
    """Build a built-in model by family name; ``horizon`` sizes the envelopes."""
    if family not in MODEL_FAMILIES:
        raise ValueError(f"unknown model family {family!r}; have {sorted(MODEL_FAMILIES)}")
    return MODEL_FAMILIES[family](params or {}, horizon)
