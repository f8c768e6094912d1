"""Statistical probes of the limit theorems and numerical appendix checks.

The probes are three-valued by design: a Monte Carlo experiment can witness
continuity ("continuous"/"stable"), witness a gap ("gap-detected"), or say
nothing ("inconclusive").  The decision thresholds are 3 combined standard
errors for the positive verdict and 5 for the gap verdict.

For the continuity probe the gap |E f(X^y_t) - E f(X^x_t)| is compared
directly against its combined standard error, which stays O(1/sqrt(N))
while the gap shrinks with the offset.  For the stability probe the
estimated quantity E ||X^y_t - X^x_t||^gamma is a norm: under shared-noise
coupling its standard error shrinks proportionally with the estimate, so
the raw final estimate can never fall below its own noise floor (a constant
diffusion makes it exactly deterministic).  The thresholds are therefore
applied to the y -> x limit itself: the estimates are extrapolated to zero
offset in ||y_n - x||^gamma from the two finest probe points, and that
limit is tested against 3 resp. 5 of its standard errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .models import ModelSpec
from .paths import PathSegment, TimeGrid, increment_block
from .girsanov import EstimatorReport, weighted_expectation
from .solver import SolverConfig, direct_expectation, run_chunked, simulate_batch

__all__ = [
    "ProbeReport",
    "BoundReport",
    "make_functional",
    "functional_battery",
    "strong_feller_probe",
    "stability_probe",
    "exp_sup_bound_check",
    "krylov_check",
    "maximal_function",
    "hardy_littlewood_check",
    "gronwall_constant",
    "GronwallScenario",
    "gronwall_bound_check",
]

STABLE_SIGMA = 3.0
GAP_SIGMA = 5.0


# ---------------------------------------------------------------------------
# Bounded test functionals
# ---------------------------------------------------------------------------


def make_functional(spec: dict):
    """Bounded segment functional from a config dict: (callable, bound, label).

    Known names: ``one``, ``tanh_endpoint``, ``smooth_halfline`` (indicator
    of [center, inf) smoothed at ``scale``), ``sup_norm_gauss``.
    """
    name = spec.get("name")
    if name == "one":
        return (lambda seg: np.ones(seg.values.shape[:-2])), 1.0, "one"
    if name == "tanh_endpoint":
        return (lambda seg: np.tanh(seg.value_at(0.0)[..., 0])), 1.0, "tanh_endpoint"
    if name == "smooth_halfline":
        c = float(spec.get("center", 0.0))
        scale = float(spec.get("scale", 0.1))
        return (
            lambda seg: 0.5 * (1.0 + np.tanh((seg.value_at(0.0)[..., 0] - c) / scale)),
            1.0,
            f"smooth_halfline(center={c:g})",
        )
    if name == "sup_norm_gauss":
        return (lambda seg: np.exp(-seg.sup_norms() ** 2)), 1.0, "sup_norm_gauss"
    raise ValueError(f"unknown functional {name!r}")


def functional_battery():
    """The fixed battery used by the estimator-equivalence checks."""
    return [
        make_functional({"name": "tanh_endpoint"}),
        make_functional({"name": "smooth_halfline", "center": 0.0, "scale": 0.1}),
        make_functional({"name": "smooth_halfline", "center": 0.5, "scale": 0.1}),
        make_functional({"name": "sup_norm_gauss"}),
    ]


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbeReport:
    kind: str
    t: float
    verdict: str
    distances: tuple[float, ...]
    estimates: tuple[float, ...]
    stderrs: tuple[float, ...]
    gaps: tuple[float, ...] = ()
    combined_se: tuple[float, ...] = ()
    baseline: dict | None = None
    limit_gap: float | None = None
    limit_gap_se: float | None = None
    gamma: float | None = None
    functional: str = ""
    estimator: str = ""
    thresholds: dict = field(default_factory=lambda: {"stable": STABLE_SIGMA,
                                                      "gap": GAP_SIGMA})
    notes: tuple[str, ...] = ()
    seed: int = 0
    config_digest: str = ""

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "t": self.t,
            "verdict": self.verdict,
            "distances": list(self.distances),
            "estimates": list(self.estimates),
            "stderrs": list(self.stderrs),
            "gaps": list(self.gaps),
            "combined_se": list(self.combined_se),
            "baseline": self.baseline,
            "limit_gap": self.limit_gap,
            "limit_gap_se": self.limit_gap_se,
            "gamma": self.gamma,
            "functional": self.functional,
            "estimator": self.estimator,
            "thresholds": dict(self.thresholds),
            "notes": list(self.notes),
            "seed": self.seed,
            "config_digest": self.config_digest,
        }
        return d

    def csv_text(self) -> str:
        lines = ["index,distance,estimate,stderr"]
        for i, (dist, est, se) in enumerate(
            zip(self.distances, self.estimates, self.stderrs)
        ):
            lines.append(f"{i},{dist:.17g},{est:.17g},{se:.17g}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class BoundReport:
    check: str
    estimate: float
    stderr: float
    bound: float | None
    passed: bool
    n: int = 0
    seed: int = 0
    params: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "check": self.check,
            "estimate": self.estimate,
            "stderr": self.stderr,
            "bound": self.bound,
            "passed": bool(self.passed),
            "n": self.n,
            "seed": self.seed,
            "params": dict(self.params),
        }


def _nonincreasing_within_bands(values, bands) -> bool:
    for k in range(len(values) - 1):
        if values[k + 1] > values[k] + STABLE_SIGMA * (bands[k] + bands[k + 1]):
            return False
    return True


# ---------------------------------------------------------------------------
# Continuity probe (strong Feller)
# ---------------------------------------------------------------------------


def strong_feller_probe(
    model: ModelSpec,
    f,
    x: PathSegment,
    ys,
    t: float,
    cfg: SolverConfig,
    estimator: str = "girsanov",
    f_bound: float = 1.0,
) -> ProbeReport:
    """Probe continuity of y -> E f(X^y_t) along a sequence of initial segments.

    Every probe point reuses the same replicate streams (common random
    numbers), so probing y = x reports a zero gap exactly.  The verdict is
    "continuous" when the final gap is within 3 combined standard errors and
    the gap sequence does not increase beyond its error bands, and
    "gap-detected" when the final gap exceeds 5 combined standard errors.
    """
    if estimator == "girsanov":
        def run(seg):
            return weighted_expectation(model, seg, f, t, cfg, f_bound=f_bound)
    elif estimator == "euler":
        def run(seg):
            return direct_expectation(model, seg, f, t, cfg)
    else:
        raise ValueError(f"unknown estimator {estimator!r}")

    notes = []
    if t <= model.delay:
        notes.append(
            f"t={t:g} <= r={model.delay:g}: outside the continuity theorem's "
            "time window; the probe still runs as a diagnostic"
        )

    base = run(x)
    order = sorted(
        range(len(ys)),
        key=lambda j: -float(np.max(np.abs(ys[j].values - x.values))),
    )
    dists, ests, ses, gaps, combs = [], [], [], [], []
    for j in order:
        y = ys[j]
        rep = run(y)
        dists.append(float(np.max(np.sqrt(((y.values - x.values) ** 2).sum(-1)))))
        ests.append(rep.estimate)
        ses.append(rep.stderr)
        gaps.append(abs(rep.estimate - base.estimate))
        combs.append(math.hypot(rep.stderr, base.stderr))

    final_gap, final_se = gaps[-1], combs[-1]
    monotone = _nonincreasing_within_bands(gaps, combs)
    if final_gap <= STABLE_SIGMA * final_se and monotone:
        verdict = "continuous"
    elif final_gap >= GAP_SIGMA * final_se:
        verdict = "gap-detected"
    else:
        verdict = "inconclusive"
    return ProbeReport(
        kind="strong-feller",
        t=t,
        verdict=verdict,
        distances=tuple(dists),
        estimates=tuple(ests),
        stderrs=tuple(ses),
        gaps=tuple(gaps),
        combined_se=tuple(combs),
        baseline={"estimate": base.estimate, "stderr": base.stderr},
        functional=getattr(f, "label", ""),
        estimator=estimator,
        notes=tuple(notes),
        seed=cfg.seed,
    )


# ---------------------------------------------------------------------------
# Shared-noise stability probe
# ---------------------------------------------------------------------------


def _coupled_moment(model, x, y, t, gamma, cfg, replicate_offset):
    """Monte Carlo of E ||X^y_t - X^x_t||_inf^gamma under shared increments."""
    grid = cfg.grid
    i_t = grid.index_of(t)
    lo = i_t - grid.n_pre

    def chunk(start: int, stop: int):
        incr = increment_block(
            cfg.seed, grid, model.dim, replicate_offset + start, replicate_offset + stop
        )
        sx, _ = simulate_batch(model, x, grid, incr, clip=cfg.clip)
        sy, _ = simulate_batch(model, y, grid, incr, clip=cfg.clip)
        diff = sy - sx
        norms = np.sqrt((diff[:, lo : i_t + 1, :] ** 2).sum(-1)).max(axis=1)
        z = norms**gamma
        return float(z.sum()), float((z**2).sum()), z.shape[0]

    parts = run_chunked(cfg.n, cfg.chunk_size, cfg.workers, chunk)
    s = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    n = sum(p[2] for p in parts)
    mean = s / n
    var = max(s2 / n - mean**2, 0.0) * (n / max(n - 1, 1))
    return mean, float(np.sqrt(var / n))


def _extrapolated_limit(offsets, estimates, stderrs, gamma):
    """Zero-offset limit of the estimates, extrapolated in offset^gamma.

    Polynomial (Richardson) extrapolation through the finest probe points in
    u = offset^gamma: quadratic when three points are available, linear with
    two, the raw estimate with one.  This is exact whenever the estimates
    scale like c * offset^gamma and removes the low-order curvature that a
    smooth drift contributes at coarser offsets; the standard error follows
    from the Lagrange weights.
    """
    y = np.asarray(estimates, dtype=float)
    se = np.asarray(stderrs, dtype=float)
    if len(offsets) < 2:
        return float(y[-1]), float(se[-1])
    k = min(3, len(offsets))  # offsets sorted decreasing; take the finest k
    u = np.asarray(offsets, dtype=float)[-k:] ** gamma
    yv, sev = y[-k:], se[-k:]
    a, var = 0.0, 0.0
    for i in range(k):
        w = 1.0
        for j in range(k):
            if j != i:
                w *= u[j] / (u[j] - u[i])
        a += w * yv[i]
        var += (w * sev[i]) ** 2
    return float(a), float(math.sqrt(var))


def stability_probe(
    model: ModelSpec,
    x: PathSegment,
    ys,
    t: float,
    gamma: float,
    cfg: SolverConfig,
) -> ProbeReport:
    """Probe E ||X^y_t - X^x_t||_inf^gamma -> 0 along y_n -> x.

    Each probe point gets its own independent replicate range of the seed's
    counter-based stream; within a point the pair shares its noise.  The
    verdict is "stable" when the estimates are nonincreasing within error
    bands and the extrapolated zero-offset limit is within 3 of its standard
    errors, "gap-detected" when that limit exceeds 5 standard errors.
    """
    if not (0.0 < gamma < 2.0):
        raise ValueError("gamma must lie in (0, 2)")
    order = sorted(
        range(len(ys)),
        key=lambda j: -float(np.max(np.abs(ys[j].values - x.values))),
    )
    dists, ests, ses = [], [], []
    for slot, j in enumerate(order):
        y = ys[j]
        mean, se = _coupled_moment(model, x, y, t, gamma, cfg,
                                   replicate_offset=slot * cfg.n)
        dists.append(float(np.max(np.sqrt(((y.values - x.values) ** 2).sum(-1)))))
        ests.append(mean)
        ses.append(se)

    a, se_a = _extrapolated_limit(dists, ests, ses, gamma)
    tol_abs = 1e-9 * max(max(ests), 1.0)
    monotone = _nonincreasing_within_bands(ests, ses)
    if monotone and a <= STABLE_SIGMA * se_a + tol_abs:
        verdict = "stable"
    elif a >= GAP_SIGMA * se_a and a > tol_abs:
        verdict = "gap-detected"
    else:
        verdict = "inconclusive"
    return ProbeReport(
        kind="stability",
        t=t,
        verdict=verdict,
        distances=tuple(dists),
        estimates=tuple(ests),
        stderrs=tuple(ses),
        limit_gap=a,
        limit_gap_se=se_a,
        gamma=gamma,
        estimator="coupled-euler",
        seed=cfg.seed,
    )


# ---------------------------------------------------------------------------
# Exponential supremum bound for the driftless process
# ---------------------------------------------------------------------------


def exp_sup_bound_check(
    model: ModelSpec,
    x0: PathSegment,
    alpha: float,
    T: float,
    cfg: SolverConfig,
) -> BoundReport:
    """Check E exp(alpha sup_{[0,T]} |M|^2) against its closed-form bound.

    Requires 0 <= alpha < 1/(2 d C_sigma T); the bound is
    4 / sqrt(1 - 2 alpha d C_sigma T) * exp(alpha |x(0)|^2 / (1 - 2 alpha d C_sigma T)).
    """
    d = model.dim
    denom = 1.0 - 2.0 * alpha * d * model.c_sigma * T
    if alpha < 0 or denom <= 0:
        raise ValueError(
            f"alpha={alpha!r} outside [0, 1/(2 d C_sigma T)) = [0, "
            f"{1.0 / (2 * d * model.c_sigma * T):g})"
        )
    grid = cfg.grid
    if abs(grid.T - T) > 1e-12:
        raise ValueError("cfg.grid horizon must equal T")
    n_pre = grid.n_pre

    def chunk(start, stop):
        incr = increment_block(cfg.seed, grid, d, start, stop)
        states, _ = simulate_batch(model, x0, grid, incr, driftless=True)
        sup2 = (states[:, n_pre:, :] ** 2).sum(-1).max(axis=1)
        v = np.exp(alpha * sup2)
        return float(v.sum()), float((v**2).sum()), v.shape[0]

    parts = run_chunked(cfg.n, cfg.chunk_size, cfg.workers, chunk)
    s = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    n = sum(p[2] for p in parts)
    mean = s / n
    se = float(np.sqrt(max(s2 / n - mean**2, 0.0) / max(n - 1, 1)))
    x00 = float(np.sum(np.asarray(x0.value_at(0.0)) ** 2))
    bound = 4.0 / math.sqrt(denom) * math.exp(alpha * x00 / denom)
    return BoundReport(
        check="exp-sup",
        estimate=float(mean),
        stderr=se,
        bound=bound,
        passed=bool(mean <= bound),
        n=n,
        seed=cfg.seed,
        params={"alpha": alpha, "T": T, "c_sigma": model.c_sigma, "d": d},
    )


# ---------------------------------------------------------------------------
# Krylov occupation estimate
# ---------------------------------------------------------------------------


def krylov_check(
    model: ModelSpec,
    f,
    p: float,
    T: float,
    cfg: SolverConfig,
    x_radius: float = 10.0,
    norm_nx: int = 4001,
    norm_nt: int = 201,
) -> BoundReport:
    """Ratio of E int_0^T f(t, M(t)) dt to the L^p space-time norm of f.

    ``f`` maps (t, x-array) to nonnegative values.  The norm is computed by
    tensor trapezoid quadrature on [0, T] x [-x_radius, x_radius] (d = 1).
    A zero norm is a domain error.  The ratio itself is the report estimate;
    uniform boundedness over scaling families is what the caller asserts.
    """
    d = model.dim
    if d != 1:
        raise ValueError("the norm quadrature is implemented for d = 1")
    if p <= (d + 2) / 2:
        raise ValueError(f"p={p!r} must exceed (d+2)/2 = {(d + 2) / 2}")
    ts = np.linspace(0.0, T, norm_nt)
    xs = np.linspace(-x_radius, x_radius, norm_nx)
    vals = np.asarray(f(ts[:, None], xs[None, :]), dtype=float)
    if np.any(vals < 0):
        raise ValueError("f must be nonnegative")
    norm_p = float(np.trapezoid(np.trapezoid(vals**p, xs, axis=1), ts) ** (1.0 / p))

    grid = cfg.grid
    n_pre = grid.n_pre
    times = grid.times()[n_pre:]

    def chunk(start, stop):
        incr = increment_block(cfg.seed, grid, d, start, stop)
        states, _ = simulate_batch(model, cfg_x0, grid, incr, driftless=True)
        fv = np.asarray(f(times[None, :], states[:, n_pre:, 0]), dtype=float)
        integral = np.trapezoid(fv, dx=grid.h, axis=1)
        return float(integral.sum()), float((integral**2).sum()), integral.shape[0]

    from .paths import constant_segment

    cfg_x0 = constant_segment(grid, np.zeros(d))
    if norm_p == 0.0:
        if np.all(vals == 0):
            return BoundReport(
                check="krylov", estimate=0.0, stderr=0.0, bound=None,
                passed=True, n=0, seed=cfg.seed, params={"p": p, "T": T},
            )
        raise ValueError("f has zero L^p norm on the quadrature domain")

    parts = run_chunked(cfg.n, cfg.chunk_size, cfg.workers, chunk)
    s = sum(pt[0] for pt in parts)
    s2 = sum(pt[1] for pt in parts)
    n = sum(pt[2] for pt in parts)
    mean = s / n
    se = float(np.sqrt(max(s2 / n - mean**2, 0.0) / max(n - 1, 1)))
    ratio = mean / norm_p
    return BoundReport(
        check="krylov",
        estimate=float(ratio),
        stderr=se / norm_p,
        bound=None,
        passed=bool(np.isfinite(ratio)),
        n=n,
        seed=cfg.seed,
        params={"p": p, "T": T, "x_radius": x_radius},
        extras={"integral_mean": mean, "norm": norm_p},
    )


# ---------------------------------------------------------------------------
# Hardy-Littlewood maximal function
# ---------------------------------------------------------------------------


def maximal_function(xs: np.ndarray, phi: np.ndarray, x: float, radii) -> float:
    """Max over the radii set of the trapezoid average of phi over [x-r, x+r].

    ``phi`` is sampled on the uniform ascending grid ``xs``; a radius whose
    ball leaves the sampled domain is a domain error.  Fractional endpoints
    are handled by linear interpolation, so grid-aligned radii are exact.
    """
    xs = np.asarray(xs, dtype=float)
    phi = np.asarray(phi, dtype=float)
    dx = xs[1] - xs[0]
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (phi[1:] + phi[:-1]) * dx)])

    def integral_to(pt: float) -> float:
        pos = (pt - xs[0]) / dx
        i = int(np.floor(pos))
        i = min(max(i, 0), len(xs) - 2)
        frac = pos - i
        # integral of the piecewise-linear interpolant from xs[0] to pt
        a, b = phi[i], phi[i + 1]
        partial = dx * (a * frac + 0.5 * (b - a) * frac**2)
        return float(cum[i] + partial)

    best = -np.inf
    for r in radii:
        if r <= 0:
            raise ValueError("radii must be positive")
        lo, hi = x - r, x + r
        if lo < xs[0] - 1e-12 or hi > xs[-1] + 1e-12:
            raise ValueError(
                f"radius {r:g} at x={x:g} leaves the sampled domain "
                f"[{xs[0]:g}, {xs[-1]:g}]"
            )
        avg = (integral_to(hi) - integral_to(lo)) / (2.0 * r)
        best = max(best, avg)
    return float(best)


def default_radii(xs: np.ndarray, x: float) -> np.ndarray:
    """Radii {dx, 2dx, ...} up to the largest ball inside the sampled domain."""
    xs = np.asarray(xs, dtype=float)
    dx = xs[1] - xs[0]
    r_max = min(x - xs[0], xs[-1] - x)
    n = int(np.floor(r_max / dx + 1e-12))
    if n < 1:
        raise ValueError(f"x={x:g} too close to the domain edge for any radius")
    return dx * np.arange(1, n + 1)


def hardy_littlewood_check(
    xs: np.ndarray,
    phi: np.ndarray,
    dphi: np.ndarray,
    pairs,
) -> BoundReport:
    """Max over pairs of |phi(x)-phi(y)| / (|x-y| (M|phi'|(x) + M|phi'|(y))).

    ``dphi`` is the derivative sampled on the same grid.  A vanishing
    denominator with a nonzero numerator fails the check.  Stability of the
    reported constant under grid refinement is asserted by the caller.
    """
    xs = np.asarray(xs, dtype=float)
    phi = np.asarray(phi, dtype=float)
    abs_d = np.abs(np.asarray(dphi, dtype=float))

    def sample(arr, pt):
        return float(np.interp(pt, xs, arr))

    worst = 0.0
    mvals = {}
    for x, y in pairs:
        if x == y:
            raise ValueError("pairs must have x != y")
        for pt in (x, y):
            if pt not in mvals:
                mvals[pt] = maximal_function(xs, abs_d, pt, default_radii(xs, pt))
        num = abs(sample(phi, x) - sample(phi, y))
        den = abs(x - y) * (mvals[x] + mvals[y])
        if den == 0.0:
            if num > 0.0:
                return BoundReport(
                    check="hardy-littlewood", estimate=np.inf, stderr=0.0,
                    bound=None, passed=False, n=len(pairs),
                    params={"failure": f"zero denominator at ({x}, {y})"},
                )
            continue
        worst = max(worst, num / den)
    return BoundReport(
        check="hardy-littlewood",
        estimate=worst,
        stderr=0.0,
        bound=None,
        passed=bool(np.isfinite(worst)),
        n=len(pairs),
        params={"grid_dx": float(xs[1] - xs[0])},
    )


# ---------------------------------------------------------------------------
# Stochastic Gronwall lemma
# ---------------------------------------------------------------------------


def gronwall_constant(p: float) -> float:
    """c_p = (4 min 1/p) * pi p / sin(pi p) for p in (0, 1)."""
    if not (0.0 < p < 1.0):
        raise ValueError(f"p={p!r} must lie in (0, 1)")
    return min(4.0, 1.0 / p) * math.pi * p / math.sin(math.pi * p)


@dataclass(frozen=True)
class GronwallScenario:
    """A simulated (Z, psi, H) quadruple satisfying Z <= int psi Z + M + H.

    Kinds: ``constant`` (Z = H = level, psi = 0), ``deterministic_exponential``
    (psi = lam, H = level, Z = level * e^{lam t}, the equality solution) and
    ``brownian_sup`` (Z = |scale W|, H its running max, psi = 0).  All three
    use M = 0.
    """

    kind: str
    t_end: float = 1.0
    n_steps: int = 64
    level: float = 1.0
    lam: float = 0.0
    scale: float = 1.0

    def generate(self, n_paths: int, seed: int):
        ts = np.linspace(0.0, self.t_end, self.n_steps + 1)
        if self.kind == "constant":
            Z = np.full((n_paths, ts.size), self.level)
            H = Z.copy()
            psi = np.zeros(ts.size)
        elif self.kind == "deterministic_exponential":
            Z = self.level * np.exp(self.lam * ts)[None, :].repeat(n_paths, axis=0)
            H = np.full((n_paths, ts.size), self.level)
            psi = np.full(ts.size, self.lam)
        elif self.kind == "brownian_sup":
            gen = np.random.Generator(
                np.random.Philox(key=np.array([seed, 0], dtype=np.uint64))
            )
            dW = gen.standard_normal((n_paths, self.n_steps)) * math.sqrt(
                ts[1] - ts[0]
            )
            W = np.concatenate([np.zeros((n_paths, 1)), np.cumsum(dW, axis=1)], axis=1)
            Z = np.abs(self.scale * W)
            H = np.maximum.accumulate(Z, axis=1)
            psi = np.zeros(ts.size)
        else:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        return ts, Z, psi, H


def gronwall_bound_check(
    scenario: GronwallScenario,
    p: float,
    mu: float,
    nu: float,
    n_paths: int = 10_000,
    seed: int = 0,
) -> BoundReport:
    """Monte Carlo comparison of both sides of the stochastic Gronwall bound.

    E sup Z^p <= (c_{p nu} + 1)^{1/nu} (E exp(p mu int psi))^{1/mu}
                 (E (H^*)^{p nu})^{1/nu}.
    """
    if abs(1.0 / mu + 1.0 / nu - 1.0) > 1e-12 or mu <= 1.0 or nu <= 1.0:
        raise ValueError("need mu, nu > 1 with 1/mu + 1/nu = 1")
    if not (0.0 < p and p * nu < 1.0):
        raise ValueError("need p > 0 with p*nu < 1")
    ts, Z, psi, H = scenario.generate(n_paths, seed)

    # hypothesis sanity: Z(t) <= int_0^t psi Z ds + H(t) with M = 0
    integrand = psi[None, :] * Z
    cumint = np.concatenate(
        [
            np.zeros((Z.shape[0], 1)),
            np.cumsum(0.5 * (integrand[:, 1:] + integrand[:, :-1])
                      * np.diff(ts)[None, :], axis=1),
        ],
        axis=1,
    )
    slack = Z - cumint - H
    if float(slack.max()) > 1e-9 * max(1.0, float(np.abs(Z).max())):
        raise ValueError("constructed scenario violates the Gronwall hypothesis")

    lhs_samples = Z.max(axis=1) ** p
    lhs = float(lhs_samples.mean())
    se_lhs = float(lhs_samples.std(ddof=1) / math.sqrt(n_paths))

    exp_term = float(np.exp(p * mu * np.trapezoid(psi, ts)))  # psi deterministic
    hstar = np.maximum.accumulate(H, axis=1)[:, -1]
    b_samples = hstar ** (p * nu)
    b_mean = float(b_samples.mean())
    se_b = float(b_samples.std(ddof=1) / math.sqrt(n_paths))
    c = gronwall_constant(p * nu)
    rhs = (c + 1.0) ** (1.0 / nu) * exp_term ** (1.0 / mu) * b_mean ** (1.0 / nu)
    se_rhs = rhs * se_b / (nu * b_mean) if b_mean > 0 else 0.0

    combined = math.hypot(se_lhs, se_rhs)
    return BoundReport(
        check="gronwall",
        estimate=lhs,
        stderr=se_lhs,
        bound=rhs,
        passed=bool(lhs <= rhs + STABLE_SIGMA * combined),
        n=n_paths,
        seed=seed,
        params={
            "scenario": scenario.kind, "p": p, "mu": mu, "nu": nu,
            "c_pnu": c, "rhs_stderr": se_rhs,
        },
    )
