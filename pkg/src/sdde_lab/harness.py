"""Experiment configuration, orchestration and persistence.

Configs are JSON with a strict schema: unknown keys are errors, not
warnings.  Every run writes its reports, CSV tables and one figure per
experiment into the output directory, then a manifest listing each file
with its SHA-256.  Given (config, seed), every output byte is reproducible
for any worker count; wall-clock duration lives only in the manifest.

The config digest is the hex SHA-256 of the canonicalized config text with
the output location and worker count stripped, so runs into different
directories still stamp their reports identically.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    GronwallScenario,
    exp_sup_bound_check,
    gronwall_bound_check,
    gronwall_constant,
    hardy_littlewood_check,
    krylov_check,
    make_functional,
    maximal_function,
    default_radii,
    stability_probe,
    strong_feller_probe,
)
from .girsanov import (
    girsanov_weight,
    log_ess,
    novikov_partition,
    weighted_expectation,
)
from .models import (
    DriftFunctional,
    ModelSpec,
    check_condition_driftc1,
    check_ellipticity,
    check_lipschitz,
    constant_diffusion,
    make_model,
    MODEL_FAMILIES,
    sgn,
)
from .paths import BrownianDriver, TimeGrid, constant_segment, path_csv_text
from .solver import SolverConfig, driftless_path, euler_maruyama
from .zvonkin import (
    PdeGrid,
    drift_removal_residual,
    gradient_bound,
    select_delta,
    solve_backward_pde,
)
from . import figures

__all__ = [
    "ConfigError",
    "RunManifest",
    "RunResult",
    "validate_config",
    "run_experiment",
    "config_digest",
]

KINDS = (
    "simulate",
    "strong-feller",
    "stability",
    "girsanov-check",
    "zvonkin",
    "bounds",
    "validate",
)


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Canonical serialization
# ---------------------------------------------------------------------------


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def config_digest(cfg: dict) -> str:
    stripped = {k: v for k, v in cfg.items() if k != "output"}
    text = json.dumps(stripped, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


@dataclass(frozen=True)
class RunManifest:
    config_digest: str
    tool_version: str
    duration_seconds: float
    complete: bool
    files: tuple[tuple[str, str], ...]  # (name, sha256)

    def to_dict(self) -> dict:
        return {
            "config_digest": self.config_digest,
            "tool_version": self.tool_version,
            "duration_seconds": self.duration_seconds,
            "complete": self.complete,
            "files": [{"name": n, "sha256": s} for n, s in self.files],
        }


@dataclass
class RunResult:
    manifest: RunManifest
    verdicts: list[str] = field(default_factory=list)
    failed_checks: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------

_SECTION_KEYS = {
    "model": {"family", "params"},
    "grid": {"r", "T", "h"},
    "mc": {"n", "seed", "chunk_size", "clip"},
    "probe": {"t", "ys", "functional", "estimator", "gamma"},
    "girsanov": {"t", "target", "pilot_n", "functional", "save_weights"},
    "zvonkin": {"mode", "sigma", "drift", "L", "dx", "dt", "t_lo", "t_hi",
                "T0", "threshold"},
    "validate": {"n_points", "span"},
    "output": {"dir"},
}

_TOP_KEYS = {
    "simulate": {"kind", "model", "grid", "mc", "x0", "save_paths", "output"},
    "strong-feller": {"kind", "model", "grid", "mc", "x0", "probe", "output"},
    "stability": {"kind", "model", "grid", "mc", "x0", "probe", "output"},
    "girsanov-check": {"kind", "model", "grid", "mc", "x0", "girsanov", "output"},
    "zvonkin": {"kind", "zvonkin", "model", "grid", "mc", "x0", "output"},
    "bounds": {"kind", "model", "grid", "mc", "x0", "checks", "output"},
    "validate": {"kind", "model", "grid", "mc", "x0", "validate", "output"},
}

_CHECK_KEYS = {
    "exp-sup": {"kind", "alpha"},
    "krylov": {"kind", "p", "x_radius", "f"},
    "gronwall": {"kind", "scenario", "p", "mu", "nu", "n_paths"},
    "gronwall-constant": {"kind", "p"},
    "maximal": {"kind", "phi", "grid_lo", "grid_hi", "grid_dx", "x", "r_max"},
    "hardy-littlewood": {"kind", "phi", "grid_lo", "grid_hi", "grid_dx",
                         "pair_step"},
}

_DRIFT_KEYS = {"constant": {"kind", "value"}, "sgn": {"kind", "scale"}}


def _unknown_keys(section: dict, allowed: set, where: str, out: list[str]) -> None:
    for key in section:
        if key not in allowed:
            out.append(f"unknown key {key!r} in {where}")


def _build_grid(cfg: dict) -> TimeGrid:
    g = cfg["grid"]
    return TimeGrid(r=float(g["r"]), T=float(g["T"]), h=float(g["h"]))


def _build_model(cfg: dict, horizon: float | None = None) -> ModelSpec:
    m = cfg["model"]
    hor = horizon if horizon is not None else float(cfg.get("grid", {}).get("T", 1.0))
    return make_model(m["family"], m.get("params", {}), horizon=hor)


def _zvonkin_drift(spec: dict):
    kind = spec.get("kind")
    if kind == "constant":
        beta = float(spec.get("value", 0.0))
        return lambda t, x: np.full_like(np.asarray(x, dtype=float), beta)
    if kind == "sgn":
        scale = float(spec.get("scale", 1.0))
        return lambda t, x: scale * sgn(x)
    raise ConfigError(f"unknown zvonkin drift kind {spec.get('kind')!r}")


def validate_config(cfg: dict) -> list[str]:
    """Diagnostics for a config dict; empty list iff the config is runnable."""
    diags: list[str] = []
    kind = cfg.get("kind")
    if kind not in KINDS:
        return [f"kind must be one of {KINDS}, got {kind!r}"]
    _unknown_keys(cfg, _TOP_KEYS[kind], "top level", diags)
    for section, keys in _SECTION_KEYS.items():
        if section in cfg and isinstance(cfg[section], dict):
            _unknown_keys(cfg[section], keys, f"section {section!r}", diags)

    needs_grid = kind != "zvonkin" or cfg.get("zvonkin", {}).get("mode") == "residual"
    grid = None
    if needs_grid:
        if "grid" not in cfg:
            diags.append("missing section 'grid'")
        else:
            try:
                grid = _build_grid(cfg)
            except Exception as exc:
                diags.append(f"grid: {exc}")
    model = None
    needs_model = kind not in ("zvonkin", "bounds") or (
        kind == "bounds"
        and any(c.get("kind") in ("exp-sup", "krylov")
                for c in cfg.get("checks", []) if isinstance(c, dict))
    )
    if needs_model:
        if "model" not in cfg:
            diags.append("missing section 'model'")
        else:
            fam = cfg["model"].get("family")
            if fam not in MODEL_FAMILIES:
                diags.append(
                    f"model.family {fam!r} unknown; have {sorted(MODEL_FAMILIES)}"
                )
            else:
                try:
                    model = _build_model(cfg)
                except Exception as exc:
                    diags.append(f"model: {exc}")
    if "mc" in cfg:
        n = cfg["mc"].get("n", 1)
        if not isinstance(n, int) or n < 1:
            diags.append("mc.n must be an integer >= 1")
    if model is not None and grid is not None and model.delay != grid.r:
        diags.append(
            f"model delay r={model.delay:g} differs from grid r={grid.r:g}"
        )

    if kind in ("strong-feller", "stability"):
        probe = cfg.get("probe")
        if probe is None:
            diags.append("missing section 'probe'")
        else:
            if not probe.get("ys"):
                diags.append("probe.ys must be a nonempty list of initial values")
            if grid is not None and "t" in probe:
                try:
                    i = grid.index_of(float(probe["t"]))
                    if i <= grid.n_pre:
                        diags.append("probe.t must be a positive grid time")
                except Exception as exc:
                    diags.append(f"probe.t: {exc}")
            if kind == "stability":
                gam = float(probe.get("gamma", 1.0))
                if not (0.0 < gam < 2.0):
                    diags.append("probe.gamma must lie in (0, 2)")
            if kind == "strong-feller":
                est = probe.get("estimator", "girsanov")
                if est not in ("girsanov", "euler"):
                    diags.append(f"probe.estimator {est!r} not in ('girsanov', 'euler')")
                try:
                    make_functional(probe.get("functional", {"name": "tanh_endpoint"}))
                except Exception as exc:
                    diags.append(f"probe.functional: {exc}")
    if kind == "girsanov-check":
        sec = cfg.get("girsanov", {})
        if float(sec.get("target", np.e)) <= 1.0:
            diags.append("girsanov.target must exceed 1")
    if kind == "zvonkin":
        sec = cfg.get("zvonkin")
        if sec is None:
            diags.append("missing section 'zvonkin'")
        else:
            mode = sec.get("mode")
            if mode not in ("solve", "delta", "residual"):
                diags.append(f"zvonkin.mode {mode!r} not in ('solve', 'delta', 'residual')")
            drift = sec.get("drift", {})
            if isinstance(drift, dict):
                dk = drift.get("kind")
                if dk not in _DRIFT_KEYS:
                    diags.append(f"zvonkin.drift.kind {dk!r} unknown")
                else:
                    _unknown_keys(drift, _DRIFT_KEYS[dk], "zvonkin.drift", diags)
    if kind == "bounds":
        checks = cfg.get("checks")
        if not checks:
            diags.append("bounds experiment needs a nonempty 'checks' list")
        else:
            for i, chk in enumerate(checks):
                ck = chk.get("kind")
                if ck not in _CHECK_KEYS:
                    diags.append(f"checks[{i}].kind {ck!r} unknown")
                    continue
                _unknown_keys(chk, _CHECK_KEYS[ck], f"checks[{i}]", diags)
                if ck == "exp-sup" and model is not None and grid is not None:
                    alpha = float(chk.get("alpha", 0.0))
                    limit = 1.0 / (2 * model.dim * model.c_sigma * grid.T)
                    if alpha >= limit:
                        diags.append(
                            f"checks[{i}]: alpha >= 1/(2dC_sigmaT) = {limit:g}"
                        )
                if ck == "gronwall-constant":
                    p = float(chk.get("p", 0.5))
                    if not (0.0 < p < 1.0):
                        diags.append(f"checks[{i}]: p must lie in (0, 1)")
    return diags


# ---------------------------------------------------------------------------
# Experiment runners
# ---------------------------------------------------------------------------


def _mc_config(cfg: dict, grid: TimeGrid, workers: int) -> SolverConfig:
    mc = cfg.get("mc", {})
    return SolverConfig(
        grid=grid,
        seed=int(mc.get("seed", 0)),
        n=int(mc.get("n", 1)),
        clip=float(mc.get("clip", 1e12)),
        chunk_size=int(mc.get("chunk_size", 8192)),
        workers=workers,
    )


def _x0_segment(cfg: dict, grid: TimeGrid, dim: int):
    return constant_segment(grid, np.atleast_1d(cfg.get("x0", 0.0)), dim)


class _Writer:
    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.names: list[str] = []

    def text(self, name: str, content: str) -> None:
        p = self.out_dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(content, newline="\n")
        self.names.append(name)

    def json(self, name: str, obj) -> None:
        self.text(name, canonical_json(obj))

    def figure(self, name: str, render, *args) -> None:
        p = self.out_dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        render(*args, p)
        self.names.append(name)


def _run_simulate(cfg, writer, workers, digest, result):
    grid = _build_grid(cfg)
    model = _build_model(cfg)
    mc = _mc_config(cfg, grid, workers)
    x0 = _x0_segment(cfg, grid, model.dim)
    n_save = min(mc.n, int(cfg.get("save_paths", 16)))
    paths = []
    for rep in range(mc.n):
        driver = BrownianDriver(mc.seed, rep, grid)
        path = euler_maruyama(model, x0, mc, driver=driver)
        if rep < n_save:
            paths.append(path)
            writer.text(f"paths/path_{rep:04d}.csv", path_csv_text(path))
    writer.figure("paths.png", figures.render_paths, paths)


def _run_girsanov_check(cfg, writer, workers, digest, result):
    grid = _build_grid(cfg)
    model = _build_model(cfg)
    mc = _mc_config(cfg, grid, workers)
    x0 = _x0_segment(cfg, grid, model.dim)
    sec = cfg.get("girsanov", {})
    t = float(sec.get("t", grid.T))
    f, bound, label = make_functional(sec.get("functional", {"name": "one"}))
    report = weighted_expectation(model, x0, f, t, mc, f_bound=bound)
    rep_dict = report.to_dict()
    rep_dict["config_digest"] = digest
    rep_dict["functional"] = label
    writer.json("report.json", rep_dict)

    boundaries = novikov_partition(
        model, x0, grid.T,
        target=float(sec.get("target", np.e)),
        pilot_n=int(sec.get("pilot_n", 256)),
        seed=mc.seed,
        clip=mc.clip,
    )
    writer.json("novikov.json", {
        "boundaries": boundaries,
        "target": float(sec.get("target", np.e)),
        "pilot_n": int(sec.get("pilot_n", 256)),
        "config_digest": digest,
    })

    n_weights = min(mc.n, int(sec.get("save_weights", 2048)))
    lws = []
    lines = ["replicate,log_weight"]
    for rep in range(n_weights):
        path = driftless_path(model, x0, mc, driver=BrownianDriver(mc.seed, rep, grid))
        ws = girsanov_weight(model, path, clip=mc.clip)
        lws.append(ws.log_weight)
        lines.append(f"{rep},{ws.log_weight:.17g}")
    writer.text("weights.csv", "\n".join(lines) + "\n")
    writer.figure("weights.png", figures.render_weights, lws, log_ess(lws))


def _probe_segments(cfg, grid, dim):
    probe = cfg["probe"]
    x = _x0_segment(cfg, grid, dim)
    ys = [constant_segment(grid, np.atleast_1d(v), dim) for v in probe["ys"]]
    return probe, x, ys


def _run_strong_feller(cfg, writer, workers, digest, result):
    grid = _build_grid(cfg)
    model = _build_model(cfg)
    mc = _mc_config(cfg, grid, workers)
    probe, x, ys = _probe_segments(cfg, grid, model.dim)
    f, bound, label = make_functional(probe.get("functional", {"name": "tanh_endpoint"}))
    report = strong_feller_probe(
        model, f, x, ys, float(probe["t"]), mc,
        estimator=probe.get("estimator", "girsanov"), f_bound=bound,
    )
    d = report.to_dict()
    d["functional"] = label
    d["config_digest"] = digest
    writer.json("probe_report.json", d)
    writer.text("probe.csv", report.csv_text())
    writer.figure("probe.png", figures.render_probe, report)
    result.verdicts.append(report.verdict)


def _run_stability(cfg, writer, workers, digest, result):
    grid = _build_grid(cfg)
    model = _build_model(cfg)
    mc = _mc_config(cfg, grid, workers)
    probe, x, ys = _probe_segments(cfg, grid, model.dim)
    report = stability_probe(
        model, x, ys, float(probe["t"]), float(probe.get("gamma", 1.0)), mc
    )
    d = report.to_dict()
    d["config_digest"] = digest
    writer.json("probe_report.json", d)
    writer.text("probe.csv", report.csv_text())
    writer.figure("probe.png", figures.render_probe, report)
    result.verdicts.append(report.verdict)


def _run_zvonkin(cfg, writer, workers, digest, result):
    sec = cfg["zvonkin"]
    sigma = float(sec.get("sigma", 1.0))
    b = _zvonkin_drift(sec.get("drift", {"kind": "constant", "value": 0.0}))
    mode = sec["mode"]
    if mode == "solve":
        grid = PdeGrid(
            x_half=float(sec["L"]), dx=float(sec["dx"]),
            t_lo=float(sec.get("t_lo", 0.0)), t_hi=float(sec["t_hi"]),
            dt=float(sec["dt"]),
        )
        sol = solve_backward_pde(sigma, b, grid)
        writer.text("solution.csv", sol.csv_text())
        writer.json("gradient.json", {
            "gradient_bound": gradient_bound(sol),
            "config_digest": digest,
        })
        writer.figure("solution.png", figures.render_pde_solution, sol)
    elif mode == "delta":
        report = select_delta(
            sigma, b, float(sec["T0"]), x_half=float(sec["L"]),
            dx=float(sec["dx"]), dt=float(sec["dt"]),
            threshold=float(sec.get("threshold", 0.5)),
        )
        d = report.to_dict()
        d["config_digest"] = digest
        writer.json("delta.json", d)
        writer.figure("delta.png", figures.render_delta_report, report)
    else:  # residual
        grid = _build_grid(cfg)
        mc = _mc_config(cfg, grid, workers)
        pde_grid = PdeGrid(
            x_half=float(sec["L"]), dx=float(sec["dx"]),
            t_lo=float(sec.get("t_lo", 0.0)), t_hi=float(sec.get("t_hi", grid.T)),
            dt=float(sec["dt"]),
        )
        sol = solve_backward_pde(sigma, b, pde_grid)
        drift_spec = sec.get("drift", {"kind": "constant", "value": 0.0})
        pointwise = _zvonkin_drift(drift_spec)
        model = ModelSpec(
            dim=1, delay=grid.r,
            drift=DriftFunctional(
                func=lambda t, seg: pointwise(t, seg.value_at(0.0)),
                pointwise=pointwise,
            ),
            diffusion=constant_diffusion(sigma, 1),
            c_sigma=max(sigma**2, sigma**-2, 1.0),
            name="zvonkin-residual",
        )
        x0 = _x0_segment(cfg, grid, 1)
        report = drift_removal_residual(model, x0, sol, mc)
        d = report.to_dict()
        d["config_digest"] = digest
        writer.json("residual.json", d)
        writer.figure("residual.png", figures.render_residual, report)


def _krylov_field(spec: dict):
    kind = spec.get("kind", "const_box")
    if kind == "const_box":
        half = float(spec.get("half_width", 10.0))
        height = float(spec.get("height", 1.0))
        return lambda t, x: height * (np.abs(x) <= half).astype(float)
    if kind == "scaled_bump":
        eps = float(spec.get("eps", 1.0))
        return lambda t, x: eps**-0.5 * (np.abs(x) <= eps).astype(float)
    raise ConfigError(f"unknown krylov field kind {kind!r}")


def _sample_phi(spec: dict, xs: np.ndarray):
    kind = spec.get("kind", "sin")
    if kind == "indicator":
        lo, hi = float(spec.get("lo", -1.0)), float(spec.get("hi", 1.0))
        return ((xs >= lo) & (xs <= hi)).astype(float), None
    if kind == "sin":
        return np.sin(xs), np.cos(xs)
    if kind == "linear":
        m = float(spec.get("slope", 1.0))
        return m * xs, np.full_like(xs, m)
    raise ConfigError(f"unknown phi kind {kind!r}")


def _run_bounds(cfg, writer, workers, digest, result):
    reports = []
    for chk in cfg["checks"]:
        ck = chk["kind"]
        if ck == "exp-sup":
            grid = _build_grid(cfg)
            model = _build_model(cfg)
            mc = _mc_config(cfg, grid, workers)
            x0 = _x0_segment(cfg, grid, model.dim)
            rep = exp_sup_bound_check(model, x0, float(chk["alpha"]), grid.T, mc)
        elif ck == "krylov":
            grid = _build_grid(cfg)
            model = _build_model(cfg)
            mc = _mc_config(cfg, grid, workers)
            rep = krylov_check(
                model, _krylov_field(chk.get("f", {})), float(chk["p"]),
                grid.T, mc, x_radius=float(chk.get("x_radius", 10.0)),
            )
        elif ck == "gronwall":
            scen = GronwallScenario(**chk.get("scenario", {"kind": "constant"}))
            rep = gronwall_bound_check(
                scen, float(chk["p"]), float(chk["mu"]), float(chk["nu"]),
                n_paths=int(chk.get("n_paths", 10000)),
                seed=int(cfg.get("mc", {}).get("seed", 0)),
            )
        elif ck == "gronwall-constant":
            p = float(chk["p"])
            from .analysis import BoundReport
            rep = BoundReport(
                check="gronwall-constant", estimate=gronwall_constant(p),
                stderr=0.0, bound=None, passed=True, params={"p": p},
            )
        elif ck == "maximal":
            xs = np.arange(
                float(chk["grid_lo"]), float(chk["grid_hi"]) + 1e-12,
                float(chk["grid_dx"]),
            )
            phi, _ = _sample_phi(chk.get("phi", {}), xs)
            x = float(chk["x"])
            radii = default_radii(xs, x)
            r_max = float(chk.get("r_max", radii[-1]))
            radii = radii[radii <= r_max + 1e-12]
            from .analysis import BoundReport
            rep = BoundReport(
                check="maximal",
                estimate=maximal_function(xs, phi, x, radii),
                stderr=0.0, bound=None, passed=True,
                params={"x": x, "r_max": r_max},
            )
        elif ck == "hardy-littlewood":
            xs = np.arange(
                float(chk["grid_lo"]), float(chk["grid_hi"]) + 1e-12,
                float(chk["grid_dx"]),
            )
            phi, dphi = _sample_phi(chk.get("phi", {}), xs)
            if dphi is None:
                raise ConfigError("hardy-littlewood needs a differentiable phi")
            step = float(chk.get("pair_step", 0.1))
            pts = np.arange(xs[0] + 1.0, xs[-1] - 1.0 + 1e-12, step)
            pairs = [(float(a), float(b)) for a, b in zip(pts[:-1], pts[1:])]
            rep = hardy_littlewood_check(xs, phi, dphi, pairs)
        else:  # pragma: no cover - schema-validated
            raise ConfigError(f"unknown check kind {ck!r}")
        if not rep.passed:
            result.failed_checks.append(rep.check)
        reports.append(rep)
    writer.json("bounds.json", {
        "checks": [r.to_dict() for r in reports],
        "config_digest": digest,
    })
    writer.figure("bounds.png", figures.render_bounds, reports)


def _run_validate(cfg, writer, workers, digest, result):
    grid = _build_grid(cfg)
    model = _build_model(cfg)
    mc = _mc_config(cfg, grid, workers)
    sec = cfg.get("validate", {})
    n_points = int(sec.get("n_points", 64))
    span = float(sec.get("span", 5.0))
    rng = np.random.Generator(
        np.random.Philox(key=np.array([mc.seed, 2**32], dtype=np.uint64))
    )
    points = [
        (float(rng.uniform(0, grid.T)), rng.uniform(-span, span, model.dim))
        for _ in range(n_points)
    ]
    pairs = [
        (float(rng.uniform(0, grid.T)), rng.uniform(-span, span, model.dim),
         rng.uniform(-span, span, model.dim))
        for _ in range(n_points)
    ]
    x0 = _x0_segment(cfg, grid, model.dim)
    probes = [
        driftless_path(model, x0, mc, driver=BrownianDriver(mc.seed, rep, grid))
        for rep in range(min(mc.n, 8))
    ]
    reports = [
        check_ellipticity(model.diffusion, points, model.c_sigma),
        check_lipschitz(model.diffusion, pairs, model.c_sigma),
        check_condition_driftc1(model, probes),
    ]
    for rep in reports:
        if not rep.passed:
            result.failed_checks.append(rep.check)
    writer.json("validation.json", {
        "reports": [r.to_dict() for r in reports],
        "config_digest": digest,
    })
    writer.figure("validation.png", figures.render_validation, reports)


_RUNNERS = {
    "simulate": _run_simulate,
    "girsanov-check": _run_girsanov_check,
    "strong-feller": _run_strong_feller,
    "stability": _run_stability,
    "zvonkin": _run_zvonkin,
    "bounds": _run_bounds,
    "validate": _run_validate,
}


def run_experiment(cfg: dict, out_dir, workers: int = 1) -> RunResult:
    """Execute one experiment; reports first, manifest last.

    Raises ConfigError for invalid configs.  On a numerical failure the
    manifest is still written, flagged incomplete, before the exception
    propagates.
    """
    diags = validate_config(cfg)
    if diags:
        raise ConfigError("; ".join(diags))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    digest = config_digest(cfg)
    writer = _Writer(out)
    result = RunResult(manifest=None)  # type: ignore[arg-type]
    start = time.monotonic()
    try:
        _RUNNERS[cfg["kind"]](cfg, writer, workers, digest, result)
        complete = True
    except Exception:
        complete = False
        raise
    finally:
        files = tuple(
            (name, _sha256_file(out / name)) for name in sorted(writer.names)
        )
        manifest = RunManifest(
            config_digest=digest,
            tool_version=__version__,
            duration_seconds=time.monotonic() - start,
            complete=complete,
            files=files,
        )
        (out / "manifest.json").write_text(
            canonical_json(manifest.to_dict()), newline="\n"
        )
        result.manifest = manifest
    return result
