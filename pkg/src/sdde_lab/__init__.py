"""Simulation and statistical verification for delay equations with singular drift.

The toolkit simulates stochastic delay differential equations

    dX(t) = B(t, X_t) dt + sigma(t, X(t)) dW(t),   X_0 = x,

both directly (Euler-Maruyama) and by Girsanov reweighting of the driftless
process, applies the one-dimensional drift-removal (Zvonkin) transform, and
runs desk-scale statistical probes of continuity in the initial segment,
shared-noise stability, and the supporting moment and maximal-function
estimates.
"""

__version__ = "0.1.0"

from .paths import (
    BrownianDriver,
    PathSegment,
    SamplePath,
    TimeGrid,
    constant_segment,
    interpolate,
    segment_at,
    sup_norm,
)
from .models import (
    ConditionEnvelopes,
    DiffusionField,
    DriftFunctional,
    Measure,
    ModelSpec,
    check_condition_driftc1,
    check_ellipticity,
    check_lipschitz,
    constant_diffusion,
    kernel_drift,
    make_model,
    sgn_delay_drift,
)
from .solver import (
    CoupledPair,
    SolverConfig,
    coupled_paths,
    direct_expectation,
    driftless_path,
    euler_maruyama,
)
from .girsanov import (
    EstimatorReport,
    WeightedSample,
    ess,
    girsanov_weight,
    novikov_partition,
    weighted_expectation,
)
from .zvonkin import (
    DeltaReport,
    PdeGrid,
    PdeSolution,
    drift_removal_residual,
    gradient_bound,
    select_delta,
    solve_backward_pde,
    transform_path,
)
from .analysis import (
    BoundReport,
    GronwallScenario,
    ProbeReport,
    exp_sup_bound_check,
    gronwall_bound_check,
    gronwall_constant,
    hardy_littlewood_check,
    krylov_check,
    maximal_function,
    stability_probe,
    strong_feller_probe,
)
from .harness import RunManifest, run_experiment, validate_config
