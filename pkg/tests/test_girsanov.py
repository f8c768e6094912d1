import numpy as np
import pytest
from scipy import integrate

from sdde_lab.girsanov import (
    EstimationError,
    EstimatorReport,
    PartitionError,
    ess,
    girsanov_weight,
    log_ess,
    novikov_partition,
    weighted_expectation,
)
from sdde_lab.models import make_model
from sdde_lab.paths import BrownianDriver, TimeGrid, constant_segment
from sdde_lab.solver import SolverConfig, direct_expectation, driftless_path


def tanh_endpoint(seg):
    return np.tanh(seg.value_at(0.0)[..., 0])


def gauss_expect(func):
    """E func(Z) for Z ~ N(0,1) by adaptive quadrature (independent oracle)."""
    phi = lambda z: np.exp(-z * z / 2.0) / np.sqrt(2.0 * np.pi)
    val, err = integrate.quad(lambda z: func(z) * phi(z), -12.0, 12.0)
    assert err < 1e-10
    return val


class TestGirsanovWeight:
    def test_zero_drift_weight_one(self):
        g = TimeGrid(r=0.5, T=1.0, h=0.25)
        model = make_model("linear", {"a": 0.0, "c": 0.0, "r": 0.5})
        path = driftless_path(model, constant_segment(g, 0.0), SolverConfig(grid=g),
                              BrownianDriver(0, 0, g))
        ws = girsanov_weight(model, path)
        assert ws.log_weight == 0.0
        assert ws.weight == 1.0
        assert ws.quad_var == 0.0

    def test_constant_drift_closed_form(self):
        # B = 1, sigma = 1, increments summing to W(1) = 0: weight exp(-1/2)
        g = TimeGrid(r=0.5, T=1.0, h=0.25)
        model = make_model("linear", {"a": 0.0, "c": 1.0, "r": 0.5})
        incr = np.array([[0.5], [-0.25], [0.5], [-0.75]])
        assert incr.sum() == 0.0
        path = driftless_path(model, constant_segment(g, 0.0), SolverConfig(grid=g),
                              increments=incr)
        ws = girsanov_weight(model, path)
        assert ws.log_weight == pytest.approx(-0.5, abs=1e-15)
        assert ws.weight == pytest.approx(np.exp(-0.5))

    def test_sgn_delay_weight_reads_initial_segment(self):
        # on [0, 1] the drift sees only the zero initial segment, so a = 1
        # throughout and the weight is exp(W(1) - 1/2)
        g = TimeGrid(r=1.0, T=1.0, h=0.125)
        model = make_model("sgn_delay")
        rng = np.random.default_rng(8)
        incr = rng.normal(size=(g.n_main, 1)) * np.sqrt(g.h)
        path = driftless_path(model, constant_segment(g, 0.0), SolverConfig(grid=g),
                              increments=incr)
        ws = girsanov_weight(model, path)
        assert ws.log_weight == pytest.approx(float(incr.sum()) - 0.5, abs=1e-14)
        assert ws.quad_var == pytest.approx(1.0)

    def test_window_exponents_partition_quad_var(self):
        g = TimeGrid(r=1.0, T=1.0, h=0.125)
        model = make_model("sgn_delay")
        path = driftless_path(model, constant_segment(g, 0.0),
                              SolverConfig(grid=g, seed=2), BrownianDriver(2, 0, g))
        ws = girsanov_weight(model, path, windows=(0.0, 0.5, 1.0))
        assert len(ws.window_exponents) == 2
        assert sum(ws.window_exponents) == pytest.approx(0.5 * ws.quad_var)

    def test_refinement_invariance_for_constant_drift(self):
        # with dyadic increments, coarsening them reproduces the log weight
        # exactly: the exponent is beta * W(T) - beta^2 T / 2 either way
        beta = 0.75
        g_fine = TimeGrid(r=0.5, T=1.0, h=0.125)
        g_coarse = TimeGrid(r=0.5, T=1.0, h=0.25)
        model = make_model("linear", {"a": 0.0, "c": beta, "r": 0.5})
        rng = np.random.default_rng(3)
        fine = (rng.integers(-8, 9, size=(g_fine.n_main, 1)) * 2.0**-5)
        coarse = fine.reshape(-1, 2, 1).sum(axis=1)
        w_fine = girsanov_weight(
            model,
            driftless_path(model, constant_segment(g_fine, 0.0),
                           SolverConfig(grid=g_fine), increments=fine),
        )
        w_coarse = girsanov_weight(
            model,
            driftless_path(model, constant_segment(g_coarse, 0.0),
                           SolverConfig(grid=g_coarse), increments=coarse),
        )
        assert w_fine.log_weight == w_coarse.log_weight


class TestWeightedExpectation:
    def test_mean_one_martingale(self):
        # E_P D(t) = 1: weighted mean of 1 within 4 stderr
        g = TimeGrid(r=1.0, T=1.0, h=2**-5)
        one = lambda seg: np.ones(seg.values.shape[:-2])
        for family, params in (("sgn_delay", {}), ("linear", {"a": 0.0, "c": 0.5})):
            model = make_model(family, params)
            cfg = SolverConfig(grid=g, seed=13, n=10_000)
            rep = weighted_expectation(model, constant_segment(g, 0.0), one, 1.0, cfg)
            assert abs(rep.estimate - 1.0) <= 4 * rep.stderr
            assert 0 < rep.ess <= rep.n

    def test_zero_drift_equals_unweighted_exactly(self):
        g = TimeGrid(r=0.5, T=1.0, h=0.25)
        model = make_model("linear", {"a": 0.0, "c": 0.0, "r": 0.5})
        x0 = constant_segment(g, 0.2)
        cfg = SolverConfig(grid=g, seed=14, n=256)
        rep_w = weighted_expectation(model, x0, tanh_endpoint, 1.0, cfg)
        rep_d = direct_expectation(model, x0, tanh_endpoint, 1.0, cfg)
        assert rep_w.estimate == rep_d.estimate
        assert rep_w.ess == rep_w.n

    def test_constant_drift_against_em_oracle(self):
        # d=1, B = beta: Girsanov estimate matches the direct EM oracle
        beta = 0.5
        g = TimeGrid(r=0.5, T=1.0, h=2**-6)
        model = make_model("linear", {"a": 0.0, "c": beta, "r": 0.5})
        x0 = constant_segment(g, 0.3)
        cfg = SolverConfig(grid=g, seed=15, n=20_000)
        rep_g = weighted_expectation(model, x0, tanh_endpoint, 1.0, cfg)
        rep_e = direct_expectation(
            model, x0, tanh_endpoint, 1.0,
            SolverConfig(grid=g, seed=16, n=20_000),
        )
        combined = np.hypot(rep_g.stderr, rep_e.stderr)
        assert abs(rep_g.estimate - rep_e.estimate) <= 3 * combined
        # and both agree with the Gaussian closed form X(1) ~ N(x0 + beta, 1)
        oracle = gauss_expect(lambda z: np.tanh(z + 0.3 + beta))
        assert abs(rep_g.estimate - oracle) <= 4 * rep_g.stderr

    def test_estimator_equivalence_battery(self):
        from sdde_lab.analysis import functional_battery

        g = TimeGrid(r=1.0, T=1.0, h=2**-5)
        model = make_model(
            "kernel",
            {"kernel": "tanh", "density": {"lo": -1.0, "hi": -0.5, "value": 1.0}},
        )
        x0 = constant_segment(g, 0.1)
        for f, bound, label in functional_battery():
            rep_g = weighted_expectation(
                model, x0, f, 1.0, SolverConfig(grid=g, seed=18, n=8000),
                f_bound=bound,
            )
            rep_e = direct_expectation(
                model, x0, f, 1.0, SolverConfig(grid=g, seed=19, n=8000)
            )
            combined = np.hypot(rep_g.stderr, rep_e.stderr)
            assert abs(rep_g.estimate - rep_e.estimate) <= 3 * combined, label

    def test_exponential_moment_guard(self):
        # C1 = 0 model: mean exp(int f(t, M(t)) dt) finite and stable in N
        g = TimeGrid(r=1.0, T=1.0, h=2**-5)
        model = make_model("sgn_delay")
        x0 = constant_segment(g, 0.0)
        times = g.times()[g.n_pre :]

        def exp_occupation(n, seed):
            from sdde_lab.paths import increment_block
            from sdde_lab.solver import simulate_batch

            incr = increment_block(seed, g, 1, 0, n)
            states, _ = simulate_batch(model, x0, g, incr, driftless=True)
            fv = 1.0 / (1.0 + states[:, g.n_pre :, 0] ** 2)
            vals = np.exp(np.trapezoid(fv, dx=g.h, axis=1))
            return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n))

        m1, s1 = exp_occupation(2000, 31)
        m2, s2 = exp_occupation(8000, 32)
        assert np.isfinite(m1) and np.isfinite(m2)
        assert abs(m1 - m2) <= 4 * np.hypot(s1, s2)

    def test_all_overflow_raises(self):
        g = TimeGrid(r=0.5, T=1.0, h=0.25)
        model = make_model("linear", {"a": 0.0, "c": 1e7, "r": 0.5})
        cfg = SolverConfig(grid=g, seed=20, n=64)
        one = lambda seg: np.ones(seg.values.shape[:-2])
        with pytest.raises(EstimationError):
            weighted_expectation(model, constant_segment(g, 0.0), one, 1.0, cfg)

    def test_f_bound_exceedances_counted(self):
        g = TimeGrid(r=0.5, T=1.0, h=0.25)
        model = make_model("linear", {"a": 0.0, "c": 0.0, "r": 0.5})
        cfg = SolverConfig(grid=g, seed=21, n=128)
        f = lambda seg: 2.0 * np.ones(seg.values.shape[:-2])
        rep = weighted_expectation(model, constant_segment(g, 0.0), f, 1.0, cfg,
                                   f_bound=1.0)
        assert rep.flagged == 128
        assert rep.estimate == 1.0  # clipped at the declared bound


class TestNovikov:
    def test_zero_drift_single_window(self):
        g = TimeGrid(r=0.5, T=1.0, h=0.125)
        model = make_model("linear", {"a": 0.0, "c": 0.0, "r": 0.5})
        x0 = constant_segment(g, 0.0)
        bounds = novikov_partition(model, x0, 1.0, target=np.e, pilot_n=64)
        assert bounds == [0.0, 1.0]

    def test_deterministic_rate_window_length(self):
        # |a|^2 = c: maximal window length is 2 ln(target) / c, to one step
        c = 4.0
        g = TimeGrid(r=0.5, T=1.0, h=0.0625)
        model = make_model("linear", {"a": 0.0, "c": np.sqrt(c), "r": 0.5})
        x0 = constant_segment(g, 0.0)
        target = np.e
        bounds = novikov_partition(model, x0, 1.0, target=target, pilot_n=32)
        hand = 2.0 * np.log(target) / c
        for left, right in zip(bounds[:-2], bounds[1:-1]):
            assert abs((right - left) - hand) <= g.h + 1e-12

    def test_sgn_delay_single_window_at_target_e(self):
        # |a|^2 = 1 on [0,1]: exp(1/2) <= e so one window suffices
        g = TimeGrid(r=1.0, T=1.0, h=0.125)
        model = make_model("sgn_delay")
        x0 = constant_segment(g, 0.0)
        bounds = novikov_partition(model, x0, 1.0, target=float(np.e), pilot_n=32)
        assert bounds == [0.0, 1.0]

    def test_partition_failure_for_violent_drift(self):
        g = TimeGrid(r=0.5, T=1.0, h=0.0625)
        model = make_model("linear", {"a": 0.0, "c": 100.0, "r": 0.5})
        with pytest.raises(PartitionError):
            novikov_partition(model, constant_segment(g, 0.0), 1.0,
                              target=float(np.e), pilot_n=16)

    def test_target_validation(self):
        g = TimeGrid(r=0.5, T=1.0, h=0.125)
        model = make_model("linear", {"a": 0.0, "c": 0.0, "r": 0.5})
        with pytest.raises(ValueError):
            novikov_partition(model, constant_segment(g, 0.0), 1.0, target=1.0,
                              pilot_n=8)


class TestEss:
    def test_equal_weights(self):
        assert ess(np.ones(7)) == pytest.approx(7.0)

    def test_single_effective_sample(self):
        assert ess([1.0, 0.0, 0.0, 0.0]) == pytest.approx(1.0)

    def test_hand_value(self):
        assert ess([2.0, 1.0, 1.0]) == pytest.approx(16.0 / 6.0)

    def test_log_ess_matches(self):
        w = np.array([2.0, 1.0, 1.0])
        assert log_ess(np.log(w)) == pytest.approx(16.0 / 6.0)

    def test_degenerate_inputs(self):
        with pytest.raises(ValueError):
            ess([])
        with pytest.raises(ValueError):
            ess([0.0, 0.0])
        with pytest.raises(ValueError):
            ess([1.0, -1.0])


class TestEstimatorReport:
    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            EstimatorReport(estimate=0.0, stderr=0.1, n=10, ess=0.0)
        with pytest.raises(ValueError):
            EstimatorReport(estimate=0.0, stderr=-0.1, n=10, ess=5.0)

    def test_json_fields(self):
        rep = EstimatorReport(estimate=1.0, stderr=0.1, n=10, ess=5.0,
                              flagged=1, seed=7, config_digest="ab")
        assert rep.to_dict() == {
            "estimate": 1.0, "stderr": 0.1, "n": 10, "ess": 5.0,
            "flagged": 1, "seed": 7, "config_digest": "ab",
        }
