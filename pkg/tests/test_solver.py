import numpy as np
import pytest

from sdde_lab.models import DriftFunctional, ModelSpec, constant_diffusion, make_model
from sdde_lab.paths import BrownianDriver, TimeGrid, constant_segment
from sdde_lab.solver import (
    IntegrationError,
    SolverConfig,
    coupled_paths,
    direct_expectation,
    driftless_path,
    euler_maruyama,
)


def grid_127():
    return TimeGrid(r=1.0, T=1.0, h=2**-7)


class TestEulerMaruyama:
    def test_pure_random_walk(self):
        # B = 0, sigma = I: X(t_k) = x0(0) + sum of increments
        g = TimeGrid(r=0.5, T=1.0, h=0.25)
        model = make_model("linear", {"a": 0.0, "c": 0.0, "r": 0.5})
        x0 = constant_segment(g, 0.25)
        rng = np.random.default_rng(0)
        incr = rng.normal(size=(g.n_main, 1)) * 0.5
        path = euler_maruyama(model, x0, SolverConfig(grid=g), increments=incr)
        expected = 0.25 + np.concatenate([[0.0], np.cumsum(incr[:, 0])])
        np.testing.assert_allclose(path.states[g.n_pre :, 0], expected)

    def test_sgn_delay_zero_noise_exact(self):
        # the counterexample's closed forms at W = 0, exactly
        g = grid_127()
        model = make_model("sgn_delay")
        cfg = SolverConfig(grid=g)
        zeros = np.zeros((g.n_main, 1))
        p0 = euler_maruyama(model, constant_segment(g, 0.0), cfg, increments=zeros)
        assert p0.states[-1, 0] == 1.0
        ph = euler_maruyama(model, constant_segment(g, -0.5), cfg, increments=zeros)
        assert ph.states[-1, 0] == -1.5

    def test_initial_segment_bit_identical(self):
        g = TimeGrid(r=1.0, T=1.0, h=0.125)
        model = make_model("sgn_delay")
        x0 = constant_segment(g, -0.37)
        path = euler_maruyama(
            model, x0, SolverConfig(grid=g, seed=3), BrownianDriver(3, 0, g)
        )
        assert np.array_equal(path.states[: g.n_pre + 1], x0.values)

    def test_non_finite_state_raises_with_step(self):
        g = TimeGrid(r=0.5, T=1.0, h=0.25)

        def exploding_sigma(t, x):
            x = np.asarray(x)
            val = np.inf if t >= 0.5 else 1.0
            return np.broadcast_to(val * np.eye(1), x.shape[:-1] + (1, 1))

        from sdde_lab.models import DiffusionField

        model = ModelSpec(
            dim=1, delay=0.5,
            drift=DriftFunctional(func=lambda t, seg: 0.0 * seg.value_at(0.0)),
            diffusion=DiffusionField(exploding_sigma),
        )
        with pytest.raises(IntegrationError) as err:
            euler_maruyama(
                model, constant_segment(g, 0.0), SolverConfig(grid=g),
                increments=np.ones((g.n_main, 1)),
            )
        assert err.value.step == 2

    def test_clip_counts_flag_paths(self):
        g = TimeGrid(r=0.5, T=1.0, h=0.25)
        model = make_model("pointwise_singular", {"x0": 0.0, "alpha": 0.5, "r": 0.5})
        path = euler_maruyama(
            model, constant_segment(g, 0.0), SolverConfig(grid=g, clip=10.0),
            increments=np.zeros((g.n_main, 1)),
        )
        assert path.clip_events > 0
        assert path.flagged


class TestDriftless:
    def test_identity_sigma_is_shifted_walk(self):
        g = TimeGrid(r=0.5, T=1.0, h=0.25)
        model = make_model("linear", {"a": -5.0, "c": 2.0, "r": 0.5})
        x0 = constant_segment(g, 1.5)
        rng = np.random.default_rng(1)
        incr = rng.normal(size=(g.n_main, 1)) * 0.5
        path = driftless_path(model, x0, SolverConfig(grid=g), increments=incr)
        expected = 1.5 + np.concatenate([[0.0], np.cumsum(incr[:, 0])])
        np.testing.assert_allclose(path.states[g.n_pre :, 0], expected)

    def test_half_sigma_scales_walk(self):
        g = TimeGrid(r=0.5, T=1.0, h=0.25)
        model = make_model("linear", {"a": 0.0, "c": 0.0, "sigma": 0.5, "r": 0.5})
        rng = np.random.default_rng(2)
        incr = rng.normal(size=(g.n_main, 1))
        path = driftless_path(
            model, constant_segment(g, 0.0), SolverConfig(grid=g), increments=incr
        )
        expected = 0.5 * np.concatenate([[0.0], np.cumsum(incr[:, 0])])
        np.testing.assert_allclose(path.states[g.n_pre :, 0], expected)

    def test_initial_condition_contract(self):
        g = TimeGrid(r=1.0, T=0.5, h=0.25)
        model = make_model("sgn_delay")
        x0 = constant_segment(g, 0.77)
        path = driftless_path(model, x0, SolverConfig(grid=g, seed=9),
                              BrownianDriver(9, 0, g))
        assert np.array_equal(path.states[: g.n_pre + 1], x0.values)


class TestCoupledPaths:
    def test_same_start_identical(self):
        g = TimeGrid(r=1.0, T=1.0, h=0.125)
        model = make_model("sgn_delay")
        x0 = constant_segment(g, 0.3)
        pair = coupled_paths(model, x0, x0, SolverConfig(grid=g, seed=4),
                             BrownianDriver(4, 0, g))
        assert np.array_equal(pair.first.states, pair.second.states)

    def test_additive_noise_cancels_in_difference(self):
        # B = 0, sigma constant: difference is x0(0) - y0(0) for t >= 0
        g = TimeGrid(r=0.5, T=1.0, h=0.25)
        model = make_model("linear", {"a": 0.0, "c": 0.0, "r": 0.5})
        x0 = constant_segment(g, 1.0)
        y0 = constant_segment(g, -0.5)
        pair = coupled_paths(model, x0, y0, SolverConfig(grid=g, seed=5),
                             BrownianDriver(5, 0, g))
        diff = pair.first.states[g.n_pre :, 0] - pair.second.states[g.n_pre :, 0]
        np.testing.assert_allclose(diff, 1.5)

    def test_linear_drift_zero_noise_difference_recursion(self):
        # B = -X(t), zero noise: difference at t_k is (1-h)^k
        g = TimeGrid(r=0.5, T=1.0, h=0.25)
        model = make_model("linear", {"a": -1.0, "c": 0.0, "r": 0.5})
        x0 = constant_segment(g, 1.0)
        y0 = constant_segment(g, 0.0)
        pair = coupled_paths(model, x0, y0, SolverConfig(grid=g),
                             increments=np.zeros((g.n_main, 1)))
        diff = pair.first.states[g.n_pre :, 0] - pair.second.states[g.n_pre :, 0]
        hand = np.array([(1 - g.h) ** k for k in range(g.n_main + 1)])
        np.testing.assert_allclose(diff, hand, rtol=1e-14)


class TestWeakConsistency:
    def test_linear_model_mean_matches_closed_form(self):
        # E X(T) = x0(0) e^{aT} up to O(h) + O(N^{-1/2})
        a, s, T = -1.0, 0.5, 1.0
        g = TimeGrid(r=0.25, T=T, h=2**-6)
        model = make_model("linear", {"a": a, "c": 0.0, "sigma": s, "r": 0.25})
        x0 = constant_segment(g, 1.0)
        cfg = SolverConfig(grid=g, seed=12, n=20_000)
        rep = direct_expectation(model, x0, lambda seg: seg.value_at(0.0)[..., 0],
                                 T, cfg)
        err = abs(rep.estimate - np.exp(a * T))
        assert err < 2.0 * (g.h + cfg.n**-0.5) + 3 * rep.stderr

    def test_moment_bound_stable_in_n(self):
        # mean sup |X|^2 <= c (1 + ||x0||^2) with c stable across N
        g = TimeGrid(r=1.0, T=1.0, h=2**-5)
        model = make_model("sgn_delay")
        ratios = []
        for n, x_val in ((1000, 0.0), (4000, 0.0), (1000, 2.0), (4000, 2.0)):
            x0 = constant_segment(g, x_val)
            cfg = SolverConfig(grid=g, seed=77, n=n)
            rep = direct_expectation(
                model, x0, lambda seg: seg.sup_norms() ** 2, T := 1.0, cfg
            )
            ratios.append(rep.estimate / (1.0 + x_val**2))
        assert max(ratios) < 10.0
        assert max(ratios[:2]) / min(ratios[:2]) < 1.25
        assert max(ratios[2:]) / min(ratios[2:]) < 1.25


class TestDeterminism:
    def test_worker_count_invariance(self):
        g = TimeGrid(r=1.0, T=1.0, h=2**-5)
        model = make_model("sgn_delay")
        x0 = constant_segment(g, 0.0)
        f = lambda seg: np.tanh(seg.value_at(0.0)[..., 0])
        reports = [
            direct_expectation(
                model, x0, f, 1.0,
                SolverConfig(grid=g, seed=21, n=5000, chunk_size=512, workers=w),
            )
            for w in (1, 4)
        ]
        assert reports[0].estimate == reports[1].estimate
        assert reports[0].stderr == reports[1].stderr
