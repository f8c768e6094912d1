import numpy as np
import pytest

from sdde_lab.models import (
    Measure,
    check_condition_driftc1,
    check_ellipticity,
    check_lipschitz,
    constant_diffusion,
    DiffusionField,
    kernel_drift,
    make_model,
    sgn,
    sgn_delay_drift,
)
from sdde_lab.paths import GridError, PathSegment, SamplePath, TimeGrid, constant_segment


def seg_from_values(values, h=0.25):
    return PathSegment(h, np.asarray(values, dtype=float).reshape(-1, 1))


class TestSgnDelay:
    def test_zero_maps_to_plus_one(self):
        # the counterexample's convention: sgn(0) = 1
        seg = seg_from_values([0.3, -1.0, 0.0, 0.5, 0.1], h=0.25)
        seg = PathSegment(0.25, np.array([[0.0], [1.0], [2.0], [3.0], [4.0]]))
        assert sgn_delay_drift(0.0, seg)[0] == 1.0
        assert sgn(0.0) == 1.0

    def test_negative_argument(self):
        seg = PathSegment(0.25, np.array([[-0.3], [1.0], [2.0], [3.0], [4.0]]))
        assert sgn_delay_drift(0.0, seg)[0] == -1.0

    def test_constant_positive_segment(self):
        g = TimeGrid(r=1.0, T=1.0, h=0.25)
        seg = constant_segment(g, 2.0)
        assert sgn_delay_drift(0.0, seg)[0] == 1.0

    def test_reads_only_the_delayed_value(self):
        vals = np.array([[-2.0], [5.0], [5.0], [5.0], [5.0]])
        assert sgn_delay_drift(0.0, PathSegment(0.25, vals))[0] == -1.0


class TestKernelDrift:
    def test_unit_atom_at_minus_r(self):
        drift = kernel_drift(lambda t, x: x, Measure(atoms=((-1.0, 1.0),)))
        seg = PathSegment(0.25, np.linspace(2.0, 3.0, 5)[:, None])
        assert drift(0.0, seg)[0] == pytest.approx(2.0)

    def test_zero_kernel(self):
        drift = kernel_drift(
            lambda t, x: np.zeros_like(x), Measure(atoms=((-0.5, 2.0),), density=1.0)
        )
        seg = PathSegment(0.25, np.ones((5, 1)))
        assert drift(0.0, seg)[0] == 0.0

    def test_uniform_density_constant_segment(self):
        # density 1 on [-r, 0] against k(t,x)=x and constant segment c gives c*r
        g = TimeGrid(r=1.0, T=1.0, h=0.125)
        drift = kernel_drift(lambda t, x: x, Measure(density=1.0))
        seg = constant_segment(g, 3.0)
        assert drift(0.0, seg)[0] == pytest.approx(3.0 * 1.0)

    def test_atom_off_grid_rejected(self):
        drift = kernel_drift(lambda t, x: x, Measure(atoms=((-0.3, 1.0),)))
        seg = PathSegment(0.25, np.ones((5, 1)))
        with pytest.raises(GridError):
            drift(0.0, seg)

    def test_density_endpoint_off_grid_rejected(self):
        drift = kernel_drift(
            lambda t, x: x, Measure(density=1.0, density_lo=-0.9, density_hi=0.0)
        )
        seg = PathSegment(0.25, np.ones((5, 1)))
        with pytest.raises(GridError):
            drift(0.0, seg)

    def test_linear_in_kernel_and_measure(self):
        rng = np.random.default_rng(3)
        seg = PathSegment(0.25, rng.normal(size=(5, 1)))
        k1 = lambda t, x: np.tanh(x)
        k2 = lambda t, x: x**2
        mu1 = Measure(atoms=((-1.0, 0.7), (-0.5, -0.2)))
        mu2 = Measure(density=0.8, density_lo=-1.0, density_hi=-0.25)
        d_sum_k = kernel_drift(lambda t, x: k1(t, x) + 2.0 * k2(t, x), mu1)
        val = kernel_drift(k1, mu1)(0.0, seg) + 2.0 * kernel_drift(k2, mu1)(0.0, seg)
        np.testing.assert_allclose(d_sum_k(0.0, seg), val)
        both = Measure(
            atoms=mu1.atoms, density=mu2.density,
            density_lo=mu2.density_lo, density_hi=mu2.density_hi,
        )
        val = kernel_drift(k1, mu1)(0.0, seg) + kernel_drift(k1, mu2)(0.0, seg)
        np.testing.assert_allclose(kernel_drift(k1, both)(0.0, seg), val)


class TestBoundedMemoryAndStrictPast:
    def test_drift_depends_only_on_segment(self):
        rng = np.random.default_rng(9)
        g = TimeGrid(r=1.0, T=2.0, h=0.25)
        model = make_model(
            "kernel",
            {"kernel": "tanh", "density": {"lo": -1.0, "hi": -0.5, "value": 1.0}},
        )
        # two paths agreeing on [t-r, t] give identical drift values at t
        a = rng.normal(size=(g.n_nodes, 1))
        b = rng.normal(size=(g.n_nodes, 1))
        t = 1.5
        i = g.index_of(t)
        b[i - g.n_pre : i + 1] = a[i - g.n_pre : i + 1]
        pa = SamplePath(g, a, np.zeros((g.n_main, 1)))
        pb = SamplePath(g, b, np.zeros((g.n_main, 1)))
        from sdde_lab.paths import segment_at

        np.testing.assert_array_equal(
            model.drift(t, segment_at(pa, t)), model.drift(t, segment_at(pb, t))
        )

    def test_strict_past_consistency(self):
        # support of mu inside [-r, -r/2] makes the drift blind to (-r/2, 0]
        rng = np.random.default_rng(10)
        model = make_model(
            "kernel",
            {"kernel": "tanh", "density": {"lo": -1.0, "hi": -0.5, "value": 1.0}},
        )
        assert model.strict_past_lag == pytest.approx(0.5)
        g = TimeGrid(r=1.0, T=1.0, h=0.25)
        base = rng.normal(size=(g.n_pre + 1, 1))
        other = base.copy()
        other[-1] += 3.0  # change the segment strictly after -r/2
        sa = PathSegment(g.h, base)
        sb = PathSegment(g.h, other)
        np.testing.assert_array_equal(
            model.drift.strict_past(0.0, sa), model.drift.strict_past(0.0, sb)
        )

    def test_sgn_delay_metadata(self):
        model = make_model("sgn_delay")
        assert model.strict_past_lag == pytest.approx(0.5)
        assert model.drift_continuous_on_initial_window is False


class TestEllipticity:
    def test_identity_passes(self):
        rep = check_ellipticity(
            constant_diffusion(1.0, 2), [(0.0, np.zeros(2))], c_sigma=1.0
        )
        assert rep.passed
        assert rep.stats["min_eig"] == pytest.approx(1.0)
        assert rep.stats["max_eig"] == pytest.approx(1.0)

    def test_diagonal_within_envelope(self):
        # sigma = diag(2, 1/2): eigenvalues of sigma sigma^T are 4 and 1/4
        rep = check_ellipticity(
            constant_diffusion(np.diag([2.0, 0.5]), 2),
            [(0.0, np.zeros(2)), (1.0, np.ones(2))],
            c_sigma=4.0,
        )
        assert rep.passed
        assert rep.stats["min_eig"] == pytest.approx(0.25)
        assert rep.stats["max_eig"] == pytest.approx(4.0)

    def test_singular_fails(self):
        rep = check_ellipticity(
            constant_diffusion(np.diag([1.0, 0.0]), 2), [(0.0, np.zeros(2))],
            c_sigma=4.0,
        )
        assert not rep.passed

    def test_empty_sample_rejected(self):
        with pytest.raises(ValueError):
            check_ellipticity(constant_diffusion(1.0, 1), [], c_sigma=1.0)

    def test_non_finite_recorded(self):
        bad = DiffusionField(lambda t, x: np.full((1, 1), np.nan))
        rep = check_ellipticity(bad, [(0.0, np.zeros(1))], c_sigma=1.0)
        assert not rep.passed
        assert rep.failures


class TestLipschitz:
    def test_constant_field(self):
        rep = check_lipschitz(
            constant_diffusion(1.0, 1), [(0.0, np.zeros(1), np.ones(1))], c_sigma=1.0
        )
        assert rep.passed
        assert rep.stats["max_quotient"] == 0.0

    def test_linear_field_quotient_one(self):
        field = DiffusionField(lambda t, x: x.reshape(-1)[0] * np.eye(1) + 2.0 * np.eye(1))
        rep = check_lipschitz(
            field, [(0.0, np.array([0.1]), np.array([0.9]))], c_sigma=1.0
        )
        assert rep.passed
        assert rep.stats["max_quotient"] == pytest.approx(1.0)

    def test_slope_two_fails(self):
        field = DiffusionField(lambda t, x: 2.0 * x.reshape(-1)[0] * np.eye(1) + 5.0 * np.eye(1))
        rep = check_lipschitz(
            field, [(0.0, np.array([0.0]), np.array([1.0]))], c_sigma=1.0
        )
        assert not rep.passed
        assert rep.stats["max_quotient"] == pytest.approx(2.0)

    def test_identical_points_rejected(self):
        with pytest.raises(ValueError):
            check_lipschitz(
                constant_diffusion(1.0, 1), [(0.0, np.ones(1), np.ones(1))],
                c_sigma=1.0,
            )


class TestConditionDriftC1:
    @staticmethod
    def probe_paths(model, seed=0, n=3, T=1.0):
        g = TimeGrid(r=model.delay, T=T, h=0.125)
        rng = np.random.default_rng(seed)
        out = []
        for _ in range(n):
            states = rng.normal(size=(g.n_nodes, model.dim))
            out.append(SamplePath(g, states, np.zeros((g.n_main, model.dim))))
        return out

    def test_zero_drift_passes(self):
        model = make_model("linear", {"a": 0.0, "c": 0.0})
        rep = check_condition_driftc1(model, self.probe_paths(model))
        assert rep.passed
        assert rep.stats["worst_margin"] <= 0.0

    def test_sgn_delay_with_c2_horizon_passes(self):
        # |B|^2 = 1 so the left side is t, bounded by C2 = T
        model = make_model("sgn_delay", horizon=1.0)
        rep = check_condition_driftc1(model, self.probe_paths(model))
        assert rep.passed

    def test_sgn_delay_with_zero_envelope_fails(self):
        import dataclasses

        from sdde_lab.models import ConditionEnvelopes

        model = make_model("sgn_delay", horizon=1.0)
        broken = dataclasses.replace(
            model, envelopes=ConditionEnvelopes(F=None, C1=0.0, C2=0.0)
        )
        rep = check_condition_driftc1(broken, self.probe_paths(model))
        assert not rep.passed

    def test_missing_envelopes_config_error(self):
        import dataclasses

        model = make_model("sgn_delay")
        stripped = dataclasses.replace(model, envelopes=None)
        with pytest.raises(ValueError):
            check_condition_driftc1(stripped, self.probe_paths(model))

    def test_validators_pure(self):
        model = make_model("sgn_delay", horizon=1.0)
        paths = self.probe_paths(model)
        a = check_condition_driftc1(model, paths).to_dict()
        b = check_condition_driftc1(model, paths).to_dict()
        assert a == b


class TestRegistry:
    def test_unknown_family(self):
        with pytest.raises(ValueError):
            make_model("not_a_model")

    def test_families_construct(self):
        for fam, params in (
            ("sgn_delay", {}),
            ("kernel", {"atoms": [(-1.0, 1.0)]}),
            ("pointwise_singular", {"x0": 0.0, "alpha": 0.2}),
            ("linear", {"a": -1.0, "c": 0.5}),
        ):
            model = make_model(fam, params)
            assert model.name == fam
            assert model.dim == 1

    def test_pointwise_singular_blows_up_at_center(self):
        model = make_model("pointwise_singular", {"x0": 0.0, "alpha": 0.5})
        g = TimeGrid(r=1.0, T=1.0, h=0.25)
        seg = constant_segment(g, 0.0)
        assert np.isinf(model.drift(0.0, seg)[0])
