import numpy as np
import pytest

from cokrig import (
    ConditionalModel,
    CovarianceFunction,
    DataError,
    HierarchicalModel,
    Location,
    LocationSet,
    MeasurementErrorSpec,
    MicroScaleSpec,
    MultivariateDataset,
    ScalarCoupling,
    VariableSeries,
    assemble_data_cov,
    origin_gap,
)


def smooth_model(nu=1.5, sigma2=2.0, rng_len=1.5):
    base = CovarianceFunction("matern", sigma2, rng_len, nu=nu)
    resid = CovarianceFunction("matern", 1.0, 1.0, nu=nu)
    return ConditionalModel(base, resid, ScalarCoupling(0.6))


def scattered_dataset(rng, n1=10, n2=8, share_first=False):
    c1 = rng.uniform(0, 6, (n1, 2))
    c2 = rng.uniform(0, 6, (n2, 2))
    if share_first:
        c2[0] = c1[0]
    return MultivariateDataset((
        VariableSeries(1, LocationSet(c1), rng.normal(size=n1)),
        VariableSeries(2, LocationSet(c2), rng.normal(size=n2)),
    ))


class TestSpecs:
    def test_measurement_error_must_be_nnd(self):
        with pytest.raises(DataError, match="nonnegative definite"):
            MeasurementErrorSpec(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_measurement_error_must_be_symmetric(self):
        with pytest.raises(DataError, match="symmetric"):
            MeasurementErrorSpec(np.array([[1.0, 0.5], [0.1, 1.0]]))

    def test_micro_scale_must_be_diagonal(self):
        with pytest.raises(DataError, match="diagonal"):
            MicroScaleSpec(np.array([[1.0, 0.1], [0.1, 1.0]]))

    def test_micro_scale_nonnegative(self):
        with pytest.raises(DataError, match=">= 0"):
            MicroScaleSpec.from_diagonal([0.1, -0.2])

    def test_dimension_mismatch(self):
        with pytest.raises(DataError, match="disagree"):
            HierarchicalModel(smooth_model(), MicroScaleSpec.zero(3), None)

    def test_defaults_to_zero_components(self):
        hm = HierarchicalModel(smooth_model())
        assert np.all(hm.micro.sigma_xi == 0)
        assert np.all(hm.noise.sigma_eps == 0)


class TestAssembleDataCov:
    def test_zero_noise_reduces_to_smooth(self, rng):
        d = scattered_dataset(rng)
        hm = HierarchicalModel(smooth_model())
        bundle = assemble_data_cov(hm, d)
        smooth = hm.smooth
        for q, r in [(1, 1), (1, 2), (2, 2)]:
            expected = smooth.block(q, r, d.get(q).locations, d.get(r).locations)
            assert np.array_equal(bundle.block(q, r), expected)

    def test_collocated_pair_gets_full_error_matrix(self):
        # a smooth component that is numerically zero at desk scales
        basis_far = CovarianceFunction("gaussian", 1e-12, 1.0)

        class ZeroModel:
            p = 2

            def block(self, q, r, A, B):
                return np.zeros((len(A), len(B)))

            def length_scale_hint(self):
                return 1.0

        eps = np.array([[1.0, 0.4], [0.4, 1.0]])
        hm = HierarchicalModel(ZeroModel(), None, MeasurementErrorSpec(eps))
        loc = LocationSet([[0.5, 0.5]])
        d = MultivariateDataset((
            VariableSeries(1, loc, [0.0]),
            VariableSeries(2, loc, [0.0]),
        ))
        bundle = assemble_data_cov(hm, d)
        assert np.array_equal(bundle.joint, eps)
        del basis_far

    def test_non_collocated_gets_no_cross_error(self, rng):
        d = scattered_dataset(rng, share_first=False)
        eps = np.array([[0.5, 0.3], [0.3, 0.4]])
        hm = HierarchicalModel(smooth_model(), None, MeasurementErrorSpec(eps))
        hm0 = HierarchicalModel(smooth_model())
        b1 = assemble_data_cov(hm, d)
        b0 = assemble_data_cov(hm0, d)
        # off-diagonal block untouched; diagonals shifted by the variances
        assert np.array_equal(b1.block(1, 2), b0.block(1, 2))
        assert np.allclose(b1.block(1, 1), b0.block(1, 1) + 0.5 * np.eye(10))

    def test_collocated_point_couples_cross_block(self, rng):
        d = scattered_dataset(rng, share_first=True)
        eps = np.array([[0.5, 0.3], [0.3, 0.4]])
        hm = HierarchicalModel(smooth_model(), None, MeasurementErrorSpec(eps))
        hm0 = HierarchicalModel(smooth_model())
        delta = assemble_data_cov(hm, d).block(1, 2) - assemble_data_cov(hm0, d).block(1, 2)
        assert delta[0, 0] == pytest.approx(0.3, abs=1e-12)
        other = delta.copy()
        other[0, 0] = 0.0
        assert np.all(other == 0.0)

    def test_confounded_swap_is_bitwise_identical(self, rng):
        # micro and measurement error are confounded on non-collocated data
        d = scattered_dataset(rng, share_first=False)
        a = np.array([0.3, 0.1])
        b = np.array([0.05, 0.45])
        hm_ab = HierarchicalModel(
            smooth_model(), MicroScaleSpec.from_diagonal(a),
            MeasurementErrorSpec(np.diag(b)),
        )
        hm_ba = HierarchicalModel(
            smooth_model(), MicroScaleSpec.from_diagonal(b),
            MeasurementErrorSpec(np.diag(a)),
        )
        j1 = assemble_data_cov(hm_ab, d).joint
        j2 = assemble_data_cov(hm_ba, d).joint
        assert np.array_equal(j1, j2)


class TestOriginGap:
    def test_gap_equals_total_nugget(self):
        micro = MicroScaleSpec.from_diagonal([0.2, 0.0])
        noise = MeasurementErrorSpec(np.diag([0.1, 0.3]))
        hm = HierarchicalModel(smooth_model(nu=1.5), micro, noise)
        gap, cert = origin_gap(hm, Location(0.7, -0.3))
        assert np.allclose(gap, np.diag([0.3, 0.3]), atol=1e-4)
        assert cert.passed

    def test_smooth_model_gap_vanishes(self):
        hm = HierarchicalModel(smooth_model(nu=2.5))
        gap, cert = origin_gap(hm, Location(1.0, 1.0))
        assert np.max(np.abs(gap)) < 1e-6
        assert cert.passed

    def test_off_diagonal_error_appears_in_gap(self):
        noise = MeasurementErrorSpec(np.array([[0.1, 0.05], [0.05, 0.2]]))
        hm = HierarchicalModel(smooth_model(nu=1.5), None, noise)
        gap, cert = origin_gap(hm, Location(0.0, 0.0))
        assert gap[0, 1] == pytest.approx(0.05, abs=1e-4)
        assert cert.passed

    def test_halving_eps_shrinks_residual(self):
        # nu >= 1.5 smooth component: continuity error drops at least linearly
        micro = MicroScaleSpec.from_diagonal([0.2, 0.1])
        hm = HierarchicalModel(smooth_model(nu=1.5), micro, None)
        expected = hm.nugget_total()
        probe = Location(0.3, 0.4)
        res = []
        for eps in (1e-2, 5e-3):
            gap, _ = origin_gap(hm, probe, eps_h=eps)
            res.append(np.max(np.abs(gap - expected)))
        assert res[1] <= 0.5 * res[0] + 1e-15

    def test_requires_positive_eps(self):
        hm = HierarchicalModel(smooth_model())
        with pytest.raises(DataError):
            origin_gap(hm, Location(0, 0), eps_h=0.0)
