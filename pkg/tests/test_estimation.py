import numpy as np
import pytest

from cokrig import (
    ConditionalScalarFamily,
    CorrelationFunction,
    DataError,
    EmpiricalSummary,
    FitResult,
    LagBins,
    LmcFamily,
    LmcModel,
    LocationSet,
    MaternFamily,
    MultivariateDataset,
    VariableSeries,
    assemble_bundle,
    empirical_cross_cov,
    fit_ml,
    fit_wls,
    information_criteria,
    make_grid,
    pseudo_cross_variogram,
    simulate_field,
)
from cokrig.estimation import profile_gaussian_loglik
from cokrig.hierarchical import data_cov_blocks


def univariate(coords, values):
    return MultivariateDataset((VariableSeries(1, LocationSet(coords), values),))


def bivariate(c1, v1, c2, v2):
    return MultivariateDataset((
        VariableSeries(1, LocationSet(c1), v1),
        VariableSeries(2, LocationSet(c2), v2),
    ))


class TestLagBins:
    def test_edges_must_start_at_zero(self):
        with pytest.raises(DataError):
            LagBins([0.5, 1.0])

    def test_edges_strictly_increasing(self):
        with pytest.raises(DataError):
            LagBins([0.0, 1.0, 1.0])

    def test_directional_centers_mirror(self):
        bins = LagBins.regular(3.0, 3, directional=True)
        assert bins.centers().tolist() == [-2.5, -1.5, -0.5, 0.5, 1.5, 2.5]

    def test_max_lag(self):
        assert LagBins.regular(4.0, 8).max_lag == 4.0


class TestEmpiricalCrossCov:
    def test_self_pairs_give_biased_sample_variance(self, rng):
        values = rng.normal(size=30)
        d = univariate(rng.uniform(0, 100, (30, 2)), values)
        # first bin is tight enough to contain only the self pairs
        bins = LagBins([0.0, 1e-9, 200.0])
        s = empirical_cross_cov(d, (1, 1), bins)
        assert s.values[0] == pytest.approx(np.var(values))
        assert s.pair_counts[0] == 30

    def test_independent_white_noise_has_null_cross_bins(self, rng):
        n = 3000
        d = bivariate(
            rng.uniform(0, 50, (n, 2)), rng.normal(size=n),
            rng.uniform(0, 50, (n, 2)), rng.normal(size=n),
        )
        s = empirical_cross_cov(d, (1, 2), LagBins.regular(10.0, 5))
        se = 1.0 / np.sqrt(s.pair_counts)
        assert np.all(np.abs(s.values) <= 3.5 * se)

    def test_pair_swap_identity_exact(self, rng):
        d = bivariate(
            rng.uniform(0, 10, (25, 2)), rng.normal(size=25),
            rng.uniform(0, 10, (18, 2)), rng.normal(size=18),
        )
        bins = LagBins.regular(6.0, 6, directional=True, axis="x", tol_angle_deg=40)
        s12 = empirical_cross_cov(d, (1, 2), bins)
        s21 = empirical_cross_cov(d, (2, 1), bins)
        assert np.array_equal(s12.pair_counts, s21.pair_counts[::-1])
        assert np.array_equal(
            np.nan_to_num(s12.values, nan=-999.0),
            np.nan_to_num(s21.values[::-1], nan=-999.0),
        )

    def test_directional_peak_tracks_simulated_shift(self):
        # shifted coregionalization: variable 1 leads variable 2 by (+2, 0),
        # so the cross covariance peaks at lag x = -2
        from cokrig import DiracKernel, HierarchicalModel, KernelConvModel, MicroScaleSpec
        from cokrig.hierarchical import data_cov_bundle

        rho = CorrelationFunction("exponential", 2.0)
        kernels = (
            (DiracKernel(1.0, (2.0, 0.0)), DiracKernel(0.5), DiracKernel(0.0)),
            (DiracKernel(1.0), DiracKernel(0.0), DiracKernel(0.5)),
        )
        smooth = KernelConvModel((rho, rho, rho), kernels)
        hm = HierarchicalModel(smooth, MicroScaleSpec.from_diagonal([0.05, 0.05]))
        grid = make_grid(0, 19, 0, 19, 20, 20)
        bundle = data_cov_bundle(hm, [grid, grid])
        d = simulate_field(bundle, [0.0, 0.0], seed=5)
        bins = LagBins([0.0, 0.5, 1.5, 2.5, 3.5, 4.5], directional=True,
                       axis="x", tol_angle_deg=30)
        s = empirical_cross_cov(d, (1, 2), bins)
        peak = s.bin_centers[int(np.nanargmax(s.values))]
        assert peak in (-2.0, -1.0, -3.0)

    def test_needs_two_observations(self, rng):
        d = bivariate([[0, 0]], [1.0], rng.uniform(0, 1, (3, 2)), rng.normal(size=3))
        with pytest.raises(DataError, match="at least 2"):
            empirical_cross_cov(d, (1, 2), LagBins.regular(1.0, 2))

    def test_all_bins_empty(self, rng):
        d = bivariate(
            rng.uniform(0, 1, (3, 2)), rng.normal(size=3),
            rng.uniform(100, 101, (3, 2)), rng.normal(size=3),
        )
        with pytest.raises(DataError, match="empty"):
            empirical_cross_cov(d, (1, 2), LagBins.regular(1.0, 2))


class TestPseudoCrossVariogram:
    def test_nonnegative_always(self, rng):
        for _ in range(20):
            n1, n2 = rng.integers(3, 30, size=2)
            d = bivariate(
                rng.uniform(0, 5, (n1, 2)), rng.normal(size=n1) * 3,
                rng.uniform(0, 5, (n2, 2)), rng.normal(size=n2),
            )
            s = pseudo_cross_variogram(d, (1, 2), LagBins.regular(5.0, 6))
            assert np.nanmin(s.values) >= 0.0

    def test_matches_classical_semivariogram(self, rng):
        coords = rng.uniform(0, 10, (40, 2))
        values = rng.normal(size=40)
        d = univariate(coords, values)
        bins = LagBins.regular(8.0, 8)
        s = pseudo_cross_variogram(d, (1, 1), bins)

        # brute-force classical estimator on raw values (means cancel)
        diff = coords[:, None, :] - coords[None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        sq = 0.5 * (values[:, None] - values[None, :]) ** 2
        for b in range(8):
            lo, hi = bins.edges[b], bins.edges[b + 1]
            mask = (dist >= lo) & (dist < hi)
            np.fill_diagonal(mask, False)
            if mask.sum() == 0:
                assert np.isnan(s.values[b])
            else:
                assert s.values[b] == pytest.approx(sq[mask].mean(), rel=1e-12)

    def test_pure_nugget_field_flat_at_variance(self, rng):
        sigma2 = 2.5
        coords = rng.uniform(0, 40, (400, 2))
        values = rng.normal(scale=np.sqrt(sigma2), size=400)
        s = pseudo_cross_variogram(univariate(coords, values), (1, 1),
                                   LagBins.regular(20.0, 5))
        assert np.allclose(s.values, sigma2, rtol=0.2)

    def test_identical_collocated_variables_have_zero_origin_bin(self, rng):
        coords = rng.uniform(0, 10, (20, 2))
        values = rng.normal(size=20)
        d = bivariate(coords, values, coords, values)
        s = pseudo_cross_variogram(d, (1, 2), LagBins([0.0, 1e-9, 10.0]))
        assert s.values[0] == pytest.approx(0.0, abs=1e-30)
        assert s.pair_counts[0] == 20


class TestFitWls:
    def exact_summaries(self, family, params):
        centers = np.linspace(0.25, 7.75, 16)
        out = []
        for pair in [(1, 1), (2, 2), (1, 2)]:
            s = EmpiricalSummary(
                kind="pseudo_cross_variogram", pair=pair,
                bin_centers=centers,
                values=np.empty(16), pair_counts=np.full(16, 50, dtype=int),
            )
            vals = family.summary_curve(params, s)
            out.append(EmpiricalSummary(
                kind=s.kind, pair=pair, bin_centers=centers,
                values=vals, pair_counts=s.pair_counts,
            ))
        return out

    def test_exact_summary_fixed_point(self):
        family = ConditionalScalarFamily()
        truth = dict(sigma2_base=2.0, range_base=1.5, sigma2_resid=0.8,
                     range_resid=1.0, coupling=0.6, nugget1=0.1, nugget2=0.2)
        fit = fit_wls(self.exact_summaries(family, truth), family, init=truth,
                      restarts=1, xatol=1e-10, fatol=1e-24)
        assert fit.objective == pytest.approx(0.0, abs=1e-12)
        for name, value in truth.items():
            assert fit.params[name] == pytest.approx(value, rel=1e-6)

    def test_empty_input_rejected(self):
        with pytest.raises(DataError, match="no summaries"):
            fit_wls([], ConditionalScalarFamily())

    def test_all_empty_bins_rejected(self):
        s = EmpiricalSummary(
            kind="pseudo_cross_variogram", pair=(1, 1),
            bin_centers=np.array([0.5, 1.5]),
            values=np.array([np.nan, np.nan]),
            pair_counts=np.array([0, 0]),
        )
        with pytest.raises(DataError, match="nonempty"):
            fit_wls([s], ConditionalScalarFamily())

    def test_objective_trace_non_increasing(self, rng):
        family = MaternFamily(nu=0.5)
        truth = dict(sigma2=1.5, range=2.0, nugget=0.1)
        centers = np.linspace(0.25, 9.75, 20)
        s = EmpiricalSummary(
            kind="pseudo_cross_variogram", pair=(1, 1), bin_centers=centers,
            values=np.empty(20), pair_counts=np.full(20, 40, dtype=int),
        )
        vals = family.summary_curve(truth, s) * (1 + 0.05 * rng.normal(size=20))
        s = EmpiricalSummary(kind=s.kind, pair=(1, 1), bin_centers=centers,
                             values=vals, pair_counts=s.pair_counts)
        trace = []
        fit_wls([s], family, restarts=1, trace=trace)
        trace = np.array(trace)
        assert np.all(np.diff(trace) <= 1e-12)

    def test_deterministic_given_seed(self, rng):
        family = MaternFamily(nu=0.5)
        centers = np.linspace(0.25, 9.75, 12)
        vals = 1.0 - np.exp(-centers) + 0.05 * rng.normal(size=12)
        s = EmpiricalSummary(kind="pseudo_cross_variogram", pair=(1, 1),
                             bin_centers=centers, values=np.abs(vals),
                             pair_counts=np.full(12, 30, dtype=int))
        f1 = fit_wls([s], family, restarts=3, seed=7)
        f2 = fit_wls([s], family, restarts=3, seed=7)
        assert f1.params == f2.params
        assert f1.objective == f2.objective

    def test_init_outside_bounds_rejected(self):
        family = MaternFamily()
        with pytest.raises(DataError, match="outside bounds"):
            fit_wls(self.exact_summaries(ConditionalScalarFamily(), dict(
                sigma2_base=1, range_base=1, sigma2_resid=1, range_resid=1,
                coupling=0.5, nugget1=0.1, nugget2=0.1))[:1],
                family, init={"sigma2": -3.0})


class TestWlsRecoveryStudy:
    def test_exponential_range_recovery_and_ml_consistency(self):
        # 20 replicate WLS fits on 30x30 simulations; the median recovered
        # range must land within 25% of truth, and one ML fit must agree
        # with the WLS estimates to within 2 replicate standard deviations
        family = MaternFamily(nu=0.5)
        truth = dict(sigma2=1.0, range=2.0, nugget=0.02)
        model = family.build(truth)
        grid = make_grid(0, 29, 0, 29, 30, 30)
        from cokrig.hierarchical import data_cov_bundle

        bundle = data_cov_bundle(model, [grid])
        bins = LagBins.regular(10.0, 20)
        ranges = []
        first_dataset = None
        for rep in range(20):
            d = simulate_field(bundle, [0.0], seed=1000 + rep)
            if first_dataset is None:
                first_dataset = d
            s = pseudo_cross_variogram(d, (1, 1), bins)
            fit = fit_wls([s], family, restarts=2, seed=rep, maxiter=600)
            ranges.append(fit.params["range"])
        ranges = np.array(ranges)
        assert abs(np.median(ranges) - truth["range"]) / truth["range"] <= 0.25

        rng = np.random.default_rng(0)
        keep = [np.sort(rng.choice(900, 250, replace=False))]
        ml = fit_ml(first_dataset.subset(keep), family, restarts=1, maxiter=400)
        spread = max(ranges.std(), 1e-6)
        assert abs(ml.params["range"] - ranges[0]) <= 2.0 * spread + 0.5


class TestFitMl:
    def small_dataset(self, rng, family, truth, n=30):
        model = family.build(truth)
        locs = [LocationSet(rng.uniform(0, 8, (n, 2))),
                LocationSet(rng.uniform(0, 8, (n, 2)))]
        from cokrig.hierarchical import data_cov_bundle

        bundle = data_cov_bundle(model, locs)
        return simulate_field(bundle, [0.0, 0.0], seed=int(rng.integers(1 << 30)))

    def test_loglik_prefers_truth_over_perturbation(self, rng):
        family = ConditionalScalarFamily()
        truth = dict(sigma2_base=1.5, range_base=2.0, sigma2_resid=0.7,
                     range_resid=1.2, coupling=0.6, nugget1=0.1, nugget2=0.1)
        perturbed = dict(truth, sigma2_base=4.5, range_base=0.5)
        wins = 0
        for _ in range(100):
            d = self.small_dataset(rng, family, truth, n=25)
            z = d.stacked_values()
            X = np.zeros((50, 2))
            X[:25, 0] = 1.0
            X[25:, 1] = 1.0
            ll = {}
            for name, params in [("truth", truth), ("pert", perturbed)]:
                joint = np.block(data_cov_blocks(family.build(params),
                                                 d.location_sets()))
                ll[name], _ = profile_gaussian_loglik(joint, z, X)
            wins += ll["truth"] >= ll["pert"]
        assert wins >= 95

    def test_single_observation_nugget_hits_zero_boundary(self):
        family = MaternFamily(nu=0.5)
        d = univariate([[0.0, 0.0]], [3.2])
        fit = fit_ml(d, family, fixed={"sigma2": 1e-6, "range": 1.0},
                     restarts=1)
        assert "nugget" in fit.at_bounds
        assert fit.params["nugget"] == pytest.approx(1e-8, rel=1e-3)
        crit = information_criteria(fit)
        assert crit["aicc"] is None  # n <= k + 1
        assert np.isfinite(crit["aic"])

    def test_dense_cap(self, rng):
        family = MaternFamily()
        d = univariate(rng.uniform(0, 1, (30, 2)), rng.normal(size=30))
        with pytest.raises(DataError, match="cap"):
            fit_ml(d, family, dense_cap=10)

    def test_family_dimension_mismatch(self, rng):
        d = univariate(rng.uniform(0, 1, (5, 2)), rng.normal(size=5))
        with pytest.raises(DataError, match="p="):
            fit_ml(d, ConditionalScalarFamily())

    def test_all_fixed_rejected(self, rng):
        family = MaternFamily()
        d = univariate(rng.uniform(0, 1, (5, 2)), rng.normal(size=5))
        with pytest.raises(DataError, match="free parameter"):
            fit_ml(d, family, fixed={"sigma2": 1.0, "range": 1.0, "nugget": 0.1})

    def test_fitted_params_feed_prediction(self, rng):
        # plug-in wiring: fit, build with the estimates, predict
        from cokrig import PredictionTarget, cokrige

        family = ConditionalScalarFamily()
        truth = dict(sigma2_base=1.0, range_base=2.0, sigma2_resid=0.5,
                     range_resid=1.0, coupling=0.5, nugget1=0.05, nugget2=0.05)
        d = self.small_dataset(rng, family, truth, n=20)
        fit = fit_ml(d, family, restarts=1, maxiter=250)
        model = family.build(fit.params, noise_split=(0.5, 0.5))
        target = PredictionTarget("Y", 1, LocationSet([[4.0, 4.0]]))
        pred = cokrige(model, d, target, means=fit.means)
        assert np.isfinite(pred.means[0]) and pred.variances[0] >= 0


class TestInformationCriteria:
    def make_fit(self, loglik, k, n):
        return FitResult(params={"a": 1.0}, objective=-loglik, loglik=loglik,
                         k=k, n=n, converged=True, iterations=10,
                         method="ml", family="test")

    def test_formula_arithmetic(self):
        crit = information_criteria(self.make_fit(-100.0, 6, 100))
        assert crit["aic"] == pytest.approx(212.0)
        assert crit["aicc"] == pytest.approx(212.0 + 2 * 6 * 7 / 93)

    def test_zero_k_rejected_at_construction(self):
        with pytest.raises(DataError, match="k"):
            FitResult(params={}, objective=0.0, loglik=0.0, k=0, n=10,
                      converged=True, iterations=1, method="ml", family="t")

    def test_penalty_prefers_small_k(self):
        small = information_criteria(self.make_fit(-100.0, 6, 500))
        big = information_criteria(self.make_fit(-100.0, 300, 500))
        assert small["aicc"] < big["aicc"]
        assert small["aic"] < big["aic"]

    def test_monotone_in_k(self):
        vals = [information_criteria(self.make_fit(-50.0, k, 200)) for k in
                range(1, 20)]
        aic = [v["aic"] for v in vals]
        aicc = [v["aicc"] for v in vals]
        assert np.all(np.diff(aic) > 0)
        assert np.all(np.diff(aicc) > 0)

    def test_wls_fit_has_no_criteria(self):
        fit = FitResult(params={"a": 1.0}, objective=1.0, loglik=None, k=1,
                        n=10, converged=True, iterations=5, method="wls",
                        family="t")
        with pytest.raises(DataError, match="log-likelihood"):
            information_criteria(fit)
