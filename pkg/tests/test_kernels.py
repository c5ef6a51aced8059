import numpy as np
import pytest
from scipy.special import gamma as gamma_fn
from scipy.special import kv

from cokrig import (
    BasisSet,
    CorrelationFunction,
    CovarianceFunction,
    DataError,
    Location,
    LocationSet,
    MaternParams,
    NumericalError,
    bisquare_basis,
    check_nnd,
    eval_cov_matrix,
    matern_cov,
)
from cokrig.kernels import bisquare_design


def matern_bessel_oracle(h, rng, nu):
    """Direct modified-Bessel evaluation, independent of the closed forms."""
    scaled = np.sqrt(2.0 * nu) * np.asarray(h, dtype=float) / rng
    if scaled == 0:
        return 1.0
    return float((2.0 ** (1.0 - nu) / gamma_fn(nu)) * scaled**nu * kv(nu, scaled))


class TestMatern:
    def test_variance_at_origin(self):
        assert matern_cov(MaternParams(2.0, 1.0, 0.5), 0.0) == 2.0

    def test_exponential_closed_form(self):
        val = matern_cov(MaternParams(1.0, 1.0, 0.5), 1.0)
        assert val == pytest.approx(np.exp(-1.0), abs=1e-15)

    def test_nu_15_closed_form_against_bessel_oracle(self):
        # frozen from the independent Bessel oracle: (1+sqrt(3))*exp(-sqrt(3))
        val = matern_cov(MaternParams(1.0, 1.0, 1.5), 1.0)
        assert val == pytest.approx(0.4833577245965077, abs=1e-12)
        assert val == pytest.approx(matern_bessel_oracle(1.0, 1.0, 1.5), abs=1e-12)

    def test_nu_25_closed_form_against_bessel_oracle(self):
        val = matern_cov(MaternParams(1.0, 1.0, 2.5), 1.0)
        assert val == pytest.approx(0.5239941088318203, abs=1e-12)
        assert val == pytest.approx(matern_bessel_oracle(1.0, 1.0, 2.5), abs=1e-12)

    def test_generic_nu_uses_bessel(self, rng):
        for _ in range(20):
            nu = float(rng.uniform(0.2, 4.0))
            r = float(rng.uniform(0.5, 3.0))
            h = float(rng.uniform(0.01, 5.0))
            val = matern_cov(MaternParams(1.3, r, nu), h)
            assert val == pytest.approx(1.3 * matern_bessel_oracle(h, r, nu), rel=1e-10)

    def test_nu_half_matches_exponential_everywhere(self):
        p = MaternParams(1.7, 2.3, 0.5)
        h = np.linspace(0.0, 10 * p.range, 200)
        expected = p.sigma2 * np.exp(-h / p.range)
        got = matern_cov(p, h)
        assert np.max(np.abs(got - expected) / np.maximum(np.abs(expected), 1e-300)) < 1e-12

    def test_strictly_decreasing(self):
        p = MaternParams(1.0, 1.5, 1.5)
        h = np.linspace(0.0, 8.0, 100)
        v = matern_cov(p, h)
        assert np.all(np.diff(v) < 0)

    def test_negative_lag_rejected(self):
        with pytest.raises(DataError):
            matern_cov(MaternParams(1.0, 1.0, 0.5), -0.1)

    def test_bad_params_rejected(self):
        with pytest.raises(DataError):
            MaternParams(-1.0, 1.0, 0.5)
        with pytest.raises(DataError):
            MaternParams(1.0, np.inf, 0.5)


class TestCorrelationFamilies:
    @pytest.mark.parametrize("family", ["exponential", "matern", "gaussian"])
    def test_unit_at_origin(self, family):
        rho = CorrelationFunction(family, 1.7, nu=1.5)
        assert rho(0.0) == pytest.approx(1.0)

    @pytest.mark.parametrize("family", ["exponential", "matern", "gaussian"])
    def test_bounded(self, family, rng):
        rho = CorrelationFunction(family, 0.8, nu=2.5)
        vals = rho(rng.uniform(0, 20, size=200))
        assert np.all(vals <= 1.0) and np.all(vals >= -1.0)

    def test_unknown_family(self):
        with pytest.raises(DataError):
            CorrelationFunction("spherical", 1.0)

    def test_with_sigma2(self):
        cov = CorrelationFunction("exponential", 2.0).with_sigma2(3.0)
        assert cov(0.0) == pytest.approx(3.0)


class TestEvalCovMatrix:
    def test_single_point(self):
        k = CovarianceFunction("exponential", 2.5, 1.0)
        A = LocationSet([[0, 0]])
        assert eval_cov_matrix(k, A, A).tolist() == [[2.5]]

    def test_two_points(self):
        k = CovarianceFunction("exponential", 1.0, 1.0)
        A = LocationSet([[0, 0], [1, 0]])
        M = eval_cov_matrix(k, A, A)
        e = np.exp(-1.0)
        assert np.allclose(M, [[1, e], [e, 1]], atol=1e-15)

    def test_symmetric_when_same_set(self, rng):
        k = CovarianceFunction("matern", 1.0, 0.7, nu=1.5)
        A = LocationSet(rng.normal(size=(20, 2)))
        M = eval_cov_matrix(k, A, A)
        assert np.array_equal(M, M.T)

    @pytest.mark.parametrize("family,nu", [("exponential", 0.5), ("matern", 1.5),
                                           ("matern", 2.5), ("gaussian", 0.5)])
    def test_nnd_on_random_sets(self, family, nu, rng):
        # spec-level stress for this family runs in the acceptance module;
        # this is a quicker per-family version of the same invariant
        for _ in range(100):
            n = int(rng.integers(2, 51))
            A = LocationSet(rng.uniform(0, 10, size=(n, 2)))
            k = CovarianceFunction(family, float(rng.uniform(0.2, 3.0)),
                                   float(rng.uniform(0.2, 5.0)), nu=nu)
            cert = check_nnd(eval_cov_matrix(k, A, A), 1e-8)
            assert cert.passed


class TestCheckNnd:
    def test_identity(self):
        cert = check_nnd(np.eye(3), 1e-10)
        assert cert.passed
        assert cert.min_eigenvalue == pytest.approx(1.0)

    def test_indefinite(self):
        cert = check_nnd(np.array([[1.0, 2.0], [2.0, 1.0]]), 1e-10)
        assert not cert.passed
        assert cert.min_eigenvalue == pytest.approx(-1.0)

    def test_gram_matrices_pass(self, rng):
        for _ in range(50):
            n = int(rng.integers(2, 30))
            G = rng.normal(size=(n, n))
            assert check_nnd(G @ G.T, 1e-8).passed

    def test_non_square_rejected(self):
        with pytest.raises(DataError):
            check_nnd(np.ones((2, 3)))

    def test_gross_asymmetry_rejected(self):
        with pytest.raises(NumericalError, match="asymmetry"):
            check_nnd(np.array([[1.0, 5.0], [0.0, 1.0]]), 1e-10)

    def test_threshold_scales_with_trace(self):
        M = 1e6 * np.eye(4)
        M[0, 0] = -1e-4  # tiny relative to the trace
        assert check_nnd(M, 1e-8).passed


class TestBisquare:
    def make(self):
        centers = LocationSet([[0, 0], [2, 0], [0, 2]])
        return BasisSet(centers, scale=1.5)

    def test_at_center(self):
        vals = bisquare_basis(self.make(), Location(0.0, 0.0))
        assert vals[0] == pytest.approx(1.0)

    def test_outside_support(self):
        vals = bisquare_basis(self.make(), Location(50.0, 50.0))
        assert np.all(vals == 0.0)

    def test_half_scale_value(self):
        basis = BasisSet(LocationSet([[0, 0]]), scale=2.0)
        vals = bisquare_basis(basis, Location(1.0, 0.0))
        assert vals[0] == pytest.approx(0.5625)

    def test_continuity(self, rng):
        basis = self.make()
        for _ in range(50):
            s = rng.uniform(-1, 3, size=2)
            delta = 1e-6 * basis.scale
            a = bisquare_design(basis, s[None, :])
            b = bisquare_design(basis, (s + [delta, 0])[None, :])
            assert np.max(np.abs(a - b)) < 10 * delta

    def test_bad_scale(self):
        with pytest.raises(DataError):
            BasisSet(LocationSet([[0, 0]]), scale=0.0)
