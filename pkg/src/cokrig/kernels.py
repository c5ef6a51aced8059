"""Stationary univariate covariance functions, spatial basis functions, and
nonnegative-definiteness certification.

Supported correlation families (all isotropic on planar distance h):

- ``exponential``: exp(-h / range)
- ``matern``:      scaled so that nu = 0.5 reduces exactly to exponential;
                   closed forms for nu in {0.5, 1.5, 2.5}, modified Bessel
                   otherwise
- ``gaussian``:    exp(-(h / range)^2)
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import gamma as gamma_fn
from scipy.special import kv

from .exceptions import DataError, NumericalError
from .validation import check_positive, check_square_matrix

FAMILIES = ("exponential", "matern", "gaussian")

_HALF_INTEGER_NU = (0.5, 1.5, 2.5)


@dataclass(frozen=True)
class MaternParams:
    """Matern parameters: variance, range (length scale), smoothness."""

    sigma2: float
    range: float
    nu: float

    def __post_init__(self):
        check_positive("sigma2", self.sigma2)
        check_positive("range", self.range)
        check_positive("nu", self.nu)


def _matern_correlation(h, rng, nu):
    """Unit-variance Matern correlation at distances h >= 0."""
    h = np.asarray(h, dtype=float)
    if nu == 0.5:
        return np.exp(-h / rng)
    if nu == 1.5:
        t = np.sqrt(3.0) * h / rng
        return (1.0 + t) * np.exp(-t)
    if nu == 2.5:
        t = np.sqrt(5.0) * h / rng
        return (1.0 + t + t * t / 3.0) * np.exp(-t)
    t = np.sqrt(2.0 * nu) * h / rng
    out = np.empty_like(t)
    zero = t == 0.0
    out[zero] = 1.0
    tz = t[~zero]
    out[~zero] = (2.0 ** (1.0 - nu) / gamma_fn(nu)) * tz**nu * kv(nu, tz)
    return out


def _correlation(family, h, rng, nu):
    h = np.asarray(h, dtype=float)
    if np.any(h < 0) or not np.all(np.isfinite(h)):
        raise DataError("lag distances must be finite and >= 0")
    if family == "exponential":
        return np.exp(-h / rng)
    if family == "gaussian":
        return np.exp(-((h / rng) ** 2))
    if family == "matern":
        return _matern_correlation(h, rng, nu)
    raise DataError(f"unknown correlation family {family!r}; choose from {FAMILIES}")


def matern_cov(params, h):
    """Matern covariance sigma2 * rho_nu(h); scalar in, scalar out.

    The scaling is such that nu = 0.5 gives sigma2 * exp(-h / range).
    """
    h_arr = np.asarray(h, dtype=float)
    out = params.sigma2 * _matern_correlation(
        _check_lags(h_arr), params.range, params.nu
    )
    return float(out) if np.isscalar(h) or h_arr.ndim == 0 else out


def _check_lags(h):
    if np.any(h < 0) or not np.all(np.isfinite(h)):
        raise DataError("lag distances must be finite and >= 0")
    return h


@dataclass(frozen=True)
class CovarianceFunction:
    """Isotropic stationary covariance: family, sill, range, smoothness."""

    family: str
    sigma2: float
    range: float
    nu: float = 0.5

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DataError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        check_positive("sigma2", self.sigma2)
        check_positive("range", self.range)
        check_positive("nu", self.nu)

    def __call__(self, h):
        return self.sigma2 * _correlation(self.family, h, self.range, self.nu)

    def correlation(self, h):
        return _correlation(self.family, h, self.range, self.nu)


@dataclass(frozen=True)
class CorrelationFunction:
    """Unit-sill stationary correlation function (value 1 at lag 0)."""

    family: str
    range: float
    nu: float = 0.5

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DataError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        check_positive("range", self.range)
        check_positive("nu", self.nu)

    def __call__(self, h):
        return _correlation(self.family, h, self.range, self.nu)

    def with_sigma2(self, sigma2):
        return CovarianceFunction(self.family, sigma2, self.range, self.nu)


def eval_cov_matrix(kernel, A, B):
    """Evaluate a distance kernel on the cross-distance matrix of A and B.

    `kernel` is any callable of nonnegative distance (CovarianceFunction,
    CorrelationFunction, or a plain function). When A and B hold identical
    coordinates the result is symmetric.
    """
    D = cdist(A.coords, B.coords)
    return np.asarray(kernel(D), dtype=float)


@dataclass(frozen=True)
class NndCertificate:
    """Result of a nonnegative-definiteness check.

    The verdict passes iff min_eigenvalue >= -tol_used * max(trace, 1).
    """

    min_eigenvalue: float
    trace: float
    passed: bool
    tol_used: float

    @property
    def verdict(self):
        return "pass" if self.passed else "fail"

    def threshold(self):
        return -self.tol_used * max(self.trace, 1.0)


def check_nnd(M, tol=1e-8):
    """Certify nonnegative definiteness of a (near-)symmetric matrix.

    The matrix is symmetrized by averaging before the eigendecomposition;
    asymmetry beyond tol * max(trace, 1) entrywise violates the contract
    and raises.
    """
    M = check_square_matrix(M, "check_nnd input")
    if tol < 0:
        raise DataError(f"check_nnd: tol must be >= 0, got {tol}")
    trace = float(np.trace(M))
    scale = max(trace, 1.0)
    asym = float(np.max(np.abs(M - M.T))) if M.size else 0.0
    if asym > tol * scale:
        raise NumericalError(
            f"check_nnd: input asymmetry {asym:.3e} exceeds {tol * scale:.3e}"
        )
    S = (M + M.T) / 2.0
    min_eig = float(np.linalg.eigvalsh(S)[0])
    return NndCertificate(
        min_eigenvalue=min_eig,
        trace=trace,
        passed=min_eig >= -tol * scale,
        tol_used=float(tol),
    )


@dataclass(frozen=True)
class BasisSet:
    """Bisquare basis functions: b centers sharing one support scale."""

    centers: object  # LocationSet
    scale: float
    family: str = "bisquare"

    def __post_init__(self):
        if self.family != "bisquare":
            raise DataError(f"unsupported basis family {self.family!r}")
        check_positive("scale", self.scale)
        if len(self.centers) < 1:
            raise DataError("BasisSet: needs at least one center")

    @property
    def b(self):
        return len(self.centers)


def bisquare_basis(basis, location):
    """Evaluate all b bisquare functions at one location.

    Component a is (1 - (d_a/scale)^2)^2 for d_a < scale and 0 beyond,
    d_a the distance to center a.
    """
    s = np.array([[location.x, location.y]], dtype=float)
    return bisquare_design(basis, s)[0]


def bisquare_design(basis, coords):
    """(n, b) design matrix of bisquare basis values at `coords` rows."""
    coords = np.asarray(coords, dtype=float)
    d = cdist(coords, basis.centers.coords) / basis.scale
    out = np.where(d < 1.0, (1.0 - d**2) ** 2, 0.0)
    return out
