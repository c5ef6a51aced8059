"""Valid multivariate covariance construction and field simulation.

Three constructive routes, each nonnegative definite by construction:

- conditional: a marginal covariance for the first variable, a conditional
  covariance for the second, and an unrestricted linear coupling operator
  realized as a matrix on a common discretization grid;
- spatial random effects (SRE): reduced-rank covariance from known basis
  functions and a positive-definite coefficient covariance, plus an optional
  per-location nugget;
- kernel convolution: variables built by convolving independent unit-variance
  factor processes with integrable kernels; Dirac kernels with zero shift
  collapse to the linear model of coregionalization (LMC), which is also
  available directly as a closed-form model.
"""

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .data import LocationSet, MultivariateDataset, VariableSeries, coincidence_mask
from .exceptions import DataError, NumericalError
from .kernels import NndCertificate, check_nnd, eval_cov_matrix, bisquare_design
from .validation import check_positive, check_square_matrix

DEFAULT_NND_TOL = 1e-8


# ---------------------------------------------------------------------------
# Coupling operator rules for the conditional route
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalarCoupling:
    """Coupling b0 * I: the second variable loads pointwise on the first."""

    b0: float

    def realize(self, grid):
        return self.b0 * np.eye(len(grid))


@dataclass(frozen=True)
class DistanceDecayCoupling:
    """Row-normalized exponential distance-decay coupling, scaled by b0."""

    b0: float
    range: float

    def __post_init__(self):
        check_positive("coupling range", self.range)

    def realize(self, grid):
        W = np.exp(-cdist(grid.coords, grid.coords) / self.range)
        return self.b0 * W / W.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class ExplicitCoupling:
    """A fully general user-supplied square coupling matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", check_square_matrix(self.matrix, "coupling"))

    def realize(self, grid):
        if self.matrix.shape[0] != len(grid):
            raise DataError(
                f"explicit coupling is {self.matrix.shape[0]}x{self.matrix.shape[0]} "
                f"but the grid has {len(grid)} nodes"
            )
        return self.matrix


def conditional_joint_from_matrices(sigma11, sigma_cond, b):
    """Joint bivariate covariance blocks from (Sigma11, Sigma_cond, B).

    cov(Z1) = Sigma11, cov(Z1, Z2) = Sigma11 B', cov(Z2) = Sigma_cond +
    B Sigma11 B'. The resulting joint matrix is nonnegative definite for any
    real B whenever the two inputs are.

    Returns the four blocks as a 2x2 nested list [[c11, c12], [c21, c22]].
    """
    sigma11 = check_square_matrix(sigma11, "sigma11")
    sigma_cond = check_square_matrix(sigma_cond, "sigma_cond")
    b = check_square_matrix(b, "coupling matrix")
    if not (sigma11.shape == sigma_cond.shape == b.shape):
        raise DataError(
            f"shape mismatch: sigma11 {sigma11.shape}, sigma_cond "
            f"{sigma_cond.shape}, coupling {b.shape}"
        )
    c12 = sigma11 @ b.T
    c22 = sigma_cond + b @ c12
    return [[sigma11, c12], [c12.T, c22]]


@dataclass(frozen=True)
class ConditionalModel:
    """Bivariate covariance built by conditioning the second variable on the
    whole first-variable process.

    Parameters
    ----------
    base_cov : CovarianceFunction
        Univariate covariance of the first variable.
    resid_cov : CovarianceFunction
        Covariance of the second variable given the whole first process.
    coupling : ScalarCoupling or DistanceDecayCoupling or ExplicitCoupling
        The linear operator mapping the first process into the conditional
        mean of the second.
    grid : LocationSet, optional
        Common discretization grid. Required for non-scalar couplings;
        with a scalar coupling the construction is grid-free and blocks can
        be evaluated pointwise at arbitrary locations.
    """

    base_cov: object
    resid_cov: object
    coupling: object
    grid: object = None

    p = 2

    def __post_init__(self):
        if self.grid is None and not isinstance(self.coupling, ScalarCoupling):
            raise DataError("non-scalar couplings require a discretization grid")

    @cached_property
    def _grid_blocks(self):
        sigma11 = eval_cov_matrix(self.base_cov, self.grid, self.grid)
        sigma_cond = eval_cov_matrix(self.resid_cov, self.grid, self.grid)
        b = self.coupling.realize(self.grid)
        if not np.all(np.isfinite(b)):
            raise NumericalError("coupling realization has non-finite entries")
        return conditional_joint_from_matrices(sigma11, sigma_cond, b)

    @cached_property
    def _grid_tree(self):
        return cKDTree(self.grid.coords)

    def _grid_indices(self, locs):
        _, idx = self._grid_tree.query(locs.coords)
        return np.asarray(idx, dtype=int)

    def block(self, q, r, A, B):
        """Covariance block cov(Z_q at A, Z_r at B)."""
        _check_pair(q, r, 2)
        if isinstance(self.coupling, ScalarCoupling):
            b0 = self.coupling.b0
            base = eval_cov_matrix(self.base_cov, A, B)
            if q == 1 and r == 1:
                return base
            if q != r:
                return b0 * base
            return eval_cov_matrix(self.resid_cov, A, B) + b0 * b0 * base
        blocks = self._grid_blocks
        ia = self._grid_indices(A)
        ib = self._grid_indices(B)
        return blocks[q - 1][r - 1][np.ix_(ia, ib)]

    def length_scale_hint(self):
        return min(self.base_cov.range, self.resid_cov.range)


def conditional_joint_cov(model, L1, L2, tol=DEFAULT_NND_TOL):
    """Assemble the joint bivariate bundle of a ConditionalModel on a grid.

    Both variables must live on the same discretization grid (L1 == L2);
    the validity of the construction is certified and a failed certificate
    raises (it signals a broken univariate kernel, not a modeling choice).
    """
    if not (L1 == L2):
        raise DataError("conditional construction requires L1 == L2 (common grid)")
    sigma11 = eval_cov_matrix(model.base_cov, L1, L1)
    sigma_cond = eval_cov_matrix(model.resid_cov, L1, L1)
    for name, M in (("sigma11", sigma11), ("sigma_cond", sigma_cond)):
        cert = check_nnd(M, tol)
        if not cert.passed:
            raise NumericalError(
                f"{name} fails the n.n.d. check (min eig {cert.min_eigenvalue:.3e}); "
                "the univariate kernel is broken"
            )
    grid_model = model if model.grid is not None else ConditionalModel(
        model.base_cov, model.resid_cov, model.coupling, L1
    )
    if isinstance(model.coupling, ScalarCoupling) and model.grid is None:
        b = model.coupling.realize(L1)
    else:
        b = grid_model.coupling.realize(grid_model.grid)
    blocks = conditional_joint_from_matrices(sigma11, sigma_cond, b)
    return _bundle_from_blocks(blocks, [L1, L2], tol)


# ---------------------------------------------------------------------------
# Spatial Random Effects model
# ---------------------------------------------------------------------------

def _nugget_values(nugget, coords):
    if callable(nugget):
        v = np.asarray(nugget(coords), dtype=float)
        if v.shape != (coords.shape[0],):
            raise DataError("nugget function must return one value per location")
    else:
        v = np.full(coords.shape[0], float(nugget))
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise DataError("nugget values must be finite and >= 0")
    return v


@dataclass(frozen=True)
class SreModel:
    """Bivariate spatial random effects model.

    Each variable is a linear combination of known basis functions with
    random coefficients; the joint coefficient covariance couples the two
    variables. An optional per-location nugget adds white variation on
    exact location coincidence (constant by default, or a callable of an
    (n, 2) coordinate array for a heteroscedastic nugget).
    """

    basis_1: object
    basis_2: object
    coeff_cov: np.ndarray
    nugget_1: object = 0.0
    nugget_2: object = 0.0

    p = 2

    def __post_init__(self):
        K = check_square_matrix(self.coeff_cov, "coeff_cov")
        b = self.basis_1.b + self.basis_2.b
        if K.shape[0] != b:
            raise DataError(
                f"coeff_cov must be {b}x{b} for basis sizes "
                f"({self.basis_1.b}, {self.basis_2.b}), got {K.shape[0]}x{K.shape[0]}"
            )
        if np.max(np.abs(K - K.T)) > 1e-12 * max(np.trace(K), 1.0):
            raise DataError("coeff_cov must be symmetric")
        K = (K + K.T) / 2.0
        if np.linalg.eigvalsh(K)[0] <= 0:
            raise DataError("coeff_cov must be positive definite")
        object.__setattr__(self, "coeff_cov", K)

    def _basis(self, q):
        return self.basis_1 if q == 1 else self.basis_2

    def _nugget(self, q):
        return self.nugget_1 if q == 1 else self.nugget_2

    def _coeff_block(self, q, r):
        b1 = self.basis_1.b
        sl = {1: slice(0, b1), 2: slice(b1, None)}
        return self.coeff_cov[sl[q], sl[r]]

    def block(self, q, r, A, B):
        """Covariance block cov(Z_q at A, Z_r at B)."""
        _check_pair(q, r, 2)
        Sa = bisquare_design(self._basis(q), A.coords)
        Sb = bisquare_design(self._basis(r), B.coords)
        M = Sa @ self._coeff_block(q, r) @ Sb.T
        if q == r:
            mask = coincidence_mask(A, B)
            if mask.any():
                v = _nugget_values(self._nugget(q), A.coords)
                M = M + np.where(mask, v[:, None], 0.0)
        return M

    def length_scale_hint(self):
        return min(self.basis_1.scale, self.basis_2.scale)


def sre_cross_cov(model, q, r, s, u):
    """Pointwise SRE (cross-)covariance between variables q and r at s, u."""
    A = LocationSet([[s.x, s.y]])
    B = LocationSet([[u.x, u.y]])
    return float(model.block(q, r, A, B)[0, 0])


# ---------------------------------------------------------------------------
# Kernel convolution / factor representation, and the LMC special case
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiracKernel:
    """Point-mass kernel: amplitude at a fixed shift."""

    amplitude: float
    shift: tuple = (0.0, 0.0)

    width = 0.0

    def __post_init__(self):
        object.__setattr__(self, "shift", (float(self.shift[0]), float(self.shift[1])))


@dataclass(frozen=True)
class GaussianKernel:
    """Gaussian bump integrating to `amplitude`, centered at `shift`.

    g(u) = amplitude * N(u; shift, width^2 I). As width -> 0 this tends to
    a Dirac kernel of the same amplitude and shift.
    """

    amplitude: float
    width: float
    shift: tuple = (0.0, 0.0)

    def __post_init__(self):
        check_positive("kernel width", self.width)
        object.__setattr__(self, "shift", (float(self.shift[0]), float(self.shift[1])))


@dataclass(frozen=True)
class QuadratureSpec:
    """Midpoint-rule settings for the kernel-convolution integrals.

    The integration box spans `half_widths` effective kernel standard
    deviations on each side; the Gaussian mass outside the box must not
    exceed `tail_tol`.
    """

    nodes_per_axis: int = 64
    half_widths: float = 5.0
    tail_tol: float = 1e-4

    def __post_init__(self):
        if self.nodes_per_axis < 2:
            raise DataError("quadrature needs at least 2 nodes per axis")
        check_positive("half_widths", self.half_widths)
        check_positive("tail_tol", self.tail_tol)


@dataclass(frozen=True)
class KernelConvModel:
    """Factor representation: variable q is the sum over factors k of the
    convolution of kernel g_qk with an independent unit-variance factor
    process with correlation rho_k.

    `kernels[q-1][k-1]` is the kernel of variable q on factor k, either
    DiracKernel or GaussianKernel; zero-amplitude kernels drop out. The
    canonical form has as many factors as variables; more or fewer factors
    are accepted since validity only needs factor independence.
    """

    factor_correlations: tuple
    kernels: tuple
    quadrature: QuadratureSpec = field(default_factory=QuadratureSpec)

    def __post_init__(self):
        corr = tuple(self.factor_correlations)
        kern = tuple(tuple(row) for row in self.kernels)
        object.__setattr__(self, "factor_correlations", corr)
        object.__setattr__(self, "kernels", kern)
        if not kern or not corr:
            raise DataError("KernelConvModel needs kernels and factor correlations")
        k = len(corr)
        for row in kern:
            if len(row) != k:
                raise DataError(
                    f"each variable needs one kernel per factor ({k}), got {len(row)}"
                )

    @property
    def p(self):
        return len(self.kernels)

    @property
    def n_factors(self):
        return len(self.factor_correlations)

    def _pairs(self, q, r):
        for k in range(self.n_factors):
            gq = self.kernels[q - 1][k]
            gr = self.kernels[r - 1][k]
            if gq.amplitude == 0.0 or gr.amplitude == 0.0:
                continue
            yield gq, gr, self.factor_correlations[k]

    def cross_cov(self, q, r, h):
        """C_qr at a single 2-d lag vector h, cov(Z_q(s+h), Z_r(s))."""
        _check_pair(q, r, self.p)
        h = np.asarray(h, dtype=float)
        total = 0.0
        for gq, gr, rho in self._pairs(q, r):
            delta = np.array(gq.shift) - np.array(gr.shift)
            amp = gq.amplitude * gr.amplitude
            tau = math.hypot(gq.width, gr.width)
            if tau == 0.0:
                total += amp * float(rho(np.linalg.norm(delta + h)))
            else:
                total += amp * _gaussian_pair_quadrature(
                    rho, delta, tau, h, self.quadrature
                )
        return total

    def block(self, q, r, A, B):
        """Covariance block cov(Z_q at A, Z_r at B).

        All-Dirac factor pairs are evaluated in closed form and vectorized;
        pairs involving a Gaussian kernel fall back to per-entry quadrature,
        which is only suitable for small location sets.
        """
        _check_pair(q, r, self.p)
        H = A.coords[:, None, :] - B.coords[None, :, :]
        out = np.zeros(H.shape[:2])
        slow = []
        for gq, gr, rho in self._pairs(q, r):
            tau = math.hypot(gq.width, gr.width)
            if tau == 0.0:
                delta = np.array(gq.shift) - np.array(gr.shift)
                dists = np.linalg.norm(H + delta, axis=-1)
                out += gq.amplitude * gr.amplitude * rho(dists)
            else:
                slow.append((gq, gr, rho, tau))
        for gq, gr, rho, tau in slow:
            delta = np.array(gq.shift) - np.array(gr.shift)
            amp = gq.amplitude * gr.amplitude
            for i in range(H.shape[0]):
                for j in range(H.shape[1]):
                    out[i, j] += amp * _gaussian_pair_quadrature(
                        rho, delta, tau, H[i, j], self.quadrature
                    )
        return out

    def lmc_limit(self):
        """The exact LMC this model collapses to when all kernels are Dirac
        with zero shift. Raises otherwise."""
        amps = np.zeros((self.p, self.n_factors))
        for q in range(self.p):
            for k in range(self.n_factors):
                g = self.kernels[q][k]
                if g.width != 0.0 or g.shift != (0.0, 0.0):
                    raise DataError(
                        "LMC limit requires all kernels Dirac with zero shift"
                    )
                amps[q, k] = g.amplitude
        return LmcModel(amps, self.factor_correlations)

    def length_scale_hint(self):
        return min(c.range for c in self.factor_correlations)


def _gaussian_pair_quadrature(rho, delta, tau, h, spec):
    """Midpoint quadrature of the one remaining 2-d integral.

    For a Gaussian/Dirac kernel pair the double convolution integral reduces
    exactly to an integral over the kernel-argument difference w, which is
    Gaussian with mean `delta` and isotropic standard deviation `tau`:
    integral of N(w; delta, tau^2 I) * rho(|w + h|) dw.
    """
    c = spec.half_widths
    # mass of the 2-d Gaussian outside the integration box
    tail = 1.0 - math.erf(c / math.sqrt(2.0)) ** 2
    if tail > spec.tail_tol:
        raise NumericalError(
            f"quadrature grid too coarse: tail mass {tail:.3e} exceeds "
            f"tolerance {spec.tail_tol:.3e}; increase half_widths"
        )
    n = spec.nodes_per_axis
    half = c * tau
    step = 2.0 * half / n
    axis = -half + step * (np.arange(n) + 0.5)
    wx = delta[0] + axis
    wy = delta[1] + axis
    WX, WY = np.meshgrid(wx, wy)
    dens = np.exp(-((WX - delta[0]) ** 2 + (WY - delta[1]) ** 2) / (2.0 * tau * tau))
    dens /= 2.0 * math.pi * tau * tau
    dists = np.hypot(WX + h[0], WY + h[1])
    return float(np.sum(dens * rho(dists)) * step * step)


def kernel_conv_cross_cov(model, q, r, h):
    """Cross-covariance C_qr(h) of a KernelConvModel at 2-d lag h."""
    return model.cross_cov(q, r, h)


@dataclass(frozen=True)
class LmcModel:
    """Linear model of coregionalization, closed form.

    C_qr(h) = sum_k amplitudes[q, k] * amplitudes[r, k] * rho_k(|h|).
    """

    amplitudes: np.ndarray
    correlations: tuple

    def __post_init__(self):
        A = np.asarray(self.amplitudes, dtype=float)
        if A.ndim != 2:
            raise DataError("amplitudes must be a (p, n_factors) array")
        if not np.all(np.isfinite(A)):
            raise DataError("amplitudes must be finite")
        corr = tuple(self.correlations)
        if A.shape[1] != len(corr):
            raise DataError(
                f"{A.shape[1]} amplitude columns but {len(corr)} factor correlations"
            )
        object.__setattr__(self, "amplitudes", A)
        object.__setattr__(self, "correlations", corr)

    @property
    def p(self):
        return self.amplitudes.shape[0]

    def cross_cov(self, q, r, dists):
        """C_qr at nonnegative distances (isotropic, symmetric in the lag)."""
        _check_pair(q, r, self.p)
        dists = np.asarray(dists, dtype=float)
        out = np.zeros_like(dists)
        for k, rho in enumerate(self.correlations):
            out += self.amplitudes[q - 1, k] * self.amplitudes[r - 1, k] * rho(dists)
        return out

    def block(self, q, r, A, B):
        return self.cross_cov(q, r, cdist(A.coords, B.coords))

    def length_scale_hint(self):
        return min(c.range for c in self.correlations)


@dataclass(frozen=True)
class SwappedBivariate:
    """View of a bivariate model with the variable roles exchanged.

    Lets the conditional route condition variable 1 on variable 2 (the
    ordering is a scientific choice) without re-deriving any formulas.
    """

    inner: object

    p = 2

    def block(self, q, r, A, B):
        return self.inner.block(3 - q, 3 - r, A, B)

    def length_scale_hint(self):
        return self.inner.length_scale_hint()


# ---------------------------------------------------------------------------
# Bundle assembly and simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CovMatrixBundle:
    """Joint covariance blocks over concrete per-variable location sets,
    with an attached nonnegative-definiteness certificate."""

    blocks: tuple
    joint: np.ndarray
    certificate: NndCertificate
    locations: tuple

    @property
    def p(self):
        return len(self.locations)

    def sizes(self):
        return [len(L) for L in self.locations]

    def block(self, q, r):
        return self.blocks[q - 1][r - 1]


def _check_pair(q, r, p):
    if not (1 <= q <= p and 1 <= r <= p):
        raise DataError(f"variable indices must be in 1..{p}, got ({q}, {r})")


def _bundle_from_blocks(blocks, locations, tol=DEFAULT_NND_TOL):
    """Assemble, symmetrize and certify a joint matrix from p x p blocks.

    Construction is refused (NumericalError) when the certificate fails;
    for the constructive model routes that indicates an implementation bug.
    """
    joint = np.block([[np.asarray(b, dtype=float) for b in row] for row in blocks])
    joint = (joint + joint.T) / 2.0
    cert = check_nnd(joint, tol)
    if not cert.passed:
        raise NumericalError(
            f"joint covariance fails the n.n.d. certificate: min eigenvalue "
            f"{cert.min_eigenvalue:.6e} < {cert.threshold():.6e}"
        )
    blocks = tuple(tuple(np.asarray(b, dtype=float) for b in row) for row in blocks)
    return CovMatrixBundle(blocks, joint, cert, tuple(locations))


def assemble_bundle(model, locations, tol=DEFAULT_NND_TOL):
    """Evaluate all covariance blocks of a model over per-variable location
    sets and certify the assembled joint matrix."""
    locations = list(locations)
    if len(locations) != model.p:
        raise DataError(f"model has p={model.p} variables, got {len(locations)} location sets")
    for L in locations:
        if len(L) < 1:
            raise DataError("location sets must be nonempty")
    p = model.p
    blocks = [[None] * p for _ in range(p)]
    for q in range(1, p + 1):
        for r in range(q, p + 1):
            M = model.block(q, r, locations[q - 1], locations[r - 1])
            blocks[q - 1][r - 1] = M
            if r != q:
                blocks[r - 1][q - 1] = M.T
    return _bundle_from_blocks(blocks, locations, tol)


def simulate_field(bundle, means, seed):
    """Draw one multivariate Gaussian realization from an assembled bundle.

    The joint matrix is factorized by Cholesky; if that fails, a diagonal
    jitter of at most 1e-10 * trace is tried, then a symmetric
    eigendecomposition with negative eigenvalues within the same budget
    clamped to zero. Requiring more than that is an error. The same seed
    reproduces the same dataset bit for bit.
    """
    means = np.asarray(means, dtype=float)
    if means.shape != (bundle.p,):
        raise DataError(f"means must have length p={bundle.p}")
    J = bundle.joint
    n = J.shape[0]
    trace = float(np.trace(J))
    budget = 1e-10 * max(trace, 0.0)
    factor = None
    try:
        factor = np.linalg.cholesky(J)
    except np.linalg.LinAlgError:
        if budget > 0.0:
            try:
                factor = np.linalg.cholesky(J + budget * np.eye(n))
            except np.linalg.LinAlgError:
                factor = None
    if factor is None:
        w, V = np.linalg.eigh(J)
        if w[0] < -budget:
            raise NumericalError(
                f"factorization failure: min eigenvalue {w[0]:.6e} below the "
                f"jitter budget {-budget:.6e}"
            )
        factor = V * np.sqrt(np.clip(w, 0.0, None))
    rng = np.random.default_rng(seed)
    z = factor @ rng.standard_normal(n)

    series = []
    start = 0
    for q, L in enumerate(bundle.locations, start=1):
        stop = start + len(L)
        series.append(VariableSeries(q, L, z[start:stop] + means[q - 1]))
        start = stop
    return MultivariateDataset(tuple(series))
