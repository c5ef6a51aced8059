"""Latent decomposition layered on a smooth cross-covariance construction.

An observation of variable q at location s is modeled as

    Z_q(s) = W_q(s) + xi_q(s) + eps_q(s)

where W is the smooth process (any construction from
:mod:`cokrig.construction`), xi is micro-scale variation (white across
locations, independent across variables, part of the scientific signal),
and eps is measurement error (white across stations, possibly correlated
across variables recorded by the same instrument, always filtered out in
prediction). Micro-scale and measurement error are confounded in the data
covariance; only their sum is identifiable, so the split is a user choice.
"""

from dataclasses import dataclass

import numpy as np

from .data import LocationSet, coincidence_mask
from .exceptions import DataError
from .kernels import check_nnd
from .construction import _bundle_from_blocks, DEFAULT_NND_TOL


@dataclass(frozen=True)
class MeasurementErrorSpec:
    """Measurement-error covariance across variables at one station.

    Applies only between observations at exactly coincident locations
    (same instrument); distinct stations have independent errors. The
    matrix may have nonzero off-diagonal entries.
    """

    sigma_eps: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.sigma_eps, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise DataError("sigma_eps must be a square matrix")
        if np.max(np.abs(M - M.T)) > 1e-12 * max(np.trace(M), 1.0):
            raise DataError("sigma_eps must be symmetric")
        M = (M + M.T) / 2.0
        cert = check_nnd(M, 1e-10)
        if not cert.passed:
            raise DataError("sigma_eps must be nonnegative definite")
        object.__setattr__(self, "sigma_eps", M)

    @property
    def p(self):
        return self.sigma_eps.shape[0]

    @staticmethod
    def zero(p):
        return MeasurementErrorSpec(np.zeros((p, p)))


@dataclass(frozen=True)
class MicroScaleSpec:
    """Micro-scale variances, one per variable (diagonal across variables).

    The micro-scale process is independent across distinct locations and
    across variables; cross-variable micro correlation would not be
    identifiable from spatial data.
    """

    sigma_xi: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.sigma_xi, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise DataError("sigma_xi must be a square matrix")
        if np.any(M != np.diag(np.diag(M))):
            raise DataError("sigma_xi must be diagonal")
        if np.any(np.diag(M) < 0) or not np.all(np.isfinite(M)):
            raise DataError("sigma_xi diagonal must be finite and >= 0")
        object.__setattr__(self, "sigma_xi", M)

    @property
    def p(self):
        return self.sigma_xi.shape[0]

    @staticmethod
    def from_diagonal(diag):
        return MicroScaleSpec(np.diag(np.asarray(diag, dtype=float)))

    @staticmethod
    def zero(p):
        return MicroScaleSpec(np.zeros((p, p)))


@dataclass(frozen=True)
class HierarchicalModel:
    """A smooth cross-covariance construction plus nugget components.

    Note on SRE components: an SreModel's own per-location nugget, when
    nonzero, stays with the component (it belongs to the latent process for
    both prediction targets) and shows up in the origin gap on top of
    sigma_xi + sigma_eps.
    """

    smooth: object
    micro: MicroScaleSpec = None
    noise: MeasurementErrorSpec = None

    def __post_init__(self):
        p = self.smooth.p
        micro = self.micro if self.micro is not None else MicroScaleSpec.zero(p)
        noise = self.noise if self.noise is not None else MeasurementErrorSpec.zero(p)
        if micro.p != p or noise.p != p:
            raise DataError(
                f"component dimensions disagree: smooth p={p}, "
                f"micro p={micro.p}, noise p={noise.p}"
            )
        object.__setattr__(self, "micro", micro)
        object.__setattr__(self, "noise", noise)

    @property
    def p(self):
        return self.smooth.p

    def nugget_total(self):
        # single matrix add keeps swapped (xi, eps) pairs bitwise identical
        return self.micro.sigma_xi + self.noise.sigma_eps

    def data_block(self, q, r, A, B):
        """Observation covariance block: smooth + nugget on coincidence."""
        M = self.smooth.block(q, r, A, B)
        nug = self.nugget_total()[q - 1, r - 1]
        if nug != 0.0:
            mask = coincidence_mask(A, B)
            if mask.any():
                M = M + nug * mask
        return M

    def latent_block(self, q, r, A, B, include_micro=True):
        """Latent-process covariance block, measurement error excluded.

        With `include_micro` the target process is Y = W + xi; without it,
        the smooth W alone.
        """
        M = self.smooth.block(q, r, A, B)
        if include_micro:
            xi = self.micro.sigma_xi[q - 1, r - 1]
            if xi != 0.0:
                mask = coincidence_mask(A, B)
                if mask.any():
                    M = M + xi * mask
        return M


def data_cov_blocks(model, location_sets):
    """Uncertified p x p observation covariance blocks over location sets."""
    p = model.p
    if len(location_sets) != p:
        raise DataError(f"expected {p} location sets, got {len(location_sets)}")
    blocks = [[None] * p for _ in range(p)]
    for q in range(1, p + 1):
        for r in range(q, p + 1):
            M = model.data_block(q, r, location_sets[q - 1], location_sets[r - 1])
            blocks[q - 1][r - 1] = M
            if r != q:
                blocks[r - 1][q - 1] = M.T
    return blocks


def data_cov_bundle(model, location_sets, tol=DEFAULT_NND_TOL):
    """Certified observation-covariance bundle over explicit location sets."""
    location_sets = list(location_sets)
    blocks = data_cov_blocks(model, location_sets)
    return _bundle_from_blocks(blocks, location_sets, tol)


def assemble_data_cov(model, dataset, tol=DEFAULT_NND_TOL):
    """Assemble and certify the observation covariance of a dataset.

    Blocks are the smooth cross-covariances plus micro-scale and
    measurement-error contributions at exactly coincident locations
    (cross-variable measurement-error entries enter only where two
    variables share a station).
    """
    return data_cov_bundle(model, dataset.location_sets(), tol)


def origin_gap(model, probe, eps_h=None, tol=DEFAULT_NND_TOL):
    """Covariance gap at the origin around a probe location.

    Returns the p x p matrix C_Z(probe, probe) - C_Z(probe, probe + eps_h)
    (step taken along the x axis) together with a nonnegative-definiteness
    certificate of its symmetrized value. For a smooth component the gap
    equals sigma_xi + sigma_eps up to the component's continuity error at
    eps_h, which defaults to a millionth of the model's length scale.
    """
    if eps_h is None:
        eps_h = model.smooth.length_scale_hint() / 1e6
    if not (eps_h > 0):
        raise DataError(f"eps_h must be > 0, got {eps_h}")
    A = LocationSet([[probe.x, probe.y]])
    B = LocationSet([[probe.x + eps_h, probe.y]])
    p = model.p
    nug = model.nugget_total()
    gap = np.empty((p, p))
    for q in range(1, p + 1):
        for r in range(1, p + 1):
            at_zero = model.smooth.block(q, r, A, A)[0, 0] + nug[q - 1, r - 1]
            at_eps = model.smooth.block(q, r, A, B)[0, 0]
            gap[q - 1, r - 1] = at_zero - at_eps
    cert = check_nnd((gap + gap.T) / 2.0, tol)
    return gap, cert
