"""Empirical cross-dependence summaries and parameter fitting.

Estimation follows the two-track strategy: variance-based pseudo
cross-variograms (usable without collocated data) feed weighted least
squares, while the Gaussian likelihood of the full hierarchical model feeds
maximum likelihood; fitted covariances then drive prediction. Model
comparison uses AIC/AICc rather than raw log-likelihood.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.linalg import cho_factor, cho_solve

from .construction import (
    ConditionalModel,
    LmcModel,
    ScalarCoupling,
    SreModel,
    SwappedBivariate,
)
from .data import MultivariateDataset
from .exceptions import DataError, NumericalError
from .hierarchical import (
    HierarchicalModel,
    MeasurementErrorSpec,
    MicroScaleSpec,
    data_cov_blocks,
)
from .kernels import BasisSet, CorrelationFunction, CovarianceFunction, bisquare_design

WLS_WEIGHT_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# Lag bins and empirical summaries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LagBins:
    """Distance bins for empirical summaries.

    In directional mode the sign of the lag component along `axis` is
    retained (bins mirror around zero) and only pairs whose separation
    line lies within `tol_angle_deg` of the axis are included. The lag
    vector points from the second variable's location to the first's.
    """

    edges: np.ndarray
    directional: bool = False
    axis: str = "x"
    tol_angle_deg: float = 90.0

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        if edges.ndim != 1 or edges.size < 2:
            raise DataError("LagBins: need at least two edges")
        if edges[0] != 0.0 or np.any(np.diff(edges) <= 0):
            raise DataError("LagBins: edges must strictly increase from 0")
        if self.axis not in ("x", "y"):
            raise DataError(f"LagBins: axis must be 'x' or 'y', got {self.axis!r}")
        if not 0 < self.tol_angle_deg <= 90.0:
            raise DataError("LagBins: tol_angle_deg must be in (0, 90]")
        edges = edges.copy()
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)

    @property
    def max_lag(self):
        return float(self.edges[-1])

    @property
    def n_bins(self):
        m = self.edges.size - 1
        return 2 * m if self.directional else m

    def centers(self):
        c = (self.edges[:-1] + self.edges[1:]) / 2.0
        if self.directional:
            return np.concatenate([-c[::-1], c])
        return c

    @staticmethod
    def regular(max_lag, n_bins, directional=False, axis="x", tol_angle_deg=90.0):
        return LagBins(
            np.linspace(0.0, float(max_lag), int(n_bins) + 1),
            directional=directional,
            axis=axis,
            tol_angle_deg=tol_angle_deg,
        )


@dataclass(frozen=True)
class EmpiricalSummary:
    """Binned empirical cross-dependence for one variable pair.

    Bins with zero pairs carry NaN values (a missing marker), never
    fabricated numbers.
    """

    kind: str  # 'pseudo_cross_variogram' | 'empirical_cross_cov'
    pair: tuple
    bin_centers: np.ndarray
    values: np.ndarray
    pair_counts: np.ndarray
    directional: bool = False
    axis: str = "x"

    def nonempty(self):
        return self.pair_counts > 0


def _pair_arrays(dataset, pair):
    q, r = pair
    if not (1 <= q <= dataset.p and 1 <= r <= dataset.p):
        raise DataError(f"variable pair {pair} out of range 1..{dataset.p}")
    sq, sr = dataset.get(q), dataset.get(r)
    if sq.n < 2 or sr.n < 2:
        raise DataError("empirical summaries need at least 2 observations per series")
    return sq, sr


def _bin_pairs(bins, coords_q, coords_r):
    """Bin indices for all ordered pairs; -1 marks excluded pairs."""
    m = bins.edges.size - 1
    if not bins.directional:
        diff = coords_q[:, None, :] - coords_r[None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        idx = np.digitize(dist, bins.edges) - 1
        idx[dist == bins.edges[-1]] = m - 1
        idx[(idx < 0) | (idx >= m)] = -1
        return idx
    ax = 0 if bins.axis == "x" else 1
    diff = coords_q[:, None, :] - coords_r[None, :, :]
    along = diff[..., ax]
    perp = np.abs(diff[..., 1 - ax])
    abs_along = np.abs(along)
    angle = np.degrees(np.arctan2(perp, abs_along))
    slot = np.digitize(abs_along, bins.edges) - 1
    slot[abs_along == bins.edges[-1]] = m - 1
    ok = (angle <= bins.tol_angle_deg) & (slot >= 0) & (slot < m)
    idx = np.where(along >= 0, m + slot, m - 1 - slot)
    idx[~ok] = -1
    return idx


def _binned_summary(dataset, pair, bins, kind):
    q, r = pair
    if q > r:
        # canonical order keeps the pair-swap identity exact:
        # summary(q, r) at +h mirrors summary(r, q) at -h bin for bin
        base = _binned_summary(dataset, (r, q), bins, kind)
        flip = slice(None, None, -1) if bins.directional else slice(None)
        return EmpiricalSummary(
            kind=kind,
            pair=(q, r),
            bin_centers=base.bin_centers,
            values=base.values[flip].copy(),
            pair_counts=base.pair_counts[flip].copy(),
            directional=base.directional,
            axis=base.axis,
        )
    sq, sr = _pair_arrays(dataset, pair)
    dq = sq.values - sq.values.mean()
    dr = sr.values - sr.values.mean()
    if kind == "empirical_cross_cov":
        stat = dq[:, None] * dr[None, :]
        drop_self = False
    elif kind == "pseudo_cross_variogram":
        stat = 0.5 * (dq[:, None] - dr[None, :]) ** 2
        drop_self = True
    else:
        raise DataError(f"unknown summary kind {kind!r}")

    idx = _bin_pairs(bins, sq.locations.coords, sr.locations.coords)
    if q == r and drop_self:
        np.fill_diagonal(idx, -1)
    flat_idx = idx.ravel()
    keep = flat_idx >= 0
    flat_idx = flat_idx[keep]
    flat_stat = stat.ravel()[keep]

    nb = bins.n_bins
    counts = np.bincount(flat_idx, minlength=nb)
    sums = np.bincount(flat_idx, weights=flat_stat, minlength=nb)
    if not counts.any():
        raise DataError(f"all lag bins empty for pair {pair}")
    values = np.divide(sums, counts, out=np.full(nb, np.nan), where=counts > 0)
    return EmpiricalSummary(
        kind=kind,
        pair=(q, r),
        bin_centers=bins.centers(),
        values=values,
        pair_counts=counts,
        directional=bins.directional,
        axis=bins.axis,
    )


def empirical_cross_cov(dataset, pair, bins):
    """Binned moment estimator of the cross-covariance for one pair.

    Averages (Z_q(s_qi) - mean_q)(Z_r(s_rj) - mean_r) over ordered cross
    pairs binned by lag; same-variable self pairs are included, so the
    origin bin of a (q, q) summary with only self pairs equals the biased
    sample variance. Directional mode keeps the signed lag along the
    chosen axis, exposing asymmetric dependence.
    """
    return _binned_summary(dataset, pair, bins, "empirical_cross_cov")


def pseudo_cross_variogram(dataset, pair, bins):
    """Variance-based pseudo cross-variogram for one pair.

    Bin value is half the mean of (Z_q(s_qi) - Z_r(s_rj))^2 over cross
    pairs (after per-variable mean removal), which needs no collocation.
    Same-variable self pairs are excluded (their difference is identically
    zero). For q == r this reduces to the classical semivariogram
    estimator.
    """
    return _binned_summary(dataset, pair, bins, "pseudo_cross_variogram")


def summaries_to_csv(summaries, path):
    """Write summaries as `pair_q,pair_r,bin_center,value,count` rows.

    Empty bins keep an empty value field.
    """
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pair_q", "pair_r", "bin_center", "value", "count"])
        for s in summaries:
            for c, v, n in zip(s.bin_centers, s.values, s.pair_counts):
                writer.writerow(
                    [s.pair[0], s.pair[1], repr(float(c)),
                     "" if math.isnan(v) else repr(float(v)), int(n)]
                )


# ---------------------------------------------------------------------------
# Fit families
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamSpec:
    """One free parameter: starting value, finite bounds, and whether the
    optimizer works on its logarithm (positive parameters)."""

    name: str
    init: float
    lower: float
    upper: float
    log_scale: bool = True

    def __post_init__(self):
        if not (self.lower < self.upper):
            raise DataError(f"{self.name}: lower bound must be below upper")
        if self.log_scale and self.lower <= 0:
            raise DataError(f"{self.name}: log-scale parameters need lower > 0")
        if not (self.lower <= self.init <= self.upper):
            raise DataError(f"{self.name}: init {self.init} outside bounds")


class FitFamily:
    """A parametric hierarchical-model family with a finite parameter
    vector. Subclasses define the parameter specs, how to build a model
    from a parameter dict, and (for stationary families) closed-form
    cross-covariance curves used by weighted least squares."""

    name = "family"
    p = 2

    def param_specs(self):
        raise NotImplementedError

    def build(self, params, noise_split=None):
        raise NotImplementedError

    def default_init(self, dataset):
        """Data-driven starting values; falls back to the spec inits."""
        return {s.name: s.init for s in self.param_specs()}

    def cross_cov(self, params, q, r, dists):
        raise NotImplementedError(
            f"{self.name}: no stationary closed form; use maximum likelihood"
        )

    def nugget_value(self, params, q):
        key = "nugget" if self.p == 1 else f"nugget{q}"
        return params.get(key, 0.0)

    def summary_curve(self, params, summary):
        """Model curve at a summary's bin centers (NaN-free)."""
        h = np.abs(summary.bin_centers)
        q, r = summary.pair
        if summary.kind == "pseudo_cross_variogram":
            sill_q = float(self.cross_cov(params, q, q, np.zeros(1))[0])
            sill_r = float(self.cross_cov(params, r, r, np.zeros(1))[0])
            nug_q = self.nugget_value(params, q)
            nug_r = self.nugget_value(params, r)
            return 0.5 * (sill_q + nug_q + sill_r + nug_r) - self.cross_cov(
                params, q, r, h
            )
        return self.cross_cov(params, q, r, h)

    def _split_specs(self, nugget_params, noise_split):
        """Micro/noise specs from fitted per-variable nugget totals."""
        if noise_split is None:
            noise_split = (1.0,) * self.p
        split = np.asarray(noise_split, dtype=float)
        if split.shape != (self.p,) or np.any(split < 0) or np.any(split > 1):
            raise DataError("noise_split must give one fraction in [0, 1] per variable")
        nug = np.asarray(nugget_params, dtype=float)
        micro = MicroScaleSpec.from_diagonal(split * nug)
        noise = MeasurementErrorSpec(np.diag((1.0 - split) * nug))
        return micro, noise


def _domain_scale(dataset):
    coords = np.vstack([s.locations.coords for s in dataset.series])
    span = coords.max(axis=0) - coords.min(axis=0)
    return max(float(np.hypot(span[0], span[1])), 1e-6)


def _sample_variances(dataset):
    return [max(float(np.var(s.values)), 1e-8) for s in dataset.series]


class MaternFamily(FitFamily):
    """Univariate Matern-plus-nugget family (p = 1)."""

    p = 1

    def __init__(self, nu=0.5, cov_family="matern"):
        self.nu = float(nu)
        self.cov_family = cov_family
        self.name = f"matern_nu{nu:g}" if cov_family == "matern" else cov_family

    def param_specs(self):
        return (
            ParamSpec("sigma2", 1.0, 1e-6, 1e6),
            ParamSpec("range", 1.0, 1e-4, 1e5),
            ParamSpec("nugget", 0.1, 1e-8, 1e6),
        )

    def default_init(self, dataset):
        var = _sample_variances(dataset)[0]
        return {
            "sigma2": 0.9 * var,
            "range": _domain_scale(dataset) / 4.0,
            "nugget": max(0.1 * var, 1e-6),
        }

    def _corr(self, params):
        return CorrelationFunction(self.cov_family, params["range"], self.nu)

    def cross_cov(self, params, q, r, dists):
        return params["sigma2"] * self._corr(params)(np.asarray(dists, dtype=float))

    def build(self, params, noise_split=None):
        amp = math.sqrt(params["sigma2"])
        smooth = LmcModel(np.array([[amp]]), (self._corr(params),))
        micro, noise = self._split_specs([params["nugget"]], noise_split)
        return HierarchicalModel(smooth, micro, noise)


class LmcFamily(FitFamily):
    """Bivariate linear model of coregionalization with free loadings.

    `triangular` zeroes the loadings of variable 1 on factors beyond the
    first; `shared_range` ties all factor ranges together. The
    parsimonious variant (2 triangular factors, one shared range, two
    nuggets) has six free covariance parameters.
    """

    p = 2

    def __init__(self, n_factors=2, triangular=False, shared_range=False,
                 cov_family="exponential", nu=0.5):
        if n_factors < 1:
            raise DataError("LmcFamily needs at least one factor")
        self.n_factors = int(n_factors)
        self.triangular = bool(triangular)
        self.shared_range = bool(shared_range)
        self.cov_family = cov_family
        self.nu = float(nu)
        self.name = f"lmc{'_tri' if triangular else ''}_k{n_factors}"

    @staticmethod
    def parsimonious(cov_family="exponential", nu=0.5):
        return LmcFamily(
            n_factors=2, triangular=True, shared_range=True,
            cov_family=cov_family, nu=nu,
        )

    def _amp_names(self):
        names = []
        for q in (1, 2):
            for k in range(1, self.n_factors + 1):
                if self.triangular and k > q:
                    continue
                names.append((q, k))
        return names

    def param_specs(self):
        specs = []
        for q, k in self._amp_names():
            init = 1.0 if q == k else 0.3
            specs.append(ParamSpec(f"a{q}{k}", init, -100.0, 100.0, log_scale=False))
        if self.shared_range:
            specs.append(ParamSpec("range", 1.0, 1e-4, 1e5))
        else:
            for k in range(1, self.n_factors + 1):
                specs.append(ParamSpec(f"range{k}", 1.0, 1e-4, 1e5))
        specs.append(ParamSpec("nugget1", 0.1, 1e-8, 1e6))
        specs.append(ParamSpec("nugget2", 0.1, 1e-8, 1e6))
        return tuple(specs)

    def default_init(self, dataset):
        var = _sample_variances(dataset)
        scale = _domain_scale(dataset) / 4.0
        init = {}
        for q, k in self._amp_names():
            main = math.sqrt(0.8 * var[q - 1])
            init[f"a{q}{k}"] = main if k <= q else 0.2 * main
        if self.shared_range:
            init["range"] = scale
        else:
            # stagger the factor ranges so the starting simplex is not degenerate
            for k in range(1, self.n_factors + 1):
                init[f"range{k}"] = scale * (1.0 + 0.5 * (k - 1))
        init["nugget1"] = max(0.1 * var[0], 1e-6)
        init["nugget2"] = max(0.1 * var[1], 1e-6)
        return init

    def _amplitudes(self, params):
        A = np.zeros((2, self.n_factors))
        for q, k in self._amp_names():
            A[q - 1, k - 1] = params[f"a{q}{k}"]
        return A

    def _correlations(self, params):
        out = []
        for k in range(1, self.n_factors + 1):
            rng = params["range"] if self.shared_range else params[f"range{k}"]
            out.append(CorrelationFunction(self.cov_family, rng, self.nu))
        return tuple(out)

    def cross_cov(self, params, q, r, dists):
        model = LmcModel(self._amplitudes(params), self._correlations(params))
        return model.cross_cov(q, r, dists)

    def build(self, params, noise_split=None):
        smooth = LmcModel(self._amplitudes(params), self._correlations(params))
        micro, noise = self._split_specs(
            [params["nugget1"], params["nugget2"]], noise_split
        )
        return HierarchicalModel(smooth, micro, noise)


class ConditionalScalarFamily(FitFamily):
    """Bivariate conditional construction with a scalar coupling.

    With a scalar coupling the implied covariances are stationary closed
    forms, so the family supports both WLS and ML and evaluation at
    arbitrary (non-grid) locations is exact.
    """

    p = 2

    def __init__(self, cov_family="exponential", nu_base=0.5, nu_resid=0.5,
                 order=(1, 2)):
        if tuple(order) not in ((1, 2), (2, 1)):
            raise DataError("order must be (1, 2) or (2, 1)")
        self.cov_family = cov_family
        self.nu_base = float(nu_base)
        self.nu_resid = float(nu_resid)
        self.order = tuple(order)
        self.name = "conditional_scalar"

    def param_specs(self):
        return (
            ParamSpec("sigma2_base", 1.0, 1e-6, 1e6),
            ParamSpec("range_base", 1.0, 1e-4, 1e5),
            ParamSpec("sigma2_resid", 1.0, 1e-6, 1e6),
            ParamSpec("range_resid", 1.0, 1e-4, 1e5),
            ParamSpec("coupling", 0.3, -100.0, 100.0, log_scale=False),
            ParamSpec("nugget1", 0.1, 1e-8, 1e6),
            ParamSpec("nugget2", 0.1, 1e-8, 1e6),
        )

    def default_init(self, dataset):
        var = _sample_variances(dataset)
        scale = _domain_scale(dataset) / 4.0
        b0 = 0.3 * math.sqrt(var[1] / var[0])
        return {
            "sigma2_base": 0.9 * var[0],
            "range_base": scale,
            "sigma2_resid": 0.6 * var[1],
            "range_resid": scale,
            "coupling": b0,
            "nugget1": max(0.1 * var[0], 1e-6),
            "nugget2": max(0.1 * var[1], 1e-6),
        }

    def _kernels(self, params):
        base = CovarianceFunction(
            self.cov_family, params["sigma2_base"], params["range_base"], self.nu_base
        )
        resid = CovarianceFunction(
            self.cov_family, params["sigma2_resid"], params["range_resid"], self.nu_resid
        )
        return base, resid

    def cross_cov(self, params, q, r, dists):
        dists = np.asarray(dists, dtype=float)
        base, resid = self._kernels(params)
        b0 = params["coupling"]
        first = self.order[0]  # the conditioning variable
        if q == first and r == first:
            return base(dists)
        if q != r:
            return b0 * base(dists)
        return resid(dists) + b0 * b0 * base(dists)

    def build(self, params, noise_split=None):
        base, resid = self._kernels(params)
        smooth = ConditionalModel(base, resid, ScalarCoupling(params["coupling"]))
        if self.order == (2, 1):
            smooth = SwappedBivariate(smooth)
        micro, noise = self._split_specs(
            [params["nugget1"], params["nugget2"]], noise_split
        )
        return HierarchicalModel(smooth, micro, noise)


class SreFamily(FitFamily):
    """Bivariate spatial random effects family over a fixed, known basis.

    Both variables share the basis; the coefficient covariance is
    parameterized by per-variable coefficient variances and one
    cross-correlation, which keeps it positive definite for |rho| < 1.
    Nonstationary, so only maximum likelihood applies.
    """

    p = 2

    def __init__(self, basis):
        if not isinstance(basis, BasisSet):
            raise DataError("SreFamily needs a BasisSet")
        self.basis = basis
        self.name = f"sre_b{basis.b}"

    def param_specs(self):
        return (
            ParamSpec("k1", 1.0, 1e-6, 1e6),
            ParamSpec("k2", 1.0, 1e-6, 1e6),
            ParamSpec("rho", 0.0, -0.99, 0.99, log_scale=False),
            ParamSpec("nugget1", 0.1, 1e-8, 1e6),
            ParamSpec("nugget2", 0.1, 1e-8, 1e6),
        )

    def default_init(self, dataset):
        var = _sample_variances(dataset)
        norms = []
        for s in dataset.series:
            S = bisquare_design(self.basis, s.locations.coords)
            norms.append(max(float(np.mean(np.sum(S * S, axis=1))), 1e-8))
        return {
            "k1": 0.9 * var[0] / norms[0],
            "k2": 0.9 * var[1] / norms[1],
            "rho": 0.0,
            "nugget1": max(0.1 * var[0], 1e-6),
            "nugget2": max(0.1 * var[1], 1e-6),
        }

    def build(self, params, noise_split=None):
        b = self.basis.b
        eye = np.eye(b)
        c = params["rho"] * math.sqrt(params["k1"] * params["k2"])
        K = np.block([[params["k1"] * eye, c * eye], [c * eye, params["k2"] * eye]])
        smooth = SreModel(self.basis, self.basis, K)
        micro, noise = self._split_specs(
            [params["nugget1"], params["nugget2"]], noise_split
        )
        return HierarchicalModel(smooth, micro, noise)


# ---------------------------------------------------------------------------
# Optimization machinery
# ---------------------------------------------------------------------------

def _resolve_specs(family, fixed, bounds):
    fixed = dict(fixed or {})
    bounds = dict(bounds or {})
    known = {s.name for s in family.param_specs()}
    for name in list(fixed) + list(bounds):
        if name not in known:
            raise DataError(f"unknown parameter {name!r} for family {family.name}")
    free = []
    for spec in family.param_specs():
        if spec.name in fixed:
            continue
        if spec.name in bounds:
            lo, hi = bounds[spec.name]
            spec = ParamSpec(spec.name, min(max(spec.init, lo), hi), lo, hi,
                             spec.log_scale)
        free.append(spec)
    if not free:
        raise DataError("at least one free parameter is required")
    return free, fixed


def _to_vector(specs, params):
    x = np.empty(len(specs))
    for i, s in enumerate(specs):
        v = params[s.name]
        if not (s.lower <= v <= s.upper):
            raise DataError(
                f"init for {s.name} = {v} outside bounds [{s.lower}, {s.upper}]"
            )
        x[i] = math.log(v) if s.log_scale else v
    return x


def _from_vector(specs, x, fixed):
    params = dict(fixed)
    for s, v in zip(specs, x):
        params[s.name] = math.exp(v) if s.log_scale else float(v)
    return params


def _vector_bounds(specs):
    out = []
    for s in specs:
        if s.log_scale:
            out.append((math.log(s.lower), math.log(s.upper)))
        else:
            out.append((s.lower, s.upper))
    return out


def _minimize_restarts(fun, x0, bounds, restarts, seed, maxiter, trace=None,
                       xatol=1e-6, fatol=1e-10):
    """Bounded Nelder-Mead from `restarts` jittered starts; best result wins.

    Deterministic given (x0, seed). Restart jitter is uniform within 30% of
    each bound span around the start, clipped to bounds.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    span = hi - lo
    starts = [np.asarray(x0, dtype=float)]
    for _ in range(max(0, restarts - 1)):
        jitter = (rng.random(len(x0)) - 0.5) * 0.3 * span
        starts.append(np.clip(x0 + jitter, lo, hi))

    best = None
    total_iter = 0
    options = {"xatol": xatol, "fatol": fatol, "adaptive": len(x0) >= 8}
    if maxiter is not None:
        options["maxiter"] = int(maxiter)
    callback = None
    if trace is not None:
        def callback(xk):
            trace.append(float(fun(xk)))
    for s in starts:
        res = minimize(fun, s, method="Nelder-Mead", bounds=bounds,
                       options=options, callback=callback)
        total_iter += int(res.nit)
        if best is None or res.fun < best.fun:
            best = res
    return best, total_iter


# ---------------------------------------------------------------------------
# Fit results and criteria
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FitResult:
    """Fitted parameters plus the bookkeeping AIC/AICc needs."""

    params: dict
    objective: float
    loglik: object  # float for ML, None for WLS
    k: int
    n: int
    converged: bool
    iterations: int
    method: str
    family: str
    at_bounds: tuple = ()
    means: object = None  # profiled per-variable means (ML only)

    def __post_init__(self):
        if self.k < 1:
            raise DataError("FitResult: k must be >= 1")


def information_criteria(fit):
    """AIC and small-sample AICc of an ML fit.

    AICc is None when n <= k + 1 (undefined); AIC is always returned.
    """
    if fit.loglik is None:
        raise DataError("information criteria need a log-likelihood (ML fit)")
    aic = -2.0 * fit.loglik + 2.0 * fit.k
    if fit.n > fit.k + 1:
        aicc = aic + 2.0 * fit.k * (fit.k + 1) / (fit.n - fit.k - 1)
    else:
        aicc = None
    return {"aic": aic, "aicc": aicc}


def _flag_bounds(specs, x):
    flagged = []
    for s, v in zip(specs, x):
        lo, hi = (math.log(s.lower), math.log(s.upper)) if s.log_scale else (s.lower, s.upper)
        tol = 1e-6 * (hi - lo)
        if v - lo <= tol or hi - v <= tol:
            flagged.append(s.name)
    return tuple(flagged)


def fit_wls(summaries, family, init=None, fixed=None, bounds=None,
            restarts=5, seed=0, maxiter=None, trace=None,
            xatol=1e-6, fatol=1e-10):
    """Weighted-least-squares fit of a stationary family to summaries.

    Minimizes sum over nonempty bins of
    count * (empirical - model)^2 / max(model^2, 1e-12)
    with a bounded derivative-free simplex search restarted from jittered
    starting points. Deterministic given the init and seed.
    """
    if isinstance(summaries, EmpiricalSummary):
        summaries = [summaries]
    summaries = list(summaries)
    if not summaries:
        raise DataError("fit_wls: no summaries given")
    total_bins = sum(int(np.count_nonzero(s.nonempty())) for s in summaries)
    if total_bins == 0:
        raise DataError("fit_wls: no nonempty bins")

    free, fixed = _resolve_specs(family, fixed, bounds)
    start = {s.name: s.init for s in free}
    if init:
        start.update({k: v for k, v in init.items() if k in start})
    x0 = _to_vector(free, start)

    masks = [s.nonempty() for s in summaries]

    def objective(x):
        params = _from_vector(free, x, fixed)
        total = 0.0
        for s, mask in zip(summaries, masks):
            model = family.summary_curve(params, s)[mask]
            emp = s.values[mask]
            w = s.pair_counts[mask]
            total += float(
                np.sum(w * (emp - model) ** 2 / np.maximum(model**2, WLS_WEIGHT_FLOOR))
            )
        return total

    res, iters = _minimize_restarts(
        objective, x0, _vector_bounds(free), restarts, seed, maxiter, trace,
        xatol=xatol, fatol=fatol,
    )
    params = _from_vector(free, res.x, fixed)
    return FitResult(
        params=params,
        objective=float(res.fun),
        loglik=None,
        k=len(free),
        n=total_bins,
        converged=bool(res.success),
        iterations=iters,
        method="wls",
        family=family.name,
        at_bounds=_flag_bounds(free, res.x),
    )


def profile_gaussian_loglik(joint, values, indicators):
    """Gaussian log-likelihood with per-variable constant means profiled out.

    Returns (loglik, means). Raises numpy LinAlgError on a non-p.d. matrix.
    """
    cf = cho_factor(joint, lower=True)
    Ci_X = cho_solve(cf, indicators)
    A = indicators.T @ Ci_X
    beta = np.linalg.solve(A, Ci_X.T @ values)
    resid = values - indicators @ beta
    quad = float(resid @ cho_solve(cf, resid))
    logdet = 2.0 * float(np.sum(np.log(np.diag(cf[0]))))
    n = values.shape[0]
    return -0.5 * (quad + logdet + n * math.log(2.0 * math.pi)), beta


def fit_ml(dataset, family, init=None, fixed=None, bounds=None,
           restarts=5, seed=0, maxiter=None, dense_cap=2000,
           xatol=1e-6, fatol=1e-10):
    """Gaussian maximum-likelihood fit of a hierarchical family.

    Per-variable constant means are profiled out in closed form; positive
    parameters are optimized on the log scale; parameter vectors where the
    covariance is not positive definite are rejected (infinite objective),
    not fatal. The free-parameter count k includes the p profiled means.
    """
    if dataset.p != family.p:
        raise DataError(f"family is for p={family.p} variables, data has p={dataset.p}")
    n = dataset.n_total
    if n > dense_cap:
        raise DataError(f"n={n} exceeds the dense-solver cap {dense_cap}")

    free, fixed = _resolve_specs(family, fixed, bounds)
    start = family.default_init(dataset)
    start.update(fixed)
    if init:
        start.update(init)
    x0 = _to_vector(free, {s.name: start[s.name] for s in free})

    z = dataset.stacked_values()
    loc_sets = dataset.location_sets()
    X = np.zeros((n, dataset.p))
    pos = 0
    for j, s in enumerate(dataset.series):
        X[pos:pos + s.n, j] = 1.0
        pos += s.n

    def negloglik(x):
        params = _from_vector(free, x, fixed)
        model = family.build(params)
        joint = np.block(data_cov_blocks(model, loc_sets))
        try:
            ll, _ = profile_gaussian_loglik(joint, z, X)
        except np.linalg.LinAlgError:
            return np.inf
        return -ll

    res, iters = _minimize_restarts(
        negloglik, x0, _vector_bounds(free), restarts, seed, maxiter,
        xatol=xatol, fatol=fatol,
    )
    if not np.isfinite(res.fun):
        raise NumericalError("fit_ml: no parameter vector gave a p.d. covariance")
    params = _from_vector(free, res.x, fixed)
    model = family.build(params)
    joint = np.block(data_cov_blocks(model, loc_sets))
    loglik, means = profile_gaussian_loglik(joint, z, X)
    return FitResult(
        params=params,
        objective=float(res.fun),
        loglik=float(loglik),
        k=len(free) + dataset.p,
        n=n,
        converged=bool(res.success),
        iterations=iters,
        method="ml",
        family=family.name,
        at_bounds=_flag_bounds(free, res.x),
        means=tuple(float(b) for b in means),
    )


def fit_result_to_text(fit, extra=None):
    """Structured `key = value` text for a fit result."""
    lines = [
        f"family = {fit.family}",
        f"method = {fit.method}",
        f"converged = {fit.converged}",
        f"iterations = {fit.iterations}",
        f"objective = {fit.objective!r}",
        f"k = {fit.k}",
        f"n = {fit.n}",
    ]
    if fit.loglik is not None:
        crit = information_criteria(fit)
        lines.append(f"loglik = {fit.loglik!r}")
        lines.append(f"aic = {crit['aic']!r}")
        lines.append(
            "aicc = " + ("undefined" if crit["aicc"] is None else repr(crit["aicc"]))
        )
    if fit.means is not None:
        for j, m in enumerate(fit.means, start=1):
            lines.append(f"mean_{j} = {m!r}")
    for name in sorted(fit.params):
        lines.append(f"param.{name} = {fit.params[name]!r}")
    if fit.at_bounds:
        lines.append("at_bounds = " + ",".join(fit.at_bounds))
    if extra:
        for key in sorted(extra):
            lines.append(f"{key} = {extra[key]}")
    return "\n".join(lines) + "\n"
