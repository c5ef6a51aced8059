"""Scikit-learn style estimator wrapping the fit/predict workflow.

The feature matrix convention is three columns per row: variable id (a
positive integer), x, and y. The target vector holds the observed values.
This keeps multivariate spatial data in a rectangular shape the wider
ecosystem understands (cloning, grid search over family options, pipelines).
"""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import LocationSet, MultivariateDataset, VariableSeries
from .estimation import (
    ConditionalScalarFamily,
    LmcFamily,
    MaternFamily,
    SreFamily,
    fit_ml,
)
from .exceptions import DataError
from .kernels import BasisSet
from .prediction import PredictionTarget, cokrige

FAMILY_CHOICES = ("lmc", "lmc_full", "conditional", "sre", "matern")


def _split_features(X):
    X = check_array(X, ensure_min_features=3)
    if X.shape[1] != 3:
        raise DataError("X must have three columns: variable id, x, y")
    var = X[:, 0]
    if np.any(var != np.round(var)) or np.any(var < 1):
        raise DataError("column 0 of X must hold positive integer variable ids")
    return var.astype(int), X[:, 1:3]


def _resolve_family(name, p, options):
    if name == "matern":
        return MaternFamily(nu=options.get("nu", 0.5))
    if p == 1 and name in ("lmc", "lmc_full", "conditional", "sre"):
        raise DataError(f"family {name!r} is bivariate; data has one variable")
    if name == "lmc":
        return LmcFamily.parsimonious(
            cov_family=options.get("cov_family", "exponential"),
            nu=options.get("nu", 0.5),
        )
    if name == "lmc_full":
        return LmcFamily(
            n_factors=options.get("n_factors", 2),
            cov_family=options.get("cov_family", "exponential"),
            nu=options.get("nu", 0.5),
        )
    if name == "conditional":
        return ConditionalScalarFamily(
            cov_family=options.get("cov_family", "exponential"),
            nu_base=options.get("nu", 0.5),
            nu_resid=options.get("nu", 0.5),
        )
    if name == "sre":
        basis = options.get("basis")
        if not isinstance(basis, BasisSet):
            raise DataError("family 'sre' needs a BasisSet in family_options['basis']")
        return SreFamily(basis)
    raise DataError(f"unknown family {name!r}; choose from {FAMILY_CHOICES}")


class CoKriging(RegressorMixin, BaseEstimator):
    """Co-kriging regressor with a hierarchical noise model.

    Parameters
    ----------
    family : str, default="lmc"
        Covariance family: "lmc" (parsimonious coregionalization),
        "lmc_full", "conditional", "sre", or "matern" (univariate).
    family_options : dict, optional
        Extra family settings (cov_family, nu, n_factors, basis).
    predictand : {"Y", "W"}, default="Y"
        Predict the latent signal including micro-scale variation (Y) or
        the smooth component alone (W). Measurement error is always
        filtered out.
    noise_split : float or sequence, default=1.0
        Fraction of each fitted nugget treated as micro-scale (predicted)
        rather than measurement error (filtered). Scalar applies to all
        variables.
    n_restarts : int, default=2
        Optimizer restarts from jittered starting points.
    max_iter : int or None
        Cap on simplex iterations per restart.
    seed : int, default=0
        Restart jitter seed; fits are deterministic given it.
    dense_cap : int, default=2000
        Maximum number of observations for the dense solver.
    """

    def __init__(self, family="lmc", family_options=None, predictand="Y",
                 noise_split=1.0, n_restarts=2, max_iter=None, seed=0,
                 dense_cap=2000):
        self.family = family
        self.family_options = family_options
        self.predictand = predictand
        self.noise_split = noise_split
        self.n_restarts = n_restarts
        self.max_iter = max_iter
        self.seed = seed
        self.dense_cap = dense_cap

    def _dataset_from_arrays(self, var, coords, values):
        ids = np.unique(var)
        mapping = {orig: new for new, orig in enumerate(sorted(ids), start=1)}
        series = []
        for orig in sorted(mapping):
            sel = var == orig
            series.append(
                VariableSeries(
                    mapping[orig], LocationSet(coords[sel]), values[sel]
                )
            )
        return MultivariateDataset(tuple(series)), mapping

    def _split(self, p):
        split = self.noise_split
        if np.isscalar(split):
            split = (float(split),) * p
        return tuple(split)

    def fit(self, X, y):
        """Fit the covariance family by Gaussian maximum likelihood."""
        X, y = check_X_y(X, y)
        var, coords = _split_features(X)
        dataset, mapping = self._dataset_from_arrays(var, coords, np.asarray(y, float))
        family = _resolve_family(self.family, dataset.p, dict(self.family_options or {}))
        fit = fit_ml(
            dataset, family,
            restarts=self.n_restarts, seed=self.seed,
            maxiter=self.max_iter, dense_cap=self.dense_cap,
        )
        self.n_features_in_ = 3
        self.dataset_ = dataset
        self.variable_mapping_ = mapping
        self.fit_result_ = fit
        self.family_ = family
        self.model_ = family.build(fit.params, noise_split=self._split(dataset.p))
        self.means_ = np.asarray(fit.means)
        return self

    def predict(self, X, return_std=False):
        """Predict the chosen latent predictand at (variable, x, y) rows."""
        check_is_fitted(self, "model_")
        var, coords = _split_features(check_array(X))
        means = np.empty(var.shape[0])
        stds = np.empty(var.shape[0])
        for orig in np.unique(var):
            if orig not in self.variable_mapping_:
                raise DataError(f"variable id {orig} was not seen during fit")
            q = self.variable_mapping_[orig]
            sel = var == orig
            target = PredictionTarget(self.predictand, q, LocationSet(coords[sel]))
            pred = cokrige(self.model_, self.dataset_, target, means=self.means_)
            means[sel] = pred.means
            stds[sel] = np.sqrt(pred.variances)
        if return_std:
            return means, stds
        return means
