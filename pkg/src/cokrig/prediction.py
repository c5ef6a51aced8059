"""Co-kriging with measurement error filtered out, an exact Gaussian
conditioning oracle, and held-out validation scoring.

Prediction always excludes the measurement-error process; the `Y`
predictand (default) keeps micro-scale variation, the `W` predictand keeps
only the smooth component. Plug-in parameter estimates are substituted as
if known, so predictive standard errors inherit the usual plug-in
optimism; no correction is applied.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .data import LocationSet
from .estimation import fit_ml
from .exceptions import DataError, NumericalError
from .hierarchical import data_cov_blocks
from .validation import check_square_matrix

PREDICTANDS = ("Y", "W")
VARIANCE_CLAMP = -1e-12


@dataclass(frozen=True)
class PredictionTarget:
    """What to predict: which latent process, which variable, where."""

    predictand: str
    variable: int
    locations: LocationSet

    def __post_init__(self):
        if self.predictand not in PREDICTANDS:
            raise DataError(f"predictand must be one of {PREDICTANDS}")
        if self.variable < 1:
            raise DataError(f"variable index must be >= 1, got {self.variable}")

    @property
    def include_micro(self):
        return self.predictand == "Y"


@dataclass(frozen=True)
class PredictionSet:
    """Predictive means and variances per target location."""

    means: np.ndarray
    variances: np.ndarray
    target: PredictionTarget


def _clamp_variances(var):
    var = np.asarray(var, dtype=float)
    bad = var < VARIANCE_CLAMP
    if bad.any():
        raise NumericalError(
            f"predictive variance {var[bad].min():.3e} below {VARIANCE_CLAMP:.0e}; "
            "covariance assembly is inconsistent"
        )
    neg = (var < 0) & ~bad
    if neg.any():
        warnings.warn(
            f"clamped {int(neg.sum())} slightly negative predictive variance(s) to 0",
            stacklevel=3,
        )
        var = np.where(neg, 0.0, var)
    return var


def _factor_data_cov(model, loc_sets):
    """Cholesky factor of the observation covariance, with the policy jitter
    (at most 1e-10 * trace on the diagonal) before declaring singularity."""
    C = np.block(data_cov_blocks(model, loc_sets))
    try:
        return cho_factor(C, lower=True)
    except np.linalg.LinAlgError:
        pass
    budget = 1e-10 * max(float(np.trace(C)), 0.0)
    if budget > 0.0:
        try:
            return cho_factor(C + budget * np.eye(C.shape[0]), lower=True)
        except np.linalg.LinAlgError:
            pass
    raise NumericalError("observation covariance is singular (after policy jitter)")


def _target_cross_cov(model, loc_sets, target):
    """(n_targets, n_obs) covariance between the target process and the
    observations. Measurement error never enters; micro-scale enters on
    exact coincidence iff the predictand includes it."""
    q = target.variable
    cols = [
        model.latent_block(q, r, target.locations, L, target.include_micro)
        for r, L in enumerate(loc_sets, start=1)
    ]
    return np.hstack(cols)


def cokrige(model, dataset, target, means=None):
    """Simple co-kriging of the chosen latent predictand.

    Parameters
    ----------
    model : HierarchicalModel
        Covariance specification (typically built from an ML fit with the
        user's micro/measurement split of the nugget).
    dataset : MultivariateDataset
        Observations of all variables.
    target : PredictionTarget
    means : sequence of float, optional
        Known per-variable constant means (plug-in values from the fit);
        zeros when omitted.

    Returns
    -------
    PredictionSet
        Predictive mean mu_q + c' C^-1 (z - mu) and variance
        c0 - c' C^-1 c per target location.
    """
    p = model.p
    if not (1 <= target.variable <= p):
        raise DataError(f"unknown variable index {target.variable} (p={p})")
    if means is None:
        means = np.zeros(p)
    means = np.asarray(means, dtype=float)
    if means.shape != (p,):
        raise DataError(f"means must have length p={p}")

    loc_sets = dataset.location_sets()
    cf = _factor_data_cov(model, loc_sets)
    z = dataset.stacked_values()
    mu_obs = np.concatenate(
        [np.full(s.n, means[s.variable_id - 1]) for s in dataset.series]
    )

    c = _target_cross_cov(model, loc_sets, target)
    q = target.variable
    prior = model.latent_block(
        q, q, target.locations, target.locations, target.include_micro
    )
    c0 = np.diag(prior).copy()

    alpha = cho_solve(cf, z - mu_obs)
    pred_mean = means[q - 1] + c @ alpha
    V = cho_solve(cf, c.T)
    pred_var = c0 - np.einsum("ij,ji->i", c, V)
    return PredictionSet(pred_mean, _clamp_variances(pred_var), target)


def joint_with_targets(model, dataset, target):
    """Joint covariance over (targets, then observations) plus a means
    builder, for feeding the conditioning oracle."""
    loc_sets = dataset.location_sets()
    q = target.variable
    S_tt = model.latent_block(
        q, q, target.locations, target.locations, target.include_micro
    )
    S_tz = _target_cross_cov(model, loc_sets, target)
    C = np.block(data_cov_blocks(model, loc_sets))
    joint = np.block([[S_tt, S_tz], [S_tz.T, C]])

    def means_vector(means):
        means = np.asarray(means, dtype=float)
        mu_t = np.full(len(target.locations), means[q - 1])
        mu_z = np.concatenate(
            [np.full(s.n, means[s.variable_id - 1]) for s in dataset.series]
        )
        return np.concatenate([mu_t, mu_z])

    return joint, means_vector


def gaussian_conditioning_oracle(joint, observed, means):
    """Exact conditional moments by direct block inversion.

    `joint` covers targets first, then observations; `observed` holds the
    observation values and `means` the prior means of the full vector. The
    linear algebra here (plain matrix inverse) shares no solver with
    `cokrige`, which uses a Cholesky factorization, so agreement between
    the two is a meaningful cross-check.
    """
    joint = check_square_matrix(joint, "joint covariance")
    observed = np.asarray(observed, dtype=float)
    means = np.asarray(means, dtype=float)
    n = observed.shape[0]
    if n > 500:
        raise DataError("oracle is for small configurations (n <= 500)")
    n_t = joint.shape[0] - n
    if n_t < 1:
        raise DataError("joint covariance has no target rows")
    if means.shape[0] != joint.shape[0]:
        raise DataError("means must cover targets and observations")

    S_tt = joint[:n_t, :n_t]
    S_tz = joint[:n_t, n_t:]
    S_zz = joint[n_t:, n_t:]
    try:
        K = np.linalg.inv(S_zz)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular observation block: {exc}") from exc
    mean = means[:n_t] + S_tz @ (K @ (observed - means[n_t:]))
    cond = S_tt - S_tz @ K @ S_tz.T
    return mean, np.diag(cond).copy()


def crps_gaussian(mu, sigma, z):
    """Closed-form CRPS of a Gaussian predictive distribution.

    sigma = 0 degenerates to the absolute error |z - mu|. Vectorizes over
    numpy inputs; scalars in, scalar out.
    """
    mu_a = np.asarray(mu, dtype=float)
    sigma_a = np.asarray(sigma, dtype=float)
    z_a = np.asarray(z, dtype=float)
    if np.any(sigma_a < 0):
        raise DataError("crps_gaussian: sigma must be >= 0")
    scalar = mu_a.ndim == 0 and sigma_a.ndim == 0 and z_a.ndim == 0
    mu_a, sigma_a, z_a = np.broadcast_arrays(mu_a, sigma_a, z_a)
    out = np.abs(z_a - mu_a).astype(float)
    pos = sigma_a > 0
    if np.any(pos):
        u = (z_a[pos] - mu_a[pos]) / sigma_a[pos]
        cdf = 0.5 * (1.0 + np.vectorize(math.erf)(u / math.sqrt(2.0)))
        pdf = np.exp(-0.5 * u * u) / math.sqrt(2.0 * math.pi)
        val = sigma_a[pos] * (u * (2.0 * cdf - 1.0) + 2.0 * pdf - 1.0 / math.sqrt(math.pi))
        out = np.array(out)
        out[pos] = val
    return float(out) if scalar else out


@dataclass(frozen=True)
class ValidationReport:
    """Held-out scores per variable. Scores use only observations that the
    corresponding fold's fit never saw."""

    rmse: dict
    crps: dict
    fold_assignments: np.ndarray
    n_heldout: int
    folds: int
    seed: int


def _fold_assignment(dataset, folds, rng):
    """Variable-stratified fold labels in stacked (variable-major) order.

    Observations of variables with a single observation are never held out
    (label -1) so every training set covers all variables.
    """
    per_var = []
    for s in dataset.series:
        perm = rng.permutation(s.n)
        per_var.append(list(perm))
    labels = [np.full(s.n, -1, dtype=int) for s in dataset.series]
    position = 0
    remaining = True
    while remaining:
        remaining = False
        for j, perm in enumerate(per_var):
            if perm:
                idx = perm.pop(0)
                if dataset.series[j].n >= 2:
                    labels[j][idx] = position % folds
                    position += 1
                remaining = True
    return np.concatenate(labels)


def cross_validate(dataset, family, folds, seed, fit_kwargs=None,
                   noise_split=None, max_redraws=20):
    """k-fold cross-validation with per-fold refitting.

    Each fold fits the family by maximum likelihood on the training portion
    only, predicts the held-out observations (predictand Y), and scores
    RMSE and Gaussian CRPS per variable. Fold assignment is stratified by
    variable and deterministic given the seed.
    """
    folds = int(folds)
    if folds < 2:
        raise DataError("cross_validate: folds must be >= 2")
    assignable = sum(s.n for s in dataset.series if s.n >= 2)
    if folds > assignable:
        raise DataError(
            f"too few observations ({assignable} assignable) for {folds} folds"
        )
    fit_kwargs = dict(fit_kwargs or {})

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    assignment = None
    for _ in range(max_redraws):
        candidate = _fold_assignment(dataset, folds, rng)
        ok = True
        offsets = np.cumsum([0] + [s.n for s in dataset.series])
        for f in range(folds):
            for j, s in enumerate(dataset.series):
                lab = candidate[offsets[j]:offsets[j + 1]]
                if int(np.sum(lab != f)) < 1:
                    ok = False
        if ok:
            assignment = candidate
            break
    if assignment is None:
        raise DataError("could not draw folds leaving every variable in training")

    offsets = np.cumsum([0] + [s.n for s in dataset.series])
    residuals = {q: [] for q in range(1, dataset.p + 1)}
    crps_vals = {q: [] for q in range(1, dataset.p + 1)}

    for f in range(folds):
        train_idx = []
        test_idx = []
        for j, s in enumerate(dataset.series):
            lab = assignment[offsets[j]:offsets[j + 1]]
            train_idx.append(np.flatnonzero(lab != f))
            test_idx.append(np.flatnonzero(lab == f))
        if not any(t.size for t in test_idx):
            continue
        train = dataset.subset(train_idx)
        fit = fit_ml(train, family, **fit_kwargs)
        model = family.build(fit.params, noise_split=noise_split)
        for j, s in enumerate(dataset.series):
            if test_idx[j].size == 0:
                continue
            q = s.variable_id
            target = PredictionTarget(
                "Y", q, LocationSet(s.locations.coords[test_idx[j]])
            )
            pred = cokrige(model, train, target, means=fit.means)
            truth = s.values[test_idx[j]]
            residuals[q].extend((truth - pred.means).tolist())
            sig = np.sqrt(pred.variances)
            crps_vals[q].extend(np.atleast_1d(crps_gaussian(pred.means, sig, truth)).tolist())

    rmse = {
        q: float(np.sqrt(np.mean(np.square(v)))) if v else float("nan")
        for q, v in residuals.items()
    }
    crps = {
        q: float(np.mean(v)) if v else float("nan") for q, v in crps_vals.items()
    }
    n_heldout = int(np.sum(assignment >= 0))
    return ValidationReport(
        rmse=rmse,
        crps=crps,
        fold_assignments=assignment,
        n_heldout=n_heldout,
        folds=folds,
        seed=int(seed),
    )


def predictions_to_csv(pred, path):
    """Write a PredictionSet as `variable,x,y,mean,variance` rows."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variable", "x", "y", "mean", "variance"])
        q = pred.target.variable
        for (x, y), m, v in zip(pred.target.locations.coords, pred.means,
                                pred.variances):
            writer.writerow([q, repr(float(x)), repr(float(y)),
                             repr(float(m)), repr(float(v))])


def validation_report_to_text(report):
    lines = [
        f"folds = {report.folds}",
        f"seed = {report.seed}",
        f"n_heldout = {report.n_heldout}",
    ]
    for q in sorted(report.rmse):
        lines.append(f"rmse_{q} = {report.rmse[q]!r}")
        lines.append(f"crps_{q} = {report.crps[q]!r}")
    return "\n".join(lines) + "\n"
