"""Batch command-line driver.

Commands: simulate | fit | predict | validate | diagnose, each driven by a
config file. Every run writes its outputs plus a manifest (written last; its
presence marks a completed run) under the output directory. All randomness
flows from the single config seed through seed-sequence splitting, so
identical (config, input, seed) reproduce identical numeric outputs.

Exit status: 0 success, 1 config/data errors, 2 numerical failures.
"""

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import validate_config
from .construction import DiracKernel, GaussianKernel, KernelConvModel, simulate_field
from .data import LocationSet, load_dataset, make_grid, save_dataset
from .estimation import (
    ConditionalScalarFamily,
    LagBins,
    LmcFamily,
    SreFamily,
    empirical_cross_cov,
    fit_ml,
    fit_result_to_text,
    fit_wls,
    pseudo_cross_variogram,
    summaries_to_csv,
)
from .exceptions import ConfigError, DataError, NumericalError
from .hierarchical import data_cov_bundle, origin_gap
from .kernels import BasisSet, CorrelationFunction
from .data import Location
from .prediction import (
    PredictionTarget,
    cokrige,
    cross_validate,
    validation_report_to_text,
)

_THREAD_LIMITER = None


def _apply_thread_cap():
    """Honor COKRIG_THREADS via threadpoolctl when available."""
    global _THREAD_LIMITER
    import os

    cap = os.environ.get("COKRIG_THREADS")
    if not cap:
        return
    try:
        from threadpoolctl import threadpool_limits

        _THREAD_LIMITER = threadpool_limits(limits=int(cap))
    except (ImportError, ValueError):
        pass


def _child_seeds(seed):
    """Named child seeds split from the single run seed."""
    if seed is None:
        seed = 0
    children = np.random.SeedSequence(seed).spawn(4)
    return {
        "simulate": children[0],
        "folds": children[1],
        "optimizer": int(children[2].generate_state(1)[0] % (2**31)),
        "subsample": children[3],
    }


def _correlation_from_options(options, default_family="exponential"):
    fam = options.get("cov_family", default_family)
    nu = options.get("nu", 0.5)
    return fam, nu


def _family_from_config(cfg):
    """FitFamily for the fittable families (conditional, sre, lmc, lmc_full)."""
    opts = cfg.family_options
    if cfg.family == "conditional":
        fam, nu = _correlation_from_options(opts)
        return ConditionalScalarFamily(
            cov_family=fam,
            nu_base=opts.get("nu_base", nu),
            nu_resid=opts.get("nu_resid", nu),
            order=cfg.condition_order,
        )
    if cfg.family == "lmc":
        fam, nu = _correlation_from_options(opts)
        return LmcFamily.parsimonious(cov_family=fam, nu=nu)
    if cfg.family == "lmc_full":
        fam, nu = _correlation_from_options(opts)
        return LmcFamily(
            n_factors=opts.get("factors", 2),
            triangular=opts.get("triangular", False),
            shared_range=opts.get("shared_range", False),
            cov_family=fam,
            nu=nu,
        )
    if cfg.family == "sre":
        spec = cfg.basis_spec
        centers = make_grid(
            spec["xmin"], spec["xmax"], spec["ymin"], spec["ymax"],
            spec["nx"], spec["ny"],
        )
        return SreFamily(BasisSet(centers, spec["scale"]))
    raise DataError(f"family {cfg.family!r} has no fit family")


def _read_params_file(path):
    params = {}
    means = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read params file {path!r}: {exc}") from exc
    for line in text.splitlines():
        if "=" not in line:
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith("param."):
            params[key[6:]] = float(value)
        elif key.startswith("mean_"):
            means[int(key[5:])] = float(value)
    return params, means


def _split_fractions(cfg, p):
    return tuple(cfg.noise_split.get(q, 1.0) for q in range(1, p + 1))


def _kernel_conv_model(cfg):
    spec = cfg.kernel_conv_spec
    factor_ids = sorted(spec["factors"])
    correlations = tuple(
        CorrelationFunction(fam, rng, nu)
        for fam, rng, nu in (spec["factors"][k] for k in factor_ids)
    )
    kindex = {k: i for i, k in enumerate(factor_ids)}
    p = max(q for q, _ in spec["kernels"])
    rows = [[DiracKernel(0.0) for _ in factor_ids] for _ in range(p)]
    for (q, k), (kind, amp, width, sx, sy) in spec["kernels"].items():
        if k not in kindex:
            raise DataError(f"kernel g{q}_{k} references undeclared factor {k}")
        if kind == "dirac":
            rows[q - 1][kindex[k]] = DiracKernel(amp, (sx, sy))
        else:
            rows[q - 1][kindex[k]] = GaussianKernel(amp, width, (sx, sy))
    return KernelConvModel(correlations, tuple(tuple(r) for r in rows))


def _model_from_config(cfg):
    """Concrete HierarchicalModel from explicit parameter values."""
    from .hierarchical import HierarchicalModel, MeasurementErrorSpec, MicroScaleSpec

    params = dict(cfg.model_params)
    means = dict(cfg.means)
    if cfg.params_file:
        file_params, file_means = _read_params_file(cfg.params_file)
        for k, v in file_params.items():
            params.setdefault(k, v)
        for k, v in file_means.items():
            means.setdefault(k, v)

    if cfg.family == "kernel_conv":
        smooth = _kernel_conv_model(cfg)
        p = smooth.p
        if cfg.explicit_noise:
            micro, noise = _explicit_noise_specs(cfg, p)
        else:
            nug = [params.get(f"nugget{q}", 0.0) for q in range(1, p + 1)]
            split = np.asarray(_split_fractions(cfg, p))
            micro = MicroScaleSpec.from_diagonal(split * np.asarray(nug))
            noise = MeasurementErrorSpec(np.diag((1 - split) * np.asarray(nug)))
        return HierarchicalModel(smooth, micro, noise), means

    family = _family_from_config(cfg)
    missing = [s.name for s in family.param_specs() if s.name not in params]
    if cfg.explicit_noise:
        for q in (1, 2):
            params.setdefault(f"nugget{q}", 0.0)
        missing = [m for m in missing if not m.startswith("nugget")]
    if missing:
        raise DataError(
            f"family {cfg.family!r} is missing parameter values for: "
            + ", ".join(missing)
        )
    if cfg.explicit_noise:
        # build with zero nuggets, then attach the explicit noise components
        zeroed = dict(params)
        zeroed["nugget1"] = zeroed["nugget2"] = 0.0
        model = family.build(zeroed)
        micro, noise = _explicit_noise_specs(cfg, 2)
        return HierarchicalModel(model.smooth, micro, noise), means
    model = family.build(params, noise_split=_split_fractions(cfg, family.p))
    return model, means


def _explicit_noise_specs(cfg, p):
    from .hierarchical import MeasurementErrorSpec, MicroScaleSpec

    xi = cfg.explicit_noise["sigma_xi"][:p]
    eps = cfg.explicit_noise["sigma_eps"]
    micro = MicroScaleSpec.from_diagonal(xi)
    mat = np.array([[eps["11"], eps["12"]], [eps["12"], eps["22"]]])[:p, :p]
    noise = MeasurementErrorSpec(mat)
    return micro, noise


def _bins_from_config(cfg):
    b = cfg.bins
    return LagBins.regular(
        b["max_lag"], b["n_bins"], directional=b["directional"],
        axis=b["axis"], tol_angle_deg=b["tol_angle_deg"],
    )


def _subsample(dataset, size, seed_seq):
    if size is None or size >= dataset.n_total:
        return dataset
    rng = np.random.default_rng(seed_seq)
    keep = []
    for s in dataset.series:
        take = max(1, int(round(size * s.n / dataset.n_total)))
        keep.append(np.sort(rng.choice(s.n, min(take, s.n), replace=False)))
    return dataset.subset(keep)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _cmd_simulate(cfg, out, seeds):
    model, means = _model_from_config(cfg)
    grid = make_grid(*cfg.grid)
    p = model.p
    bundle = data_cov_bundle(model, [grid] * p)
    mean_vec = [means.get(q, 0.0) for q in range(1, p + 1)]
    dataset = simulate_field(bundle, mean_vec, seeds["simulate"])
    path = out / "dataset.csv"
    save_dataset(dataset, path)
    return [path]


def _cmd_fit(cfg, out, seeds):
    dataset = load_dataset(cfg.data_path)
    family = _family_from_config(cfg)
    dataset = _subsample(dataset, cfg.fit_subsample, seeds["subsample"])
    if cfg.fit_method == "wls":
        bins = _bins_from_config(cfg)
        pairs = [(q, r) for q in range(1, dataset.p + 1)
                 for r in range(q, dataset.p + 1)]
        summaries = [pseudo_cross_variogram(dataset, pr, bins) for pr in pairs]
        fit = fit_wls(
            summaries, family, init=cfg.fit_init or None, fixed=cfg.fit_fixed or None,
            restarts=cfg.fit_restarts, seed=seeds["optimizer"],
            maxiter=cfg.fit_maxiter,
        )
    else:
        fit = fit_ml(
            dataset, family, init=cfg.fit_init or None, fixed=cfg.fit_fixed or None,
            restarts=cfg.fit_restarts, seed=seeds["optimizer"],
            maxiter=cfg.fit_maxiter,
        )
    path = out / "fit.txt"
    path.write_text(fit_result_to_text(fit), encoding="utf-8")
    return [path]


def _cmd_predict(cfg, out, seeds):
    dataset = load_dataset(cfg.data_path)
    model, means = _model_from_config(cfg)
    p = model.p
    mean_vec = [means.get(q, 0.0) for q in range(1, p + 1)]

    if cfg.predict_target == "grid":
        grid = make_grid(*cfg.grid)
        targets = {q: grid for q in range(1, p + 1)}
    else:
        targets = _read_target_file(cfg.target_file)

    path = out / "predictions.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variable", "x", "y", "mean", "variance"])
        for q in sorted(targets):
            target = PredictionTarget(cfg.predictand, q, targets[q])
            pred = cokrige(model, dataset, target, means=mean_vec)
            for (x, y), m, v in zip(targets[q].coords, pred.means, pred.variances):
                writer.writerow([q, repr(float(x)), repr(float(y)),
                                 repr(float(m)), repr(float(v))])
    return [path]


def _read_target_file(path):
    targets = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = {}
        for i, row in enumerate(reader, start=2):
            try:
                q = int(row["variable"])
                xy = (float(row["x"]), float(row["y"]))
            except (KeyError, TypeError, ValueError):
                raise DataError(f"{path}: malformed target row at line {i}") from None
            rows.setdefault(q, []).append(xy)
    for q, pts in rows.items():
        targets[q] = LocationSet(pts)
    if not targets:
        raise DataError(f"{path}: no target rows")
    return targets


def _cmd_validate(cfg, out, seeds):
    dataset = load_dataset(cfg.data_path)
    family = _family_from_config(cfg)
    fit_kwargs = {
        "restarts": cfg.fit_restarts,
        "maxiter": cfg.fit_maxiter,
        "seed": seeds["optimizer"],
    }
    if cfg.fit_init:
        fit_kwargs["init"] = cfg.fit_init
    if cfg.fit_fixed:
        fit_kwargs["fixed"] = cfg.fit_fixed
    report = cross_validate(
        dataset, family, cfg.folds, seed=cfg.seed, fit_kwargs=fit_kwargs,
        noise_split=_split_fractions(cfg, family.p),
    )
    path = out / "validation.txt"
    path.write_text(validation_report_to_text(report), encoding="utf-8")
    return [path]


def _cmd_diagnose(cfg, out, seeds):
    dataset = load_dataset(cfg.data_path)
    bins = _bins_from_config(cfg)
    pairs = [(q, r) for q in range(1, dataset.p + 1)
             for r in range(q, dataset.p + 1)]
    files = []
    cov_path = out / "empirical_cross_cov.csv"
    summaries_to_csv([empirical_cross_cov(dataset, pr, bins) for pr in pairs],
                     cov_path)
    files.append(cov_path)
    pcv_path = out / "pseudo_cross_variogram.csv"
    summaries_to_csv([pseudo_cross_variogram(dataset, pr, bins) for pr in pairs],
                     pcv_path)
    files.append(pcv_path)

    model, _ = _model_from_config(cfg)
    bundle = data_cov_bundle(model, dataset.location_sets())
    coords = np.vstack([L.coords for L in dataset.location_sets()])
    probe = Location(*coords.mean(axis=0))
    gap, gap_cert = origin_gap(model, probe)
    lines = [
        f"data_cov_min_eigenvalue = {bundle.certificate.min_eigenvalue!r}",
        f"data_cov_trace = {bundle.certificate.trace!r}",
        f"data_cov_certificate = {bundle.certificate.verdict}",
        f"origin_gap_probe = {probe.x!r} {probe.y!r}",
    ]
    for q in range(gap.shape[0]):
        lines.append(
            f"origin_gap_row_{q + 1} = " + " ".join(repr(v) for v in gap[q])
        )
    lines.append(f"origin_gap_min_eigenvalue = {gap_cert.min_eigenvalue!r}")
    lines.append(f"origin_gap_certificate = {gap_cert.verdict}")
    diag_path = out / "diagnose.txt"
    diag_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    files.append(diag_path)
    return files


_COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "predict": _cmd_predict,
    "validate": _cmd_validate,
    "diagnose": _cmd_diagnose,
}


def run(cfg, out_dir=None, noise_split=None):
    """Execute a validated RunConfig. Returns the process exit status.

    Either a manifest is written (marking a completed run) or all partial
    outputs are removed and only an error log remains.
    """
    if noise_split:
        cfg.noise_split.update(noise_split)
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = _child_seeds(cfg.seed)
    started = time.time()
    written = []
    try:
        written = _COMMANDS[cfg.command](cfg, out, seeds)
    except NumericalError as exc:
        _cleanup(written)
        _write_error(out, f"error: numerical: {exc}")
        return 2
    except (ConfigError, DataError) as exc:
        _cleanup(written)
        _write_error(out, f"error: config: {exc}")
        return 1

    checksum = None
    if cfg.data_path:
        checksum = hashlib.sha256(Path(cfg.data_path).read_bytes()).hexdigest()
    manifest = {
        "command": cfg.command,
        "toolkit_version": __version__,
        "wall_clock_seconds": time.time() - started,
        "seed": cfg.seed,
        "input_sha256": checksum,
        "outputs": [p.name for p in written],
        "config": cfg.raw_text,
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    return 0


def _cleanup(paths):
    for p in paths:
        try:
            Path(p).unlink()
        except OSError:
            pass


def _write_error(out, line):
    print(line, file=sys.stderr)
    with open(out / "error.log", "w", encoding="utf-8") as fh:
        fh.write(line + "\n")


def _parse_noise_split_flag(text):
    out = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        q, frac = part.split("=", 1)
        out[int(q)] = float(frac)
    return out


def main(argv=None):
    _apply_thread_cap()
    parser = argparse.ArgumentParser(
        prog="cokrig",
        description="Multivariate co-kriging toolkit: simulate, fit, predict, "
                    "validate, diagnose.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="config file path")
        cmd.add_argument("--out", default=None, help="output directory")
        cmd.add_argument(
            "--noise-split", default=None,
            help="per-variable micro-scale fractions, e.g. 1=0.5,2=0.25",
        )
    args = parser.parse_args(argv)

    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: config: cannot read {args.config!r}: {exc}", file=sys.stderr)
        return 1
    try:
        cfg = validate_config(text)
    except ConfigError as exc:
        print("error: config: " + "; ".join(exc.errors), file=sys.stderr)
        return 1
    if cfg.command != args.command:
        print(
            f"error: config: config says command '{cfg.command}' but the CLI "
            f"subcommand is '{args.command}'",
            file=sys.stderr,
        )
        return 1
    if cfg.command == "simulate" and cfg.condition_order == (1, 2) \
            and cfg.family == "conditional":
        print("conditioning order: 1,2 (default)", file=sys.stderr)

    split = None
    if args.noise_split:
        try:
            split = _parse_noise_split_flag(args.noise_split)
        except ValueError:
            print("error: config: bad --noise-split value", file=sys.stderr)
            return 1
    return run(cfg, out_dir=args.out, noise_split=split)
