"""Run configuration: flat `key = value` sections, validated all at once.

The config file is ini-style (diff-friendly for experiment tracking). Every
problem is collected and reported together; unknown keys are errors and come
with a nearest-key suggestion. The CLI supports bivariate workflows (p = 2);
the library API is not limited to that.
"""

import configparser
import difflib
import io
from dataclasses import dataclass, field

from .exceptions import ConfigError

COMMANDS = ("simulate", "fit", "predict", "validate", "diagnose")
MODEL_FAMILIES = ("conditional", "sre", "kernel_conv", "lmc", "lmc_full")
FIT_FAMILIES = ("conditional", "sre", "lmc", "lmc_full")

_SECTION_KEYS = {
    "run": {"command", "seed", "data", "out_dir", "folds", "noise_split"},
    "model": {
        "family", "cov_family", "nu", "nu_base", "nu_resid", "factors",
        "triangular", "shared_range", "condition_order", "params_file",
        "basis_xmin", "basis_xmax", "basis_ymin", "basis_ymax",
        "basis_nx", "basis_ny", "basis_scale", "mean_1", "mean_2",
    },
    "noise": {"sigma_xi_1", "sigma_xi_2", "sigma_eps_11", "sigma_eps_12",
              "sigma_eps_22"},
    "bins": {"max_lag", "n_bins", "directional", "axis", "tol_angle_deg"},
    "grid": {"xmin", "xmax", "ymin", "ymax", "nx", "ny"},
    "fit": {"method", "restarts", "maxiter", "subsample"},
    "predict": {"predictand", "target", "target_file"},
}

# family parameter names accepted behind the `param.` prefix, per family
_FAMILY_PARAMS = {
    "conditional": {"sigma2_base", "range_base", "sigma2_resid", "range_resid",
                    "coupling", "nugget1", "nugget2"},
    "sre": {"k1", "k2", "rho", "nugget1", "nugget2"},
    "lmc": None,       # dynamic: a<q><k>, range / range<k>, nuggets
    "lmc_full": None,
    "kernel_conv": {"nugget1", "nugget2"},
}


@dataclass
class RunConfig:
    """Typed view of a validated config file."""

    command: str
    raw_text: str
    seed: int = None
    data_path: str = None
    out_dir: str = "cokrig_out"
    folds: int = None
    noise_split: dict = field(default_factory=dict)

    family: str = None
    family_options: dict = field(default_factory=dict)
    model_params: dict = field(default_factory=dict)
    params_file: str = None
    means: dict = field(default_factory=dict)
    condition_order: tuple = (1, 2)
    basis_spec: dict = None
    kernel_conv_spec: dict = None
    explicit_noise: dict = None

    bins: dict = None
    grid: tuple = None

    fit_method: str = "ml"
    fit_restarts: int = 5
    fit_maxiter: int = None
    fit_subsample: int = None
    fit_init: dict = field(default_factory=dict)
    fit_fixed: dict = field(default_factory=dict)

    predictand: str = "Y"
    predict_target: str = "grid"
    target_file: str = None


class _Collector:
    def __init__(self):
        self.errors = []

    def add(self, msg):
        self.errors.append(msg)

    def get_float(self, section, key, raw, required=False):
        if key not in raw:
            if required:
                self.add(f"[{section}] missing required key '{key}'")
            return None
        try:
            return float(raw.pop(key))
        except ValueError:
            self.add(f"[{section}] {key}: not a number")
            return None

    def get_int(self, section, key, raw, required=False):
        if key not in raw:
            if required:
                self.add(f"[{section}] missing required key '{key}'")
            return None
        try:
            return int(raw.pop(key))
        except ValueError:
            self.add(f"[{section}] {key}: not an integer")
            return None

    def get_bool(self, section, key, raw, default=False):
        if key not in raw:
            return default
        val = raw.pop(key).strip().lower()
        if val in ("true", "yes", "1", "on"):
            return True
        if val in ("false", "no", "0", "off"):
            return False
        self.add(f"[{section}] {key}: expected a boolean, got {val!r}")
        return default

    def get_str(self, section, key, raw, required=False, choices=None):
        if key not in raw:
            if required:
                self.add(f"[{section}] missing required key '{key}'")
            return None
        val = raw.pop(key).strip()
        if choices and val not in choices:
            self.add(f"[{section}] {key}: {val!r} not one of {sorted(choices)}")
            return None
        return val


def _suggest(key, vocabulary):
    close = difflib.get_close_matches(key, sorted(vocabulary), n=1, cutoff=0.5)
    return f" (did you mean '{close[0]}'?)" if close else ""


def _parse_noise_split(text, collector):
    """'1=0.5,2=0.25' -> {1: 0.5, 2: 0.25}."""
    out = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            collector.add(f"noise_split: expected q=frac entries, got {part!r}")
            continue
        q, frac = part.split("=", 1)
        try:
            qi = int(q)
            fv = float(frac)
        except ValueError:
            collector.add(f"noise_split: bad entry {part!r}")
            continue
        if not 0.0 <= fv <= 1.0:
            collector.add(f"noise_split: fraction for variable {qi} outside [0, 1]")
            continue
        out[qi] = fv
    return out


def _lmc_param_ok(name, factors, shared_range):
    if name in ("nugget1", "nugget2"):
        return True
    if shared_range and name == "range":
        return True
    if not shared_range and name.startswith("range"):
        tail = name[5:]
        return tail.isdigit() and 1 <= int(tail) <= factors
    if len(name) == 3 and name[0] == "a" and name[1:].isdigit():
        q, k = int(name[1]), int(name[2])
        return q in (1, 2) and 1 <= k <= factors
    return False


def _validate_model_section(raw, collector, command):
    out = {}
    family = collector.get_str("model", "family", raw, required=True,
                               choices=MODEL_FAMILIES)
    out["family"] = family
    options = {}
    cov_family = collector.get_str("model", "cov_family", raw,
                                   choices=("exponential", "matern", "gaussian"))
    if cov_family:
        options["cov_family"] = cov_family
    for key in ("nu", "nu_base", "nu_resid"):
        v = collector.get_float("model", key, raw)
        if v is not None:
            options[key] = v
    factors = collector.get_int("model", "factors", raw)
    if factors is not None:
        options["factors"] = factors
    options["triangular"] = collector.get_bool("model", "triangular", raw, False)
    options["shared_range"] = collector.get_bool("model", "shared_range", raw, False)
    out["family_options"] = options

    order = collector.get_str("model", "condition_order", raw)
    if order is not None:
        parts = [p.strip() for p in order.split(",")]
        if parts not in (["1", "2"], ["2", "1"]):
            collector.add("[model] condition_order must be '1,2' or '2,1'")
        else:
            out["condition_order"] = (int(parts[0]), int(parts[1]))

    out["params_file"] = collector.get_str("model", "params_file", raw)
    means = {}
    for q in (1, 2):
        v = collector.get_float("model", f"mean_{q}", raw)
        if v is not None:
            means[q] = v
    out["means"] = means

    basis_keys = ("basis_xmin", "basis_xmax", "basis_ymin", "basis_ymax",
                  "basis_nx", "basis_ny", "basis_scale")
    if family == "sre":
        spec = {}
        for key in basis_keys:
            getter = collector.get_int if key in ("basis_nx", "basis_ny") else collector.get_float
            spec[key[6:]] = getter("model", key, raw, required=True)
        out["basis_spec"] = spec
    else:
        for key in basis_keys:
            if key in raw:
                collector.add(f"[model] {key} only applies to family 'sre'")
                raw.pop(key)

    # patterned keys: param.<name>, factor<k>_..., g<q>_<k>
    params = {}
    kernel_rows = {}
    factor_specs = {}
    for key in list(raw):
        if key.startswith("param."):
            name = key[6:]
            allowed = _FAMILY_PARAMS.get(family)
            if family in ("lmc", "lmc_full"):
                nf = options.get("factors", 2)
                ok = _lmc_param_ok(name, nf, options["shared_range"])
            elif allowed is None:
                ok = False
            else:
                ok = name in allowed
            if not ok and family is not None:
                vocab = allowed or {"a11", "a21", "a22", "range", "nugget1", "nugget2"}
                collector.add(
                    f"[model] unknown parameter 'param.{name}' for family "
                    f"{family}{_suggest(name, vocab)}"
                )
                raw.pop(key)
                continue
            try:
                params[name] = float(raw.pop(key))
            except ValueError:
                collector.add(f"[model] param.{name}: not a number")
                raw.pop(key, None)
        elif key.startswith("factor") and family == "kernel_conv":
            body = key[6:]
            try:
                knum, attr = body.split("_", 1)
                knum = int(knum)
            except ValueError:
                continue
            if attr not in ("family", "range", "nu"):
                collector.add(f"[model] unknown factor attribute '{key}'")
                raw.pop(key)
                continue
            val = raw.pop(key)
            factor_specs.setdefault(knum, {})[attr] = val
        elif key.startswith("g") and "_" in key and family == "kernel_conv":
            try:
                qpart, kpart = key[1:].split("_", 1)
                qn, kn = int(qpart), int(kpart)
            except ValueError:
                continue
            kernel_rows[(qn, kn)] = raw.pop(key)
    out["model_params"] = params

    if family == "kernel_conv" and command in ("simulate", "predict", "diagnose"):
        if not factor_specs or not kernel_rows:
            collector.add(
                "[model] family kernel_conv needs factor<k>_family/range keys "
                "and g<q>_<k> kernel descriptors"
            )
        spec = {"factors": {}, "kernels": {}}
        for knum, attrs in sorted(factor_specs.items()):
            fam = attrs.get("family", "exponential")
            if fam not in ("exponential", "matern", "gaussian"):
                collector.add(f"[model] factor{knum}_family: unknown family {fam!r}")
                continue
            try:
                rng = float(attrs["range"])
            except (KeyError, ValueError):
                collector.add(f"[model] factor{knum}_range missing or not a number")
                continue
            nu = float(attrs.get("nu", 0.5))
            spec["factors"][knum] = (fam, rng, nu)
        for (qn, kn), text in sorted(kernel_rows.items()):
            parts = text.split()
            if len(parts) != 5 or parts[0] not in ("dirac", "gaussian"):
                collector.add(
                    f"[model] g{qn}_{kn}: expected 'dirac|gaussian amplitude "
                    f"width shift_x shift_y', got {text!r}"
                )
                continue
            try:
                vals = [float(v) for v in parts[1:]]
            except ValueError:
                collector.add(f"[model] g{qn}_{kn}: non-numeric kernel values")
                continue
            spec["kernels"][(qn, kn)] = (parts[0], *vals)
        out["kernel_conv_spec"] = spec
    return out


def _validate_noise_section(raw, collector):
    out = {}
    xi = [collector.get_float("noise", f"sigma_xi_{q}", raw) for q in (1, 2)]
    eps = {key: collector.get_float("noise", f"sigma_eps_{key}", raw)
           for key in ("11", "12", "22")}
    out["sigma_xi"] = [v if v is not None else 0.0 for v in xi]
    out["sigma_eps"] = {k: (v if v is not None else 0.0) for k, v in eps.items()}
    for q, v in zip((1, 2), out["sigma_xi"]):
        if v < 0:
            collector.add(f"[noise] sigma_xi_{q} must be >= 0")
    for k in ("11", "22"):
        if out["sigma_eps"][k] < 0:
            collector.add(f"[noise] sigma_eps_{k} must be >= 0")
    return out


def validate_config(text):
    """Parse and validate config text; all problems reported at once.

    Returns a RunConfig on success and raises ConfigError carrying the full
    error list otherwise. Unknown keys are errors with a nearest-key
    suggestion.
    """
    collector = _Collector()
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"config does not parse: {exc}"]) from exc

    sections = {name: dict(parser.items(name)) for name in parser.sections()}
    for name in sections:
        if name not in _SECTION_KEYS:
            collector.add(f"unknown section [{name}]{_suggest(name, _SECTION_KEYS)}")

    run_raw = sections.get("run", {})
    if "run" not in sections:
        collector.add("missing required section [run]")
    command = collector.get_str("run", "command", run_raw, required=True,
                                choices=COMMANDS)
    seed = collector.get_int("run", "seed", run_raw)
    data_path = collector.get_str("run", "data", run_raw)
    out_dir = collector.get_str("run", "out_dir", run_raw) or "cokrig_out"
    folds = collector.get_int("run", "folds", run_raw)
    noise_split = {}
    if "noise_split" in run_raw:
        noise_split = _parse_noise_split(run_raw.pop("noise_split"), collector)

    if command in ("simulate", "validate") and seed is None:
        collector.add(f"[run] missing required key 'seed' for command '{command}'")
    if command in ("fit", "predict", "validate", "diagnose") and data_path is None:
        collector.add(f"[run] missing required key 'data' for command '{command}'")
    if command == "validate":
        if folds is None:
            collector.add("[run] missing required key 'folds' for command 'validate'")
        elif folds < 2:
            collector.add(f"[run] folds must be >= 2, got {folds}")

    model = {}
    if command in ("simulate", "fit", "predict", "validate", "diagnose"):
        if "model" not in sections:
            collector.add("missing required section [model]")
        else:
            model = _validate_model_section(sections["model"], collector, command)
            if command in ("fit", "validate") and model.get("family") == "kernel_conv":
                collector.add(
                    "[model] family kernel_conv is not fittable; use 'lmc' for "
                    "the Dirac special case"
                )

    noise = None
    if "noise" in sections:
        noise = _validate_noise_section(sections["noise"], collector)
        if model.get("model_params", {}).get("nugget1") or \
                model.get("model_params", {}).get("nugget2"):
            collector.add(
                "[noise] section and param.nugget* are mutually exclusive "
                "(nuggets would be counted twice)"
            )

    bins = None
    if "bins" in sections:
        raw = sections["bins"]
        bins = {
            "max_lag": collector.get_float("bins", "max_lag", raw, required=True),
            "n_bins": collector.get_int("bins", "n_bins", raw) or 15,
            "directional": collector.get_bool("bins", "directional", raw, False),
            "axis": collector.get_str("bins", "axis", raw, choices=("x", "y")) or "x",
            "tol_angle_deg": collector.get_float("bins", "tol_angle_deg", raw) or 90.0,
        }
    elif command == "diagnose":
        collector.add("missing required section [bins] for command 'diagnose'")

    grid = None
    if "grid" in sections:
        raw = sections["grid"]
        vals = [
            collector.get_float("grid", k, raw, required=True)
            for k in ("xmin", "xmax", "ymin", "ymax")
        ] + [
            collector.get_int("grid", k, raw, required=True) for k in ("nx", "ny")
        ]
        if all(v is not None for v in vals):
            grid = tuple(vals)
    elif command == "simulate":
        collector.add("missing required section [grid] for command 'simulate'")

    fit_kwargs = {"method": "ml", "restarts": 5, "maxiter": None, "subsample": None,
                  "init": {}, "fixed": {}}
    if "fit" in sections:
        raw = sections["fit"]
        method = collector.get_str("fit", "method", raw, choices=("ml", "wls"))
        if method:
            fit_kwargs["method"] = method
        r = collector.get_int("fit", "restarts", raw)
        if r is not None:
            fit_kwargs["restarts"] = r
        m = collector.get_int("fit", "maxiter", raw)
        if m is not None:
            fit_kwargs["maxiter"] = m
        s = collector.get_int("fit", "subsample", raw)
        if s is not None:
            fit_kwargs["subsample"] = s
        for key in list(raw):
            if key.startswith("init.") or key.startswith("fix."):
                prefix, name = key.split(".", 1)
                try:
                    value = float(raw.pop(key))
                except ValueError:
                    collector.add(f"[fit] {key}: not a number")
                    continue
                fit_kwargs["init" if prefix == "init" else "fixed"][name] = value
    if command == "fit" and fit_kwargs["method"] == "wls" and bins is None:
        collector.add("missing required section [bins] for WLS fitting")

    predict = {"predictand": "Y", "target": "grid", "target_file": None}
    if "predict" in sections:
        raw = sections["predict"]
        pd_ = collector.get_str("predict", "predictand", raw, choices=("Y", "W"))
        if pd_:
            predict["predictand"] = pd_
        tgt = collector.get_str("predict", "target", raw, choices=("grid", "file"))
        if tgt:
            predict["target"] = tgt
        predict["target_file"] = collector.get_str("predict", "target_file", raw)
    if command == "predict":
        if predict["target"] == "grid" and grid is None:
            collector.add("missing required section [grid] for predict target 'grid'")
        if predict["target"] == "file" and not predict["target_file"]:
            collector.add("[predict] target 'file' needs target_file")

    # anything left in any section is an unknown key
    for name, raw in sections.items():
        if name not in _SECTION_KEYS:
            continue
        vocab = set(_SECTION_KEYS[name])
        if name == "model":
            vocab |= {"param.nugget1", "param.nugget2"}
            fam = model.get("family")
            if fam in _FAMILY_PARAMS and _FAMILY_PARAMS[fam]:
                vocab |= {f"param.{n}" for n in _FAMILY_PARAMS[fam]}
        if name == "fit":
            vocab |= {"init.<param>", "fix.<param>"}
        for key in raw:
            collector.add(f"[{name}] unknown key '{key}'{_suggest(key, vocab)}")

    if collector.errors:
        raise ConfigError(collector.errors)

    return RunConfig(
        command=command,
        raw_text=text,
        seed=seed,
        data_path=data_path,
        out_dir=out_dir,
        folds=folds,
        noise_split=noise_split,
        family=model.get("family"),
        family_options=model.get("family_options", {}),
        model_params=model.get("model_params", {}),
        params_file=model.get("params_file"),
        means=model.get("means", {}),
        condition_order=model.get("condition_order", (1, 2)),
        basis_spec=model.get("basis_spec"),
        kernel_conv_spec=model.get("kernel_conv_spec"),
        explicit_noise=noise,
        bins=bins,
        grid=grid,
        fit_method=fit_kwargs["method"],
        fit_restarts=fit_kwargs["restarts"],
        fit_maxiter=fit_kwargs["maxiter"],
        fit_subsample=fit_kwargs["subsample"],
        fit_init=fit_kwargs["init"],
        fit_fixed=fit_kwargs["fixed"],
        predictand=predict["predictand"],
        predict_target=predict["target"],
        target_file=predict["target_file"],
    )
