"""Command-line interface.

Usage: ``latentrisk <subcommand> [--config FILE] [--seed N] [--out DIR] [--threads N]
[--free-censoring] [subcommand options]``.

The YAML config is a tree with optional top-level keys ``seed``, ``threads``,
``out``, ``free_censoring``, ``data``, ``simulate``, ``fit``, ``select``,
``predict``, ``classify`` and ``baseline``; see README for the full schema.
Command-line flags override config values.  Exit status: 0 success, 1 usage or
configuration error, 2 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .baselines import BaselineError, cox_fit, kaplan_meier
from .cohort import (
    CohortError,
    SyntheticSpec,
    apply_normalization,
    generate_synthetic,
    load_cohort,
    normalize_covariates,
    table1_spec,
    three_class_spec,
    ulsam_like_spec,
)
from .estimation import FitConfig, FitError, fit_gaussian, fit_map, select_model
from .inference import (
    BANDS,
    class_posterior,
    classification_fraction,
    cohort_average_curve,
    crude_survival_grid,
    cumulative_incidence,
    decontaminated_survival,
    quantile_band_curve,
)
from .io import atomic_output, load_model, model_hash, save_model, write_curve_csv, write_json, \
    write_posterior_csv
from .likelihood import LikelihoodError, PenaltyConfig
from .models import LatentClassModel

log = logging.getLogger("latentrisk")


class ConfigError(ValueError):
    pass


SCHEMA = {
    "seed": None,
    "threads": None,
    "out": None,
    "free_censoring": None,
    "data": {"path": None, "schema": None, "normalize": None, "n_risks": None},
    "simulate": {"preset": None, "rho": None, "class_weights": None, "betas": None,
                 "base_rates": None, "censor_time": None, "n_individuals": None},
    "fit": {"model": None, "L": None, "K": None, "restarts": None, "simplex_tolerance": None,
            "simplex_max_iter": None, "amplitudes": None, "init_coefficient_noise": None,
            "initial_step": None, "adaptive_simplex": None, "error_bars": None,
            "prior_variance": None, "warm_start": None},
    "select": {"L_grid": None, "K_grid": None},
    "predict": {"model": None, "risks": None, "covariates": None, "bands": None,
                "grid": {"t_max": None, "n": None}, "kinds": None, "cohort_average": None},
    "classify": {"model": None, "truth": None},
    "baseline": {"risk": None},
}

PRESETS = ("table1-A", "table1-B", "table1-C", "three-class", "ulsam-like")


def _validate(tree, schema, where="config"):
    if not isinstance(tree, dict):
        raise ConfigError(f"{where} must be a mapping")
    for key, val in tree.items():
        if key not in schema:
            raise ConfigError(f"unknown key {where}.{key}")
        sub = schema[key]
        if isinstance(sub, dict) and val is not None:
            _validate(val, sub, f"{where}.{key}")


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        cfg = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from None
    _validate(cfg, SCHEMA)
    return cfg


def _section(cfg, name):
    return dict(cfg.get(name) or {})


def _int(v, name, lo=None):
    try:
        i = int(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be an integer, got {v!r}") from None
    if i != v and not isinstance(v, str):
        raise ConfigError(f"{name} must be an integer, got {v!r}")
    if lo is not None and i < lo:
        raise ConfigError(f"{name} must be >= {lo}")
    return i


def _grid(v, name):
    if isinstance(v, str):
        v = [s for s in v.split(",") if s.strip()]
    if not isinstance(v, (list, tuple)) or not v:
        raise ConfigError(f"{name} must be a nonempty list")
    return [_int(x, name, 1) for x in v]


# ---------------------------------------------------------------------------
# shared helpers


def synthetic_spec(sim: dict, seed: int) -> SyntheticSpec:
    preset = sim.get("preset")
    n = sim.get("n_individuals")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; expected one of {PRESETS}")
        kw = {"rng_seed": seed}
        if n is not None:
            kw["n_individuals"] = _int(n, "simulate.n_individuals", 1)
        if preset.startswith("table1-"):
            return table1_spec(preset[-1], **kw)
        if preset == "three-class":
            if sim.get("rho") is None:
                raise ConfigError("simulate.rho is required for the three-class preset")
            return three_class_spec(float(sim["rho"]), **kw)
        return ulsam_like_spec(**kw)
    for key in ("class_weights", "betas", "base_rates", "n_individuals"):
        if sim.get(key) is None:
            raise ConfigError(f"simulate.{key} is required")
    try:
        return SyntheticSpec(sim["class_weights"], np.asarray(sim["betas"], dtype=float),
                             sim["base_rates"], _int(n, "simulate.n_individuals", 1),
                             sim.get("censor_time"), seed)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid simulate spec: {exc}") from None


def read_data(cfg, path_override=None, normalize=True):
    data = _section(cfg, "data")
    path = path_override or data.get("path")
    if path is None:
        raise ConfigError("no data file given (data.path or --data)")
    cohort = load_cohort(path, data.get("schema"), data.get("n_risks"))
    if normalize and data.get("normalize", True):
        cohort = normalize_covariates(cohort)
    return cohort


def fit_config(cfg, args) -> FitConfig:
    f = _section(cfg, "fit")
    kw = {}
    for key in ("restarts", "simplex_max_iter"):
        if f.get(key) is not None:
            kw[key] = _int(f[key], f"fit.{key}", 1)
    for key in ("simplex_tolerance", "init_coefficient_noise", "initial_step"):
        if f.get(key) is not None:
            kw[key] = float(f[key])
    for key in ("adaptive_simplex", "error_bars", "warm_start"):
        if f.get(key) is not None:
            kw[key] = bool(f[key])
    if f.get("amplitudes") is not None:
        kw["amplitudes"] = tuple(float(a) for a in f["amplitudes"])
    if f.get("prior_variance") is not None:
        kw["penalty"] = PenaltyConfig(prior_variance=float(f["prior_variance"]))
    if getattr(args, "restarts", None) is not None:
        kw["restarts"] = args.restarts
    kw["rng_seed"] = args.seed
    kw["threads"] = args.threads
    kw["free_censoring"] = args.free_censoring
    try:
        return FitConfig(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _model_cohort(model, cfg, args):
    """Cohort on the model's covariate scale."""
    cohort = read_data(cfg, getattr(args, "data", None), normalize=False)
    return apply_normalization(cohort, model.normalization)


def _model_path(cfg, section, args):
    path = getattr(args, "model", None) or _section(cfg, section).get("model")
    if path is None:
        raise ConfigError(f"no model file given ({section}.model or --model)")
    return path


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg, args, out):
    spec = synthetic_spec(_section(cfg, "simulate"), args.seed)
    cohort, classes = generate_synthetic(spec)
    cohort.to_csv(out / "cohort.csv")
    with open(out / "truth.csv", "w") as fh:
        fh.write("id,class\n")
        for i, c in enumerate(classes, start=1):
            fh.write(f"{i},{int(c) + 1}\n")
    write_json(out / "truth.json", {
        "class_weights": spec.class_weights.tolist(),
        "betas": spec.betas.tolist(),
        "base_rates": spec.base_rates.tolist(),
        "censor_time": spec.censor_time,
        "n_individuals": spec.n_individuals,
        "rng_seed": spec.rng_seed,
        "event_counts": cohort.event_counts().tolist(),
    })
    counts = cohort.event_counts()
    print(f"simulated {cohort.n_individuals} individuals; events per label {counts.tolist()}")


def cmd_fit(cfg, args, out):
    cohort = read_data(cfg, args.data)
    f = _section(cfg, "fit")
    config = fit_config(cfg, args)
    kind = f.get("model", "latent")
    K = _int(args.K if args.K is not None else f.get("K", 1), "fit.K", 1)
    if kind == "latent":
        L = _int(args.L if args.L is not None else f.get("L", 1), "fit.L", 1)
        rep = fit_map(cohort, L, K, config)
    elif kind == "gaussian":
        rep = fit_gaussian(cohort, K, config)
    else:
        raise ConfigError(f"fit.model must be 'latent' or 'gaussian', got {kind!r}")
    meta = {"psi": rep.psi, "n_par": rep.n_par, "loglik": rep.loglik, "seed": args.seed}
    bars = None if rep.error_bars is None else rep.error_bars.to_dict()
    save_model(out / "model.json", rep.best_model, meta, bars)
    write_json(out / "fit_report.json", rep.to_dict())
    print(f"Psi={rep.psi:.6f} loglik={rep.loglik:.6f} n_par={rep.n_par}")


def cmd_select(cfg, args, out):
    cohort = read_data(cfg, args.data)
    s = _section(cfg, "select")
    L_grid = _grid(args.L_grid or s.get("L_grid") or [1, 2, 3], "select.L_grid")
    K_grid = _grid(args.K_grid or s.get("K_grid") or [1], "select.K_grid")
    rep = select_model(cohort, L_grid, K_grid, fit_config(cfg, args))
    write_json(out / "selection.json", rep.to_dict())
    best = rep.best_report
    meta = {"psi": best.psi, "n_par": best.n_par, "loglik": best.loglik, "seed": args.seed}
    bars = None if best.error_bars is None else best.error_bars.to_dict()
    save_model(out / "model.json", best.best_model, meta, bars)
    for c in rep.grid:
        psi = "failed" if c.psi is None else f"{c.psi:.6f}"
        print(f"L={c.L} K={c.K} Psi={psi}")
    print(f"chosen L={rep.chosen[0]} K={rep.chosen[1]}")


def cmd_predict(cfg, args, out):
    model, _ = load_model(_model_path(cfg, "predict", args))
    if not isinstance(model, LatentClassModel):
        raise ConfigError("predict supports latent-class models")
    p = _section(cfg, "predict")
    grid = dict(p.get("grid") or {})
    t_max = float(grid.get("t_max") or model.time_bounds[1])
    t = np.linspace(0.0, t_max, _int(grid.get("n", 200), "predict.grid.n", 2))
    risks = [_int(r, "predict.risks", 1) for r in (p.get("risks") or [1])]
    kinds = p.get("kinds") or ["decontaminated", "crude", "incidence"]
    for k in kinds:
        if k not in ("decontaminated", "crude", "incidence"):
            raise ConfigError(f"unknown curve kind {k!r}")
    h = model_hash(model)
    zs = p.get("covariates") or [[0.0] * model.p]
    norm = model.normalization
    for r in risks:
        if r > model.R:
            raise ConfigError(f"risk {r} exceeds the model's {model.R} risks")
        for j, z in enumerate(zs):
            z = np.asarray(z, dtype=float)
            if z.shape != (model.p,):
                raise ConfigError(f"predict.covariates[{j}] must have {model.p} entries")
            zn = norm.apply(z) if norm is not None else z
            for k in kinds:
                if k == "decontaminated":
                    v = decontaminated_survival(model, r, zn, t)
                elif k == "crude":
                    v = crude_survival_grid(model, r, zn, t)
                else:
                    v = cumulative_incidence(model, r, zn, t)
                write_curve_csv(out / f"{k}_risk{r}_z{j}.csv", t, v, h, r, None,
                                {"z": ",".join(repr(float(x)) for x in z)})
        for spec in p.get("bands") or []:
            if not isinstance(spec, dict) or set(spec) - {"covariate", "band"}:
                raise ConfigError("predict.bands entries need keys covariate and band")
            band = str(spec.get("band", "")).upper()
            if band not in BANDS:
                raise ConfigError(f"unknown band {spec.get('band')!r}")
            ci = _int(spec.get("covariate"), "predict.bands.covariate", 1) - 1
            for k in kinds:
                if k == "incidence":
                    continue
                v = quantile_band_curve(model, r, ci, band, t, kind=k, seed=args.seed)
                write_curve_csv(out / f"{k}_risk{r}_cov{ci + 1}_{band}.csv", t, v, h, r, band)
        if p.get("cohort_average"):
            cohort = _model_cohort(model, cfg, args)
            for k in kinds:
                v = cohort_average_curve(model, r, cohort.covariates, t, k)
                write_curve_csv(out / f"{k}_risk{r}_cohort.csv", t, v, h, r, "cohort")
    print(f"wrote curves for risks {risks}")


def cmd_classify(cfg, args, out):
    model, _ = load_model(_model_path(cfg, "classify", args))
    if not isinstance(model, LatentClassModel):
        raise ConfigError("classify needs a latent-class model")
    cohort = _model_cohort(model, cfg, args)
    post = class_posterior(model, cohort)
    write_posterior_csv(out / "posterior.csv", post.probabilities)
    report = {"model_hash": model_hash(model), "n_individuals": cohort.n_individuals,
              "max_abs_censoring_coefficient":
                  float(np.max(np.abs(model.coefficients[:, 0, 1:]), initial=0.0))}
    truth_path = args.truth or _section(cfg, "classify").get("truth")
    if truth_path is not None:
        truth = _read_truth(truth_path, cohort.n_individuals)
        f = classification_fraction(post.assignment, truth)
        report["classification_fraction"] = f
        print(f"f={f:.4f}")
    write_json(out / "classify_report.json", report)


def _read_truth(path, n):
    try:
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read truth file {path}: {exc}") from None
    if rows.shape[0] != n:
        raise ConfigError(f"truth file has {rows.shape[0]} rows, cohort has {n}")
    return rows[:, -1].astype(int) - 1


def cmd_baseline(cfg, args, out):
    cohort = read_data(cfg, args.data, normalize=False)
    r = _int(args.risk or _section(cfg, "baseline").get("risk", 1), "baseline.risk", 1)
    km = kaplan_meier(cohort, r)
    with open(out / f"km_risk{r}.csv", "w") as fh:
        fh.write(f"#risk: {r}\nt,value\n")
        fh.write(f"{0.0!r},{1.0!r}\n")
        for a, b in zip(km.times, km.values):
            fh.write(f"{float(a)!r},{float(b)!r}\n")
    cox = cox_fit(cohort, r)
    write_json(out / f"cox_risk{r}.json", {"covariates": list(cohort.covariate_names), **cox.to_dict()})
    print("cox coefficients " + " ".join(f"{n}={b:.4f}" for n, b in
                                         zip(cohort.covariate_names, cox.coefficients)))


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "select": cmd_select,
    "predict": cmd_predict,
    "classify": cmd_classify,
    "baseline": cmd_baseline,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration file")
    common.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    common.add_argument("--out", default=None, help="output directory (default .)")
    common.add_argument("--threads", type=int, default=None, help="parallel restarts")
    common.add_argument("--free-censoring", action="store_true", default=None,
                        help="let end-of-trial censoring depend on covariates")
    common.add_argument("-v", "--verbose", action="store_true", help="progress on stderr")
    parser = argparse.ArgumentParser(prog="latentrisk", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="generate a synthetic cohort")
    p = sub.add_parser("fit", parents=[common], help="MAP fit of one model")
    p.add_argument("--data")
    p.add_argument("-L", type=int)
    p.add_argument("-K", type=int)
    p.add_argument("--restarts", type=int)
    p = sub.add_parser("select", parents=[common], help="grid search over (L, K)")
    p.add_argument("--data")
    p.add_argument("--L-grid", dest="L_grid")
    p.add_argument("--K-grid", dest="K_grid")
    p.add_argument("--restarts", type=int)
    p = sub.add_parser("predict", parents=[common], help="survival and incidence curves")
    p.add_argument("--model")
    p.add_argument("--data")
    p = sub.add_parser("classify", parents=[common], help="retrospective class membership")
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--truth")
    p = sub.add_parser("baseline", parents=[common], help="Kaplan-Meier and Cox regression")
    p.add_argument("--data")
    p.add_argument("--risk", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(message)s")
    try:
        cfg = load_config(args.config)
        args.seed = args.seed if args.seed is not None else _int(cfg.get("seed", 0), "seed", 0)
        args.threads = args.threads or _int(cfg.get("threads", 1), "threads", 1)
        if args.free_censoring is None:
            args.free_censoring = bool(cfg.get("free_censoring", False))
        out = Path(args.out or cfg.get("out") or ".")
        with atomic_output(out) as tmp:
            COMMANDS[args.command](cfg, args, tmp)
    except (ConfigError, CohortError, BaselineError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FitError, LikelihoodError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
