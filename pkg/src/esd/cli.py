"""``esd`` command line: simulate, fit, predict, evaluate, spectral-check, sweep.

Exit codes: 0 success, 1 spectral check failed, 2 invalid input or config,
3 numerical failure (including sampler aborts).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import describe, load_config
from .covariance import make_basis
from .evaluation import Summary, rmspe, summarize_samples, write_rmspe_table
from .exceptions import NumericalError, SamplerError, ValidationError
from .gibbs import (VARIANCES, Hyperparams, load_checkpoint, predict_posterior, run_chain,
                    save_checkpoint, write_samples_csv)
from .simdata import (CsvSchema, SimSpec, gen_case, load_csv, read_bundle, sweep_specs,
                      write_bundle, write_columns_csv)
from .spectral import spectral_check

EXIT_OK, EXIT_CHECK_FAILED, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3

CHECKPOINT = "checkpoint.json"
SAMPLES = "samples.csv"
MANIFEST = "manifest.json"
PREDICTIONS = "predictions.csv"


def _log(msg):
    print(msg, file=sys.stderr)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- data and model setup

def load_dataset(cfg):
    d = cfg["data"]
    if d["bundle"]:
        return read_bundle(d["bundle"])
    if d["csv"]:
        schema = CsvSchema(coords=d["coords"], value=d["value"], covariates=d["covariates"],
                           intercept=d["intercept"], holdout=d["holdout"], seed=d["holdout_seed"],
                           grid=d["grid"])
        return load_csv(d["csv"], schema)
    raise ValidationError("[data] needs either bundle or csv")


def location_scale(cfg, ds):
    scale = cfg["data"]["location_scale"]
    if scale is not None:
        return float(scale)
    # 1-D simulation sites are i/m; fitting happens on the index scale i
    return float(ds.m) if ds.d == 1 and "case" in ds.meta else 1.0


def basis_kind(cfg, ds):
    kind = cfg["fit"]["basis"]
    if kind == "auto":
        return "gaussian-rbf" if ds.d == 1 else "ozone-composite"
    return kind


def prepare_fit(cfg):
    """Dataset on the fitting scale, with basis covariates if requested, plus the basis."""
    ds = load_dataset(cfg)
    scale = location_scale(cfg, ds)
    fds = ds.rescaled(scale) if scale != 1.0 else ds
    f = cfg["fit"]
    basis = make_basis(basis_kind(cfg, fds), fds.locations, f["n_knots"], f["bandwidth"])
    extra = f["basis_covariates"]
    if extra not in ("auto", "true", "false"):
        raise ValidationError("[fit] basis_covariates must be auto, true or false")
    if extra == "true" or (extra == "auto" and basis.kind == "ozone-composite"):
        fds = fds.with_basis_covariates(basis)
    return ds, fds, basis, scale


def _five(vals, what):
    if len(vals) == 1:
        return tuple(vals) * 5
    if len(vals) != 5:
        raise ValidationError(f"[fit] {what} needs one value or five")
    return tuple(vals)


def hyperparams(cfg, basis):
    f = cfg["fit"]
    fixed = {name: f[f"fix_{name}"] for name in VARIANCES + ("phi",) if f[f"fix_{name}"] is not None}
    if f["fix_eta_zero"]:
        fixed["eta"] = np.zeros(basis.r)
    return Hyperparams(
        prior_shape=_five(f["prior_shape"], "prior_shape"), prior_scale=_five(f["prior_scale"], "prior_scale"),
        phi_lower=f["phi_lower"], phi_upper=f["phi_upper"], K=f["K"], m_sub=f["m_sub"],
        mh_step=f["mh_step"], adapt=f["adapt"], grid_size=f["grid_size"], B=f["B"],
        burn_in=f["burn_in"], thin=f["thin"], seed=f["seed"], keep_nu=f["keep_nu"],
        sigma_nu_count=f["sigma_nu_count"], fixed=fixed).validate()


# ---------------------------------------------------------------- commands

def cmd_simulate(cfg, out):
    s = cfg["simulate"]
    spec = SimSpec(case=s["case"], n=s["n"], snr=s["snr"], missing_pct=s["missing_pct"],
                   phi_zeta=s["phi_zeta"], seed=s["seed"], intercept=s["intercept"], strict=s["strict"])
    ds = gen_case(spec)
    write_bundle(ds, out)
    print(f"sigma_eps_sq={ds.meta['sigma_eps_sq']!r}")
    print(f"wrote {out} (n={ds.n}, m={ds.m})")
    return EXIT_OK


def cmd_fit(cfg, out, resume=False):
    out = Path(out)
    _, fds, basis, scale = prepare_fit(cfg)
    hyper = hyperparams(cfg, basis)
    previous = load_checkpoint(out / CHECKPOINT) if resume else None
    t0 = time.perf_counter()
    chain = run_chain(fds, hyper, basis, resume=previous)
    elapsed = time.perf_counter() - t0
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(chain, out / CHECKPOINT)
    write_samples_csv(chain, out / SAMPLES)
    # wall-clock time goes to stderr only so the written files stay byte-reproducible
    manifest = {
        "command": "fit",
        "version": __version__,
        "config": cfg.echo(),
        "data": {"n": fds.n, "m": fds.m, "p": fds.p, "d": fds.d, "location_scale": scale},
        "basis": {"kind": basis.kind, "n_knots": basis.n_knots, "bandwidth": basis.bandwidth, "r": basis.r},
        "chain": {"iterations": chain.iteration, "retained": chain.n_kept,
                  "eta_acceptance_rate": chain.acceptance_rate, "final_mh_step": chain.mh_step,
                  "phi_upper": chain.hyper.phi_upper},
    }
    _write_json(out / MANIFEST, manifest)
    _log(f"fit: {chain.iteration} iterations, {chain.n_kept} retained, "
         f"eta acceptance {chain.acceptance_rate:.3f}, {elapsed:.2f} s")
    return EXIT_OK


def _run_config(run_dir):
    """Config of a finished fit, rebuilt from its manifest echo."""
    path = Path(run_dir) / MANIFEST
    if not path.is_file():
        raise ValidationError(f"{run_dir} has no {MANIFEST}; run `esd fit` first")
    echo = json.loads(path.read_text())["config"]
    text = "\n".join(f"[{sec}]\n" + "\n".join(f"{k} = {v}" for k, v in keys.items())
                     for sec, keys in echo.items())
    return load_config(text=text)


def _predictions(run_dir):
    rcfg = _run_config(run_dir)
    ds, fds, _, _ = prepare_fit(rcfg)
    chain = load_checkpoint(Path(run_dir) / CHECKPOINT)
    mean, var = predict_posterior(chain, fds)
    return ds, chain, mean, var


def cmd_predict(cfg, out):
    out = Path(out)
    run = Path(cfg["predict"]["chain"] or out)
    ds, _, mean, var = _predictions(run)
    out.mkdir(parents=True, exist_ok=True)
    cols = {"index": np.arange(ds.m)}
    cols.update({f"s{j + 1}": ds.locations[:, j] for j in range(ds.d)})
    cols.update({"mean": mean, "variance": var})
    write_columns_csv(out / PREDICTIONS, cols)
    print(f"wrote {out / PREDICTIONS} ({ds.m} locations)")
    return EXIT_OK


def _scores(ds, mean):
    """(all-points RMSPE or None, holdout RMSPE or None), warning when truth is incomplete."""
    if ds.truth is None:
        warnings.warn("dataset has no truth values; RMSPE skipped", stacklevel=2)
        return None, None
    known = np.isfinite(ds.truth)
    hold = ds.holdout_idx if ds.holdout_idx is not None else np.empty(0, dtype=np.int64)
    hold = hold[known[hold]]
    r_hold = rmspe(ds.truth, mean, hold) if hold.size else None
    if known.all():
        return rmspe(ds.truth, mean), r_hold
    warnings.warn("truth is missing at some locations; reporting holdout RMSPE only", stacklevel=2)
    return None, r_hold


def cmd_evaluate(cfg, out):
    out = Path(out)
    e = cfg["evaluate"]
    if e["subset"] not in ("all", "holdout"):
        raise ValidationError("[evaluate] subset must be all or holdout")
    runs = [Path(r) for r in e["runs"]] or [out]
    labels = list(e["labels"])
    if labels and len(labels) != len(runs):
        raise ValidationError("[evaluate] needs one label per run")
    rows = []
    summary = None
    for i, run in enumerate(runs):
        ds, chain, mean, _ = _predictions(run)
        r_all, r_hold = _scores(ds, mean)
        if not labels:
            man = json.loads((run / MANIFEST).read_text())
            label = "ESD" if len(runs) == 1 else f"ESD (r={man['basis']['r']})"
        else:
            label = labels[i]
        value = r_all if e["subset"] == "all" else r_hold
        if value is None and e["subset"] == "all" and r_hold is not None:
            value = r_hold
        rows.append((label, math.nan if value is None else value))
        if summary is None:
            table = {k: v for k, v in chain.sample_table().items() if k != "iteration"}
            summary = Summary(level=e["level"], params=summarize_samples(table, e["level"]),
                              rmspe_all=r_all, rmspe_holdout=r_hold,
                              acceptance_rate=chain.acceptance_rate, n_samples=chain.n_kept)
    out.mkdir(parents=True, exist_ok=True)
    summary.to_json(out / "summary.json")
    summary.to_csv(out / "summary.csv")
    write_rmspe_table(out / "rmspe.csv", rows)
    for label, value in rows:
        print(f"{label}: rmspe={value:.4f}")
    return EXIT_OK


def cmd_spectral_check(cfg, out):
    s = cfg["spectral-check"]
    if s["sigma_nu"] < 0:
        raise ValidationError("sigma_nu must be nonnegative")
    rng = np.random.default_rng(s["seed"])
    res = spectral_check(s["K"], s["replicates"], s["phi"], s["sigma_nu"], s["lags"], rng,
                         base_points=s["base_points"], spacing=s["spacing"])
    var = s["sigma_nu"] ** 2
    err = np.abs(res.empirical - res.analytic)
    cov_ok = bool(np.all(err <= s["tolerance"] * var)) if var > 0 else bool(np.all(err == 0))
    mean_ok = abs(res.mean) <= s["mean_tolerance"] * s["sigma_nu"] if var > 0 else res.mean == 0
    normal_ok = res.ks_pvalue >= s["normality_alpha"]
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_columns_csv(out / "covariogram.csv", {
        "lag": res.lags, "empirical": res.empirical, "analytic": res.analytic,
        "abs_error": err, "count": res.count})
    _write_json(out / "spectral_check.json", {
        "config": cfg.echo()["spectral-check"], "mean": res.mean, "max_abs_error": float(err.max()),
        "ks_statistic": res.ks_stat, "ks_pvalue": res.ks_pvalue,
        "covariance_pass": cov_ok, "mean_pass": bool(mean_ok), "normality_pass": bool(normal_ok)})
    for h, emp, ana in zip(res.lags, res.empirical, res.analytic):
        print(f"lag {h:g}: empirical {emp:.4f} analytic {ana:.4f}")
    print(f"mean {res.mean:.4f}; KS p-value {res.ks_pvalue:.3g}")
    ok = cov_ok and mean_ok and normal_ok
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def _sweep_name(spec):
    return f"case{spec.case}_snr{spec.snr:g}_miss{int(round(spec.missing_pct * 100)):02d}"


def _sweep_fit(args):
    cfg_text, bundle, fit_dir = args
    cfg = load_config(text=cfg_text)
    cfg.override("data", "bundle", bundle)
    cfg.override("data", "csv", "")
    cmd_fit(cfg, fit_dir)
    ds, _, mean, _ = _predictions(fit_dir)
    r_all, r_hold = _scores(ds, mean)
    return r_all, r_hold


def _config_text(cfg):
    return "\n".join(f"[{sec}]\n" + "\n".join(f"{k} = {v}" for k, v in keys.items())
                     for sec, keys in cfg.echo().items())


def cmd_sweep(cfg, out):
    s = cfg["sweep"]
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    specs = sweep_specs(s["seed"], s["n"], s["phi_zeta"])
    index = {k: [] for k in ("name", "case", "snr", "missing_pct", "seed", "sigma_eps_sq")}
    for spec in specs:
        name = _sweep_name(spec)
        ds = gen_case(spec)
        write_bundle(ds, out / name)
        for k, v in (("name", name), ("case", spec.case), ("snr", spec.snr),
                     ("missing_pct", spec.missing_pct), ("seed", spec.seed),
                     ("sigma_eps_sq", ds.meta["sigma_eps_sq"])):
            index[k].append(v)
    _write_sweep_index(out / "sweep.csv", index)
    print(f"wrote {len(specs)} bundles under {out}")
    if not s["fit"]:
        return EXIT_OK
    text = _config_text(cfg)
    tasks = [(text, str(out / name), str(out / name / "fit")) for name in index["name"]]
    if s["jobs"] > 1:
        with ProcessPoolExecutor(max_workers=s["jobs"]) as pool:
            results = list(pool.map(_sweep_fit, tasks))
    else:
        results = [_sweep_fit(t) for t in tasks]
    rows = [(name, math.nan if r[1] is None else r[1]) for name, r in zip(index["name"], results)]
    write_rmspe_table(out / "rmspe.csv", rows)
    return EXIT_OK


def _write_sweep_index(path, index):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(index))
        for row in zip(*index.values()):
            w.writerow([repr(v) if isinstance(v, float) else str(v) for v in row])


# ---------------------------------------------------------------- entry point

SEED_KEYS = {"simulate": ("simulate", "seed"), "fit": ("fit", "seed"),
             "spectral-check": ("spectral-check", "seed"), "sweep": ("sweep", "seed")}


def build_parser():
    parser = argparse.ArgumentParser(prog="esd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"esd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("simulate", "generate a simulated dataset bundle"),
                            ("fit", "run the Gibbs sampler"),
                            ("predict", "posterior mean and variance at every location"),
                            ("evaluate", "posterior summaries and RMSPE table"),
                            ("spectral-check", "Monte Carlo check of the spectral field covariance"),
                            ("sweep", "generate (and optionally fit) the 60-setting grid")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="INI config file (defaults apply to missing keys)")
        p.add_argument("--seed", type=int, help="override the command's seed")
        p.add_argument("--out", type=Path, default=Path("esd_out"), help="output directory")
        if name == "fit":
            p.add_argument("--resume", action="store_true", help="continue from OUT/checkpoint.json")
    sub.add_parser("defaults", help="print every config key with its default")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "defaults":
        print(describe())
        return EXIT_OK
    try:
        cfg = load_config(args.config)
        if args.seed is not None and args.command in SEED_KEYS:
            cfg.override(*SEED_KEYS[args.command], args.seed)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.out)
        if args.command == "fit":
            return cmd_fit(cfg, args.out, resume=args.resume)
        if args.command == "predict":
            return cmd_predict(cfg, args.out)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.out)
        if args.command == "spectral-check":
            return cmd_spectral_check(cfg, args.out)
        return cmd_sweep(cfg, args.out)
    except SamplerError as exc:
        _log(f"error: sampler aborted at {exc}")
        return EXIT_NUMERICAL
    except NumericalError as exc:
        _log(f"error: numerical failure: {exc}")
        return EXIT_NUMERICAL
    except (ValidationError, OSError) as exc:
        _log(f"error: {exc}")
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
