"""Run configuration: an INI-style file with one section per command.

Every key has a documented default (see ``SCHEMA``); unknown sections and keys
are rejected so a typo never silently falls back to a default.
"""

from __future__ import annotations

import configparser
from pathlib import Path

from .exceptions import ValidationError


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _strs(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _opt_float(text):
    return None if text.strip() in ("", "auto", "none") else float(text)


def _opt_str(text):
    return text.strip() or None


# section -> key -> (parser, default text, description)
SCHEMA = {
    "data": {
        "bundle": (_opt_str, "", "dataset bundle directory (from `esd simulate`)"),
        "csv": (_opt_str, "", "point-data CSV, used when no bundle is given"),
        "coords": (_strs, "lon,lat", "coordinate column names in the CSV"),
        "value": (str, "value", "response column name in the CSV"),
        "covariates": (_strs, "", "extra covariate columns in the CSV"),
        "intercept": (_bool, "true", "prepend an intercept column (CSV input)"),
        "holdout": (float, "0.0", "fraction of CSV rows held out for scoring"),
        "holdout_seed": (int, "0", "seed of the holdout selection"),
        "grid": (_opt_str, "", "optional CSV of extra prediction locations"),
        "location_scale": (_opt_float, "auto",
                           "multiply coordinates before fitting; auto = m for 1-D simulated "
                           "bundles (index units), 1 otherwise"),
    },
    "simulate": {
        "case": (int, "1", "simulation case 1..5"),
        "n": (int, "1000", "number of locations"),
        "snr": (float, "5", "signal-to-noise ratio"),
        "missing_pct": (float, "0.05", "fraction missing at random"),
        "phi_zeta": (float, "0.3", "rate of the stationary term"),
        "seed": (int, "0", "generator seed"),
        "intercept": (_bool, "true", "include an intercept column in X"),
        "strict": (_bool, "true", "restrict snr / missing_pct to the study grid"),
    },
    "fit": {
        "basis": (str, "auto", "gaussian-rbf | bisquare | ozone-composite; auto by dimension"),
        "n_knots": (int, "10", "number of basis knots"),
        "bandwidth": (_opt_float, "auto", "tau (gaussian-rbf) or aperture w; auto = default rule"),
        "basis_covariates": (str, "auto", "append kernel values to X; auto = yes for ozone-composite"),
        "prior_shape": (_floats, "0.01", "IG shapes (one value or five)"),
        "prior_scale": (_floats, "0.01", "IG scales (one value or five)"),
        "phi_lower": (float, "1", "lower bound of the uniform prior on phi"),
        "phi_upper": (_opt_float, "auto", "upper bound; auto = largest pairwise distance"),
        "K": (int, "2000", "spectral terms per field draw"),
        "m_sub": (int, "500", "subsample size for the sigma_nu^2 and phi updates"),
        "sigma_nu_count": (str, "observations", "n_eff in the sigma_nu^2 shape: subsample | observations"),
        "mh_step": (float, "0.05", "initial random-walk scale for eta"),
        "adapt": (_bool, "true", "tune mh_step during burn-in"),
        "grid_size": (int, "50", "griddy-Gibbs points for phi"),
        "B": (int, "5000", "total iterations"),
        "burn_in": (int, "1000", "burn-in iterations"),
        "thin": (int, "1", "keep every thin-th draw after burn-in"),
        "seed": (int, "0", "sampler seed"),
        "keep_nu": (_bool, "false", "store every retained nu draw in the checkpoint"),
        "fix_eta_zero": (_bool, "false", "hold eta at 0 (stationary model)"),
        "fix_phi": (_opt_float, "", "hold phi at this value"),
        "fix_sigma_nu_sq": (_opt_float, "", "hold sigma_nu^2 at this value"),
        "fix_sigma_beta_sq": (_opt_float, "", "hold sigma_beta^2 at this value"),
        "fix_sigma_eta_sq": (_opt_float, "", "hold sigma_eta^2 at this value"),
        "fix_delta_sq": (_opt_float, "", "hold delta^2 at this value"),
        "fix_sigma_eps_sq": (_opt_float, "", "hold sigma_eps^2 at this value"),
    },
    "predict": {
        "chain": (_opt_str, "", "fit output directory; default is --out"),
    },
    "evaluate": {
        "level": (float, "0.95", "HPD level"),
        "runs": (_strs, "", "fit output directories for a multi-run RMSPE table; default --out"),
        "labels": (_strs, "", "method label per run; default ESD or ESD (r=...)"),
        "subset": (str, "holdout", "subset for the RMSPE table: all | holdout"),
    },
    "spectral-check": {
        "K": (int, "5000", "spectral terms"),
        "replicates": (int, "2000", "independent field draws"),
        "phi": (float, "1", "range"),
        "sigma_nu": (float, "1", "field standard deviation"),
        "lags": (_floats, "0,0.1,0.5,1.0", "probe lags"),
        "tolerance": (float, "0.05", "max |empirical - analytic| covariance, in units of sigma_nu^2"),
        "mean_tolerance": (float, "0.02", "max |empirical mean|, in units of sigma_nu"),
        "normality_alpha": (float, "0.001", "KS normality p-value floor at one point"),
        "base_points": (int, "20", "number of base points"),
        "spacing": (float, "3", "spacing between base points"),
        "seed": (int, "0", "seed"),
    },
    "sweep": {
        "seed": (int, "0", "root seed; each setting gets a spawned child seed"),
        "n": (int, "1000", "locations per dataset"),
        "phi_zeta": (float, "0.3", "rate of the stationary term"),
        "fit": (_bool, "false", "also fit and evaluate every dataset with the [fit] settings"),
        "jobs": (int, "1", "parallel worker processes"),
    },
}


class RunConfig:
    """Parsed settings: ``cfg[section][key]`` gives the typed value."""

    def __init__(self, values, raw):
        self._values = values
        self.raw = raw

    def __getitem__(self, section):
        return self._values[section]

    def echo(self):
        """Raw text of every setting, defaults included; enough to re-run."""
        return {sec: dict(keys) for sec, keys in self.raw.items()}

    def override(self, section, key, text):
        parser = SCHEMA[section][key][0]
        self._values[section][key] = parser(str(text))
        self.raw[section][key] = str(text)


def load_config(path=None, text=None):
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"),
                                   inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise ValidationError(f"config file not found: {p}")
            cp.read_string(p.read_text(), source=str(p))
        elif text is not None:
            cp.read_string(text)
    except configparser.Error as exc:
        raise ValidationError(f"malformed config: {exc}") from None
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ValidationError(f"unknown config section [{sec}]")
        unknown = set(cp[sec]) - set(SCHEMA[sec])
        if unknown:
            raise ValidationError(f"unknown key(s) in [{sec}]: {sorted(unknown)}")
    values, raw = {}, {}
    for sec, keys in SCHEMA.items():
        values[sec], raw[sec] = {}, {}
        for key, (parser, default, _) in keys.items():
            text = cp[sec][key] if cp.has_option(sec, key) else default
            try:
                values[sec][key] = parser(text)
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"[{sec}] {key} = {text!r}: {exc}") from None
            raw[sec][key] = text.strip()
    return RunConfig(values, raw)


def describe():
    """Documented defaults as an INI text block."""
    lines = []
    for sec, keys in SCHEMA.items():
        lines.append(f"[{sec}]")
        for key, (_, default, doc) in keys.items():
            lines.append(f"# {doc}")
            lines.append(f"{key} = {default}")
        lines.append("")
    return "\n".join(lines)
