"""Prediction scores, posterior summaries and a dense Gaussian-process oracle."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from .covariance import DEFAULT_MATRIX_CAP, cov_matrix
from .exceptions import NumericalError, ValidationError

HPD_MIN_SAMPLES = 20


def rmspe(truth, pred, subset=None):
    """Root mean squared prediction error over ``subset`` (all points by default)."""
    truth = np.asarray(truth, dtype=float).reshape(-1)
    pred = np.asarray(pred, dtype=float).reshape(-1)
    if truth.shape != pred.shape:
        raise ValidationError(f"truth has {truth.size} values, pred has {pred.size}")
    if subset is not None:
        subset = np.asarray(subset, dtype=np.int64).reshape(-1)
        if subset.size and (subset.min() < 0 or subset.max() >= truth.size):
            raise ValidationError("subset indices out of range")
        truth, pred = truth[subset], pred[subset]
    if truth.size == 0:
        raise ValidationError("RMSPE over an empty set")
    return float(np.sqrt(np.mean((truth - pred) ** 2)))


def hpd_interval(samples, level=0.95):
    """Shortest window of ceil(level * N) sorted samples."""
    x = np.sort(np.asarray(samples, dtype=float).reshape(-1))
    n = x.size
    if n < HPD_MIN_SAMPLES:
        raise ValidationError(f"HPD interval needs at least {HPD_MIN_SAMPLES} samples, got {n}")
    if not 0 < level < 1:
        raise ValidationError(f"level must lie in (0, 1), got {level}")
    k = min(n, math.ceil(level * n - 1e-9))
    widths = x[k - 1:] - x[:n - k + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + k - 1])


def autocorrelation(x):
    x = np.asarray(x, dtype=float) - np.mean(x)
    n = x.size
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n]
    return acov / acov[0] if acov[0] > 0 else np.zeros(n)


def ess(samples):
    """Effective sample size by initial monotone sequence truncation."""
    x = np.asarray(samples, dtype=float).reshape(-1)
    n = x.size
    if n < 4:
        return float(n)
    if np.ptp(x) == 0:
        return float(n)
    rho = autocorrelation(x)
    pairs = rho[:n - n % 2].reshape(-1, 2).sum(axis=1)
    total = 0.0
    prev = np.inf
    for g in pairs:
        if g <= 0:
            break
        g = min(g, prev)
        total += g
        prev = g
    tau = max(-1.0 + 2.0 * total, 1.0 / n)
    return float(n / tau)


@dataclass
class ParamSummary:
    name: str
    mean: float
    sd: float
    hpd_lower: float
    hpd_upper: float
    ess: float


@dataclass
class Summary:
    level: float
    params: list = field(default_factory=list)
    rmspe_all: float | None = None
    rmspe_holdout: float | None = None
    acceptance_rate: float | None = None
    n_samples: int = 0

    def to_json(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    def to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["name", "mean", "sd", "hpd_lower", "hpd_upper", "ess"])
            for p in self.params:
                w.writerow([p.name] + [repr(float(v)) for v in (p.mean, p.sd, p.hpd_lower, p.hpd_upper, p.ess)])


def summarize_samples(table, level=0.95):
    """ParamSummary per column of a {name: draws} table (HPD is nan below 20 draws)."""
    out = []
    for name, vals in table.items():
        v = np.asarray(vals, dtype=float)
        if v.size == 0:
            continue
        lo, hi = hpd_interval(v, level) if v.size >= HPD_MIN_SAMPLES else (math.nan, math.nan)
        out.append(ParamSummary(name, float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0,
                                lo, hi, ess(v)))
    return out


def write_rmspe_table(path, rows):
    """CSV with columns (method, rmspe); ``rows`` is a sequence of (method, value)."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "rmspe"])
        for method, value in rows:
            w.writerow([method, repr(float(value))])


def read_rmspe_table(path):
    with Path(path).open(newline="") as fh:
        return [(r["method"], float(r["rmspe"])) for r in csv.DictReader(fh)]


def dense_gp_oracle(data, params, basis, sigma_eps_sq, delta_sq=0.0, beta=None, sigma_beta_sq=None,
                    cap=DEFAULT_MATRIX_CAP, jitter=1e-10):
    """Exact Gaussian conditional of Y = X beta + nu at every location, by dense solves.

    The field covariance is ``C(theta) + delta_sq * I``. ``beta`` fixes the
    regression coefficients; otherwise beta ~ N(0, sigma_beta_sq I) is
    integrated out (which requires ``sigma_beta_sq``). Returns mean and
    variance of Y at the ``m`` locations.
    """
    m = data.m
    if m > cap:
        raise ValidationError(f"oracle is capped at {cap} locations, got {m}")
    if sigma_eps_sq < 0 or delta_sq < 0:
        raise ValidationError("variances must be nonnegative")
    C = cov_matrix(data.locations, params, basis, cap=cap, jitter=0.0)
    if delta_sq:
        C[np.diag_indices(m)] += delta_sq
    # prior covariance and mean of Y
    if beta is None:
        if sigma_beta_sq is None:
            raise ValidationError("give either beta or sigma_beta_sq")
        K = C + sigma_beta_sq * data.X_pred @ data.X_pred.T
        mu = np.zeros(m)
    else:
        K = C
        mu = data.X_pred @ np.asarray(beta, dtype=float)
    obs = data.observed_idx
    Koo = K[np.ix_(obs, obs)].copy()
    Koo[np.diag_indices(obs.size)] += sigma_eps_sq + jitter * max(1.0, float(np.max(np.diag(K))))
    try:
        chol = linalg.cho_factor(Koo, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError("oracle covariance is not positive definite") from exc
    Kao = K[:, obs]
    alpha = linalg.cho_solve(chol, data.Z - mu[obs])
    mean = mu + Kao @ alpha
    var = np.diag(K) - np.einsum("ij,ji->i", Kao, linalg.cho_solve(chol, Kao.T))
    return mean, np.maximum(var, 0.0)
