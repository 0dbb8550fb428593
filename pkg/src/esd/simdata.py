"""Synthetic data from the Friedman simulation design and CSV ingestion.

A :class:`Dataset` carries ``m`` prediction locations, the indices of the
``n <= m`` observed ones, the responses ``Z`` at those, and covariates at every
location. Missing data is encoded only by leaving an index out of
``observed_idx``.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .covariance import as_points, kernel_values
from .exceptions import NumericalError, ValidationError

CASE_WEIGHTS = {1: (1.0, 0.0), 2: (0.85, 0.15), 3: (0.5, 0.5), 4: (0.15, 0.85), 5: (0.0, 1.0)}
SNR_GRID = (2, 3, 5, 10)
MISSING_GRID = (0.05, 0.10, 0.20)
BUNDLE_VERSION = 1


@dataclass
class Dataset:
    locations: np.ndarray
    observed_idx: np.ndarray
    Z: np.ndarray
    X: np.ndarray
    X_pred: np.ndarray
    truth: np.ndarray | None = None
    holdout_idx: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.locations = as_points(self.locations)
        m = len(self.locations)
        self.observed_idx = np.asarray(self.observed_idx, dtype=np.int64).reshape(-1)
        self.Z = np.asarray(self.Z, dtype=float).reshape(-1)
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.X_pred = np.atleast_2d(np.asarray(self.X_pred, dtype=float))
        obs = self.observed_idx
        if obs.size and (obs.min() < 0 or obs.max() >= m):
            raise ValidationError("observed_idx points outside the prediction locations")
        if np.unique(obs).size != obs.size:
            raise ValidationError("observed_idx must not repeat a location")
        if self.Z.shape != obs.shape:
            raise ValidationError(f"Z has {self.Z.size} values for {obs.size} observed locations")
        if not np.all(np.isfinite(self.Z)):
            raise ValidationError("Z must be finite")
        if self.X_pred.shape[0] != m or self.X.shape != (obs.size, self.X_pred.shape[1]):
            raise ValidationError(
                f"covariate shapes X{self.X.shape} / X_pred{self.X_pred.shape} do not match "
                f"n={obs.size}, m={m}")
        if self.truth is not None:
            self.truth = np.asarray(self.truth, dtype=float).reshape(-1)
            if self.truth.size != m:
                raise ValidationError("truth must have one entry per prediction location")
        if self.holdout_idx is not None:
            self.holdout_idx = np.asarray(self.holdout_idx, dtype=np.int64).reshape(-1)

    @classmethod
    def build(cls, locations, observed_idx, Z, X_pred, **kw):
        """Make a dataset whose observed covariates are rows of ``X_pred``."""
        X_pred = np.atleast_2d(np.asarray(X_pred, dtype=float))
        obs = np.asarray(observed_idx, dtype=np.int64).reshape(-1)
        if obs.size and (obs.min() < 0 or obs.max() >= X_pred.shape[0]):
            raise ValidationError("observed_idx points outside the prediction locations")
        return cls(locations, obs, Z, X_pred[obs].copy(), X_pred, **kw)

    @property
    def n(self):
        return self.observed_idx.size

    @property
    def m(self):
        return self.locations.shape[0]

    @property
    def p(self):
        return self.X_pred.shape[1]

    @property
    def d(self):
        return self.locations.shape[1]

    def with_covariates(self, extra):
        """Append covariate columns known at every prediction location."""
        extra = np.asarray(extra, dtype=float).reshape(self.m, -1)
        return Dataset.build(self.locations, self.observed_idx, self.Z,
                             np.hstack([self.X_pred, extra]), truth=self.truth,
                             holdout_idx=self.holdout_idx, meta=dict(self.meta))

    def with_basis_covariates(self, basis):
        return self.with_covariates(kernel_values(self.locations, basis))

    def rescaled(self, factor):
        """Same data with every coordinate multiplied by ``factor``."""
        if not factor > 0:
            raise ValidationError(f"scale factor must be positive, got {factor}")
        return Dataset(self.locations * float(factor), self.observed_idx, self.Z, self.X, self.X_pred,
                       truth=self.truth, holdout_idx=self.holdout_idx, meta=dict(self.meta))


@dataclass(frozen=True)
class SimSpec:
    case: int = 1
    n: int = 1000
    snr: float = 5.0
    missing_pct: float = 0.05
    phi_zeta: float = 0.3
    seed: int = 0
    intercept: bool = True
    strict: bool = True

    def __post_init__(self):
        if self.case not in CASE_WEIGHTS:
            raise ValidationError(f"case must be 1..5, got {self.case}")
        if self.n < 1:
            raise ValidationError("n must be positive")
        if not (self.snr > 0 and 0 <= self.missing_pct < 1 and self.phi_zeta > 0):
            raise ValidationError("snr and phi_zeta must be positive, missing_pct in [0, 1)")
        if self.strict and (self.snr not in SNR_GRID or self.missing_pct not in MISSING_GRID + (0.0,)):
            raise ValidationError(
                f"snr must be one of {SNR_GRID} and missing_pct one of {MISSING_GRID} "
                "(set strict=False to override)")


def friedman_f0(x):
    """10 sin(pi x1 x2) + 20 (x3 - 0.5)^2 + 10 x4 + 5 x5, row-wise."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != 5:
        raise ValidationError("friedman_f0 takes 5 inputs per row")
    y = (10.0 * np.sin(np.pi * x[:, 0] * x[:, 1]) + 20.0 * (x[:, 2] - 0.5) ** 2
         + 10.0 * x[:, 3] + 5.0 * x[:, 4])
    return float(y[0]) if single else y


def unit_locations(n):
    """1-D simulation sites i/n, i = 1..n, on (0, 1]."""
    return np.arange(1, n + 1, dtype=float) / n


def gen_zeta(n, sigma_zeta_sq, phi_zeta, rng, locations=None, jitter=1e-10):
    """One draw of the stationary term with covariance sigma^2 exp(-phi_zeta |s_i - s_j|).

    The rate multiplies the distance here; it is a generator-side dense draw.
    """
    if n > 5000:
        raise ValidationError("gen_zeta builds a dense n x n kernel; n is capped at 5000")
    s = unit_locations(n) if locations is None else np.asarray(locations, dtype=float).reshape(-1)
    kernel = sigma_zeta_sq * np.exp(-phi_zeta * np.abs(s[:, None] - s[None, :]))
    kernel[np.diag_indices(n)] += jitter * sigma_zeta_sq
    try:
        chol = np.linalg.cholesky(kernel)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("zeta kernel is not positive definite") from exc
    return chol @ rng.standard_normal(n)


def noise_variance(y, snr):
    """sigma_eps^2 that gives the requested signal-to-noise ratio for signal ``y``."""
    return float(np.var(np.asarray(y, dtype=float), ddof=1) / snr)


def n_observed(m, missing_pct):
    return int(math.floor((1.0 - missing_pct) * m + 0.5))


def gen_case(spec, rng=None):
    """Simulate one dataset of the five-case design.

    Draw order: covariates, stationary term (cases 2-5), noise, missing mask.
    The design matrix omits x2 and by default carries an intercept column.
    """
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    n = spec.n
    x = rng.random((n, 5))
    f = friedman_f0(x)
    w_f, w_z = CASE_WEIGHTS[spec.case]
    sigma_zeta_sq = float(np.var(f, ddof=1))
    y = w_f * f
    if w_z > 0:
        y = y + w_z * gen_zeta(n, sigma_zeta_sq, spec.phi_zeta, rng)
    sigma_eps_sq = noise_variance(y, spec.snr)
    eps = rng.normal(0.0, math.sqrt(sigma_eps_sq), n)
    obs = np.sort(rng.choice(n, n_observed(n, spec.missing_pct), replace=False))
    cols = [x[:, 0], x[:, 2], x[:, 3], x[:, 4]]
    if spec.intercept:
        cols.insert(0, np.ones(n))
    meta = {"case": spec.case, "snr": spec.snr, "missing_pct": spec.missing_pct,
            "phi_zeta": spec.phi_zeta, "seed": spec.seed, "sigma_eps_sq": sigma_eps_sq,
            "sigma_zeta_sq": sigma_zeta_sq if w_z > 0 else 0.0}
    return Dataset.build(unit_locations(n), obs, (y + eps)[obs], np.column_stack(cols),
                         truth=y, holdout_idx=np.setdiff1d(np.arange(n), obs), meta=meta)


def sweep_specs(seed=0, n=1000, phi_zeta=0.3):
    """The 60-setting grid (case x SNR x missingness), each with its own derived seed."""
    grid = list(itertools.product(sorted(CASE_WEIGHTS), SNR_GRID, MISSING_GRID))
    children = np.random.SeedSequence(seed).spawn(len(grid))
    return [SimSpec(case=c, n=n, snr=s, missing_pct=mp, phi_zeta=phi_zeta,
                    seed=int(child.generate_state(1, dtype=np.uint32)[0]))
            for (c, s, mp), child in zip(grid, children)]


# ---------------------------------------------------------------- CSV ingestion

@dataclass(frozen=True)
class CsvSchema:
    coords: tuple = ("lon", "lat")
    value: str = "value"
    covariates: tuple = ()
    intercept: bool = True
    holdout: float = 0.0
    seed: int = 0
    grid: str | None = None


def _read_rows(path, columns):
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        missing = [c for c in columns if c not in header]
        if missing:
            raise ValidationError(f"{path}: header lacks column(s) {missing}")
        pos = [header.index(c) for c in columns]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                vals = [float(row[i]) for i in pos]
            except ValueError:
                raise ValidationError(f"{path}: line {lineno}: non-numeric value") from None
            if not all(math.isfinite(v) for v in vals):
                raise ValidationError(f"{path}: line {lineno}: non-finite value")
            rows.append(vals)
    return np.array(rows, dtype=float).reshape(-1, len(columns))


def load_csv(path, schema):
    """Read point data into a Dataset.

    Prediction locations are the data rows followed by the optional grid rows.
    A holdout fraction moves a seeded random subset of data rows out of the
    observed set; their values stay in ``truth`` for scoring.
    """
    coords, cov_cols = list(schema.coords), list(schema.covariates)
    data = _read_rows(path, coords + [schema.value] + cov_cols)
    if len(data) == 0:
        raise ValidationError(f"{path}: no data rows")
    nc = len(coords)
    locs, values, covs = data[:, :nc], data[:, nc], data[:, nc + 1:]
    n = len(values)
    truth = values.copy()
    if schema.grid:
        grid = _read_rows(schema.grid, coords + cov_cols)
        locs = np.vstack([locs, grid[:, :nc]])
        covs = np.vstack([covs, grid[:, nc:]])
        truth = np.concatenate([truth, np.full(len(grid), np.nan)])
    if not 0 <= schema.holdout < 1:
        raise ValidationError("holdout must be in [0, 1)")
    rng = np.random.default_rng(schema.seed)
    n_hold = int(math.floor(schema.holdout * n + 0.5))
    holdout = np.sort(rng.choice(n, n_hold, replace=False)) if n_hold else np.empty(0, dtype=np.int64)
    observed = np.setdiff1d(np.arange(n), holdout)
    X_pred = covs if not schema.intercept else np.hstack([np.ones((len(locs), 1)), covs])
    if X_pred.shape[1] == 0:
        raise ValidationError("no covariates: enable the intercept or name covariate columns")
    meta = {"source": str(path), "holdout": schema.holdout, "seed": schema.seed}
    return Dataset.build(locs, observed, values[observed], X_pred, truth=truth,
                         holdout_idx=holdout, meta=meta)


def synthetic_ozone(n, rng):
    """Irregular lon/lat points with a smooth total-column-ozone-like surface (Dobson units)."""
    lon = rng.uniform(-180.0, 180.0, n)
    lat = np.degrees(np.arcsin(rng.uniform(-1.0, 1.0, n)))
    la, lo = np.radians(lat), np.radians(lon)
    value = (300.0 + 40.0 * np.cos(2 * la) + 25.0 * np.sin(3 * lo) * np.cos(la)
             + 15.0 * np.sin(la) * np.cos(lo) ** 2 + rng.normal(0.0, 5.0, n))
    return {"lon": lon, "lat": lat, "value": value}


def write_columns_csv(path, columns):
    names = list(columns)
    cols = [np.asarray(columns[k]) for k in names]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*cols):
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


# ---------------------------------------------------------------- bundle format

def write_bundle(dataset, outdir):
    """Write locations.csv, x.csv, z.csv, mask.csv, meta (and truth.csv if known)."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    ds = dataset
    write_columns_csv(out / "locations.csv", {f"s{j + 1}": ds.locations[:, j] for j in range(ds.d)})
    write_columns_csv(out / "x.csv", {f"x{j + 1}": ds.X_pred[:, j] for j in range(ds.p)})
    write_columns_csv(out / "z.csv", {"index": ds.observed_idx, "z": ds.Z})
    observed = np.zeros(ds.m, dtype=np.int64)
    observed[ds.observed_idx] = 1
    holdout = np.zeros(ds.m, dtype=np.int64)
    if ds.holdout_idx is not None:
        holdout[ds.holdout_idx] = 1
    write_columns_csv(out / "mask.csv", {"index": np.arange(ds.m), "observed": observed,
                                         "holdout": holdout})
    if ds.truth is not None:
        write_columns_csv(out / "truth.csv", {"index": np.arange(ds.m), "truth": ds.truth})
    meta = {"version": BUNDLE_VERSION, "n": ds.n, "m": ds.m, "p": ds.p, "d": ds.d}
    meta.update(ds.meta)
    with (out / "meta").open("w") as fh:
        for key in sorted(meta):
            val = meta[key]
            fh.write(f"{key}={_fmt(val) if isinstance(val, float) else val}\n")
    return out


def _read_table(path):
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    try:
        arr = np.array(rows, dtype=float).reshape(len(rows), len(header))
    except ValueError as exc:
        raise ValidationError(f"{path}: malformed table: {exc}") from None
    return header, arr


def read_meta(path):
    meta = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            key, _, val = line.partition("=")
            meta[key.strip()] = _parse_scalar(val.strip())
    return meta


def _parse_scalar(text):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def read_bundle(bundledir):
    root = Path(bundledir)
    if not (root / "meta").is_file():
        raise ValidationError(f"{root} is not a dataset bundle (no meta file)")
    meta = read_meta(root / "meta")
    _, locs = _read_table(root / "locations.csv")
    _, X_pred = _read_table(root / "x.csv")
    _, z = _read_table(root / "z.csv")
    _, mask = _read_table(root / "mask.csv")
    truth = None
    if (root / "truth.csv").is_file():
        truth = _read_table(root / "truth.csv")[1][:, 1]
    holdout = np.flatnonzero(mask[:, 2] > 0)
    for key in ("version", "n", "m", "p", "d"):
        meta.pop(key, None)
    return Dataset.build(locs, z[:, 0].astype(np.int64), z[:, 1], X_pred, truth=truth,
                         holdout_idx=holdout, meta=meta)
