"""Matrix-free simulation of the nonstationary field by cosine superposition.

One field realization is

    nu_tilde(s) = sigma_nu * sqrt(2 / K) * sum_i cos(f(s)' w1_i + s' w2_i + kappa_i)

with a single set of ``K`` frequency/phase pairs shared by every location.
Frequency coordinates are independent Cauchy(0, 1/phi) draws, which pairs the
sum with the exponential covariogram. The work is O(K n) and memory is bounded
by a fixed block of ``max_entries`` phase values, whatever the number of points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .covariance import as_points, warp
from .exceptions import ValidationError

DEFAULT_K = 2000
# phase values held at once by simulate_field (rows x K)
DEFAULT_MAX_ENTRIES = 2 ** 16

_TWO53 = float(2 ** 53)


@dataclass(frozen=True)
class SpectralDraw:
    """Frequencies and phases of one field realization.

    ``omegas`` is ``K x 2d``; its first ``d`` columns multiply the warp ``f(s)``
    and the last ``d`` multiply the location ``s``.
    """

    omegas: np.ndarray
    kappas: np.ndarray

    def __post_init__(self):
        om = np.asarray(self.omegas, dtype=float)
        ka = np.asarray(self.kappas, dtype=float).reshape(-1)
        if om.ndim != 2 or om.shape[0] < 1 or om.shape[1] not in (2, 4):
            raise ValidationError(f"omegas must be K x 2d with d in {{1, 2}}, got {om.shape}")
        if ka.shape[0] != om.shape[0]:
            raise ValidationError("need one phase per frequency vector")
        if np.any(np.abs(ka) >= np.pi):
            raise ValidationError("phases must lie strictly inside (-pi, pi)")
        object.__setattr__(self, "omegas", om)
        object.__setattr__(self, "kappas", ka)

    @property
    def K(self):
        return self.omegas.shape[0]

    @property
    def d(self):
        return self.omegas.shape[1] // 2


def open_uniform(rng, size):
    """Uniform draws on the open interval (0, 1), 53-bit resolution."""
    return (rng.integers(0, 2 ** 53, size=size, dtype=np.int64) + 0.5) / _TWO53


def cauchy_quantile(u, phi=1.0):
    """Inverse CDF of Cauchy(0, 1/phi)."""
    return np.tan(np.pi * (np.asarray(u, dtype=float) - 0.5)) / phi


def cauchy_cdf(x, phi=1.0):
    return 0.5 + np.arctan(phi * np.asarray(x, dtype=float)) / np.pi


def draw_spectral(K, d, phi, rng):
    if not isinstance(K, (int, np.integer)) or K < 1:
        raise ValidationError(f"K must be a positive integer, got {K!r}")
    if d not in (1, 2):
        raise ValidationError(f"d must be 1 or 2, got {d!r}")
    if not phi > 0:
        raise ValidationError(f"phi must be positive, got {phi}")
    omegas = cauchy_quantile(open_uniform(rng, (int(K), 2 * d)), phi)
    kappas = np.pi * (2.0 * open_uniform(rng, int(K)) - 1.0)
    return SpectralDraw(omegas, kappas)


def simulate_field(draw, points, emap, sigma_nu, max_entries=DEFAULT_MAX_ENTRIES, warped=None):
    """Evaluate one realization at every point.

    ``warped`` may carry precomputed ``f(points)`` to skip the basis evaluation.
    The result for a given draw does not depend on ``max_entries``.
    """
    d = draw.d
    pts = as_points(points, d)
    if emap is not None and emap.d != d:
        raise ValidationError("expansion map and spectral draw disagree on d")
    if sigma_nu < 0:
        raise ValidationError("sigma_nu must be nonnegative")
    n, K = len(pts), draw.K
    out = np.zeros(n)
    if sigma_nu == 0 or n == 0:
        return out
    if warped is None:
        warped = None if emap is None or emap.is_identity else warp(pts, emap)
    elif not np.any(warped):
        warped = None
    om = draw.omegas
    # (coordinate column, frequency column) pairs, f(s) terms first
    terms = ([(warped, j) for j in range(d)] if warped is not None else []) + [(pts, d + j) for j in range(d)]
    rows = max(1, int(max_entries) // K)
    phase = np.empty((min(rows, n), K))
    tmp = np.empty_like(phase)
    for start in range(0, n, rows):
        stop = min(start + rows, n)
        ph = phase[:stop - start]
        tm = tmp[:stop - start]
        # fixed accumulation order keeps each row independent of the blocking
        src, col = terms[0]
        np.multiply(src[start:stop, col % d, None], om[None, :, col], out=ph)
        ph += draw.kappas
        for src, col in terms[1:]:
            np.multiply(src[start:stop, col % d, None], om[None, :, col], out=tm)
            ph += tm
        np.cos(ph, out=ph)
        out[start:stop] = ph.sum(axis=1)
    out *= sigma_nu * np.sqrt(2.0 / K)
    return out


def exponential_covariogram(h, phi=1.0, sigma_sq=1.0):
    return sigma_sq * np.exp(-np.abs(np.asarray(h, dtype=float)) / phi)


@dataclass
class Covariogram:
    lo: np.ndarray
    hi: np.ndarray
    cov: np.ndarray
    count: np.ndarray
    stderr: np.ndarray

    @property
    def empty(self):
        return self.count == 0


def empirical_covariogram(fields, points, lag_bins, emap=None):
    """Method-of-moments covariance per distance bin from replicate fields.

    ``fields`` is ``R x n`` (one replicate per row, R >= 2). ``lag_bins`` is a
    sequence of closed ``(lo, hi)`` intervals; distance is the expanded distance
    when ``emap`` is given, Euclidean otherwise. Each point pair (including
    ``i == j``) contributes its sample covariance across replicates, divisor
    ``R - 1``. Empty bins get ``nan`` and count 0.
    """
    F = np.asarray(fields, dtype=float)
    if F.ndim != 2 or F.shape[0] < 2:
        raise ValidationError("need a replicates x points array with at least 2 replicates")
    pts = as_points(points)
    if pts.shape[0] != F.shape[1]:
        raise ValidationError("fields and points disagree on the number of points")
    coords = pts if emap is None else np.hstack([pts, warp(pts, emap)])
    iu, ju = np.triu_indices(len(pts))
    dist = np.sqrt(np.sum((coords[iu] - coords[ju]) ** 2, axis=1))
    centered = F - F.mean(axis=0)
    pair_cov = (centered.T @ centered)[iu, ju] / (F.shape[0] - 1)
    bins = np.asarray(lag_bins, dtype=float).reshape(-1, 2)
    nb = len(bins)
    est, cnt, se = np.full(nb, np.nan), np.zeros(nb, dtype=int), np.full(nb, np.nan)
    for b, (lo, hi) in enumerate(bins):
        sel = (dist >= lo) & (dist <= hi)
        cnt[b] = int(sel.sum())
        if cnt[b]:
            vals = pair_cov[sel]
            est[b] = vals.mean()
            se[b] = vals.std(ddof=1) / np.sqrt(cnt[b]) if cnt[b] > 1 else np.nan
    return Covariogram(bins[:, 0], bins[:, 1], est, cnt, se)


@dataclass
class SpectralCheck:
    lags: np.ndarray
    empirical: np.ndarray
    analytic: np.ndarray
    count: np.ndarray
    mean: float
    ks_stat: float
    ks_pvalue: float

    @property
    def max_abs_error(self):
        return float(np.max(np.abs(self.empirical - self.analytic)))


def check_points(lags, base_points, spacing):
    """Base points ``j * spacing`` plus each positive lag offset, 1-D."""
    lags = np.asarray(lags, dtype=float)
    base = spacing * np.arange(base_points)
    offsets = np.unique(np.concatenate([[0.0], lags[lags > 0]]))
    return (base[:, None] + offsets[None, :]).reshape(-1)


def spectral_check(K, replicates, phi, sigma_nu, lags, rng, base_points=20, spacing=3.0,
                   max_entries=2 ** 18):
    """Monte Carlo comparison of the d=1, zero-warp field against exp(-|h|/phi).

    Every replicate uses a fresh draw. Covariances are pooled over all point
    pairs at each lag; the marginal at the first point is tested for normality
    (Kolmogorov-Smirnov against N(0, sigma_nu^2)).
    """
    pts = check_points(lags, base_points, spacing)
    fields = np.empty((int(replicates), len(pts)))
    for rep in range(int(replicates)):
        draw = draw_spectral(int(K), 1, phi, rng)
        fields[rep] = simulate_field(draw, pts, None, sigma_nu, max_entries=max_entries)
    lags = np.asarray(lags, dtype=float)
    tol = 1e-9 * max(1.0, spacing * base_points)
    cg = empirical_covariogram(fields, pts, [(h - tol, h + tol) for h in lags])
    if sigma_nu > 0:
        ks = stats.kstest(fields[:, 0] / sigma_nu, "norm")
        ks_stat, ks_p = float(ks.statistic), float(ks.pvalue)
    else:
        ks_stat, ks_p = 0.0, 1.0
    return SpectralCheck(lags, cg.cov, exponential_covariogram(lags, phi, sigma_nu ** 2),
                         cg.count, float(fields.mean()), ks_stat, ks_p)
