"""Collapsed Gibbs sampler for the dimension-expanded spectral model.

Per iteration, in this order:

 1. beta | rest                       (p-dim Gaussian, dense p x p solve)
 2. nu_tilde from its prior           (fresh spectral draw, matrix free)
 3. nu | beta, nu_tilde               (elementwise Gaussian, O(m))
 4. eta                               (random-walk Metropolis, draw held fixed)
 5. sigma_nu^2                        (inverse gamma on an m_sub subsample)
 6. sigma_beta^2, 7. sigma_eta^2      (inverse gamma)
 8. phi                               (griddy Gibbs on [L, U], same subsample)
 9. delta^2, 10. sigma_eps^2          (inverse gamma)

Only the ``m_sub x m_sub`` correlation matrix of the subsample is ever formed.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.spatial import ConvexHull
from scipy.spatial.distance import pdist

from .covariance import (DEFAULT_JITTER, ExpansionMap, correlation_from_distance,
                         expanded_distance_matrix, warp)
from .exceptions import NumericalError, SamplerError, ValidationError
from .spectral import draw_spectral, simulate_field

VARIANCES = ("sigma_nu_sq", "sigma_beta_sq", "sigma_eta_sq", "delta_sq", "sigma_eps_sq")
SCALARS = VARIANCES + ("phi",)
FIXABLE = SCALARS + ("eta",)
CHECKPOINT_VERSION = 1
# n_eff used in the sigma_nu^2 shape: subsample length, or number of observations
SIGMA_NU_COUNTS = ("subsample", "observations")


@dataclass
class Hyperparams:
    """Priors and run controls.

    ``prior_shape[k]`` / ``prior_scale[k]`` are the inverse-gamma parameters of
    ``VARIANCES[k]``. ``fixed`` maps names in ``FIXABLE`` to values that are
    held constant (and never updated) throughout the chain.
    """

    prior_shape: tuple = (0.01,) * 5
    prior_scale: tuple = (0.01,) * 5
    phi_lower: float = 1.0
    phi_upper: float | None = None
    K: int = 2000
    m_sub: int = 500
    mh_step: float = 0.05
    adapt: bool = True
    adapt_every: int = 50
    grid_size: int = 50
    B: int = 5000
    burn_in: int = 1000
    thin: int = 1
    seed: int = 0
    keep_nu: bool = False
    sigma_nu_count: str = "observations"
    fixed: dict = field(default_factory=dict)

    def validate(self):
        if len(self.prior_shape) != 5 or len(self.prior_scale) != 5:
            raise ValidationError("need five inverse-gamma shapes and scales")
        if min(self.prior_shape) <= 0 or min(self.prior_scale) <= 0:
            raise ValidationError("inverse-gamma shapes and scales must be positive")
        if self.phi_lower < 1:
            raise ValidationError("phi_lower must be >= 1")
        if self.phi_upper is not None and self.phi_upper <= self.phi_lower:
            raise ValidationError("phi_upper must exceed phi_lower")
        for name in ("K", "grid_size", "B", "thin", "adapt_every"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.m_sub < 0 or self.mh_step <= 0:
            raise ValidationError("m_sub must be >= 0 and mh_step > 0")
        if not 0 <= self.burn_in <= self.B:
            raise ValidationError("burn_in must lie in [0, B]")
        if self.sigma_nu_count not in SIGMA_NU_COUNTS:
            raise ValidationError(f"sigma_nu_count must be one of {SIGMA_NU_COUNTS}")
        unknown = set(self.fixed) - set(FIXABLE)
        if unknown:
            raise ValidationError(f"cannot fix unknown parameter(s) {sorted(unknown)}")
        return self

    def to_dict(self):
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["prior_shape"] = list(self.prior_shape)
        out["prior_scale"] = list(self.prior_scale)
        out["fixed"] = {k: (np.asarray(v).tolist() if k == "eta" else float(v))
                        for k, v in sorted(self.fixed.items())}
        return out

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["prior_shape"] = tuple(d["prior_shape"])
        d["prior_scale"] = tuple(d["prior_scale"])
        return cls(**d)


def default_phi_upper(locations, phi_lower=1.0):
    """Largest pairwise distance between locations, floored at ``2 * phi_lower``."""
    pts = np.asarray(locations, dtype=float)
    if len(pts) < 2:
        span = 0.0
    elif pts.shape[1] == 1:
        span = float(np.ptp(pts))
    else:
        try:
            hull = pts[ConvexHull(pts).vertices]
        except Exception:  # degenerate (collinear) point sets
            hull = pts[[pts[:, 0].argmin(), pts[:, 0].argmax(), pts[:, 1].argmin(), pts[:, 1].argmax()]]
        span = float(pdist(hull).max())
    return max(span, 2.0 * phi_lower)


@dataclass
class ModelState:
    beta: np.ndarray
    nu: np.ndarray
    nu_tilde: np.ndarray
    eta: np.ndarray
    sigma_nu_sq: float
    sigma_beta_sq: float
    sigma_eta_sq: float
    delta_sq: float
    sigma_eps_sq: float
    phi: float

    def copy(self):
        return replace(self, beta=self.beta.copy(), nu=self.nu.copy(),
                       nu_tilde=self.nu_tilde.copy(), eta=self.eta.copy())

    def to_dict(self):
        return {f.name: (getattr(self, f.name).tolist() if isinstance(getattr(self, f.name), np.ndarray)
                         else float(getattr(self, f.name))) for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        kw = {}
        for f in fields(cls):
            v = d[f.name]
            kw[f.name] = np.asarray(v, dtype=float) if isinstance(v, list) else float(v)
        return cls(**kw)


def _prior_mean(shape, scale):
    return scale / (shape - 1.0) if shape > 1 else 1.0


def initial_state(data, hyper, basis):
    """Start in the stationary submodel: ridge beta, nu = 0, eta = 0, phi mid-range."""
    st = {name: _prior_mean(a, b) for name, a, b in zip(VARIANCES, hyper.prior_shape, hyper.prior_scale)}
    for name in VARIANCES:
        if name in hyper.fixed:
            st[name] = float(hyper.fixed[name])
    p = data.p
    ridge = data.X.T @ data.X + np.eye(p) / st["sigma_beta_sq"]
    beta = linalg.solve(ridge, data.X.T @ data.Z, assume_a="pos")
    upper = hyper.phi_upper
    phi = float(hyper.fixed.get("phi", 0.5 * (hyper.phi_lower + upper)))
    eta = np.asarray(hyper.fixed.get("eta", np.zeros(basis.r)), dtype=float).reshape(-1)
    if eta.size != basis.r:
        raise ValidationError(f"fixed eta has length {eta.size}, basis needs {basis.r}")
    return ModelState(beta=beta, nu=np.zeros(data.m), nu_tilde=np.zeros(data.m), eta=eta, phi=phi, **st)


# ------------------------------------------------------------------ full conditionals

def ig_update(alpha, beta, n_eff, quad, rng):
    """One draw from IG(alpha + n_eff/2, beta + quad/2)."""
    if quad < 0:
        raise ValidationError(f"quadratic form must be nonnegative, got {quad}")
    shape = alpha + 0.5 * n_eff
    scale = beta + 0.5 * quad
    if not (shape > 0 and scale > 0):
        raise NumericalError(f"inverse gamma with shape {shape}, scale {scale}")
    g = rng.gamma(shape)
    if g == 0.0:
        raise NumericalError(f"inverse gamma draw overflowed (shape {shape})")
    return scale / g


def beta_conditional(state, data, xtx=None):
    """Mean and precision of beta's full conditional."""
    xtx = data.X.T @ data.X if xtx is None else xtx
    prec = xtx / state.sigma_eps_sq + np.eye(data.p) / state.sigma_beta_sq
    rhs = data.X.T @ (data.Z - state.nu[data.observed_idx]) / state.sigma_eps_sq
    try:
        chol = linalg.cholesky(prec, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError("beta precision matrix is singular") from exc
    mean = linalg.cho_solve((chol, True), rhs)
    return mean, prec, chol


def sample_beta(state, data, rng, xtx=None):
    mean, _, chol = beta_conditional(state, data, xtx)
    return mean + linalg.solve_triangular(chol.T, rng.standard_normal(data.p), lower=False)


def nu_conditional(state, data, nu_tilde):
    """Elementwise mean and variance of nu's full conditional (diagonal covariance)."""
    mean = np.array(nu_tilde, dtype=float)
    var = np.full(data.m, state.delta_sq)
    obs = data.observed_idx
    v = 1.0 / (1.0 / state.delta_sq + 1.0 / state.sigma_eps_sq)
    resid = data.Z - data.X @ state.beta
    mean[obs] = v * (resid / state.sigma_eps_sq + mean[obs] / state.delta_sq)
    var[obs] = v
    return mean, var


def sample_nu(state, data, nu_tilde, rng):
    mean, var = nu_conditional(state, data, nu_tilde)
    z = rng.standard_normal(data.m)
    z *= np.sqrt(var)
    z += mean
    return z


def eta_log_target(eta, nu, nu_tilde, sigma_eta_sq, delta_sq):
    """Unnormalized log full conditional of eta (nu_tilde evaluated at this eta)."""
    diff = nu - nu_tilde
    return -float(eta @ eta) / (2.0 * sigma_eta_sq) - float(diff @ diff) / (2.0 * delta_sq)


def sample_eta_mh(state, data, current_draw, rng, basis, step, nu_tilde=None, warped=None):
    """One random-walk Metropolis step for eta with the iteration's draw held fixed.

    Returns ``(eta, accepted, nu_tilde, warped)`` where the last two are the
    field and warp at the returned eta.
    """
    sigma_nu = math.sqrt(state.sigma_nu_sq)
    locs = data.locations
    if warped is None:
        warped = warp(locs, ExpansionMap(basis, state.eta))
    if nu_tilde is None:
        nu_tilde = simulate_field(current_draw, locs, None, sigma_nu, warped=warped)
    prop = state.eta + step * rng.standard_normal(state.eta.size)
    warped_prop = warp(locs, ExpansionMap(basis, prop))
    nt_prop = simulate_field(current_draw, locs, None, sigma_nu, warped=warped_prop)
    log_ratio = (eta_log_target(prop, state.nu, nt_prop, state.sigma_eta_sq, state.delta_sq)
                 - eta_log_target(state.eta, state.nu, nu_tilde, state.sigma_eta_sq, state.delta_sq))
    u = rng.random()
    if u == 0.0 or math.log(u) < log_ratio:
        return prop, True, nt_prop, warped_prop
    return state.eta, False, nu_tilde, warped


def _correlation_cholesky(dist, phi):
    corr = correlation_from_distance(dist, phi, DEFAULT_JITTER)
    try:
        return linalg.cholesky(corr, lower=True, overwrite_a=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NumericalError("subsample correlation matrix is not positive definite") from exc


def subsample_quad(nu_m, dist, phi):
    """nu_m' R^{-1} nu_m and log|R| for the subsample correlation matrix."""
    if nu_m.size == 0:
        return 0.0, 0.0
    chol = _correlation_cholesky(dist, phi)
    w = linalg.solve_triangular(chol, nu_m, lower=True, check_finite=False)
    return float(w @ w), 2.0 * float(np.sum(np.log(np.diag(chol))))


def sample_sigma_nu2(state, nu_m, dist, rng, alpha, beta, n_eff=None):
    """Inverse-gamma update with the subsample quadratic form; sigma_nu^2 factored out of C.

    ``n_eff`` defaults to the subsample length.
    """
    quad, _ = subsample_quad(nu_m, dist, state.phi)
    return ig_update(alpha, beta, nu_m.size if n_eff is None else n_eff, quad, rng)


def phi_grid(lower, upper, G):
    edges = np.linspace(lower, upper, int(G) + 1)
    return edges, 0.5 * (edges[:-1] + edges[1:])


def phi_log_density(nu_m, dist, phi, sigma_nu_sq):
    """log N(nu_m; 0, sigma_nu^2 R(phi)) up to the 2*pi constant."""
    if nu_m.size == 0:
        return 0.0
    try:
        quad, logdet = subsample_quad(nu_m, dist, phi)
    except NumericalError:
        return -np.inf
    return -0.5 * (nu_m.size * math.log(sigma_nu_sq) + logdet + quad / sigma_nu_sq)


def phi_grid_posterior(nu_m, dist, sigma_nu_sq, lower, upper, G):
    edges, mids = phi_grid(lower, upper, G)
    logp = np.array([phi_log_density(nu_m, dist, ph, sigma_nu_sq) for ph in mids])
    if not np.any(np.isfinite(logp)):
        raise NumericalError("phi grid log-density is -inf everywhere")
    w = np.exp(logp - logp[np.isfinite(logp)].max())
    return edges, mids, w / w.sum()


def sample_phi(state, nu_m, dist, rng, lower, upper, G=50):
    """Griddy-Gibbs draw of phi; returns ``(phi, grid_probabilities)``."""
    edges, mids, probs = phi_grid_posterior(nu_m, dist, state.sigma_nu_sq, lower, upper, G)
    if len(mids) == 1:
        return float(mids[0]), probs
    cell = int(np.searchsorted(np.cumsum(probs), rng.random() * probs.sum(), side="right"))
    cell = min(cell, len(mids) - 1)
    return float(edges[cell] + (edges[cell + 1] - edges[cell]) * rng.random()), probs


def sample_sigma_beta2(state, rng, alpha, beta):
    return ig_update(alpha, beta, state.beta.size, float(state.beta @ state.beta), rng)


def sample_sigma_eta2(state, rng, alpha, beta):
    return ig_update(alpha, beta, state.eta.size, float(state.eta @ state.eta), rng)


def sample_delta2(state, rng, alpha, beta, nu_tilde=None):
    diff = state.nu - (state.nu_tilde if nu_tilde is None else nu_tilde)
    return ig_update(alpha, beta, diff.size, float(diff @ diff), rng)


def sample_sigma_eps2(state, data, rng, alpha, beta):
    resid = data.Z - data.X @ state.beta - state.nu[data.observed_idx]
    return ig_update(alpha, beta, resid.size, float(resid @ resid), rng)


# ------------------------------------------------------------------ chain driver

@dataclass
class ChainOutput:
    """Retained draws plus everything needed to resume the chain bit-for-bit."""

    hyper: Hyperparams
    state: ModelState
    rng_state: dict
    subsample_idx: np.ndarray
    iteration: int = 1
    mh_step: float = 0.05
    counts: dict = field(default_factory=lambda: dict.fromkeys(
        ("attempts", "accepts", "burn_attempts", "burn_accepts", "window_attempts", "window_accepts"), 0))
    kept_iterations: list = field(default_factory=list)
    draws: dict = field(default_factory=lambda: {k: [] for k in ("beta", "eta") + SCALARS})
    nu_draws: list | None = None
    y_mean: np.ndarray | None = None
    y_m2: np.ndarray | None = None
    phi_log: list = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def n_kept(self):
        return len(self.kept_iterations)

    @property
    def acceptance_rate(self):
        """Post-burn-in eta acceptance rate (overall rate if nothing ran after burn-in)."""
        c = self.counts
        post = c["attempts"] - c["burn_attempts"]
        if post > 0:
            return (c["accepts"] - c["burn_accepts"]) / post
        return c["accepts"] / c["attempts"] if c["attempts"] else 0.0

    def samples(self, name):
        if name == "nu":
            if self.nu_draws is None:
                raise ValidationError("nu draws were not kept (set keep_nu)")
            return np.array(self.nu_draws).reshape(self.n_kept, -1)
        vals = self.draws[name]
        if name in ("beta", "eta"):
            return np.array(vals, dtype=float).reshape(self.n_kept, -1)
        return np.array(vals, dtype=float)

    def sample_table(self):
        """Column name -> 1-D array of retained draws, in a fixed column order."""
        cols = {"iteration": np.array(self.kept_iterations, dtype=np.int64)}
        for name in ("beta", "eta"):
            arr = self.samples(name)
            for j in range(arr.shape[1]):
                cols[f"{name}_{j + 1}"] = arr[:, j]
        for name in SCALARS:
            cols[name] = self.samples(name)
        return cols


def _retain(b, hyper):
    return b > hyper.burn_in and (b - hyper.burn_in) % hyper.thin == 0


def _record(chain, b, data):
    st = chain.state
    chain.kept_iterations.append(b)
    chain.draws["beta"].append(st.beta.copy())
    chain.draws["eta"].append(st.eta.copy())
    for name in SCALARS:
        chain.draws[name].append(float(getattr(st, name)))
    if chain.nu_draws is not None:
        chain.nu_draws.append(st.nu.copy())
    # Welford running moments of Y = X beta + nu at every prediction location
    y = data.X_pred @ st.beta
    y += st.nu
    k = chain.n_kept
    delta = y - chain.y_mean
    chain.y_mean += delta / k
    y -= chain.y_mean
    y *= delta
    chain.y_m2 += y


def start_chain(data, hyper, basis, rng=None):
    """Initial ChainOutput (iteration 1 = initial state, retained if burn_in == 0)."""
    hyper = replace(hyper, phi_upper=hyper.phi_upper or default_phi_upper(data.locations, hyper.phi_lower))
    hyper.validate()
    if basis.d != data.d:
        raise ValidationError(f"basis is {basis.d}-D but the data are {data.d}-D")
    rng = np.random.default_rng(hyper.seed) if rng is None else rng
    m_sub = min(int(hyper.m_sub), data.m)
    sub = np.sort(rng.choice(data.m, m_sub, replace=False)) if m_sub else np.empty(0, dtype=np.int64)
    chain = ChainOutput(hyper=hyper, state=initial_state(data, hyper, basis), rng_state={},
                        subsample_idx=sub, mh_step=float(hyper.mh_step),
                        nu_draws=[] if hyper.keep_nu else None,
                        y_mean=np.zeros(data.m), y_m2=np.zeros(data.m))
    if _retain(1, hyper):
        _record(chain, 1, data)
    chain.rng_state = rng.bit_generator.state
    return chain


def _step(label, b, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except (NumericalError, ValidationError, linalg.LinAlgError, FloatingPointError) as exc:
        raise SamplerError(b, label, exc) from exc


def run_chain(data, hyper, basis, rng=None, resume=None, progress=None):
    """Run (or continue) the collapsed Gibbs sampler up to ``hyper.B`` iterations.

    With ``resume`` the chain continues from the checkpointed iteration and rng
    state; the result is identical to an uninterrupted run of the same length.
    """
    t0 = time.perf_counter()
    if resume is None:
        chain = start_chain(data, hyper, basis, rng)
    else:
        chain = resume
        _check_resumable(chain.hyper, hyper)
        chain.hyper = replace(chain.hyper, B=hyper.B)
    hyper = chain.hyper
    rng = np.random.default_rng()
    rng.bit_generator.state = chain.rng_state
    fixed = hyper.fixed
    a, s = hyper.prior_shape, hyper.prior_scale
    xtx = data.X.T @ data.X
    sub = chain.subsample_idx
    sub_pts = data.locations[sub]
    st = chain.state
    c = chain.counts
    warped = None
    d = data.d
    nu_count = sub.size if hyper.sigma_nu_count == "subsample" else data.n
    for b in range(chain.iteration + 1, hyper.B + 1):
        # 1. regression coefficients
        st.beta = _step("beta", b, sample_beta, st, data, rng, xtx)
        # 2. fresh prior draw of the expanded-dimension field
        draw = _step("spectral", b, draw_spectral, int(hyper.K), d, st.phi, rng)
        sigma_nu = math.sqrt(st.sigma_nu_sq)
        if warped is None:
            warped = warp(data.locations, ExpansionMap(basis, st.eta))
        st.nu_tilde = simulate_field(draw, data.locations, None, sigma_nu, warped=warped)
        # 3. latent field
        st.nu = _step("nu", b, sample_nu, st, data, st.nu_tilde, rng)
        # 4. warp coefficients, same draw
        if "eta" not in fixed:
            eta, acc, st.nu_tilde, warped = _step(
                "eta", b, sample_eta_mh, st, data, draw, rng, basis, chain.mh_step,
                nu_tilde=st.nu_tilde, warped=warped)
            st.eta = eta
            c["attempts"] += 1
            c["accepts"] += int(acc)
            if b <= hyper.burn_in:
                c["burn_attempts"] += 1
                c["burn_accepts"] += int(acc)
                c["window_attempts"] += 1
                c["window_accepts"] += int(acc)
                if hyper.adapt and c["window_attempts"] >= hyper.adapt_every:
                    rate = c["window_accepts"] / c["window_attempts"]
                    if rate < 0.2:
                        chain.mh_step *= 0.7
                    elif rate > 0.4:
                        chain.mh_step *= 1.3
                    c["window_attempts"] = c["window_accepts"] = 0
        nu_m = st.nu[sub]
        dist = None
        if sub.size and not ("sigma_nu_sq" in fixed and "phi" in fixed):
            dist = _step("subsample", b, expanded_distance_matrix, sub_pts, ExpansionMap(basis, st.eta),
                         cap=max(sub.size, 1))
        # 5-7. variances
        if "sigma_nu_sq" not in fixed:
            st.sigma_nu_sq = _step("sigma_nu_sq", b, sample_sigma_nu2, st, nu_m, dist, rng, a[0], s[0],
                                    nu_count)
        if "sigma_beta_sq" not in fixed:
            st.sigma_beta_sq = _step("sigma_beta_sq", b, sample_sigma_beta2, st, rng, a[1], s[1])
        if "sigma_eta_sq" not in fixed:
            st.sigma_eta_sq = _step("sigma_eta_sq", b, sample_sigma_eta2, st, rng, a[2], s[2])
        # 8. range
        if "phi" not in fixed:
            st.phi, probs = _step("phi", b, sample_phi, st, nu_m, dist, rng,
                                  hyper.phi_lower, hyper.phi_upper, hyper.grid_size)
            chain.phi_log.append(probs)
        # 9-10. nugget and noise
        if "delta_sq" not in fixed:
            st.delta_sq = _step("delta_sq", b, sample_delta2, st, rng, a[3], s[3])
        if "sigma_eps_sq" not in fixed:
            st.sigma_eps_sq = _step("sigma_eps_sq", b, sample_sigma_eps2, st, data, rng, a[4], s[4])
        chain.iteration = b
        if _retain(b, hyper):
            _record(chain, b, data)
        if progress is not None:
            progress(b, chain)
    chain.rng_state = rng.bit_generator.state
    chain.elapsed += time.perf_counter() - t0
    return chain


_RESUME_MAY_DIFFER = ("B",)


def _check_resumable(old, new):
    for f in fields(Hyperparams):
        if f.name in _RESUME_MAY_DIFFER:
            continue
        ov, nv = getattr(old, f.name), getattr(new, f.name)
        if f.name == "phi_upper" and nv is None:
            continue
        if f.name == "fixed":
            ov, nv = Hyperparams(fixed=ov).to_dict()["fixed"], Hyperparams(fixed=nv).to_dict()["fixed"]
        elif isinstance(ov, tuple):
            ov, nv = list(ov), list(nv)
        if ov != nv:
            raise ValidationError(f"cannot resume: setting {f.name!r} changed ({ov!r} -> {nv!r})")
    if new.B < old.B:
        raise ValidationError("cannot resume to fewer iterations than already run")


# ------------------------------------------------------------------ posterior summaries

def predict_posterior(chain, data=None):
    """Posterior mean and variance (divisor N-1) of Y = X beta + nu at every location.

    Uses the stored nu draws when present, otherwise the running moments
    accumulated during the chain.
    """
    if chain.n_kept == 0:
        raise ValidationError("chain has no retained samples")
    if chain.nu_draws is not None and data is not None:
        y = chain.samples("beta") @ data.X_pred.T + chain.samples("nu")
        mean = y.mean(axis=0)
        var = y.var(axis=0, ddof=1) if chain.n_kept > 1 else np.zeros_like(mean)
        return mean, var
    n = chain.n_kept
    var = chain.y_m2 / (n - 1) if n > 1 else np.zeros_like(chain.y_mean)
    return chain.y_mean.copy(), var


# ------------------------------------------------------------------ checkpoint / samples I/O

def chain_to_dict(chain):
    return {
        "version": CHECKPOINT_VERSION,
        "hyper": chain.hyper.to_dict(),
        "state": chain.state.to_dict(),
        "rng_state": chain.rng_state,
        "subsample_idx": chain.subsample_idx.tolist(),
        "iteration": chain.iteration,
        "mh_step": chain.mh_step,
        "counts": dict(chain.counts),
        "kept_iterations": list(chain.kept_iterations),
        "draws": {k: [v.tolist() if isinstance(v, np.ndarray) else v for v in vals]
                  for k, vals in chain.draws.items()},
        "nu_draws": None if chain.nu_draws is None else [v.tolist() for v in chain.nu_draws],
        "y_mean": chain.y_mean.tolist(),
        "y_m2": chain.y_m2.tolist(),
        "phi_log": [np.asarray(p).tolist() for p in chain.phi_log],
    }


def chain_from_dict(d):
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {d.get('version')!r}")
    draws = {k: [np.asarray(v, dtype=float) if isinstance(v, list) else float(v) for v in vals]
             for k, vals in d["draws"].items()}
    return ChainOutput(
        hyper=Hyperparams.from_dict(d["hyper"]),
        state=ModelState.from_dict(d["state"]),
        rng_state=d["rng_state"],
        subsample_idx=np.asarray(d["subsample_idx"], dtype=np.int64),
        iteration=int(d["iteration"]),
        mh_step=float(d["mh_step"]),
        counts={k: int(v) for k, v in d["counts"].items()},
        kept_iterations=[int(i) for i in d["kept_iterations"]],
        draws=draws,
        nu_draws=None if d["nu_draws"] is None else [np.asarray(v, dtype=float) for v in d["nu_draws"]],
        y_mean=np.asarray(d["y_mean"], dtype=float),
        y_m2=np.asarray(d["y_m2"], dtype=float),
        phi_log=[np.asarray(p, dtype=float) for p in d["phi_log"]],
    )


def save_checkpoint(chain, path):
    Path(path).write_text(json.dumps(chain_to_dict(chain), sort_keys=True) + "\n")


def load_checkpoint(path):
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no checkpoint at {path}")
    return chain_from_dict(json.loads(path.read_text()))


def write_samples_csv(chain, path):
    cols = chain.sample_table()
    names = list(cols)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(chain.n_kept):
            w.writerow([str(int(cols[k][i])) if k == "iteration" else repr(float(cols[k][i]))
                        for k in names])
