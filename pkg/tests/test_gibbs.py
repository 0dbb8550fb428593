import math

import numpy as np
import pytest
from scipy import stats

from conftest import linear_dataset
from esd import gibbs
from esd.covariance import BasisSet, make_basis
from esd.evaluation import ess
from esd.exceptions import NumericalError, SamplerError, ValidationError
from esd.gibbs import (ChainOutput, Hyperparams, ModelState, beta_conditional, chain_from_dict,
                       chain_to_dict, default_phi_upper, ig_update, load_checkpoint, nu_conditional,
                       phi_grid, predict_posterior, run_chain, sample_beta, sample_delta2,
                       sample_eta_mh, sample_nu, sample_phi, sample_sigma_beta2, sample_sigma_eps2,
                       sample_sigma_eta2, sample_sigma_nu2, save_checkpoint, write_samples_csv)
from esd.simdata import Dataset
from esd.spectral import draw_spectral


def state_for(data, r=2, **kw):
    base = dict(beta=np.zeros(data.p), nu=np.zeros(data.m), nu_tilde=np.zeros(data.m), eta=np.zeros(r),
                sigma_nu_sq=1.0, sigma_beta_sq=1.0, sigma_eta_sq=1.0, delta_sq=1.0, sigma_eps_sq=1.0,
                phi=2.0)
    base.update(kw)
    return ModelState(**base)


def scalar_data(z, x=1.0, missing=0):
    m = len(z) + missing
    X = np.full((m, 1), x)
    return Dataset.build(np.arange(m, dtype=float), np.arange(len(z)), z, X)


def ig_mean(shape, scale):
    return scale / (shape - 1)


# ---------------------------------------------------------------- ig_update

def test_ig_no_data_is_prior():
    a = ig_update(2.5, 1.5, 0, 0.0, np.random.default_rng(4))
    b = 1.5 / np.random.default_rng(4).gamma(2.5)
    assert a == b


def test_ig_mean_matches_analytic():
    rng = np.random.default_rng(0)
    draws = np.array([ig_update(3.0, 2.0, 4, 6.0, rng) for _ in range(100_000)])
    assert draws.mean() == pytest.approx(ig_mean(5.0, 5.0), rel=0.01)


def test_ig_zero_quad():
    rng = np.random.default_rng(1)
    draws = np.array([ig_update(2.0, 1.0, 2, 0.0, rng) for _ in range(100_000)])
    assert draws.mean() == pytest.approx(0.5, rel=0.02)
    ks = stats.kstest(draws, stats.invgamma(3.0, scale=1.0).cdf)
    assert ks.pvalue > 1e-3


def test_ig_errors():
    rng = np.random.default_rng(0)
    with pytest.raises(ValidationError):
        ig_update(1.0, 1.0, 2, -1.0, rng)
    with pytest.raises(NumericalError):
        ig_update(0.0, 1.0, 0, 0.0, rng)
    with pytest.raises(NumericalError):
        ig_update(1.0, 0.0, 2, 0.0, rng)


# ---------------------------------------------------------------- beta

def test_beta_scalar_conjugate():
    data = scalar_data([2.0])
    st = state_for(data)
    mean, prec, _ = beta_conditional(st, data)
    assert mean[0] == pytest.approx(1.0)
    assert 1.0 / prec[0, 0] == pytest.approx(0.5)


def test_beta_prior_dominance():
    data = scalar_data([5.0, 7.0])
    mean, _, _ = beta_conditional(state_for(data, sigma_beta_sq=1e-12), data)
    assert abs(mean[0]) < 1e-9


def test_beta_moments_match_closed_form():
    rng = np.random.default_rng(3)
    data = linear_dataset(n=20, p=2, seed=1)
    st = state_for(data, sigma_eps_sq=0.7, sigma_beta_sq=3.0, nu=rng.normal(0, 0.3, data.m))
    # independent closed form from the normal equations
    X, r = data.X, data.Z - st.nu[data.observed_idx]
    cov = np.linalg.inv(X.T @ X / 0.7 + np.eye(2) / 3.0)
    mu = cov @ X.T @ r / 0.7
    draws = np.array([sample_beta(st, data, rng) for _ in range(100_000)])
    np.testing.assert_allclose(draws.mean(axis=0), mu, rtol=0.02)
    np.testing.assert_allclose(np.cov(draws.T), cov, rtol=0.02, atol=0.02 * np.abs(cov).max())


# ---------------------------------------------------------------- nu

def test_nu_unobserved_follows_field():
    data = scalar_data([1.0, 2.0], missing=3)
    nt = np.array([0.0, 0.0, 1.5, -2.0, 0.25])
    mean, var = nu_conditional(state_for(data, delta_sq=0.3), data, nt)
    np.testing.assert_array_equal(mean[2:], nt[2:])
    np.testing.assert_array_equal(var[2:], 0.3)


def test_nu_scalar_precision_weighting():
    data = scalar_data([4.0])
    mean, var = nu_conditional(state_for(data, beta=np.zeros(1)), data, np.zeros(1))
    assert mean[0] == pytest.approx(2.0) and var[0] == pytest.approx(0.5)


def test_nu_matches_dense_conditional():
    rng = np.random.default_rng(9)
    data = linear_dataset(n=50, p=2, seed=4, missing=8)
    st = state_for(data, beta=np.array([0.8, 1.9]), delta_sq=0.6, sigma_eps_sq=0.35)
    nt = rng.normal(size=data.m)
    O = np.zeros((data.n, data.m))
    O[np.arange(data.n), data.observed_idx] = 1.0
    prec = np.eye(data.m) / 0.6 + O.T @ O / 0.35
    cov = np.linalg.inv(prec)
    mean = cov @ (nt / 0.6 + O.T @ (data.Z - data.X @ st.beta) / 0.35)
    got_mean, got_var = nu_conditional(st, data, nt)
    np.testing.assert_allclose(got_mean, mean, atol=1e-12)
    np.testing.assert_allclose(got_var, np.diag(cov), atol=1e-12)
    assert np.allclose(cov, np.diag(np.diag(cov)), atol=1e-14)
    draws = np.array([sample_nu(st, data, nt, rng) for _ in range(20_000)])
    np.testing.assert_allclose(draws.mean(axis=0), mean, atol=4 * np.sqrt(np.diag(cov).max() / 20_000))


# ---------------------------------------------------------------- eta

def toy_eta_problem(r):
    pts = np.array([0.0, 0.5, 1.0, 1.5, 2.0])
    knots = np.linspace(0.0, 2.0, r).reshape(-1, 1)
    basis = BasisSet("gaussian-rbf", knots, 1.0)
    data = Dataset.build(pts, np.arange(5), np.zeros(5), np.ones((5, 1)))
    draw = draw_spectral(20, 1, 1.0, np.random.default_rng(21))
    nu = np.array([0.5, -1.0, 0.3, 1.2, -0.4])
    st = state_for(data, r=r, nu=nu, delta_sq=0.5, sigma_eta_sq=1.0)
    return data, basis, draw, st


def direct_log_target(etas, data, basis, draw, st):
    """Unnormalized log target on a batch of eta vectors, straight from the formulas."""
    s = data.locations[:, 0]
    psi = np.exp(-basis.bandwidth * np.abs(s[:, None] - basis.knots[None, :, 0]))  # n x r
    f = etas @ psi.T  # G x n
    ph = f[..., None] * draw.omegas[:, 0] + s[None, :, None] * draw.omegas[:, 1] + draw.kappas
    nt = math.sqrt(st.sigma_nu_sq * 2.0 / draw.K) * np.cos(ph).sum(axis=-1)
    resid = st.nu - nt
    return -np.sum(etas ** 2, axis=1) / (2 * st.sigma_eta_sq) - np.sum(resid ** 2, axis=1) / (2 * st.delta_sq)


def run_mh(data, basis, draw, st, steps, step, seed):
    rng = np.random.default_rng(seed)
    nt = warped = None
    out = np.empty((steps, st.eta.size))
    for i in range(steps):
        st.eta, _, nt, warped = sample_eta_mh(st, data, draw, rng, basis, step, nu_tilde=nt, warped=warped)
        out[i] = st.eta
    return out


def test_eta_identical_proposal_always_accepted():
    data, basis, draw, st = toy_eta_problem(2)
    st.eta = np.array([0.4, -0.2])
    for seed in range(50):
        _, accepted, _, _ = sample_eta_mh(st, data, draw, np.random.default_rng(seed), basis, 1e-300)
        assert accepted


def test_eta_prior_dominance_rejects():
    data, basis, draw, st = toy_eta_problem(2)
    st.sigma_eta_sq = 1e-12
    for seed in range(50):
        eta, accepted, _, _ = sample_eta_mh(st, data, draw, np.random.default_rng(seed), basis, 0.1)
        assert not accepted and not eta.any()


def tv_against_grid(samples, data, basis, draw, st, lim=6.0, bins=8, fine=240):
    r = samples.shape[1]
    edges = np.linspace(-lim, lim, bins + 1)
    cells = (np.arange(fine) + 0.5) * (2 * lim / fine) - lim
    mesh = np.stack(np.meshgrid(*([cells] * r), indexing="ij"), axis=-1).reshape(-1, r)
    logp = direct_log_target(mesh, data, basis, draw, st)
    w = np.exp(logp - logp.max())
    target, _ = np.histogramdd(mesh, bins=[edges] * r, weights=w)
    target /= target.sum()
    emp, _ = np.histogramdd(samples, bins=[edges] * r)
    # draws outside the box count fully against the match
    emp /= len(samples)
    outside = 1.0 - emp.sum()
    return outside + 0.5 * np.abs(emp - target).sum()


@pytest.mark.parametrize("r", [1, 2])
def test_eta_mh_stationary_distribution(r):
    data, basis, draw, st = toy_eta_problem(r)
    samples = run_mh(data, basis, draw, st, 120_000, 1.0, seed=r)[2000:]
    assert tv_against_grid(samples, data, basis, draw, st) < 0.05


# ---------------------------------------------------------------- sigma_nu^2 and phi

def far_dist(m):
    pts = np.arange(m) * 1e4
    return np.abs(pts[:, None] - pts[None, :])


def test_sigma_nu_empty_subsample_is_prior():
    st = state_for(scalar_data([1.0]))
    a = sample_sigma_nu2(st, np.empty(0), np.empty((0, 0)), np.random.default_rng(2), 1.5, 0.5)
    assert a == 0.5 / np.random.default_rng(2).gamma(1.5)


def test_sigma_nu_identity_correlation():
    st = state_for(scalar_data([1.0]))
    nu_m = np.array([1.0, -2.0, 0.5])
    got = sample_sigma_nu2(st, nu_m, far_dist(3), np.random.default_rng(5), 0.1, 0.2)
    expected = ig_update(0.1, 0.2, 3, float(nu_m @ nu_m), np.random.default_rng(5))
    assert got == pytest.approx(expected, rel=1e-7)


def test_sigma_nu_recovers_known_variance():
    rng = np.random.default_rng(6)
    pts = np.sort(rng.uniform(0, 30, 30))
    dist = np.abs(pts[:, None] - pts[None, :])
    phi = 2.0
    R = np.exp(-dist / phi)
    nu_m = np.linalg.cholesky(2.0 * R) @ rng.standard_normal(30)
    st = state_for(scalar_data([1.0]), phi=phi)
    draws = np.array([sample_sigma_nu2(st, nu_m, dist, rng, 0.01, 0.01, n_eff=30) for _ in range(20_000)])
    quad = float(nu_m @ np.linalg.solve(R, nu_m))
    assert draws.mean() == pytest.approx(ig_mean(0.01 + 15, 0.01 + quad / 2), rel=0.02)
    assert abs(draws.mean() - 2.0) < 0.25 * 2.0


def test_phi_single_grid_point():
    st = state_for(scalar_data([1.0]))
    phi, probs = sample_phi(st, np.array([0.3, 0.1]), np.array([[0, 1.0], [1.0, 0]]),
                            np.random.default_rng(0), 1.0, 3.0, G=1)
    assert phi == 2.0 and probs.tolist() == [1.0]


def test_phi_empty_subsample_uniform():
    st = state_for(scalar_data([1.0]))
    rng = np.random.default_rng(8)
    draws = [sample_phi(st, np.empty(0), np.empty((0, 0)), rng, 1.0, 5.0, G=7)[0] for _ in range(5000)]
    assert stats.kstest(draws, stats.uniform(1.0, 4.0).cdf).pvalue > 1e-3


def test_phi_histogram_matches_grid_posterior():
    rng = np.random.default_rng(10)
    pts = np.sort(rng.uniform(0, 20, 25))
    dist = np.abs(pts[:, None] - pts[None, :])
    nu_m = np.linalg.cholesky(np.exp(-dist / 4.0) + 1e-10 * np.eye(25)) @ rng.standard_normal(25)
    st = state_for(scalar_data([1.0]), sigma_nu_sq=1.0)
    L, U, G = 1.0, 15.0, 50
    # independent normalization with scipy's multivariate normal
    edges, mids = phi_grid(L, U, G)
    logp = np.array([stats.multivariate_normal(np.zeros(25), np.exp(-dist / ph) + 1e-8 * np.eye(25)).logpdf(nu_m)
                     for ph in mids])
    probs = np.exp(logp - logp.max())
    probs /= probs.sum()
    draws = np.array([sample_phi(st, nu_m, dist, rng, L, U, G)[0] for _ in range(10_000)])
    counts = np.histogram(draws, bins=edges)[0]
    keep = probs * 10_000 >= 5
    expected = np.append(probs[keep], probs[~keep].sum()) * 10_000
    observed = np.append(counts[keep], counts[~keep].sum())
    if expected[-1] < 5:
        expected[-2] += expected[-1]
        observed[-2] += observed[-1]
        expected, observed = expected[:-1], observed[:-1]
    assert stats.chisquare(observed, expected).pvalue > 0.01


# ---------------------------------------------------------------- remaining variances

def test_sigma_beta_zero_quad():
    st = state_for(scalar_data([1.0]), beta=np.zeros(3))
    assert sample_sigma_beta2(st, np.random.default_rng(3), 0.2, 0.7) == 0.7 / np.random.default_rng(3).gamma(1.7)


def test_sigma_eps_unit_residuals():
    data = scalar_data(np.ones(10))
    st = state_for(data, beta=np.zeros(1))
    got = sample_sigma_eps2(st, data, np.random.default_rng(4), 0.3, 0.4)
    assert got == 5.4 / np.random.default_rng(4).gamma(5.3)


def test_variance_updates_match_analytic_means():
    rng = np.random.default_rng(12)
    data = linear_dataset(n=200, p=3, sigma_eps=0.8, seed=5, missing=20)
    beta = np.array([1.0, 2.0, 3.0])
    nu_tilde = rng.normal(0, 1.0, data.m)
    nu = nu_tilde + rng.normal(0, 0.5, data.m)
    st = state_for(data, r=6, beta=beta, nu=nu, nu_tilde=nu_tilde, eta=rng.normal(0, 0.7, 6))
    a, b = 0.01, 0.01
    cases = {
        "beta": (lambda: sample_sigma_beta2(st, rng, a, b), 3, beta @ beta),
        "eta": (lambda: sample_sigma_eta2(st, rng, a, b), 6, st.eta @ st.eta),
        "delta": (lambda: sample_delta2(st, rng, a, b), data.m, (nu - nu_tilde) @ (nu - nu_tilde)),
    }
    resid = data.Z - data.X @ beta - nu[data.observed_idx]
    cases["eps"] = (lambda: sample_sigma_eps2(st, data, rng, a, b), data.n, resid @ resid)
    for name, (fn, n_eff, quad) in cases.items():
        draws = np.array([fn() for _ in range(10_000)])
        expected = ig_mean(a + n_eff / 2, b + quad / 2)
        assert draws.mean() == pytest.approx(expected, rel=0.02 if n_eff > 10 else 0.1), name


# ---------------------------------------------------------------- run_chain

def quick_hyper(**kw):
    base = dict(K=50, m_sub=20, grid_size=10, B=30, burn_in=10, mh_step=0.05, seed=3)
    base.update(kw)
    return Hyperparams(**base)


@pytest.fixture
def chain_setup(small_data):
    basis = make_basis("gaussian-rbf", small_data.locations, 4)
    return small_data, basis


def test_hyperparams_validation():
    for bad in (dict(phi_lower=0.5), dict(burn_in=40, B=30), dict(K=0), dict(prior_shape=(1.0,) * 4),
                dict(fixed={"gamma": 1.0}), dict(sigma_nu_count="all"), dict(phi_lower=2.0, phi_upper=1.5)):
        with pytest.raises(ValidationError):
            quick_hyper(**bad).validate()


def test_default_phi_upper():
    assert default_phi_upper(np.array([[0.0], [3.0], [10.0]])) == 10.0
    pts = np.array([[0.0, 0.0], [3.0, 4.0], [1.0, 1.0], [0.0, 4.0]])
    assert default_phi_upper(pts) == pytest.approx(5.0)
    assert default_phi_upper(np.array([[0.0], [0.5]]), phi_lower=1.0) == 2.0


def test_single_iteration_keeps_initial_state(chain_setup):
    data, basis = chain_setup
    ch = run_chain(data, quick_hyper(B=1, burn_in=1), basis)
    assert ch.n_kept == 0 and ch.iteration == 1
    ch = run_chain(data, quick_hyper(B=1, burn_in=0), basis)
    assert ch.n_kept == 1
    assert not ch.samples("eta").any()
    assert ch.samples("phi")[0] == pytest.approx(0.5 * (1.0 + ch.hyper.phi_upper))


def test_sample_counts(chain_setup):
    data, basis = chain_setup
    ch = run_chain(data, quick_hyper(B=41, burn_in=11, thin=3), basis)
    assert ch.n_kept == (41 - 11) // 3
    assert 0.0 <= ch.acceptance_rate <= 1.0
    assert len(ch.phi_log) == 40 and all(len(p) == 10 for p in ch.phi_log)


def test_same_seed_bit_identical(chain_setup):
    data, basis = chain_setup
    a = chain_to_dict(run_chain(data, quick_hyper(), basis))
    b = chain_to_dict(run_chain(data, quick_hyper(), basis))
    assert a == b
    c = chain_to_dict(run_chain(data, quick_hyper(seed=4), basis))
    assert c != a


def test_resume_bit_identical(chain_setup, tmp_path):
    data, basis = chain_setup
    full = run_chain(data, quick_hyper(B=30), basis)
    half = run_chain(data, quick_hyper(B=15), basis)
    save_checkpoint(half, tmp_path / "ck.json")
    resumed = run_chain(data, quick_hyper(B=30), basis, resume=load_checkpoint(tmp_path / "ck.json"))
    assert chain_to_dict(resumed) == chain_to_dict(full)


def test_resume_rejects_changed_settings(chain_setup):
    data, basis = chain_setup
    half = run_chain(data, quick_hyper(B=15), basis)
    with pytest.raises(ValidationError):
        run_chain(data, quick_hyper(B=30, K=60), basis, resume=half)


def test_update_order(chain_setup, monkeypatch):
    data, basis = chain_setup
    calls = []
    names = ["sample_beta", "draw_spectral", "sample_nu", "sample_eta_mh", "sample_sigma_nu2",
             "sample_sigma_beta2", "sample_sigma_eta2", "sample_phi", "sample_delta2", "sample_sigma_eps2"]
    for name in names:
        orig = getattr(gibbs, name)

        def wrapped(*args, _orig=orig, _name=name, **kw):
            calls.append(_name)
            return _orig(*args, **kw)
        monkeypatch.setattr(gibbs, name, wrapped)
    run_chain(data, quick_hyper(B=3, burn_in=0), basis)
    assert calls == names * 2


def test_failure_names_iteration_and_update(chain_setup, monkeypatch):
    data, basis = chain_setup
    orig = gibbs.sample_delta2

    def failing(state, rng, *a, **kw):
        if failing.calls == 4:
            raise NumericalError("boom")
        failing.calls += 1
        return orig(state, rng, *a, **kw)
    failing.calls = 0
    monkeypatch.setattr(gibbs, "sample_delta2", failing)
    with pytest.raises(SamplerError) as info:
        run_chain(data, quick_hyper(), basis)
    assert info.value.iteration == 6 and info.value.update == "delta_sq"
    assert "iteration 6" in str(info.value) and "delta_sq" in str(info.value)


def test_beta_matches_conjugate_linear_model():
    # nu pinned near zero, so the chain targets the Bayesian linear model
    data = linear_dataset(n=100, p=2, sigma_eps=0.5, seed=8)
    basis = make_basis("gaussian-rbf", data.locations, 4)
    s_eps, s_beta = 0.25, 10.0
    hyper = Hyperparams(K=20, m_sub=0, B=3000, burn_in=200, seed=1, fixed={
        "eta": np.zeros(basis.r), "phi": 5.0, "sigma_nu_sq": 1e-10, "delta_sq": 1e-10,
        "sigma_eps_sq": s_eps, "sigma_beta_sq": s_beta})
    ch = run_chain(data, hyper, basis)
    X = data.X
    cov = np.linalg.inv(X.T @ X / s_eps + np.eye(2) / s_beta)
    mu = cov @ X.T @ data.Z / s_eps
    draws = ch.samples("beta")
    for j in range(2):
        se = draws[:, j].std(ddof=1) / math.sqrt(ess(draws[:, j]))
        assert abs(draws[:, j].mean() - mu[j]) < 3 * se


# ---------------------------------------------------------------- prediction

def manual_chain(data, betas, nus):
    ch = ChainOutput(hyper=Hyperparams(keep_nu=True), state=state_for(data), rng_state={},
                     subsample_idx=np.empty(0, dtype=np.int64), nu_draws=[np.asarray(v, float) for v in nus],
                     y_mean=np.zeros(data.m), y_m2=np.zeros(data.m))
    ch.kept_iterations = list(range(len(betas)))
    ch.draws["beta"] = [np.asarray(b, float) for b in betas]
    return ch


def test_predict_identical_samples_zero_variance():
    data = scalar_data([1.0, 2.0], missing=1)
    ch = manual_chain(data, [[0.5]] * 4, [[1.0, 2.0, 3.0]] * 4)
    mean, var = predict_posterior(ch, data)
    np.testing.assert_allclose(mean, [1.5, 2.5, 3.5])
    np.testing.assert_array_equal(var, 0.0)


def test_predict_two_samples():
    data = scalar_data([1.0])
    mean, var = predict_posterior(manual_chain(data, [[0.0], [0.0]], [[1.0], [3.0]]), data)
    assert mean[0] == 2.0 and var[0] == 2.0


def test_predict_running_moments_match_stored_draws(chain_setup):
    data, basis = chain_setup
    ch = run_chain(data, quick_hyper(keep_nu=True), basis)
    a = predict_posterior(ch, data)
    ch.nu_draws = None
    b = predict_posterior(ch, data)
    np.testing.assert_allclose(a[0], b[0], atol=1e-10)
    np.testing.assert_allclose(a[1], b[1], rtol=1e-8, atol=1e-10)


def test_predict_empty_chain_rejected(chain_setup):
    data, basis = chain_setup
    with pytest.raises(ValidationError):
        predict_posterior(run_chain(data, quick_hyper(B=1, burn_in=1), basis))


def test_noise_free_interpolates_observations():
    data = linear_dataset(n=100, p=2, sigma_eps=0.0, seed=2)
    rng = np.random.default_rng(0)
    data = Dataset.build(data.locations, data.observed_idx, data.Z + np.sin(data.observed_idx / 7.0),
                         data.X_pred)
    basis = make_basis("gaussian-rbf", data.locations, 5)
    del rng
    hyper = Hyperparams(K=100, m_sub=50, grid_size=10, B=300, burn_in=100, seed=2,
                        fixed={"sigma_eps_sq": 1e-6})
    ch = run_chain(data, hyper, basis)
    mean, _ = predict_posterior(ch)
    assert np.max(np.abs(mean[data.observed_idx] - data.Z)) < 0.1


def test_checkpoint_json_roundtrip(chain_setup, tmp_path):
    data, basis = chain_setup
    ch = run_chain(data, quick_hyper(keep_nu=True), basis)
    d = chain_to_dict(ch)
    assert chain_to_dict(chain_from_dict(d)) == d
    bad = dict(d, version=99)
    with pytest.raises(ValidationError):
        chain_from_dict(bad)
    write_samples_csv(ch, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert len(lines) == ch.n_kept + 1
    assert lines[0].startswith("iteration,beta_1,beta_2,eta_1")
