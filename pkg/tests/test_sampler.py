import numpy as np
import pytest
from scipy import stats

from funczidm.basis import build_basis, evaluate_basis
from funczidm.data import LongitudinalDataset
from funczidm.draws import FormatError, PosteriorDraws
from funczidm.model import (
    Hyperparameters,
    augmented_log_joint,
    log_gamma_matrix,
    log_gamma_rvs,
    make_design,
)
from funczidm.sampler import (
    DivergenceError,
    Sampler,
    SamplerConfig,
    adapt_scale,
    initialize,
    run_chain,
)

from conftest import make_toy


def sampler_for(design, seed=0, hyper=None, state=None, **cfg):
    config = SamplerConfig(iterations=10, burn_in=0, **cfg)
    return Sampler(design, hyper or Hyperparameters(), config, np.random.default_rng(seed),
                   state=state)


# ---------------------------------------------------------------- latents
def test_log_gamma_rvs_moments():
    rng = np.random.default_rng(0)
    x = np.exp(log_gamma_rvs(np.full(100_000, 5.0), 2.0, rng))
    assert x.mean() == pytest.approx(2.5, rel=0.01)
    assert x.var() == pytest.approx(1.25, rel=0.03)


@pytest.mark.parametrize("shape", [1.0, 0.3, 0.01])
def test_log_gamma_rvs_distribution(shape):
    rng = np.random.default_rng(1)
    x = np.exp(log_gamma_rvs(np.full(20_000, shape), 1.0, rng))
    assert stats.kstest(x, stats.gamma(shape).cdf).pvalue > 1e-3


def test_log_gamma_rvs_tiny_shape_stays_finite():
    rng = np.random.default_rng(2)
    out = log_gamma_rvs(np.full(1000, 1e-5), 1.0, rng)
    assert np.all(np.isfinite(out))


def test_update_u_conditional(toy_state):
    data, basis, design, state = toy_state
    smp = sampler_for(design, state=state)
    T = np.exp(smp.state.logc).sum(axis=1)
    draws = np.empty((20_000, design.R))
    for k in range(draws.shape[0]):
        smp.update_u()
        draws[k] = smp.state.u
    want = design.totals / T
    np.testing.assert_allclose(draws.mean(axis=0), want, rtol=0.03)


def test_update_c_conditional(toy_state):
    data, basis, design, state = toy_state
    smp = sampler_for(design, state=state)
    smp.state.u[:] = 0.5
    n = 4000
    acc = np.zeros((design.R, design.J))
    for _ in range(n):
        smp.update_c()
        acc += np.where(smp.at_risk, np.exp(smp.state.logc), 0.0)
    want = np.where(smp.at_risk, (design.Z + smp.g) / 1.5, 0.0)
    np.testing.assert_allclose(acc / n, want, rtol=0.08, atol=0.02)
    assert np.all(np.isneginf(smp.state.logc[~smp.at_risk]))


def test_update_c_zero_count_is_exponential():
    # z = 0, gamma = 1, u = 0 gives an Exp(1) weight
    data = LongitudinalDataset(ids=[0], individual=np.zeros(1, int), times=np.zeros(1),
                               X=np.zeros((1, 0)), Z=np.array([[5, 0]]))
    basis = build_basis([0.0, 1.0], 4)
    design = make_design(data, basis)
    smp = sampler_for(design, seed=3)
    s = smp.state
    s.beta[:] = 0
    s.r[:] = 0
    s.eta[:] = 1
    smp.refresh_cache()
    s.u[:] = 0.0
    out = np.empty(20_000)
    for k in range(out.size):
        smp.update_c()
        out[k] = np.exp(s.logc[0, 1])
    assert stats.kstest(out, "expon").pvalue > 1e-3


# -------------------------------------------------------------------- eta
def test_eta_never_flips_ineligible(toy_state):
    data, basis, design, state = toy_state
    smp = sampler_for(design, state=state, hyper=Hyperparameters(alpha=1e-3, beta=1e3))
    fixed_on = ~design.eligible()
    for _ in range(200):
        smp.sweep()
        assert np.all(smp.state.eta[fixed_on] == 1)


def test_strong_prior_turns_every_pair_on(toy_state):
    data, basis, design, state = toy_state
    elig = design.eligible()
    assert elig.any()
    smp = sampler_for(design, state=state, hyper=Hyperparameters(alpha=1e6, beta=1.0))
    for _ in range(30):
        smp.sweep()
    assert np.all(smp.state.eta == 1)


def test_eta_log_odds_matches_direct_integral(toy_state):
    data, basis, design, state = toy_state
    smp = sampler_for(design, state=state)
    lo = smp.eta_log_odds()
    for i in range(design.N):
        rows = np.flatnonzero(design.individual == i)
        for j in range(design.J):
            # integral of Gamma(gamma, 1) density times exp(-u c) over c
            want = sum(-smp.g[r, j] * np.log1p(smp.state.u[r]) for r in rows)
            assert lo[i, j] == pytest.approx(want, rel=1e-12)


# ---------------------------------------------------------- MH log ratios
def test_beta_ratio_matches_log_joint(toy_state):
    data, basis, design, state = toy_state
    hyper = Hyperparameters()
    smp = sampler_for(design, state=state.copy())
    rng = np.random.default_rng(4)
    base = augmented_log_joint(smp.state, design, hyper)
    for p in range(design.P + 1):
        for j in range(design.J):
            delta = np.zeros((design.J, design.width))
            delta[j] = rng.normal(scale=0.1, size=design.width) * design.active[p]
            ratio, _ = smp.beta_block_log_ratio(p, delta)
            moved = smp.state.copy()
            moved.beta[:, p] += delta
            want = augmented_log_joint(moved, design, hyper) - base
            assert ratio[j] == pytest.approx(want, abs=1e-8)
            assert np.all(ratio[np.arange(design.J) != j] == 0)


def test_r_ratio_matches_log_joint(toy_state):
    data, basis, design, state = toy_state
    hyper = Hyperparameters()
    smp = sampler_for(design, state=state.copy())
    base = augmented_log_joint(smp.state, design, hyper)
    delta = np.zeros_like(smp.state.r)
    delta[1, 2] = 0.37
    ratio, _, _ = smp.r_log_ratio(delta)
    moved = smp.state.copy()
    moved.r += delta
    assert ratio[1, 2] == pytest.approx(augmented_log_joint(moved, design, hyper) - base, abs=1e-8)


def test_forward_and_reverse_ratios_cancel(toy_state):
    data, basis, design, state = toy_state
    smp = sampler_for(design, state=state.copy())
    rng = np.random.default_rng(6)
    delta = rng.normal(scale=0.2, size=(design.J, design.width)) * design.active[1]
    fwd, dlg = smp.beta_block_log_ratio(1, delta)
    smp.state.beta[:, 1] += delta
    smp.refresh_cache()
    back, _ = smp.beta_block_log_ratio(1, -delta)
    np.testing.assert_allclose(fwd, -back, atol=1e-10)


def test_kappa_and_scale_targets_match_log_joint(toy_state):
    data, basis, design, state = toy_state
    hyper = Hyperparameters()
    smp = sampler_for(design, state=state.copy())
    s = smp.state
    base = augmented_log_joint(s, design, hyper)
    S = smp._block_sums()

    new = s.kappa2 * np.exp(np.array([0.2, -0.1, 0.05, 0.3]))
    moved = s.copy()
    moved.kappa2 = new
    # log-scale targets carry the Jacobian log(new / old)
    want = augmented_log_joint(moved, design, hyper) - base + np.log(new / s.kappa2).sum()
    got = (smp.kappa_log_target(new) - smp.kappa_log_target(s.kappa2)).sum()
    assert got == pytest.approx(want, abs=1e-8)

    new = s.lam2 * 1.7
    moved = s.copy()
    moved.lam2 = new
    want = augmented_log_joint(moved, design, hyper) - base + np.log(new / s.lam2).sum()
    got = (smp._lam2_logpost(new, S) - smp._lam2_logpost(s.lam2, S)).sum()
    assert got == pytest.approx(want, abs=1e-8)

    new = s.tau2 * 0.6
    moved = s.copy()
    moved.tau2 = new
    want = augmented_log_joint(moved, design, hyper) - base + np.log(new / s.tau2).sum()
    got = (smp._tau2_logpost(new, S) - smp._tau2_logpost(s.tau2, S)).sum()
    assert got == pytest.approx(want, abs=1e-8)


def test_tiny_steps_are_always_accepted(toy_state):
    data, basis, design, state = toy_state
    smp = sampler_for(design, state=state, scale_beta=1e-12, scale_r=1e-12, scale_kappa=1e-12)
    for _ in range(50):
        smp.sweep()
    acc = smp.acceptance_summary()
    assert acc["beta"] > 0.99
    assert acc["r"] > 0.99
    assert acc["kappa"] > 0.99


# ------------------------------------------------------------- conjugacy
def test_phi_conditional_is_inverse_gamma():
    data = make_toy(J=2, N=50, P=1, seed=1)
    design = make_design(data, build_basis(data.times, 4))
    smp = sampler_for(design, seed=2)
    smp.state.r[:] = 0.0
    prec = np.empty((20_000, 2))
    for k in range(prec.shape[0]):
        smp.update_phi()
        prec[k] = 1.0 / smp.state.phi2
    # Gamma(a + N/2, b) = Gamma(28, 9)
    assert prec.mean() == pytest.approx(28 / 9, rel=0.01)
    assert prec.var() == pytest.approx(28 / 81, rel=0.05)


# ----------------------------------------------------- prior recovery
@pytest.fixture(scope="module")
def prior_chain():
    data = make_toy(J=3, N=8, P=1, seed=2)
    basis = build_basis(data.times, 4)
    hyper = Hyperparameters(alpha=2.0, beta=2.0)
    config = SamplerConfig(iterations=15_000, burn_in=1_000, thin=2, mute_likelihood=True,
                           seed=9)
    return run_chain(data, hyper, basis, config), hyper


def test_prior_recovery_scales(prior_chain):
    draws, hyper = prior_chain
    w = 1.0 / draws.kappa2.ravel()
    assert w.mean() == pytest.approx(hyper.zeta / hyper.rho, rel=0.02)
    w = 1.0 / draws.phi2.ravel()
    assert w.mean() == pytest.approx(hyper.a / hyper.b, rel=0.05)
    assert draws.eta.mean() == pytest.approx(0.5, abs=0.03)


def test_prior_recovery_random_intercepts(prior_chain):
    draws, hyper = prior_chain
    std = draws.r / np.sqrt(draws.phi2[:, None, :])
    assert std.mean() == pytest.approx(0.0, abs=0.03)
    assert std.var() == pytest.approx(1.0, rel=0.05)


def test_horseshoe_move_keeps_half_cauchy_prior():
    # exact Gibbs draws of beta from its prior so only the scale moves are under test
    data = make_toy(J=3, N=8, P=1, seed=2)
    design = make_design(data, build_basis(data.times, 4))
    smp = sampler_for(design, seed=0, mute_likelihood=True)
    s, rng = smp.state, smp.rng
    lam, tau = [], []
    for _ in range(30_000):
        b = rng.standard_normal(s.beta.shape) * np.sqrt(s.sigma2())[:, :, None]
        b[:, 0, 0] = rng.standard_normal(design.J)
        s.beta = b * design.active[None]
        smp.update_horseshoe()
        smp.update_kappa()
        lam.append(np.sqrt(s.lam2).ravel())
        tau.append(np.sqrt(s.tau2))
    qs = np.array([0.25, 0.5, 0.75])
    want = np.tan(np.pi * qs / 2)  # half-Cauchy(0, 1) quantiles
    np.testing.assert_allclose(np.quantile(np.concatenate(lam), qs), want, rtol=0.05)
    np.testing.assert_allclose(np.quantile(np.concatenate(tau), qs), want, rtol=0.05)


# ------------------------------------------------------------ adaptation
def test_adapt_scale_examples():
    assert adapt_scale(np.array([1.0]), np.array([0.5]), 0.3)[0] == pytest.approx(np.exp(0.2))
    assert adapt_scale(np.array([1.0]), np.array([0.0]), 0.3)[0] == pytest.approx(np.exp(-0.3))
    assert adapt_scale(np.array([2.0]), np.array([np.nan]), 0.3)[0] == 2.0


def test_adaptation_stops_at_burn_in(toy, monkeypatch):
    data, basis, design = toy
    calls = []
    original = Sampler.adapt_proposals

    def spy(self):
        calls.append(self.adapting)
        original(self)
    monkeypatch.setattr(Sampler, "adapt_proposals", spy)
    frozen = []
    monkeypatch.setattr(Sampler, "freeze", lambda self: frozen.append(True) or setattr(
        self, "adapting", False))
    config = SamplerConfig(iterations=400, burn_in=200, thin=5, adapt_window=25)
    run_chain(data, Hyperparameters(), basis, config)
    assert len(calls) == 200 // 25
    assert all(calls)
    assert frozen == [True]


def test_adaptive_proposal_stays_positive_definite(toy):
    data, basis, design = toy
    config = SamplerConfig(iterations=600, burn_in=500, thin=10, adapt_window=50,
                           proposal="adaptive")
    draws = run_chain(data, Hyperparameters(), basis, config)
    assert np.all(np.isfinite(draws.beta))


def test_zero_iterations():
    config = SamplerConfig(iterations=0, burn_in=0)
    data = make_toy()
    draws = run_chain(data, Hyperparameters(), build_basis(data.times, 4), config)
    assert draws.n_draws == 0
    assert draws.beta.shape[1:] == (4, 3, 5)


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(iterations=10, burn_in=10)
    with pytest.raises(ValueError):
        SamplerConfig(thin=0)
    with pytest.raises(ValueError):
        SamplerConfig(fixed=("nonsense",))
    assert SamplerConfig(iterations=100, burn_in=10, thin=7).n_retained == 90 // 7


# ---------------------------------------------------------- whole chains
def test_same_seed_same_draws(toy):
    data, basis, design = toy
    config = SamplerConfig(iterations=120, burn_in=20, thin=10, seed=3)
    a = run_chain(data, Hyperparameters(), basis, config)
    b = run_chain(data, Hyperparameters(), basis, config)
    c = run_chain(data, Hyperparameters(), basis, config, seed=4)
    assert a.n_draws == 10
    for name, arr in a.arrays().items():
        np.testing.assert_array_equal(arr, getattr(b, name))
    assert not np.array_equal(a.beta, c.beta)


def test_divergence_guard(toy):
    data, basis, design = toy
    config = SamplerConfig(iterations=50, burn_in=10, divergence_threshold=1e-3)
    with pytest.raises(DivergenceError) as err:
        run_chain(data, Hyperparameters(), basis, config)
    assert "worst_block" in err.value.dump
    assert err.value.dump["iteration"] == 1


def test_debug_mode_checks_invariants(toy):
    data, basis, design = toy
    config = SamplerConfig(iterations=60, burn_in=10, thin=10, debug=True, check_every=10)
    draws = run_chain(data, Hyperparameters(), basis, config)
    assert set(draws.acceptance) >= {"beta", "r", "eta", "kappa"}


def recovery_data(seed=0):
    rng = np.random.default_rng(seed)
    N, J = 30, 3
    n_obs = 6
    individual = np.repeat(np.arange(N), n_obs)
    times = np.tile(np.linspace(0, 10, n_obs), N) + rng.uniform(-0.4, 0.4, N * n_obs)
    times = np.clip(times, 0, 10)
    X = rng.standard_normal((N * n_obs, 1))
    lg = np.zeros((N * n_obs, J)) + np.array([1.0, 0.5, 0.8])
    lg[:, 0] += 0.5 * X[:, 0]
    c = rng.gamma(np.exp(lg))
    Z = rng.multinomial(5000, c / c.sum(axis=1, keepdims=True))
    return LongitudinalDataset(ids=list(range(N)), individual=individual, times=times, X=X, Z=Z)


def test_recovers_constant_effect():
    # only contrasts between taxa are sharply identified; the common level is not
    data = recovery_data()
    basis = build_basis(data.times, 4)
    config = SamplerConfig(iterations=6000, burn_in=3000, thin=5, seed=1)
    draws = run_chain(data, Hyperparameters(), basis, config)
    grid = np.linspace(0.5, 9.5, 10)
    contrast = draws.beta[:, 0, 1] - draws.beta[:, 1:, 1].mean(axis=1)
    curve = evaluate_basis(basis, grid) @ contrast.T  # [G, S]
    assert np.max(np.abs(curve.mean(axis=1) - 0.5)) < 0.15


# ---------------------------------------------------------------- files
def test_save_load_roundtrip(tmp_path, toy):
    data, basis, design = toy
    config = SamplerConfig(iterations=60, burn_in=20, thin=10)
    draws = run_chain(data, Hyperparameters(), basis, config)
    path = draws.save(tmp_path / "chain0.npz")
    again = PosteriorDraws.load(path)
    for name, arr in draws.arrays().items():
        np.testing.assert_array_equal(arr, getattr(again, name))
    assert again.basis == basis
    assert again.meta["config"]["iterations"] == 60
    assert again.meta["format_version"] == 1


def test_load_rejects_other_versions(tmp_path, toy):
    data, basis, design = toy
    draws = run_chain(data, Hyperparameters(), basis, SamplerConfig(iterations=20, burn_in=10))
    path = draws.save(tmp_path / "c.npz")
    with np.load(path) as f:
        content = {k: f[k] for k in f.files}
    content["__meta__"] = np.array(str(content["__meta__"]).replace(
        '"format_version": 1', '"format_version": 99'))
    np.savez(tmp_path / "bad.npz", **content)
    with pytest.raises(FormatError, match="version"):
        PosteriorDraws.load(tmp_path / "bad.npz")


def test_csv_export(tmp_path, toy):
    data, basis, design = toy
    draws = run_chain(data, Hyperparameters(), basis, SamplerConfig(iterations=40, burn_in=10,
                                                                     thin=10))
    paths = draws.export_csv(tmp_path)
    assert {p.name for p in paths} == {f"{n}.csv" for n in draws.arrays()}
    rows = (tmp_path / "kappa2.csv").read_text().splitlines()
    assert rows[0] == "draw,i0,value"
    assert len(rows) == 1 + draws.kappa2.size
    draw, j, value = rows[1].split(",")
    assert float(value) == draws.kappa2[0, 0]


def test_initialize_respects_structure(toy):
    data, basis, design = toy
    state = initialize(design, Hyperparameters(), SamplerConfig(), np.random.default_rng(0))
    assert np.all(state.eta[~design.eligible()] == 1)
    assert np.all(state.beta[:, ~design.active] == 0)


def test_joint_rescaling_ratio_matches_log_joint(toy_state):
    data, basis, design, state = toy_state
    hyper = Hyperparameters()
    smp = sampler_for(design, state=state.copy())
    s = smp.state
    base = augmented_log_joint(s, design, hyper)
    eps = np.array([0.3, -0.2, 0.1, 0.0])
    ratio, dlg = smp.joint_scale_log_ratio(eps)
    for j in range(design.J):
        moved = s.copy()
        f = np.exp(eps[j])
        moved.beta[j] = np.where(design.shrunk, moved.beta[j] * f, moved.beta[j])
        moved.tau2[j] *= f ** 2
        # Jacobian: m scaled coefficients plus the log-scale tau2 step
        jac = design.m.sum() * eps[j] + 2 * eps[j]
        want = augmented_log_joint(moved, design, hyper) - base + jac
        assert ratio[j] == pytest.approx(want, abs=1e-8)


def test_local_rescaling_ratio_matches_log_joint(toy_state):
    data, basis, design, state = toy_state
    hyper = Hyperparameters()
    smp = sampler_for(design, state=state.copy())
    s = smp.state
    base = augmented_log_joint(s, design, hyper)
    eps = np.array([0.25, -0.4, 0.1, 0.05])
    for p in range(design.P + 1):
        ratio, _ = smp.local_scale_log_ratio(p, eps)
        for j in range(design.J):
            moved = s.copy()
            f = np.exp(eps[j])
            moved.beta[j, p] = np.where(design.shrunk[p], moved.beta[j, p] * f, moved.beta[j, p])
            moved.lam2[j, p] *= f ** 2
            jac = design.m[p] * eps[j] + 2 * eps[j]
            want = augmented_log_joint(moved, design, hyper) - base + jac
            assert ratio[j] == pytest.approx(want, abs=1e-8)


def test_intercept_shift_conditional(toy_state):
    data, basis, design, state = toy_state
    hyper = Hyperparameters()
    smp = sampler_for(design, state=state.copy(), seed=5)
    start = smp.state.copy()
    lg = log_gamma_matrix(start.beta, start.r, design)

    # the log-joint is quadratic along the shift; read off its mean and precision
    j = 1
    vals = []
    for x in (-1.0, 0.0, 1.0):
        moved = start.copy()
        moved.beta[j, 0, 0] -= x
        moved.r[:, j] += x
        vals.append(augmented_log_joint(moved, design, hyper))
    prec = -(vals[0] - 2 * vals[1] + vals[2])
    mean = (vals[2] - vals[0]) / (2 * prec)
    n = 4000
    shifts = np.empty(n)
    for k in range(n):
        smp.state = start.copy()
        smp.update_intercept_shift()
        shifts[k] = start.beta[j, 0, 0] - smp.state.beta[j, 0, 0]
    assert shifts.mean() == pytest.approx(mean, abs=4 / np.sqrt(prec * n))
    assert shifts.var() == pytest.approx(1 / prec, rel=0.1)
    np.testing.assert_allclose(log_gamma_matrix(smp.state.beta, smp.state.r, design), lg,
                               atol=1e-12)
