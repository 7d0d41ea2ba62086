import numpy as np
import pytest
from scipy import integrate
from scipy.special import gammaln

from funczidm.geweke import (
    TEST_FUNCTIONS,
    batch_means_se,
    geweke,
    geweke_dataset,
    small_instance,
    small_instance_exact,
    test_values as geweke_test_values,
)
from funczidm.model import Hyperparameters


def test_batch_means_se_iid():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((100_000, 2)) * [1.0, 3.0]
    np.testing.assert_allclose(batch_means_se(x), [1.0, 3.0] / np.sqrt(1e5), rtol=0.25)


def test_batch_means_se_sees_autocorrelation():
    rng = np.random.default_rng(1)
    e = rng.standard_normal(200_000)
    x = np.empty_like(e)
    x[0] = e[0]
    for t in range(1, e.size):
        x[t] = 0.9 * x[t - 1] + e[t]
    # AR(1): long-run variance / n = sigma^2 / (1 - rho)^2 / n
    want = 1.0 / 0.1 / np.sqrt(e.size)
    assert batch_means_se(x) == pytest.approx(want, rel=0.3)


def test_dataset_shape():
    data = geweke_dataset()
    assert (data.N, data.J, data.P, data.R) == (5, 3, 1, 5)
    data = geweke_dataset(visits=3, depth=(3, 10))
    assert data.R == 15 and data.totals.min() >= 3


def _exact_by_dblquad(z, mu, phi2, hyper):
    """Same quantities by adaptive quadrature over the two random intercepts."""
    z = np.asarray(z, float)
    n = z.sum()

    def dm(r1, r2):
        g1, g2 = np.exp(mu[0] + r1), np.exp(mu[1] + r2)
        return np.exp(gammaln(n + 1) - gammaln(z + 1).sum() + gammaln(g1 + g2)
                      - gammaln(n + g1 + g2) + gammaln(z[0] + g1) - gammaln(g1)
                      + gammaln(z[1] + g2) - gammaln(g2)), g1, g2

    def dens(r1, r2):
        return (np.exp(-r1 ** 2 / (2 * phi2[0]) - r2 ** 2 / (2 * phi2[1]))
                / (2 * np.pi * np.sqrt(phi2[0] * phi2[1])))

    def f_ev(r2, r1):
        return dm(r1, r2)[0] * dens(r1, r2)

    def f_psi(r2, r1):
        d, g1, g2 = dm(r1, r2)
        return d * dens(r1, r2) * (g1 + z[0]) / (g1 + g2 + n)

    lim = 12
    ev = integrate.dblquad(f_ev, -lim, lim, -lim, lim, epsabs=1e-12)[0]
    ps = integrate.dblquad(f_psi, -lim, lim, -lim, lim, epsabs=1e-12)[0] / ev
    pi_on = hyper.alpha / (hyper.alpha + hyper.beta)
    if z[1] > 0:
        return 0.0, ps
    p0 = (1 - pi_on) / ((1 - pi_on) + pi_on * ev)
    return p0, p0 + (1 - p0) * ps


@pytest.mark.parametrize("z", [(1, 0), (3, 0), (2, 2), (1, 3)])
def test_small_instance_exact_against_adaptive_quadrature(z):
    hyper = Hyperparameters(alpha=1.0, beta=1.0)
    mu, phi2 = np.array([0.3, -0.2]), np.array([0.5, 0.8])
    got = small_instance_exact(z, mu, phi2, hyper)
    want = _exact_by_dblquad(z, mu, phi2, hyper)
    np.testing.assert_allclose(got, want, rtol=1e-7, atol=1e-10)


def test_small_instance_exact_limits():
    hyper = Hyperparameters(alpha=1.0, beta=1.0)
    # tiny variance: the intercepts sit at their means and the DM is evaluated once
    p0, psi = small_instance_exact((2, 1), [0.0, 0.0], [1e-10, 1e-10], hyper)
    assert p0 == 0.0
    # Dirichlet(1, 1) posterior after (2, 1): mean of psi_1 is 3/5
    assert psi == pytest.approx(3 / 5, abs=1e-8)


def test_small_instance_rejects_bad_counts():
    for z in [(0, 2), (3, 2), (0, 0)]:
        with pytest.raises(ValueError):
            small_instance(z=z, n_sweeps=10, burn_in=0)


@pytest.mark.parametrize("z", [(3, 0), (2, 1)])
def test_small_instance_short_run(z):
    res = small_instance(z=z, n_sweeps=20_000, burn_in=1_000, seed=2)
    z_eta, z_psi = res.z()
    assert abs(z_eta) < 4 and abs(z_psi) < 4


def test_test_values_layout():
    from funczidm.model import make_design, sample_prior
    from funczidm.basis import build_basis

    data = geweke_dataset()
    design = make_design(data, build_basis(data.times, 4))
    s = sample_prior(design, Hyperparameters(), np.random.default_rng(0))
    v = geweke_test_values(s)
    assert v.shape == (len(TEST_FUNCTIONS),)
    assert v[0] == s.beta[0, 0, 0] and v[1] == s.beta[0, 0, 0] ** 2
    assert v[-1] == s.eta.mean()


def test_short_geweke_run():
    res = geweke(n_sweeps=4_000, n_marginal=20_000, seed=3)
    assert res.n_sc == 4_000 and np.all(np.isfinite(res.z))
    assert res.max_abs_z() < 4.5
    assert "mean eta" in res.table()
