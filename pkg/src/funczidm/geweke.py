"""Exactness checks for the sampler.

``geweke`` compares prior draws pushed through the likelihood
(marginal-conditional) with a chain that alternates one sampler sweep and a
fresh draw of the counts given the weights (successive-conditional).  Both
target the same joint, so every test function should agree in mean.

``small_instance`` checks one individual with two taxa and a single visit
against direct numerical integration of the zero-inflated
Dirichlet-multinomial.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, roots_hermite

from .basis import SplineBasis, build_basis
from .data import LongitudinalDataset
from .model import (
    Hyperparameters,
    ParameterState,
    draw_weights,
    log_gamma_rvs,
    make_design,
    sample_prior,
    simulate_counts,
)
from .sampler import Sampler, SamplerConfig

TEST_FUNCTIONS = (
    "beta000", "beta000^2", "beta011", "beta011^2", "log phi2", "log phi2^2",
    "log tau2", "log tau2^2", "log kappa2", "log kappa2^2", "r00", "mean eta",
)


def batch_means_se(x: np.ndarray, n_batches: int = 50) -> np.ndarray:
    """Standard error of the mean of each column of ``x`` from non-overlapping batches."""
    x = np.asarray(x, dtype=float)
    n = (x.shape[0] // n_batches) * n_batches
    means = x[:n].reshape(n_batches, -1, *x.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(n_batches)


def test_values(state: ParameterState) -> np.ndarray:
    """Scalar summaries compared by the Geweke test.

    Log scales are used because ``tau2`` has no finite prior moments.
    """
    b0 = state.beta[0, 0, 0]
    b1 = state.beta[0, 1, 1]
    lp, lt, lk = np.log(state.phi2[0]), np.log(state.tau2[0]), np.log(state.kappa2[0])
    return np.array([b0, b0 ** 2, b1, b1 ** 2, lp, lp ** 2, lt, lt ** 2, lk, lk ** 2,
                     state.r[0, 0], state.eta.mean()])


@dataclass
class GewekeResult:
    names: tuple
    mc_mean: np.ndarray
    sc_mean: np.ndarray
    mc_se: np.ndarray
    sc_se: np.ndarray
    n_mc: int
    n_sc: int
    runtime: float
    acceptance: dict

    @property
    def z(self) -> np.ndarray:
        return (self.mc_mean - self.sc_mean) / np.sqrt(self.mc_se ** 2 + self.sc_se ** 2)

    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z)))

    def table(self) -> str:
        lines = [f"{'function':<14}{'marginal':>11}{'chain':>11}{'z':>8}"]
        for k, name in enumerate(self.names):
            lines.append(f"{name:<14}{self.mc_mean[k]:>11.4f}{self.sc_mean[k]:>11.4f}"
                         f"{self.z[k]:>8.2f}")
        return "\n".join(lines)


def geweke_dataset(J: int = 3, N: int = 5, P: int = 1, visits: int = 1,
                   depth=(1, 1), seed: int = 0) -> LongitudinalDataset:
    """A fixed design; counts are placeholders that the test overwrites."""
    rng = np.random.default_rng(seed)
    individual = np.repeat(np.arange(N), visits)
    times = np.concatenate([np.sort(rng.uniform(0, 10, visits)) for _ in range(N)])
    X = rng.standard_normal((individual.size, P))
    Z = np.zeros((individual.size, J), dtype=np.int64)
    Z[:, 0] = rng.integers(depth[0], depth[1] + 1, individual.size)
    return LongitudinalDataset(ids=list(range(N)), individual=individual, times=times, X=X, Z=Z)


def _prior_draw(design, hyper, rng):
    # the counts force at least one at-risk taxon per individual, so the
    # prior is truncated to that event
    while True:
        state = sample_prior(design, hyper, rng)
        if np.all(state.eta.sum(axis=1) > 0):
            return state


def geweke(n_sweeps: int = 50_000, n_marginal: int | None = None, J: int = 3, N: int = 5,
           P: int = 1, D: int = 4, hyper: Hyperparameters | None = None, seed: int = 0,
           n_batches: int = 50, config: SamplerConfig | None = None, visits: int = 1,
           depth=(1, 1)) -> GewekeResult:
    """Run both samplers and compare the test functions.

    The defaults keep the successive-conditional chain mixing: shallow
    counts and tighter variance priors.  With deep counts, or concentrations
    spread over several orders of magnitude, an at-risk pair almost never
    sees all-zero counts again, so the alternation of sweeps and count
    draws cannot switch it back, although each step is exact.
    """
    hyper = hyper or Hyperparameters(alpha=2.0, beta=2.0, a=3.0, b=1.0, zeta=100.0, rho=100.0,
                                     D=D)
    n_marginal = n_sweeps if n_marginal is None else n_marginal
    data = geweke_dataset(J=J, N=N, P=P, visits=visits, depth=depth, seed=seed)
    basis = build_basis(data.times, D)
    design = make_design(data, basis)
    totals = design.totals
    root = np.random.SeedSequence(seed)
    rng_mc, rng_sc = (np.random.default_rng(s) for s in root.spawn(2))
    started = time.perf_counter()

    mc = np.empty((n_marginal, len(TEST_FUNCTIONS)))
    for k in range(n_marginal):
        mc[k] = test_values(_prior_draw(design, hyper, rng_mc))

    state = _prior_draw(design, hyper, rng_sc)
    state.logc = draw_weights(state, design, rng_sc)
    Z = simulate_counts(state.logc, totals, rng_sc)
    state.u = np.exp(log_gamma_rvs(totals.astype(float), np.exp(state.logc).sum(axis=1), rng_sc))
    config = config or SamplerConfig(iterations=n_sweeps, burn_in=0, scale_beta=0.3)
    sampler = Sampler(design.with_counts(Z), hyper, config, rng_sc, state=state)
    sampler.freeze()
    sc = np.empty((n_sweeps, len(TEST_FUNCTIONS)))
    for k in range(n_sweeps):
        sampler.sweep()
        sampler.replace_counts(simulate_counts(sampler.state.logc, totals, rng_sc))
        sc[k] = test_values(sampler.state)

    return GewekeResult(
        names=TEST_FUNCTIONS, mc_mean=mc.mean(axis=0), sc_mean=sc.mean(axis=0),
        mc_se=mc.std(axis=0, ddof=1) / np.sqrt(n_marginal), sc_se=batch_means_se(sc, n_batches),
        n_mc=n_marginal, n_sc=n_sweeps, runtime=time.perf_counter() - started,
        acceptance=sampler.acceptance_summary())


# ------------------------------------------------------------ tiny oracle
@dataclass
class SmallInstanceResult:
    counts: tuple
    p_structural: float
    p_structural_se: float
    p_structural_exact: float
    psi1: float
    psi1_se: float
    psi1_exact: float

    def z(self) -> tuple[float, float]:
        z_eta = ((self.p_structural - self.p_structural_exact) / self.p_structural_se
                 if self.p_structural_se > 0 else
                 (0.0 if self.p_structural == self.p_structural_exact else np.inf))
        return z_eta, (self.psi1 - self.psi1_exact) / self.psi1_se


def small_instance_exact(z, mu, phi2, hyper: Hyperparameters, n_nodes: int = 80):
    """``P(eta_2 = 0 | z)`` and ``E[psi_1 | z]`` for one individual, two taxa.

    ``mu`` are the fixed parts of the log concentrations; the random
    intercepts are integrated out by tensor Gauss-Hermite quadrature and the
    weights in closed form (Dirichlet-multinomial).
    """
    z = np.asarray(z, dtype=float)
    mu = np.asarray(mu, dtype=float)
    x, w = roots_hermite(n_nodes)
    r1 = np.sqrt(2 * phi2[0]) * x[:, None]
    r2 = np.sqrt(2 * phi2[1]) * x[None, :]
    wt = np.outer(w, w) / np.pi
    g1, g2 = np.exp(mu[0] + r1), np.exp(mu[1] + r2)
    n = z.sum()
    log_dm = (gammaln(n + 1) - gammaln(z + 1).sum() + gammaln(g1 + g2) - gammaln(n + g1 + g2)
              + gammaln(z[0] + g1) - gammaln(g1) + gammaln(z[1] + g2) - gammaln(g2))
    dm = np.exp(log_dm)
    evidence_on = float((wt * dm).sum())
    psi_on = float((wt * dm * (g1 + z[0]) / (g1 + g2 + n)).sum()) / evidence_on
    # prior of eta_2 with the column's Beta integrated out (one individual)
    prior_on = hyper.alpha / (hyper.alpha + hyper.beta)
    if z[1] > 0:
        return 0.0, psi_on
    # eta_2 = 0 puts all mass on taxon 1, which reproduces z with probability one
    off = (1 - prior_on) * 1.0
    on = prior_on * evidence_on
    p0 = off / (off + on)
    return p0, p0 * 1.0 + (1 - p0) * psi_on


def small_instance(z=(3, 0), beta0=(0.3, -0.2), phi2=(0.5, 0.8), n_sweeps: int = 200_000,
                   burn_in: int = 2_000, hyper: Hyperparameters | None = None, seed: int = 0,
                   n_batches: int = 50) -> SmallInstanceResult:
    """Sample ``eta, c, u, r`` with coefficients and scales held fixed."""
    hyper = hyper or Hyperparameters(alpha=1.0, beta=1.0)
    z = np.asarray(z, dtype=np.int64)
    if z.size != 2 or not 0 < z.sum() <= 4 or z[0] == 0:
        raise ValueError("small instance expects two taxa, 1 <= total <= 4 and a positive "
                         "first count")
    data = LongitudinalDataset(ids=[0], individual=np.zeros(1, int), times=np.zeros(1),
                               X=np.zeros((1, 0)), Z=z[None])
    basis = SplineBasis(df=hyper.D, interior_knots=(0.5,), boundary=(0.0, 1.0))
    design = make_design(data, basis)
    rng = np.random.default_rng(seed)
    state = sample_prior(design, hyper, rng)
    state.beta[:] = 0.0
    state.beta[:, 0, 0] = beta0
    state.phi2 = np.asarray(phi2, dtype=float)
    state.r[:] = 0.0
    state.eta[:] = 1
    state.logc = draw_weights(state, design, rng)
    state.u = np.array([1.0])
    config = SamplerConfig(iterations=n_sweeps + burn_in, burn_in=burn_in,
                           fixed=("beta", "horseshoe", "kappa", "phi"))
    sampler = Sampler(design, hyper, config, rng, state=state)
    off = np.empty(n_sweeps)
    psi1 = np.empty(n_sweeps)
    for it in range(1, burn_in + n_sweeps + 1):
        sampler.sweep()
        if it <= burn_in:
            if it % config.adapt_window == 0:
                sampler.adapt_proposals()
            continue
        if it == burn_in + 1:
            sampler.freeze()
        k = it - burn_in - 1
        off[k] = sampler.state.eta[0, 1] == 0
        psi1[k] = sampler.state.psi()[0, 0]
    # beta[j, 0, 0] multiplies the leading 1 of the basis row
    exact_p0, exact_psi = small_instance_exact(z, np.asarray(beta0), np.asarray(phi2), hyper)
    return SmallInstanceResult(
        counts=tuple(int(v) for v in z), p_structural=float(off.mean()),
        p_structural_se=float(batch_means_se(off, n_batches)), p_structural_exact=exact_p0,
        psi1=float(psi1.mean()), psi1_se=float(batch_means_se(psi1, n_batches)),
        psi1_exact=exact_psi)
