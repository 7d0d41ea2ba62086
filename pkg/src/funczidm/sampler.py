"""Metropolis-within-Gibbs sampler.

One sweep updates, in order: ``u -> c -> eta -> beta blocks -> r ->
horseshoe scales -> joint rescalings -> intercept shift -> kappa -> phi``.

Given the gamma weights ``c`` the concentration terms of different taxa are
disjoint, so the coefficient and random-intercept moves are proposed and
accepted independently for every taxon at once (vectorised), which is the
same kernel as visiting the taxa one after another.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import gammaln

from .basis import SplineBasis
from .data import LongitudinalDataset
from .draws import PosteriorDraws
from .model import (
    Design,
    Hyperparameters,
    ModelError,
    ParameterState,
    augmented_log_joint,
    check_state,
    log_gamma_matrix,
    log_gamma_rvs,
    make_design,
    sample_prior,
    shrinkage_variance,
)

log = logging.getLogger(__name__)

MOVE_FAMILIES = ("u", "c", "eta", "beta", "r", "horseshoe", "kappa", "phi")
WORKERS_ENV = "FUNCZIDM_WORKERS"


class DivergenceError(RuntimeError):
    def __init__(self, message: str, dump: dict | None = None):
        super().__init__(message)
        self.dump = dump or {}


@dataclass(frozen=True)
class SamplerConfig:
    """MCMC run settings.

    ``divergence_threshold``: a chain aborts once any ``|beta*|`` exceeds it.
    ``fixed``: move families held at their current value (for conditional
    runs and tests).  ``mute_likelihood`` drops the count terms so the chain
    targets the prior.  ``proposal`` is ``"identity"`` (adapted scalar scale
    per block) or ``"adaptive"`` (block covariance also learnt during burn-in).
    """

    iterations: int = 85_000
    burn_in: int = 45_000
    thin: int = 40
    seed: int = 0
    n_chains: int = 4
    adapt_window: int = 50
    target_accept_block: float = 0.3
    target_accept_scalar: float = 0.44
    adapt_rate: float = 1.0
    proposal: str = "identity"
    init_beta_range: float = 0.75
    init_r_range: float = 0.05
    scale_beta: float = 0.1
    scale_r: float = 0.3
    scale_kappa: float = 0.3
    scale_shrink: float = 1.0
    scale_joint: float = 0.3
    divergence_threshold: float = 50.0
    check_every: int = 1000
    drift_tolerance: float = 1e-6
    debug: bool = False
    fixed: tuple[str, ...] = ()
    mute_likelihood: bool = False
    progress_every: int = 0

    def __post_init__(self) -> None:
        if self.iterations < 0 or self.burn_in < 0:
            raise ValueError("iterations and burn_in must be non-negative")
        if self.iterations > 0 and not self.burn_in < self.iterations:
            raise ValueError("burn_in must be smaller than iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.n_chains < 1 or self.adapt_window < 1:
            raise ValueError("n_chains and adapt_window must be >= 1")
        for name in ("target_accept_block", "target_accept_scalar"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        unknown = set(self.fixed) - set(MOVE_FAMILIES)
        if unknown:
            raise ValueError(f"unknown move families {sorted(unknown)}")
        if self.proposal not in ("adaptive", "identity"):
            raise ValueError("proposal must be 'adaptive' or 'identity'")

    @property
    def n_retained(self) -> int:
        return max(self.iterations - self.burn_in, 0) // self.thin

    @classmethod
    def desk(cls, **overrides) -> "SamplerConfig":
        """Desk-scale preset: 15k iterations, 5k burn-in, thin 10."""
        base = dict(iterations=15_000, burn_in=5_000, thin=10, n_chains=1)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fixed"] = list(self.fixed)
        return d


@dataclass
class MoveLedger:
    """Accepted/proposed counts, cumulative and for the current adaptation window."""

    accepted: np.ndarray
    proposed: np.ndarray
    window_accepted: np.ndarray = field(init=False)
    window_proposed: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.window_accepted = np.zeros_like(self.accepted)
        self.window_proposed = np.zeros_like(self.proposed)

    @classmethod
    def zeros(cls, shape) -> "MoveLedger":
        return cls(np.zeros(shape), np.zeros(shape))

    def record(self, accepted, proposed=1.0) -> None:
        self.accepted += accepted
        self.proposed += proposed
        self.window_accepted += accepted
        self.window_proposed += proposed

    def record_column(self, p: int, accepted) -> None:
        for arr, value in ((self.accepted, accepted), (self.proposed, 1.0),
                           (self.window_accepted, accepted), (self.window_proposed, 1.0)):
            arr[:, p] += value

    def window_rate(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.window_proposed > 0,
                            self.window_accepted / np.maximum(self.window_proposed, 1), np.nan)

    def reset_window(self) -> None:
        self.window_accepted[...] = 0
        self.window_proposed[...] = 0

    def rate(self) -> float:
        total = self.proposed.sum()
        return float(self.accepted.sum() / total) if total else float("nan")


def adapt_scale(scale: np.ndarray, rate: np.ndarray, target: float, c: float = 1.0) -> np.ndarray:
    """``scale * exp(c * (rate - target))``; entries with no proposals are kept."""
    factor = np.exp(c * (np.nan_to_num(rate, nan=target) - target))
    return scale * factor


def _logu(rng: np.random.Generator, shape) -> np.ndarray:
    return np.log(rng.random(shape))


class Sampler:
    """Holds one chain's state, caches and proposal scales."""

    def __init__(self, design: Design, hyper: Hyperparameters, config: SamplerConfig,
                 rng: np.random.Generator, state: ParameterState | None = None,
                 basis: SplineBasis | None = None):
        self.design = design
        self.hyper = hyper
        self.cfg = config
        self.rng = rng
        self.basis = basis
        self.state = state if state is not None else initialize(design, hyper, config, rng)
        J, P1, W = design.J, design.P + 1, design.width
        N = design.N
        self.scale_beta = np.full((J, P1), config.scale_beta)
        self.chol_beta = np.broadcast_to(np.eye(W), (J, P1, W, W)).copy()
        self.scale_r = np.full((N, J), config.scale_r)
        self.scale_kappa = np.full(J, config.scale_kappa)
        self.scale_lam = np.full((J, P1), config.scale_shrink)
        self.scale_tau = np.full(J, config.scale_shrink)
        self.scale_joint = np.full(J, config.scale_joint)
        self.scale_local = np.full((J, P1), config.scale_joint)
        self.ledgers = {
            "eta": MoveLedger.zeros((N, J)),
            "beta": MoveLedger.zeros((J, P1)),
            "r": MoveLedger.zeros((N, J)),
            "lam2_gibbs": MoveLedger.zeros((J, P1)),
            "tau2_gibbs": MoveLedger.zeros(J),
            "lam2_rw": MoveLedger.zeros((J, P1)),
            "tau2_rw": MoveLedger.zeros(J),
            "joint": MoveLedger.zeros(J),
            "local": MoveLedger.zeros((J, P1)),
            "kappa": MoveLedger.zeros(J),
        }
        # running moments of each coefficient block, for the adaptive proposal
        self._n_moments = 0
        self._mean = np.zeros((J, P1, W))
        self._m2 = np.zeros((J, P1, W, W))
        self.adapting = True
        self._refresh_data()
        self.refresh_cache()

    # ------------------------------------------------------------------ caches
    def _refresh_data(self) -> None:
        d = self.design
        if self.cfg.mute_likelihood:
            self.eligible = np.ones((d.N, d.J), dtype=bool)
        else:
            self.eligible = d.eligible()
        self._elig_idx = [np.flatnonzero(row) for row in self.eligible]
        self._elig_rows = np.flatnonzero([idx.size > 0 for idx in self._elig_idx])
        self.totals = d.totals.astype(float)

    def refresh_cache(self) -> None:
        s, d = self.state, self.design
        self.lg = log_gamma_matrix(s.beta, s.r, d)
        self.g = np.exp(self.lg)
        self.gl = gammaln(self.g)
        self.at_risk = s.eta[d.individual].astype(bool)
        self.logc0 = np.where(self.at_risk, s.logc, 0.0)

    def replace_counts(self, Z: np.ndarray) -> None:
        """Swap in new counts for the same design (used by the Geweke harness)."""
        self.design = self.design.with_counts(Z)
        self._refresh_data()

    def check_drift(self) -> float:
        fresh = log_gamma_matrix(self.state.beta, self.state.r, self.design)
        drift = float(np.max(np.abs(fresh - self.lg))) if fresh.size else 0.0
        if not np.isfinite(drift) or drift > self.cfg.drift_tolerance:
            raise ModelError(f"cached log concentrations drifted by {drift:g}")
        self.refresh_cache()
        return drift

    # ------------------------------------------------------------------- moves
    def update_u(self) -> None:
        s = self.state
        top = s.logc.max(axis=1)
        if np.any(~np.isfinite(top)):
            raise ModelError("record with positive counts has no at-risk taxa (T = 0)")
        log_T = top + np.log(np.exp(s.logc - top[:, None]).sum(axis=1))
        s.u = np.exp(log_gamma_rvs(self.totals, np.exp(log_T), self.rng))

    def update_c(self) -> None:
        s = self.state
        if self.cfg.mute_likelihood:
            shape, rate = self.g, 1.0
        else:
            shape, rate = self.design.Z + self.g, (1.0 + s.u)[:, None]
        draws = log_gamma_rvs(shape, np.broadcast_to(rate, shape.shape), self.rng)
        s.logc = np.where(self.at_risk, draws, -np.inf)
        self.logc0 = np.where(self.at_risk, s.logc, 0.0)

    def eta_log_odds(self) -> np.ndarray:
        """(N, J) log of ``p(eta=1, c integrated | u) / p(eta=0)`` without the prior odds."""
        d, s = self.design, self.state
        if self.cfg.mute_likelihood:
            return np.zeros((d.N, d.J))
        return -np.add.reduceat(self.g * np.log1p(s.u)[:, None], d.starts, axis=0)

    def update_eta(self) -> None:
        """Flip proposals for every eligible pair; new weights come from their full conditional."""
        s, d, h = self.state, self.design, self.hyper
        if self._elig_rows.size == 0:
            return
        lik = self.eta_log_odds()
        eta = s.eta
        before = eta.copy()
        n1 = eta.sum(axis=0).astype(float)
        N = d.N
        acc = np.zeros((N, d.J))
        prop = np.zeros((N, d.J))
        for i in self._elig_rows:
            js = self._elig_idx[i]
            e = eta[i, js]
            n_other = n1[js] - e
            log_on = (np.log(h.alpha + n_other) - np.log(h.beta + N - 1.0 - n_other)
                      + lik[i, js])
            log_ratio = np.where(e == 1, -log_on, log_on)
            flip = _logu(self.rng, js.size) < log_ratio
            if flip.any():
                jf = js[flip]
                eta[i, jf] = 1 - eta[i, jf]
                n1[jf] += np.where(eta[i, jf] == 1, 1.0, -1.0)
            acc[i, js] = flip
            prop[i, js] = 1.0
        self.ledgers["eta"].record(acc, prop)
        changed = eta != before
        if changed.any():
            rows = changed[d.individual]
            self.at_risk = eta[d.individual].astype(bool)
            if self.cfg.mute_likelihood:
                rate = np.ones_like(self.g)
            else:
                rate = np.broadcast_to((1.0 + s.u)[:, None], self.g.shape)
            fresh = log_gamma_rvs(self.g, rate, self.rng)
            s.logc = np.where(rows, np.where(self.at_risk, fresh, -np.inf), s.logc)
            self.logc0 = np.where(self.at_risk, s.logc, 0.0)

    def _data_diff(self, new_g, new_gl) -> np.ndarray:
        """[R, J] change of the Gamma-density terms when concentrations change."""
        return np.where(self.at_risk, (new_g - self.g) * self.logc0 - (new_gl - self.gl), 0.0)

    def beta_block_log_ratio(self, p: int, delta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-taxon log acceptance ratio for ``beta[:, p] += delta`` and the implied
        change of the log concentrations."""
        s, d = self.state, self.design
        dlg = d.W[:, p, :] @ delta.T
        # overflowing proposals give a non-finite ratio and are rejected
        with np.errstate(over="ignore", invalid="ignore"):
            new_g = np.exp(self.lg + dlg)
            data = self._data_diff(new_g, gammaln(new_g)).sum(axis=0)
        old = s.beta[:, p, :]
        new = old + delta
        if p == 0:
            sig2 = s.sigma2()[:, 0]
            sq = (new ** 2 - old ** 2)
            prior = -0.5 * sq[:, 0] - 0.5 * (sq[:, 1:] * d.shrunk[0, 1:]).sum(axis=1) / sig2
        else:
            sig2 = s.sigma2()[:, p]
            prior = -0.5 * ((new ** 2 - old ** 2) * d.shrunk[p]).sum(axis=1) / sig2
        return data + prior, dlg

    def update_beta(self) -> None:
        s, d = self.state, self.design
        J, W = d.J, d.width
        for p in range(d.P + 1):
            z = self.rng.standard_normal((J, W))
            delta = np.einsum("jab,jb->ja", self.chol_beta[:, p], z)
            delta *= self.scale_beta[:, p, None] * d.active[p]
            log_ratio, dlg = self.beta_block_log_ratio(p, delta)
            ok = np.isfinite(log_ratio)
            if not ok.all():
                log.warning("non-finite beta ratio for %d blocks; rejected", int((~ok).sum()))
            accept = ok & (_logu(self.rng, J) < np.where(ok, log_ratio, -np.inf))
            self.ledgers["beta"].record_column(p, accept)
            if accept.any():
                s.beta[accept, p, :] += delta[accept]
                self.lg[:, accept] += dlg[:, accept]
                self.g[:, accept] = np.exp(self.lg[:, accept])
                self.gl[:, accept] = gammaln(self.g[:, accept])

    def r_log_ratio(self, delta: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        s, d = self.state, self.design
        new_lg = self.lg + delta[d.individual]
        with np.errstate(over="ignore", invalid="ignore"):
            new_g = np.exp(new_lg)
            new_gl = gammaln(new_g)
            data = np.add.reduceat(self._data_diff(new_g, new_gl), d.starts, axis=0)
        new = s.r + delta
        prior = -0.5 * (new ** 2 - s.r ** 2) / s.phi2
        return data + prior, new_lg, (new_g, new_gl)

    def update_r(self) -> None:
        s, d = self.state, self.design
        delta = self.rng.standard_normal(s.r.shape) * self.scale_r
        log_ratio, new_lg, (new_g, new_gl) = self.r_log_ratio(delta)
        ok = np.isfinite(log_ratio)
        accept = ok & (_logu(self.rng, s.r.shape) < np.where(ok, log_ratio, -np.inf))
        self.ledgers["r"].record(accept)
        s.r = np.where(accept, s.r + delta, s.r)
        rows = accept[d.individual]
        self.lg = np.where(rows, new_lg, self.lg)
        self.g = np.where(rows, new_g, self.g)
        self.gl = np.where(rows, new_gl, self.gl)

    def _block_sums(self) -> np.ndarray:
        return (self.state.beta ** 2 * self.design.shrunk[None]).sum(axis=2)

    def update_horseshoe(self) -> None:
        """Local then global scales.

        Each scale gets (i) an independence proposal from its unregularised
        inverse-gamma conditional with an MH correction for the slab, then
        (ii) a random walk on the log scale; both leave the exact
        conditional invariant.
        """
        s, d, rng = self.state, self.design, self.rng
        m = d.m.astype(float)[None, :]
        S = self._block_sums()

        s.nu = (1.0 + 1.0 / s.lam2) / rng.standard_gamma(1.0, s.lam2.shape)
        prop = (1.0 / s.nu + S / (2.0 * s.tau2[:, None])) / rng.standard_gamma(
            np.broadcast_to((m + 1.0) / 2.0, s.lam2.shape))
        tk = (s.tau2 / s.kappa2)[:, None]
        log_ratio = 0.5 * m * (np.log1p(prop * tk) - np.log1p(s.lam2 * tk))
        accept = _logu(rng, s.lam2.shape) < log_ratio
        self.ledgers["lam2_gibbs"].record(accept)
        s.lam2 = np.where(accept, prop, s.lam2)

        step = rng.standard_normal(s.lam2.shape) * self.scale_lam
        prop = s.lam2 * np.exp(step)
        log_ratio = (self._lam2_logpost(prop, S) - self._lam2_logpost(s.lam2, S))
        accept = _logu(rng, s.lam2.shape) < log_ratio
        self.ledgers["lam2_rw"].record(accept)
        s.lam2 = np.where(accept, prop, s.lam2)

        m_j = d.m.sum()
        s.xi = (1.0 + 1.0 / s.tau2) / rng.standard_gamma(1.0, s.tau2.shape)
        prop = (1.0 / s.xi + (S / (2.0 * s.lam2)).sum(axis=1)) / rng.standard_gamma(
            (m_j + 1.0) / 2.0, s.tau2.shape)
        lk = s.lam2 / s.kappa2[:, None]
        log_ratio = (0.5 * m * (np.log1p(prop[:, None] * lk)
                                - np.log1p(s.tau2[:, None] * lk))).sum(axis=1)
        accept = _logu(rng, s.tau2.shape) < log_ratio
        self.ledgers["tau2_gibbs"].record(accept)
        s.tau2 = np.where(accept, prop, s.tau2)

        step = rng.standard_normal(s.tau2.shape) * self.scale_tau
        prop = s.tau2 * np.exp(step)
        log_ratio = self._tau2_logpost(prop, S) - self._tau2_logpost(s.tau2, S)
        accept = _logu(rng, s.tau2.shape) < log_ratio
        self.ledgers["tau2_rw"].record(accept)
        s.tau2 = np.where(accept, prop, s.tau2)

    def joint_scale_log_ratio(self, eps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-taxon log ratio for multiplying every shrunk coefficient by
        ``exp(eps)`` and ``tau2`` by ``exp(2 eps)``, with the change in log
        concentrations."""
        s, d = self.state, self.design
        f = np.exp(eps)
        shrunk = (s.beta * d.shrunk[None]).reshape(d.J, -1)
        dlg = (d.W.reshape(d.R, -1) @ shrunk.T) * (f - 1.0)[None, :]
        # overflowing proposals give a non-finite ratio and are rejected
        with np.errstate(over="ignore", invalid="ignore"):
            new_g = np.exp(self.lg + dlg)
            data = self._data_diff(new_g, gammaln(new_g)).sum(axis=0)
        S = self._block_sums()
        prior = (self._tau2_logpost(s.tau2 * f ** 2, S * (f ** 2)[:, None])
                 - self._tau2_logpost(s.tau2, S))
        return data + prior + d.m.sum() * eps, dlg

    def update_joint_scale(self) -> None:
        """Move along the coefficient/global-scale funnel, which single-block
        random walks cross slowly when the data are weak."""
        s, d = self.state, self.design
        eps = self.rng.standard_normal(d.J) * self.scale_joint
        log_ratio, dlg = self.joint_scale_log_ratio(eps)
        ok = np.isfinite(log_ratio)
        accept = ok & (_logu(self.rng, d.J) < np.where(ok, log_ratio, -np.inf))
        self.ledgers["joint"].record(accept)
        if accept.any():
            f = np.where(accept, np.exp(eps), 1.0)
            s.beta = np.where(d.shrunk[None], s.beta * f[:, None, None], s.beta)
            s.tau2 = s.tau2 * f ** 2
            self.lg[:, accept] += dlg[:, accept]
            self.g[:, accept] = np.exp(self.lg[:, accept])
            self.gl[:, accept] = gammaln(self.g[:, accept])

    def local_scale_log_ratio(self, p: int, eps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-taxon log ratio for multiplying the shrunk part of block ``p`` by
        ``exp(eps)`` and ``lam2[:, p]`` by ``exp(2 eps)``."""
        s, d = self.state, self.design
        f = np.exp(eps)
        shrunk = s.beta[:, p, :] * d.shrunk[p]
        dlg = (d.W[:, p, :] @ shrunk.T) * (f - 1.0)[None, :]
        # overflowing proposals give a non-finite ratio and are rejected
        with np.errstate(over="ignore", invalid="ignore"):
            new_g = np.exp(self.lg + dlg)
            data = self._data_diff(new_g, gammaln(new_g)).sum(axis=0)
        S = self._block_sums()
        lam2 = s.lam2.copy()
        lam2[:, p] *= f ** 2
        S_new = S.copy()
        S_new[:, p] *= f ** 2
        prior = (self._lam2_logpost(lam2, S_new) - self._lam2_logpost(s.lam2, S))[:, p]
        return data + prior + d.m[p] * eps, dlg

    def update_local_scales(self) -> None:
        s, d = self.state, self.design
        for p in np.flatnonzero(d.m > 0):
            eps = self.rng.standard_normal(d.J) * self.scale_local[:, p]
            log_ratio, dlg = self.local_scale_log_ratio(p, eps)
            ok = np.isfinite(log_ratio)
            accept = ok & (_logu(self.rng, d.J) < np.where(ok, log_ratio, -np.inf))
            self.ledgers["local"].record_column(p, accept)
            if accept.any():
                f = np.where(accept, np.exp(eps), 1.0)
                s.beta[:, p, :] = np.where(d.shrunk[p], s.beta[:, p, :] * f[:, None],
                                           s.beta[:, p, :])
                s.lam2[:, p] *= f ** 2
                self.lg[:, accept] += dlg[:, accept]
                self.g[:, accept] = np.exp(self.lg[:, accept])
                self.gl[:, accept] = gammaln(self.g[:, accept])

    def update_intercept_shift(self) -> None:
        """Gibbs draw along ``beta[j, 0, 0] - delta, r[:, j] + delta``.

        The concentrations do not change, so only the two Gaussian priors
        enter and the shift has a normal full conditional.
        """
        s = self.state
        N = self.design.N
        prec = 1.0 + N / s.phi2
        mean = (s.beta[:, 0, 0] - s.r.sum(axis=0) / s.phi2) / prec
        delta = mean + self.rng.standard_normal(s.phi2.shape) / np.sqrt(prec)
        s.beta[:, 0, 0] -= delta
        s.r += delta[None, :]

    def _coef_loglik(self, sig2: np.ndarray, S: np.ndarray) -> np.ndarray:
        m = self.design.m[None, :]
        return -0.5 * m * np.log(sig2) - 0.5 * S / sig2

    def _lam2_logpost(self, lam2, S) -> np.ndarray:
        """Conditional of ``lam2`` on the log scale (Jacobian included)."""
        s = self.state
        sig2 = shrinkage_variance(s.kappa2[:, None], lam2, s.tau2[:, None])
        # InvGamma(1/2, 1/nu) density times lam2
        return -0.5 * np.log(lam2) - 1.0 / (s.nu * lam2) + self._coef_loglik(sig2, S)

    def _tau2_logpost(self, tau2, S) -> np.ndarray:
        s = self.state
        sig2 = shrinkage_variance(s.kappa2[:, None], s.lam2, tau2[:, None])
        return (-0.5 * np.log(tau2) - 1.0 / (s.xi * tau2)
                + self._coef_loglik(sig2, S).sum(axis=1))

    def kappa_log_target(self, kappa2: np.ndarray) -> np.ndarray:
        """Log density of ``log kappa2`` given everything else, per taxon."""
        s, h = self.state, self.hyper
        w = 1.0 / kappa2
        sig2 = shrinkage_variance(kappa2[:, None], s.lam2, s.tau2[:, None])
        return h.zeta * np.log(w) - h.rho * w + self._coef_loglik(sig2, self._block_sums()).sum(axis=1)

    def update_kappa(self) -> None:
        s = self.state
        prop = s.kappa2 * np.exp(self.rng.standard_normal(s.kappa2.shape) * self.scale_kappa)
        log_ratio = self.kappa_log_target(prop) - self.kappa_log_target(s.kappa2)
        accept = _logu(self.rng, s.kappa2.shape) < log_ratio
        self.ledgers["kappa"].record(accept)
        s.kappa2 = np.where(accept, prop, s.kappa2)

    def update_phi(self) -> None:
        s, h = self.state, self.hyper
        shape = h.a + 0.5 * self.design.N
        rate = h.b + 0.5 * (s.r ** 2).sum(axis=0)
        s.phi2 = rate / self.rng.standard_gamma(shape, s.phi2.shape)

    # -------------------------------------------------------------- adaptation
    def _accumulate_moments(self) -> None:
        x = self.state.beta
        self._n_moments += 1
        dx = x - self._mean
        self._mean += dx / self._n_moments
        self._m2 += dx[..., :, None] * (x - self._mean)[..., None, :]

    def adapt_proposals(self) -> None:
        """Rescale every family's proposal by ``exp(rate - target)`` over the last window."""
        c = self.cfg.adapt_rate
        L = self.ledgers
        self.scale_beta = adapt_scale(self.scale_beta, L["beta"].window_rate(),
                                      self.cfg.target_accept_block, c)
        tgt = self.cfg.target_accept_scalar
        self.scale_r = adapt_scale(self.scale_r, L["r"].window_rate(), tgt, c)
        self.scale_kappa = adapt_scale(self.scale_kappa, L["kappa"].window_rate(), tgt, c)
        self.scale_lam = adapt_scale(self.scale_lam, L["lam2_rw"].window_rate(), tgt, c)
        self.scale_tau = adapt_scale(self.scale_tau, L["tau2_rw"].window_rate(), tgt, c)
        self.scale_joint = adapt_scale(self.scale_joint, L["joint"].window_rate(), tgt, c)
        self.scale_local = adapt_scale(self.scale_local, L["local"].window_rate(), tgt, c)
        for ledger in L.values():
            ledger.reset_window()
        if self.cfg.proposal == "adaptive" and self._n_moments >= 2 * self.cfg.adapt_window:
            self._update_block_covariance()

    def _update_block_covariance(self) -> None:
        d = self.design
        W = d.width
        cov = self._m2 / (self._n_moments - 1)
        mask = d.active[None, :, :, None] & d.active[None, :, None, :]
        cov = np.where(mask, cov, 0.0)
        diag = np.einsum("jpaa->jpa", cov)
        jitter = 1e-6 * np.maximum(diag.max(axis=-1, keepdims=True), 1e-8)
        cov = cov + np.eye(W) * jitter[..., None]
        # trace fixed at the block dimension, so the scalar scale keeps its meaning
        trace = np.einsum("jpaa->jp", cov)
        cov = cov * (d.active.sum(axis=1)[None, :] / trace)[..., None, None]
        try:
            self.chol_beta = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            log.warning("block covariance not positive definite; keeping previous proposal")

    def freeze(self) -> None:
        self.adapting = False

    # ------------------------------------------------------------------- sweep
    def sweep(self) -> None:
        fixed = self.cfg.fixed
        if "u" not in fixed and not self.cfg.mute_likelihood:
            self.update_u()
        if "c" not in fixed:
            self.update_c()
        if "eta" not in fixed:
            self.update_eta()
        if "beta" not in fixed:
            self.update_beta()
        if "r" not in fixed:
            self.update_r()
        if "horseshoe" not in fixed:
            self.update_horseshoe()
            if "beta" not in fixed:
                self.update_local_scales()
                self.update_joint_scale()
        if "beta" not in fixed and "r" not in fixed:
            self.update_intercept_shift()
        if "kappa" not in fixed:
            self.update_kappa()
        if "phi" not in fixed:
            self.update_phi()
        if self.adapting and self.cfg.proposal == "adaptive":
            self._accumulate_moments()

    def log_joint(self) -> float:
        return augmented_log_joint(self.state, self.design, self.hyper, self.cfg.mute_likelihood)

    def acceptance_summary(self) -> dict:
        return {name: ledger.rate() for name, ledger in self.ledgers.items()}

    def guard(self, iteration: int) -> None:
        worst = float(np.max(np.abs(self.state.beta))) if self.state.beta.size else 0.0
        if not worst <= self.cfg.divergence_threshold:
            raise DivergenceError(
                f"|beta*| reached {worst:.3g} at iteration {iteration}",
                dump=self.diagnostic_dump(iteration))

    def diagnostic_dump(self, iteration: int) -> dict:
        s = self.state
        j, p, dd = np.unravel_index(np.argmax(np.abs(s.beta)), s.beta.shape)
        return {
            "iteration": iteration,
            "max_abs_beta": float(np.max(np.abs(s.beta))),
            "worst_block": [int(j), int(p)],
            "worst_block_values": s.beta[j, p].tolist(),
            "kappa2": s.kappa2.tolist(),
            "tau2": s.tau2.tolist(),
            "acceptance": self.acceptance_summary(),
        }


def initialize(design: Design, hyper: Hyperparameters, config: SamplerConfig,
               rng: np.random.Generator) -> ParameterState:
    """Starting state.

    Scales come from their priors; coefficients and random intercepts are
    uniform around zero; a pair starts structural exactly when all of its
    counts are zero; weights and ``u`` come from their conditionals.
    """
    state = sample_prior(design, hyper, rng)
    beta = rng.uniform(-config.init_beta_range, config.init_beta_range, state.beta.shape)
    state.beta = beta * design.active[None]
    state.r = rng.uniform(-config.init_r_range, config.init_r_range, state.r.shape)
    state.eta = (~design.eligible()).astype(np.int8)
    gamma = np.exp(log_gamma_matrix(state.beta, state.r, design))
    at_risk = state.eta[design.individual].astype(bool)
    state.logc = np.where(at_risk, log_gamma_rvs(gamma, 1.0, rng), -np.inf)
    if config.mute_likelihood:
        state.u = np.ones(design.R)
    else:
        T = np.exp(state.logc).sum(axis=1)
        state.u = rng.gamma(design.totals.astype(float), 1.0 / T)
    return state


def run_chain(data: LongitudinalDataset | Design, hyper: Hyperparameters, basis: SplineBasis,
              config: SamplerConfig, seed=None, label: str = "chain0",
              state: ParameterState | None = None) -> PosteriorDraws:
    """Run one chain and return its thinned post-burn-in draws."""
    design = data if isinstance(data, Design) else make_design(data, basis)
    seed = config.seed if seed is None else seed
    rng_seed = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    rng = np.random.default_rng(rng_seed)
    started = time.perf_counter()
    sampler = Sampler(design, hyper, config, rng, state=state, basis=basis)
    S = config.n_retained
    J, P1, W, N = design.J, design.P + 1, design.width, design.N
    out = {
        "beta": np.empty((S, J, P1, W)), "r": np.empty((S, N, J)),
        "eta": np.empty((S, N, J), dtype=np.int8), "phi2": np.empty((S, J)),
        "kappa2": np.empty((S, J)), "tau2": np.empty((S, J)), "lam2": np.empty((S, J, P1)),
    }
    k = 0
    for it in range(1, config.iterations + 1):
        sampler.sweep()
        sampler.guard(it)
        if config.debug:
            check_state(sampler.state, sampler.design)
        if it <= config.burn_in and it % config.adapt_window == 0:
            sampler.adapt_proposals()
        if it == config.burn_in:
            sampler.freeze()
        if it % config.check_every == 0:
            sampler.check_drift()
            lj = sampler.log_joint()
            if not np.isfinite(lj):
                raise DivergenceError(f"non-finite log-joint at iteration {it}",
                                      dump=sampler.diagnostic_dump(it))
        if config.progress_every and it % config.progress_every == 0:
            acc = sampler.acceptance_summary()
            log.info("%s it=%d logjoint=%.2f acc=%s", label, it, sampler.log_joint(),
                     {key: round(v, 3) for key, v in acc.items()})
        if it > config.burn_in and (it - config.burn_in) % config.thin == 0:
            s = sampler.state
            out["beta"][k] = s.beta
            out["r"][k] = s.r
            out["eta"][k] = s.eta
            out["phi2"][k] = s.phi2
            out["kappa2"][k] = s.kappa2
            out["tau2"][k] = s.tau2
            out["lam2"][k] = s.lam2
            k += 1
    assert k == S
    meta = {
        "chain": label,
        "seed": np.atleast_1d(rng_seed.entropy).tolist(),
        "spawn_key": list(rng_seed.spawn_key),
        "dims": {"N": N, "J": J, "P": design.P, "D": W - 1, "R": design.R},
        "functional": design.active[1:, 1:].any(axis=1).tolist(),
        "basis": basis.to_dict() if basis is not None else None,
        "hyper": hyper.to_dict(),
        "config": config.to_dict(),
        "acceptance": sampler.acceptance_summary(),
        "runtime_seconds": time.perf_counter() - started,
    }
    return PosteriorDraws(meta=meta, **out)


def _run_one(args):
    data, hyper, basis, config, seed_seq, label = args
    return run_chain(data, hyper, basis, config, seed=seed_seq, label=label)


def worker_count(default: int = 1) -> int:
    value = os.environ.get(WORKERS_ENV)
    return max(int(value), 1) if value else default


def run_chains(data: LongitudinalDataset, hyper: Hyperparameters, basis: SplineBasis,
               config: SamplerConfig, workers: int | None = None) -> list[PosteriorDraws]:
    """``config.n_chains`` chains with independent spawned RNG streams."""
    seqs = np.random.SeedSequence(int(config.seed)).spawn(config.n_chains)
    jobs = [(data, hyper, basis, config, sq, f"chain{k}") for k, sq in enumerate(seqs)]
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(jobs) == 1:
        return [_run_one(job) for job in jobs]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(_run_one, jobs))
