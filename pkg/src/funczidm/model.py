"""Concentration regression, shrinkage prior and the augmented log-joint.

Notation used throughout the package (array shapes in brackets):

* ``beta``   [J, P+1, D+1]  spline coefficients; ``p = 0`` is the functional
  intercept.  Constant-coefficient covariates only use ``d = 0``.
* ``r``      [N, J]         individual/taxon random intercepts.
* ``eta``    [N, J]         at-risk indicators (1 = at risk).
* ``logc``   [R, J]         log of the unnormalised gamma weights; ``-inf``
  where the taxon is a structural zero for that individual.
* ``u``      [R]            per-record latent making the multinomial
  likelihood factorise over taxa.
* ``lam2``/``nu`` [J, P+1], ``tau2``/``xi``/``kappa2``/``phi2`` [J].

Every ``(p, d) != (0, 0)`` coefficient gets the regularised horseshoe prior
``Normal(0, kappa2 * lam2 * tau2 / (kappa2 + lam2 * tau2))``; ``beta[j, 0, 0]``
is ``Normal(0, 1)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.special import betaln, digamma, gammaln

from .basis import SplineBasis, evaluate_basis
from .data import LongitudinalDataset

LOG_2PI = float(np.log(2.0 * np.pi))
LGAMMA_HALF = float(gammaln(0.5))


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Hyperparameters:
    """Prior hyperparameters.

    ``alpha, beta``: Beta prior on each taxon's at-risk probability.
    ``a, b``: shape/rate of the Gamma prior on ``phi^-2``.
    ``zeta, rho``: shape/rate of the Gamma prior on ``kappa^-2``
    (so ``E[kappa^-2] = zeta / rho``).
    """

    alpha: float = 0.01
    beta: float = 10.0
    a: float = 3.0
    b: float = 9.0
    zeta: float = 100.0
    rho: float = 900.0
    D: int = 4
    l_default: float = 0.75

    def __post_init__(self) -> None:
        for name in ("alpha", "beta", "a", "b", "zeta", "rho"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ModelError(f"hyperparameter {name} must be > 0, got {value}")
        if self.D < 4:
            raise ModelError("D must be at least 4")
        if not 0.0 <= self.l_default < 1.0:
            raise ModelError("l_default must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Design:
    """Everything about the data the sampler needs, precomputed."""

    B: np.ndarray          # [R, D+1] basis rows
    X1: np.ndarray         # [R, P+1] covariates with a leading column of ones
    W: np.ndarray          # [R, P+1, D+1] = X1 (outer) B
    active: np.ndarray     # [P+1, D+1] coefficient exists
    shrunk: np.ndarray     # [P+1, D+1] coefficient carries the horseshoe prior
    Z: np.ndarray          # [R, J]
    individual: np.ndarray
    starts: np.ndarray
    N: int

    @property
    def R(self) -> int:
        return self.Z.shape[0]

    @property
    def J(self) -> int:
        return self.Z.shape[1]

    @property
    def P(self) -> int:
        return self.X1.shape[1] - 1

    @property
    def width(self) -> int:
        return self.B.shape[1]

    @property
    def m(self) -> np.ndarray:
        """Number of shrunk coefficients per block, shape [P+1]."""
        return self.shrunk.sum(axis=1)

    @property
    def totals(self) -> np.ndarray:
        return self.Z.sum(axis=1)

    def eligible(self) -> np.ndarray:
        """(N, J) bool: pairs whose counts are all zero, the only ones allowed eta = 0."""
        return np.add.reduceat(self.Z, self.starts, axis=0) == 0

    def with_counts(self, Z: np.ndarray) -> "Design":
        return Design(self.B, self.X1, self.W, self.active, self.shrunk, Z,
                      self.individual, self.starts, self.N)


def coefficient_masks(functional, width: int) -> tuple[np.ndarray, np.ndarray]:
    functional = np.asarray(functional, dtype=bool)
    active = np.ones((functional.size + 1, width), dtype=bool)
    active[1:][~functional, 1:] = False
    shrunk = active.copy()
    shrunk[0, 0] = False
    return active, shrunk


def make_design(data: LongitudinalDataset, basis: SplineBasis) -> Design:
    B = evaluate_basis(basis, data.times)
    X1 = np.column_stack([np.ones(data.R), data.X])
    active, shrunk = coefficient_masks(data.functional, basis.width)
    W = X1[:, :, None] * B[:, None, :]
    W = W * active[None]
    return Design(B=B, X1=X1, W=W, active=active, shrunk=shrunk, Z=data.Z.copy(),
                  individual=data.individual.copy(), starts=data.starts, N=data.N)


@dataclass
class ParameterState:
    beta: np.ndarray
    r: np.ndarray
    eta: np.ndarray
    logc: np.ndarray
    u: np.ndarray
    lam2: np.ndarray
    nu: np.ndarray
    tau2: np.ndarray
    xi: np.ndarray
    kappa2: np.ndarray
    phi2: np.ndarray

    def copy(self) -> "ParameterState":
        return ParameterState(**{f.name: getattr(self, f.name).copy() for f in fields(self)})

    @property
    def c(self) -> np.ndarray:
        return np.exp(self.logc)

    @property
    def T(self) -> np.ndarray:
        return self.c.sum(axis=1)

    def psi(self) -> np.ndarray:
        """Subject-level compositions ``c / T`` per record, [R, J]."""
        top = self.logc.max(axis=1, keepdims=True)
        w = np.exp(self.logc - top)
        return w / w.sum(axis=1, keepdims=True)

    def sigma2(self) -> np.ndarray:
        return shrinkage_variance(self.kappa2[:, None], self.lam2, self.tau2[:, None])


def shrinkage_variance(kappa2, lambda2, tau2):
    """Regularised horseshoe variance ``k2 l2 t2 / (k2 + l2 t2)``."""
    lt = np.multiply(lambda2, tau2)
    return kappa2 * lt / (kappa2 + lt)


def log_gamma_matrix(beta: np.ndarray, r: np.ndarray, design: Design) -> np.ndarray:
    """``log gamma_ij(t)`` for every record and taxon, [R, J]."""
    R = design.R
    flat = design.W.reshape(R, -1) @ beta.reshape(beta.shape[0], -1).T
    return flat + r[design.individual]


def log_concentration(state: ParameterState, design: Design, record: int, j: int) -> float:
    value = float(design.W[record].ravel() @ state.beta[j].ravel()
                  + state.r[design.individual[record], j])
    if not np.isfinite(value):
        raise ModelError(f"non-finite log concentration at record {record}, taxon {j}")
    return value


def log_gamma_rvs(shape, rate, rng: np.random.Generator) -> np.ndarray:
    """Log of Gamma(shape, rate) draws without underflow for tiny shapes."""
    shape = np.asarray(shape, dtype=float)
    rate = np.broadcast_to(np.asarray(rate, dtype=float), shape.shape)
    small = shape < 1.0
    g = rng.standard_gamma(np.where(small, shape + 1.0, shape))
    out = np.log(g)
    if small.any():
        uni = rng.random(shape.shape)
        out = np.where(small, out + np.log(uni) / np.where(small, shape, 1.0), out)
    return out - np.log(rate)


def invgamma_logpdf(x, a, b):
    return a * np.log(b) - gammaln(a) - (a + 1.0) * np.log(x) - b / x


def inverse_gamma_prior_logpdf(v, shape, rate):
    """Log density of ``v`` when ``1/v ~ Gamma(shape, rate)``."""
    w = 1.0 / v
    return shape * np.log(rate) - gammaln(shape) + (shape + 1.0) * np.log(w) - rate * w


def beta_binomial_column(n_at_risk, N: int, hyper: Hyperparameters):
    """Log prior of a column of at-risk indicators with the Beta mixed out."""
    n_at_risk = np.asarray(n_at_risk, dtype=float)
    return (betaln(hyper.alpha + n_at_risk, hyper.beta + N - n_at_risk)
            - betaln(hyper.alpha, hyper.beta))


def check_state(state: ParameterState, design: Design) -> None:
    """Raise ``ModelError`` when a state breaks a structural invariant."""
    at_risk = state.eta[design.individual].astype(bool)
    if np.any(np.isfinite(state.logc) != at_risk):
        raise ModelError("c must be positive exactly where eta = 1")
    if np.any(~state.eta.astype(bool) & ~design.eligible()):
        raise ModelError("structural zero contradicts positive count")
    for name in ("u", "lam2", "nu", "tau2", "xi", "kappa2", "phi2"):
        value = getattr(state, name)
        if not np.all((value > 0) & np.isfinite(value)):
            raise ModelError(f"{name} must be strictly positive")
    if np.any(state.beta[:, ~design.active] != 0):
        raise ModelError("inactive coefficients must stay at zero")


def log_joint_terms(state: ParameterState, design: Design, hyper: Hyperparameters,
                    mute_likelihood: bool = False) -> dict[str, np.ndarray]:
    """Additive pieces of the augmented log-joint.

    Keys map to arrays whose sums add up to ``augmented_log_joint``:
    ``record`` [R] (u and count terms), ``gamma`` [R, J] (Gamma density of
    the at-risk weights), ``eta`` [J], ``beta`` [J, P+1, D+1], ``r`` [N, J],
    ``lam2``, ``nu`` [J, P+1], ``tau2``, ``xi``, ``kappa2``, ``phi2`` [J].
    """
    Z = design.Z
    at_risk = state.eta[design.individual].astype(bool)
    if not mute_likelihood and np.any(Z[~at_risk] > 0):
        raise ModelError("structural zero contradicts positive count")
    logc = state.logc
    c = np.where(at_risk, np.exp(logc), 0.0)
    safe_logc = np.where(at_risk, logc, 0.0)
    terms: dict[str, np.ndarray] = {}

    if mute_likelihood:
        terms["record"] = np.zeros(design.R)
    else:
        zdot = design.totals
        terms["record"] = ((zdot - 1.0) * np.log(state.u) - state.u * c.sum(axis=1)
                           + (Z * safe_logc).sum(axis=1))

    log_gamma = log_gamma_matrix(state.beta, state.r, design)
    gamma = np.exp(log_gamma)
    terms["gamma"] = np.where(at_risk, (gamma - 1.0) * safe_logc - c - gammaln(gamma), 0.0)

    n_at_risk = state.eta.sum(axis=0)
    terms["eta"] = beta_binomial_column(n_at_risk, design.N, hyper)

    sig2 = state.sigma2()[:, :, None]
    bt = np.where(design.shrunk[None],
                  -0.5 * (LOG_2PI + np.log(sig2)) - 0.5 * state.beta ** 2 / sig2, 0.0)
    bt[:, 0, 0] = -0.5 * (LOG_2PI + state.beta[:, 0, 0] ** 2)
    terms["beta"] = bt

    terms["r"] = -0.5 * (LOG_2PI + np.log(state.phi2)) - 0.5 * state.r ** 2 / state.phi2
    terms["lam2"] = invgamma_logpdf(state.lam2, 0.5, 1.0 / state.nu)
    terms["nu"] = invgamma_logpdf(state.nu, 0.5, 1.0)
    terms["tau2"] = invgamma_logpdf(state.tau2, 0.5, 1.0 / state.xi)
    terms["xi"] = invgamma_logpdf(state.xi, 0.5, 1.0)
    terms["kappa2"] = inverse_gamma_prior_logpdf(state.kappa2, hyper.zeta, hyper.rho)
    terms["phi2"] = inverse_gamma_prior_logpdf(state.phi2, hyper.a, hyper.b)
    # Blocks that do not exist (constant covariates) have no local scale.
    has_block = design.m > 0
    terms["lam2"] = terms["lam2"] * has_block
    terms["nu"] = terms["nu"] * has_block
    return terms


def augmented_log_joint(state: ParameterState, design: Design, hyper: Hyperparameters,
                        mute_likelihood: bool = False) -> float:
    """Log of the augmented joint density, up to state-independent constants."""
    total = float(sum(np.sum(v) for v in log_joint_terms(state, design, hyper,
                                                         mute_likelihood).values()))
    if not np.isfinite(total):
        raise ModelError("non-finite augmented log-joint")
    return total


def gamma_shape_gradient(state: ParameterState, design: Design) -> np.ndarray:
    """Gradient of the Gamma-density term with respect to ``beta``, [J, P+1, D+1]."""
    at_risk = state.eta[design.individual].astype(bool)
    gamma = np.exp(log_gamma_matrix(state.beta, state.r, design))
    score = np.where(at_risk, gamma * (np.where(at_risk, state.logc, 0.0) - digamma(gamma)), 0.0)
    return np.einsum("rpd,rj->jpd", design.W, score)


def sample_prior(design: Design, hyper: Hyperparameters, rng: np.random.Generator,
                 ) -> ParameterState:
    """Draw coefficients and scales from the prior; latents are left empty."""
    J, P1, W = design.J, design.P + 1, design.width
    N = design.N
    nu = 1.0 / rng.gamma(0.5, 1.0, size=(J, P1))
    lam2 = (1.0 / nu) / rng.gamma(0.5, 1.0, size=(J, P1))
    xi = 1.0 / rng.gamma(0.5, 1.0, size=J)
    tau2 = (1.0 / xi) / rng.gamma(0.5, 1.0, size=J)
    kappa2 = 1.0 / rng.gamma(hyper.zeta, 1.0 / hyper.rho, size=J)
    phi2 = 1.0 / rng.gamma(hyper.a, 1.0 / hyper.b, size=J)
    sig = np.sqrt(shrinkage_variance(kappa2[:, None], lam2, tau2[:, None]))
    beta = rng.standard_normal((J, P1, W)) * sig[:, :, None]
    beta[:, 0, 0] = rng.standard_normal(J)
    beta *= design.active[None]
    r = rng.standard_normal((N, J)) * np.sqrt(phi2)
    theta = rng.beta(hyper.alpha, hyper.beta, size=J)
    eta = (rng.random((N, J)) < theta).astype(np.int8)
    return ParameterState(beta=beta, r=r, eta=eta, logc=np.full((design.R, J), -np.inf),
                          u=np.ones(design.R), lam2=lam2, nu=nu, tau2=tau2, xi=xi,
                          kappa2=kappa2, phi2=phi2)


def draw_weights(state: ParameterState, design: Design, rng: np.random.Generator,
                 rate=1.0) -> np.ndarray:
    """``log c ~ log Gamma(gamma, rate)`` for at-risk entries, ``-inf`` otherwise."""
    gamma = np.exp(log_gamma_matrix(state.beta, state.r, design))
    at_risk = state.eta[design.individual].astype(bool)
    rate = np.broadcast_to(np.asarray(rate, dtype=float).reshape(-1, 1)
                           if np.ndim(rate) else rate, gamma.shape)
    return np.where(at_risk, log_gamma_rvs(gamma, rate, rng), -np.inf)


def simulate_counts(logc: np.ndarray, totals: np.ndarray, rng: np.random.Generator
                    ) -> np.ndarray:
    """Multinomial counts with probabilities ``c / T`` per record."""
    top = logc.max(axis=1, keepdims=True)
    w = np.exp(logc - top)
    psi = w / w.sum(axis=1, keepdims=True)
    return rng.multinomial(np.asarray(totals, dtype=np.int64), psi)
