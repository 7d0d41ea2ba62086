"""Synthetic longitudinal compositions with known functional effects, and scorers.

Random streams are split so that everything about taxon ``j`` (its effect
assignment, at-risk probability, at-risk indicators and random intercepts)
and the whole design (visit counts, times, covariates) depend only on the
seed, not on ``J``.  Two datasets with the same seed and different ``J``
therefore share their first taxa's truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp
from scipy.stats import binom

from .basis import SplineBasis
from .data import LongitudinalDataset
from .draws import PosteriorDraws
from .inference import coefficient_curves, softmax
from .model import log_gamma_rvs, simulate_counts


def f1(t):
    return (-0.2 * (np.asarray(t, dtype=float) - 5.0) ** 2 + 5.0) / 7.0


def f2(t):
    return 1.0 / (1.75 + np.exp(-1.25 * (np.asarray(t, dtype=float) - 5.0)))


def f3(t):
    return 0.07 * np.asarray(t, dtype=float)


def f4(t):
    return np.full(np.shape(t), 0.5)


def f5(t):
    return np.zeros(np.shape(t))


TRUE_FUNCTIONS = (f1, f2, f3, f4, f5)
THETA_RANGES = ((0.0, 0.15), (0.15, 0.75), (0.75, 0.90))
SCORING_GRID = np.round(np.linspace(0.0, 10.0, 101), 10)


@dataclass
class SimulationTruth:
    """True generating parameters.

    ``kind[j, p]`` is the 1-based index of the function used for
    ``beta_jp(t)`` (5 = no effect) and ``sign[j, p]`` its sign; column 0 is
    the intercept.
    """

    kind: np.ndarray
    sign: np.ndarray
    r: np.ndarray
    eta: np.ndarray
    theta: np.ndarray
    seed: int
    n_active: int = 4
    settings: dict = field(default_factory=dict)

    @property
    def J(self) -> int:
        return self.kind.shape[0]

    @property
    def P(self) -> int:
        return self.kind.shape[1] - 1

    @property
    def N(self) -> int:
        return self.r.shape[0]

    def coefficients(self, t) -> np.ndarray:
        """True ``beta_jp(t)``, shape ``(G, J, P+1)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        table = np.stack([f(t) for f in TRUE_FUNCTIONS])  # [5, G]
        return np.moveaxis(table[self.kind - 1] * self.sign[..., None], -1, 0)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.tolist(), "sign": self.sign.tolist(), "r": self.r.tolist(),
            "eta": self.eta.tolist(), "theta": self.theta.tolist(), "seed": self.seed,
            "n_active": self.n_active, "settings": self.settings,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationTruth":
        return cls(kind=np.array(d["kind"], dtype=int), sign=np.array(d["sign"], dtype=int),
                   r=np.array(d["r"]), eta=np.array(d["eta"], dtype=np.int8),
                   theta=np.array(d["theta"]), seed=int(d["seed"]),
                   n_active=int(d.get("n_active", 4)), settings=d.get("settings", {}))

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict()))
        return path

    @classmethod
    def load(cls, path) -> "SimulationTruth":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def _truncated_bernoulli_column(g: np.random.Generator, N: int, theta: float, m: int
                                ) -> np.ndarray:
    """Bernoulli(theta) vector conditioned on at least ``m`` ones.

    Same law as redrawing until the condition holds, without the loop: the
    number of ones comes from the truncated binomial, their positions are
    uniform.
    """
    k = np.arange(m, N + 1)
    logp = binom.logpmf(k, N, theta)
    p = np.exp(logp - logp.max())
    n_on = g.choice(k, p=p / p.sum())
    col = np.zeros(N, dtype=np.int8)
    col[g.permutation(N)[:n_on]] = 1
    return col


def generate_dataset(J: int, seed: int, N: int = 50, P: int = 10, n_active: int = 4,
                     visits=(3, 10), time_range=(0.0, 10.0), depth=(1000, 10000),
                     min_at_risk: int = 5) -> tuple[LongitudinalDataset, SimulationTruth]:
    if J < n_active:
        raise ValueError("J must be at least the number of active taxa")
    if min_at_risk > N:
        raise ValueError("min_at_risk cannot exceed N")

    rng = _stream(seed, 0)
    n_obs = rng.integers(visits[0], visits[1] + 1, size=N)
    individual = np.repeat(np.arange(N), n_obs)
    times = np.concatenate([np.sort(rng.uniform(*time_range, size=k)) for k in n_obs])
    X = rng.standard_normal((individual.size, P))

    kind = np.full((J, P + 1), 5, dtype=int)
    sign = np.ones((J, P + 1), dtype=int)
    theta = np.empty(J)
    eta = np.empty((N, J), dtype=np.int8)
    r = np.empty((N, J))
    for j in range(J):
        g = _stream(seed, 1, j)
        kind[j, 0] = g.integers(1, 5)
        sign[j, 0] = g.choice((-1, 1))
        ks = g.integers(1, 6, size=P)
        ss = g.choice((-1, 1), size=P)
        if j < n_active:
            kind[j, 1:] = ks
            sign[j, 1:] = ss
        lo, hi = THETA_RANGES[g.integers(3)]
        theta[j] = g.uniform(lo, hi)
        eta[:, j] = _truncated_bernoulli_column(g, N, theta[j], min_at_risk)
        r[:, j] = g.uniform(-0.05, 0.05, size=N)

    # an individual with no at-risk taxon would have an undefined composition
    fix = _stream(seed, 3)
    for i in np.flatnonzero(eta.sum(axis=1) == 0):
        while eta[i].sum() == 0:
            eta[i] = fix.random(J) < theta

    truth = SimulationTruth(kind=kind, sign=sign, r=r, eta=eta, theta=theta, seed=seed,
                            n_active=n_active,
                            settings={"N": N, "P": P, "J": J, "visits": list(visits),
                                      "time_range": list(time_range), "depth": list(depth),
                                      "min_at_risk": min_at_risk})

    coef = truth.coefficients(times)  # [R, J, P+1]
    log_gamma = coef[..., 0] + np.einsum("rp,rjp->rj", X, coef[..., 1:]) + r[individual]
    counts_rng = _stream(seed, 2)
    at_risk = eta[individual].astype(bool)
    logc = np.where(at_risk, log_gamma_rvs(np.exp(log_gamma), 1.0, counts_rng), -np.inf)
    totals = counts_rng.integers(depth[0], depth[1] + 1, size=individual.size)
    Z = simulate_counts(logc, totals, counts_rng)

    data = LongitudinalDataset(
        ids=[f"id{i + 1}" for i in range(N)], individual=individual, times=times, X=X, Z=Z,
        covariate_names=[f"x{p + 1}" for p in range(P)],
        taxon_names=[f"taxon{j + 1}" for j in range(J)],
    )
    return data, truth


def true_log_gamma(truth: SimulationTruth, data: LongitudinalDataset) -> np.ndarray:
    coef = truth.coefficients(data.times)
    return (coef[..., 0] + np.einsum("rp,rjp->rj", data.X, coef[..., 1:])
            + truth.r[data.individual])


def true_delta_RA(truth: SimulationTruth, t, p: int, v: float = 1.0) -> np.ndarray:
    """True multiplicative difference for covariate ``p`` (0-based) at ``x = 0``, ``(G, J)``."""
    coef = truth.coefficients(t)
    lin = coef[..., 0]
    shift = v * coef[..., p + 1]
    return np.exp(shift + logsumexp(lin, axis=-1, keepdims=True)
                  - logsumexp(lin + shift, axis=-1, keepdims=True))


# ----------------------------------------------------------------- scoring
def interval_coverage(samples: np.ndarray, truth: np.ndarray, level: float = 0.95) -> np.ndarray:
    """Share of grid points (axis 1 of ``samples``) inside the pointwise interval.

    ``samples`` is ``(S, G, ...)`` and ``truth`` ``(G, ...)``; the result has
    the trailing shape.
    """
    a = (1.0 - level) / 2.0
    lo, hi = np.quantile(samples, [a, 1.0 - a], axis=0)
    return ((lo <= truth) & (truth <= hi)).mean(axis=0)


def armse(samples: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Mean over draws of the root mean squared error over the grid."""
    return np.sqrt(((samples - truth[None]) ** 2).mean(axis=1)).mean(axis=0)


def aitchison_distance(x, y) -> np.ndarray:
    """Distance between centred log-ratio transforms along the last axis."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if not (np.all(x > 0) and np.all(y > 0) and np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("Aitchison distance needs strictly positive compositions")
    lx, ly = np.log(x), np.log(y)
    clr = (lx - lx.mean(axis=-1, keepdims=True)) - (ly - ly.mean(axis=-1, keepdims=True))
    return np.sqrt((clr ** 2).sum(axis=-1))


def mean_aitchison_distance(draws: PosteriorDraws, truth: SimulationTruth,
                            data: LongitudinalDataset, basis: SplineBasis) -> float:
    """Mean over records of the distance between the posterior-mean and true
    subject-level expected compositions (``softmax`` of the log concentrations)."""
    from .model import log_gamma_matrix, make_design

    design = make_design(data, basis)
    est = np.zeros((data.R, data.J))
    for s in range(draws.n_draws):
        est += softmax(log_gamma_matrix(draws.beta[s], draws.r[s], design))
    est /= draws.n_draws
    true = softmax(true_log_gamma(truth, data))
    return float(aitchison_distance(est, true).mean())


@dataclass
class Scores:
    RA95: np.ndarray    # [J, P]
    B95: np.ndarray     # [J, P]
    ARMSE: np.ndarray   # [J, P]
    MeAD: float
    n_active: int

    def table_row(self) -> dict:
        a = slice(0, self.n_active)
        na = slice(self.n_active, None)
        def avg(m, sl):
            block = m[sl]
            return float(block.mean()) if block.size else float("nan")
        return {
            "MeAD": self.MeAD,
            "active_RA95": avg(self.RA95, a), "active_B95": avg(self.B95, a),
            "active_ARMSE": avg(self.ARMSE, a),
            "nonactive_RA95": avg(self.RA95, na), "nonactive_B95": avg(self.B95, na),
            "nonactive_ARMSE": avg(self.ARMSE, na),
        }


def score_draws(draws: PosteriorDraws, truth: SimulationTruth, grid=SCORING_GRID,
                level: float = 0.95, data: LongitudinalDataset | None = None,
                taxa_chunk: int = 32) -> Scores:
    """Coverage of delta-RA (v = 1, x = 0) and of beta_jp(t), ARMSE of delta-RA,
    for every taxon and covariate; MeAD when ``data`` is given."""
    basis = draws.basis
    grid = np.asarray(grid, dtype=float)
    J, P = truth.J, truth.P
    beta = draws.beta
    true_coef = truth.coefficients(grid)
    RA95 = np.empty((J, P))
    B95 = np.empty((J, P))
    ARMSE = np.empty((J, P))
    lin = coefficient_curves(beta[:, :, 0:1], basis, grid)[..., 0]  # [S, G, J]
    for p in range(P):
        curve = coefficient_curves(beta[:, :, [0, p + 1]], basis, grid)[..., 1]  # [S, G, J]
        num = logsumexp(lin, axis=-1)
        den = logsumexp(lin + curve, axis=-1)
        omega = true_delta_RA(truth, grid, p)
        for j0 in range(0, J, taxa_chunk):
            js = slice(j0, min(j0 + taxa_chunk, J))
            est = np.exp(curve[..., js] + (num - den)[..., None])
            RA95[js, p] = interval_coverage(est, omega[:, js], level)
            ARMSE[js, p] = armse(est, omega[:, js])
            B95[js, p] = interval_coverage(curve[..., js], true_coef[:, js, p + 1], level)
    mead = float("nan") if data is None else mean_aitchison_distance(draws, truth, data, basis)
    return Scores(RA95=RA95, B95=B95, ARMSE=ARMSE, MeAD=mead, n_active=truth.n_active)
