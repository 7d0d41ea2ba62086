"""Population-level summaries over posterior draws.

All functions accept a coefficient array ``beta`` shaped ``(J, P+1, D+1)``
for a single draw or ``(S, J, P+1, D+1)`` for many; leading axes are
carried through to the output.  Time arguments may be scalars or arrays.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .basis import SplineBasis, evaluate_basis
from .data import CovariateProfile, LongitudinalDataset
from .draws import PosteriorDraws
from .model import log_gamma_matrix, log_gamma_rvs, make_design, simulate_counts


class InferenceError(ValueError):
    pass


def _beta(draw) -> np.ndarray:
    return draw.beta if isinstance(draw, PosteriorDraws) else np.asarray(draw, dtype=float)


def _grid(t) -> tuple[np.ndarray, bool]:
    scalar = np.ndim(t) == 0
    return np.atleast_1d(np.asarray(t, dtype=float)), scalar


def coefficient_curves(draw, basis: SplineBasis, t) -> np.ndarray:
    """``beta_jp(t)``; shape ``(..., G, J, P+1)`` (``G`` dropped for scalar ``t``)."""
    beta = _beta(draw)
    t, scalar = _grid(t)
    B = evaluate_basis(basis, t)
    out = np.einsum("gd,...jpd->...gjp", B, beta)
    return out[..., 0, :, :] if scalar else out


def linear_predictor(draw, basis: SplineBasis, t, profile: CovariateProfile) -> np.ndarray:
    """``beta_j0(t) + x(t) beta_j(t)`` without random intercepts, ``(..., G, J)``."""
    t, scalar = _grid(t)
    curves = coefficient_curves(draw, basis, t)
    x = profile(t)
    if x.shape[1] != curves.shape[-1] - 1:
        raise InferenceError("profile length does not match the number of covariates")
    eta = curves[..., 0] + np.einsum("gp,...gjp->...gj", x, curves[..., 1:])
    return eta[..., 0, :] if scalar else eta


def softmax(a: np.ndarray, axis: int = -1) -> np.ndarray:
    a = a - a.max(axis=axis, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=axis, keepdims=True)


def relative_abundance(draw, basis: SplineBasis, t, profile: CovariateProfile) -> np.ndarray:
    """Expected relative abundance of each taxon at ``t`` under ``profile``."""
    return softmax(linear_predictor(draw, basis, t, profile))


def delta_RA(draw, basis: SplineBasis, t, profile: CovariateProfile, p: int, v: float
             ) -> np.ndarray:
    """Multiplicative change in relative abundance for a ``v``-unit change in covariate ``p``.

    ``p`` indexes covariates from 0 (the intercept is not a covariate here).
    """
    t, scalar = _grid(t)
    curves = coefficient_curves(draw, basis, t)
    x = profile(t)
    base = np.einsum("gp,...gjp->...gj", x, curves[..., 1:])
    shift = v * curves[..., p + 1]
    # intercepts stay in both sums so the result equals RA(x + v e_p) / RA(x)
    lin = curves[..., 0] + base
    out = np.exp(shift + logsumexp(lin, axis=-1, keepdims=True)
                 - logsumexp(lin + shift, axis=-1, keepdims=True))
    return out[..., 0, :] if scalar else out


def hill_diversity(psi, l: float) -> np.ndarray:
    """Hill diversity ``(sum psi * psi**-l)**(1/l)`` along the last axis.

    ``l = 0`` gives the Shannon limit ``exp(-sum psi log psi)``.
    """
    if l >= 1:
        raise InferenceError("l must be < 1: with strictly positive abundances l = 1 "
                             "always gives Div = J")
    if l < 0:
        raise InferenceError("l must be in [0, 1)")
    psi = np.asarray(psi, dtype=float)
    if np.any(psi <= 0):
        raise InferenceError("compositions must be strictly positive")
    logp = np.log(psi)
    if l == 0:
        return np.exp(-(psi * logp).sum(axis=-1))
    # log(sum psi**(1-l)) / l written so that small l does not cancel
    return np.exp(np.log1p((psi * np.expm1(-l * logp)).sum(axis=-1)) / l)


def diversity(draw, basis, t, profile, l: float) -> np.ndarray:
    return hill_diversity(relative_abundance(draw, basis, t, profile), l)


def delta_diversity(draw, basis: SplineBasis, t, profile: CovariateProfile, p: int, v: float,
                    l: float) -> np.ndarray:
    """Ratio of diversity at ``profile`` shifted by ``v`` in covariate ``p`` to diversity at ``profile``."""
    shifted = profile.shifted(p, v)
    return diversity(draw, basis, t, shifted, l) / diversity(draw, basis, t, profile, l)


@dataclass
class FunctionalSummary:
    grid: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float = 0.95
    label: str = ""
    columns: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if np.any(np.diff(self.grid) < 0):
            raise InferenceError("grid must be sorted")

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        mean = self.mean.reshape(self.grid.size, -1)
        lo = self.lower.reshape(self.grid.size, -1)
        hi = self.upper.reshape(self.grid.size, -1)
        cols = self.columns or [str(k) for k in range(mean.shape[1])]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "series", "mean", "lower", "upper"])
            for g, t in enumerate(self.grid):
                for k, name in enumerate(cols):
                    w.writerow([repr(float(t)), name, repr(float(mean[g, k])),
                                repr(float(lo[g, k])), repr(float(hi[g, k]))])
        return path

    @classmethod
    def from_csv(cls, path, level: float = 0.95, label: str = "") -> "FunctionalSummary":
        with Path(path).open() as fh:
            rows = list(csv.DictReader(fh))
        cols = list(dict.fromkeys(r["series"] for r in rows))
        grid = np.array(list(dict.fromkeys(float(r["t"]) for r in rows)))
        def col(key):
            return np.array([float(r[key]) for r in rows]).reshape(grid.size, len(cols))
        return cls(grid=grid, mean=col("mean"), lower=col("lower"), upper=col("upper"),
                   level=level, label=label, columns=cols)

    def to_json(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps({
            "label": self.label, "level": self.level, "columns": self.columns,
            "grid": self.grid.tolist(), "mean": self.mean.tolist(),
            "lower": self.lower.tolist(), "upper": self.upper.tolist(),
        }))
        return path


def summarize_function(draws, evaluator: Callable[[np.ndarray, np.ndarray], np.ndarray],
                       grid, level: float = 0.95, label: str = "",
                       columns: list[str] | None = None) -> FunctionalSummary:
    """Pointwise posterior mean and central ``level`` interval.

    ``evaluator(beta, grid)`` must return an array whose first axis runs over
    draws and second over grid points.
    """
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(evaluator(_beta(draws), grid))
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(values, [alpha, 1.0 - alpha], axis=0)
    return FunctionalSummary(grid=grid, mean=values.mean(axis=0), lower=lo, upper=hi,
                             level=level, label=label, columns=columns or [])


def heatmap(draws, basis: SplineBasis, grid, v_grid, profile: CovariateProfile, p: int,
            quantity: str = "deltaRA", taxon: int | None = None, l: float = 0.75
            ) -> np.ndarray:
    """Posterior-mean ``t x v`` matrix of a multiplicative difference."""
    beta = _beta(draws)
    out = np.empty((len(grid), len(v_grid)))
    for k, v in enumerate(v_grid):
        if quantity == "deltaRA":
            vals = delta_RA(beta, basis, grid, profile, p, v)[..., taxon]
        elif quantity == "deltaDiv":
            vals = delta_diversity(beta, basis, grid, profile, p, v, l)
        else:
            raise InferenceError(f"unknown heatmap quantity {quantity!r}")
        out[:, k] = vals.mean(axis=0) if vals.ndim == 2 else vals
    return out


@dataclass
class PPCResult:
    replicates: np.ndarray          # [S, R, J]
    observed_mean_ra: np.ndarray    # [J]
    replicated_mean_ra: np.ndarray  # [S, J]
    mean_ra_pvalue: np.ndarray      # [J]
    observed_cov: np.ndarray        # [J, J]
    replicated_cov: np.ndarray      # [S, J, J]
    cov_pvalue: np.ndarray          # [J, J]


def _ra_stats(Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ra = Z / Z.sum(axis=-1, keepdims=True)
    mean = ra.mean(axis=-2)
    centred = ra - mean[..., None, :]
    cov = np.einsum("...ra,...rb->...ab", centred, centred) / (ra.shape[-2] - 1)
    return mean, cov


def posterior_predictive(draws: PosteriorDraws, data: LongitudinalDataset,
                         basis: SplineBasis, seed: int = 0, subject_level: bool = True,
                         max_draws: int | None = None) -> PPCResult:
    """Replicate every record's counts once per draw and compare summary statistics.

    Replicates keep each record's total count; weights are drawn from the
    draw's gamma model using its at-risk indicators and (when
    ``subject_level``) its random intercepts.  p-values are
    ``P(stat_rep >= stat_obs)``.
    """
    rng = np.random.default_rng(seed)
    design = make_design(data, basis)
    S = draws.n_draws if max_draws is None else min(max_draws, draws.n_draws)
    reps = np.empty((S, data.R, data.J), dtype=np.int64)
    for s in range(S):
        r = draws.r[s] if subject_level else np.zeros_like(draws.r[s])
        lg = log_gamma_matrix(draws.beta[s], r, design)
        at_risk = draws.eta[s][design.individual].astype(bool)
        logc = np.where(at_risk, log_gamma_rvs(np.exp(lg), 1.0, rng), -np.inf)
        reps[s] = simulate_counts(logc, data.totals, rng)
    obs_mean, obs_cov = _ra_stats(data.Z.astype(float))
    rep_mean, rep_cov = _ra_stats(reps.astype(float))
    return PPCResult(
        replicates=reps, observed_mean_ra=obs_mean, replicated_mean_ra=rep_mean,
        mean_ra_pvalue=(rep_mean >= obs_mean).mean(axis=0),
        observed_cov=obs_cov, replicated_cov=rep_cov,
        cov_pvalue=(rep_cov >= obs_cov).mean(axis=0),
    )
