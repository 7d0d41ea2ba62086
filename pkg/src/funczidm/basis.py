"""Cubic B-spline basis shared by every functional coefficient.

A functional coefficient is ``beta(t) = b(t) @ beta_star`` with the row
``b(t) = [1, b_1(t), ..., b_D(t)]``.  The ``b_d`` come from a full cubic
B-spline basis with ``D + 1`` functions whose first member is dropped
(the "df without intercept" convention).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.interpolate import BSpline

DEGREE = 3


class BasisError(ValueError):
    pass


@dataclass(frozen=True)
class SplineBasis:
    df: int
    interior_knots: tuple[float, ...]
    boundary: tuple[float, float]
    degree: int = DEGREE
    knot_rule: str = "quantile"
    # Mutable counter on a frozen dataclass; only ever incremented.
    clamp_count: list = field(default_factory=lambda: [0], compare=False, repr=False)

    def __post_init__(self) -> None:
        lo, hi = self.boundary
        if not lo < hi:
            raise BasisError("boundary must satisfy t_min < t_max")
        if any(not lo < k < hi for k in self.interior_knots):
            raise BasisError("interior knots must lie strictly inside the boundary")
        if len(self.interior_knots) != self.df - DEGREE:
            raise BasisError("interior knot count must equal df - 3")

    @property
    def columns(self) -> int:
        return self.df

    @property
    def width(self) -> int:
        """Length of a basis row, intercept included."""
        return self.df + 1

    @property
    def knot_vector(self) -> np.ndarray:
        lo, hi = self.boundary
        return np.concatenate(
            [np.repeat(lo, DEGREE + 1), self.interior_knots, np.repeat(hi, DEGREE + 1)]
        )

    @property
    def warnings(self) -> int:
        return self.clamp_count[0]

    def full_basis(self, t) -> np.ndarray:
        """All ``D + 1`` cubic B-splines at ``t`` (before the drop), shape ``(n, D+1)``."""
        t = self._clamp(t)
        return BSpline.design_matrix(t, self.knot_vector, DEGREE).toarray()

    def __call__(self, t) -> np.ndarray:
        return evaluate_basis(self, t)

    def _clamp(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        lo, hi = self.boundary
        outside = (t < lo) | (t > hi)
        if outside.any():
            self.clamp_count[0] += int(outside.sum())
            t = np.clip(t, lo, hi)
        return t

    def to_dict(self) -> dict[str, Any]:
        return {
            "degree": self.degree,
            "df": self.df,
            "interior_knots": list(self.interior_knots),
            "boundary": list(self.boundary),
            "knot_rule": self.knot_rule,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SplineBasis":
        if int(d.get("degree", DEGREE)) != DEGREE:
            raise BasisError("only cubic bases are supported")
        return cls(
            df=int(d["df"]),
            interior_knots=tuple(float(k) for k in d["interior_knots"]),
            boundary=(float(d["boundary"][0]), float(d["boundary"][1])),
            knot_rule=d.get("knot_rule", "quantile"),
        )


def build_basis(observed_times, D: int) -> SplineBasis:
    """Build the basis from pooled observation times.

    Boundary knots sit at the extreme times and the ``D - 3`` interior knots
    at equally spaced quantiles of the distinct times.
    """
    if D < 4:
        raise BasisError(f"insufficient degrees of freedom: D={D}, need D >= 4")
    times = np.unique(np.asarray(observed_times, dtype=float))
    if times.size < 2:
        raise BasisError("need at least 2 distinct observation times")
    n_interior = D - DEGREE
    probs = np.linspace(0.0, 1.0, n_interior + 2)[1:-1]
    interior = np.quantile(times, probs)
    if n_interior and (np.any(np.diff(interior) <= 0) or interior[0] <= times[0]
                       or interior[-1] >= times[-1]):
        raise BasisError("too few distinct times to place distinct interior knots")
    return SplineBasis(
        df=D,
        interior_knots=tuple(float(k) for k in interior),
        boundary=(float(times[0]), float(times[-1])),
    )


def evaluate_basis(basis: SplineBasis, t) -> np.ndarray:
    """Basis rows ``[1, b_1(t), ..., b_D(t)]``.

    Scalar ``t`` gives a vector of length ``D + 1``; array ``t`` gives one row
    per entry.  Values outside the boundary are clamped and counted in
    ``basis.warnings``.
    """
    scalar = np.ndim(t) == 0
    full = basis.full_basis(t)
    rows = np.empty_like(full)
    rows[:, 0] = 1.0
    rows[:, 1:] = full[:, 1:]
    return rows[0] if scalar else rows
