"""Long-format repeated-measures count data and covariate profiles."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class DataError(ValueError):
    pass


@dataclass
class LongitudinalDataset:
    """Records sorted by individual then time.

    Attributes
    ----------
    individual : (R,) int
        Index into ``ids`` for each record.
    times : (R,) float
    X : (R, P) float
        Covariates at each record.
    Z : (R, J) int
        Counts.
    functional : (P,) bool
        Whether covariate ``p`` gets a time-varying coefficient.
    """

    ids: list
    individual: np.ndarray
    times: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    covariate_names: list[str] = field(default_factory=list)
    taxon_names: list[str] = field(default_factory=list)
    functional: np.ndarray | None = None
    scaling: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.individual = np.asarray(self.individual, dtype=np.int64)
        self.times = np.asarray(self.times, dtype=float)
        self.Z = np.asarray(self.Z)
        if self.Z.ndim != 2:
            raise DataError("counts must be a 2-d array")
        if not np.issubdtype(self.Z.dtype, np.integer):
            if not np.all(np.isfinite(self.Z)) or np.any(self.Z != np.round(self.Z)):
                raise DataError("counts must be integers")
        self.Z = self.Z.astype(np.int64)
        R = self.Z.shape[0]
        self.X = np.asarray(self.X, dtype=float).reshape(R, -1)
        if self.functional is None:
            self.functional = np.ones(self.P, dtype=bool)
        self.functional = np.asarray(self.functional, dtype=bool)
        if not self.covariate_names:
            self.covariate_names = [f"x{p + 1}" for p in range(self.P)]
        if not self.taxon_names:
            self.taxon_names = [f"taxon{j + 1}" for j in range(self.J)]

        order = np.lexsort((self.times, self.individual))
        if np.any(order != np.arange(R)):
            self.individual = self.individual[order]
            self.times = self.times[order]
            self.X = self.X[order]
            self.Z = self.Z[order]
        self.validate()

    def validate(self) -> None:
        R, J = self.Z.shape
        if R == 0:
            raise DataError("dataset has no records")
        if not (self.individual.shape == self.times.shape == (R,)):
            raise DataError("record arrays have inconsistent lengths")
        if self.functional.shape != (self.P,):
            raise DataError("functional flags must have length P")
        if len(self.covariate_names) != self.P or len(self.taxon_names) != J:
            raise DataError("name lists do not match array shapes")
        if np.any(self.Z < 0):
            raise DataError("negative counts")
        if np.any(self.Z.sum(axis=1) < 1):
            bad = np.flatnonzero(self.Z.sum(axis=1) < 1)
            raise DataError(f"all-zero count rows at records {bad.tolist()}")
        if not np.all(np.isfinite(self.X)) or not np.all(np.isfinite(self.times)):
            raise DataError("non-finite covariate or time values")
        present = np.unique(self.individual)
        if present.size != len(self.ids) or present[0] != 0 or present[-1] != len(self.ids) - 1:
            raise DataError("every individual needs at least one record")
        same = (np.diff(self.individual) == 0) & (np.diff(self.times) == 0)
        if same.any():
            k = int(np.flatnonzero(same)[0])
            raise DataError(
                f"duplicate time {self.times[k]} for individual {self.ids[self.individual[k]]}"
            )

    @property
    def N(self) -> int:
        return len(self.ids)

    @property
    def J(self) -> int:
        return self.Z.shape[1]

    @property
    def P(self) -> int:
        return self.X.shape[1]

    @property
    def R(self) -> int:
        return self.Z.shape[0]

    @property
    def totals(self) -> np.ndarray:
        return self.Z.sum(axis=1)

    @property
    def starts(self) -> np.ndarray:
        """Index of the first record of each individual (for ``np.add.reduceat``)."""
        return np.searchsorted(self.individual, np.arange(self.N))

    def any_positive(self) -> np.ndarray:
        """(N, J) bool: individual ``i`` has a nonzero count of taxon ``j``."""
        return np.add.reduceat(self.Z, self.starts, axis=0) > 0

    def with_counts(self, Z: np.ndarray) -> "LongitudinalDataset":
        """Copy with replaced counts (same design)."""
        return LongitudinalDataset(
            ids=self.ids, individual=self.individual, times=self.times, X=self.X,
            Z=Z, covariate_names=self.covariate_names, taxon_names=self.taxon_names,
            functional=self.functional, scaling=self.scaling,
        )


@dataclass
class CovariateProfile:
    """Covariate vector ``x(t)`` used by the inference formulas.

    ``x`` is either a length-P sequence (constant over time) or a callable
    mapping a time array of shape ``(G,)`` to a ``(G, P)`` array.
    """

    x: Sequence[float] | np.ndarray | Callable[[np.ndarray], np.ndarray]
    P: int | None = None
    description: str = ""

    def __post_init__(self) -> None:
        if not callable(self.x):
            self.x = np.asarray(self.x, dtype=float).ravel()
            if self.P is None:
                self.P = self.x.size
            if self.x.size != self.P:
                raise DataError("profile length does not match P")
        elif self.P is None:
            raise DataError("time-varying profiles must declare P")

    def __call__(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if callable(self.x):
            out = np.asarray(self.x(t), dtype=float).reshape(t.size, self.P)
        else:
            out = np.broadcast_to(self.x, (t.size, self.P)).copy()
        return out

    def shifted(self, p: int, v: float) -> "CovariateProfile":
        """Profile with ``v`` added to covariate ``p``."""
        bump = np.zeros(self.P)
        bump[p] = v
        if callable(self.x):
            base = self.x
            return CovariateProfile(lambda t: base(t) + bump, P=self.P,
                                    description=f"{self.description}+{v}e{p}")
        return CovariateProfile(self.x + bump, description=f"{self.description}+{v}e{p}")

    @classmethod
    def reference(cls, P: int) -> "CovariateProfile":
        return cls(np.zeros(P), description="reference")
