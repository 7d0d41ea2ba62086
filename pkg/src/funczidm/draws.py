"""Retained MCMC output and its on-disk format.

A chain file is a NumPy ``.npz`` archive.  The entry ``__meta__`` holds a
UTF-8 JSON document (format version, model dimensions, basis spec, sampler
config, seed, acceptance summary); every other entry is one parameter family
with the draw index as leading axis.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .basis import SplineBasis

FORMAT_VERSION = 1
FAMILIES = ("beta", "r", "eta", "phi2", "kappa2", "tau2", "lam2")


class FormatError(ValueError):
    pass


@dataclass
class PosteriorDraws:
    beta: np.ndarray
    r: np.ndarray
    eta: np.ndarray
    phi2: np.ndarray
    kappa2: np.ndarray
    tau2: np.ndarray
    lam2: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.beta.shape[0]

    @property
    def basis(self) -> SplineBasis:
        return SplineBasis.from_dict(self.meta["basis"])

    @property
    def acceptance(self) -> dict:
        return self.meta.get("acceptance", {})

    @property
    def label(self) -> str:
        return self.meta.get("chain", "")

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in FAMILIES}

    def save(self, path) -> Path:
        path = Path(path)
        if path.suffix != ".npz":
            path = path.with_suffix(".npz")
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = dict(self.meta, format_version=FORMAT_VERSION)
        np.savez_compressed(path, __meta__=np.array(json.dumps(meta)), **self.arrays())
        return path

    @classmethod
    def load(cls, path) -> "PosteriorDraws":
        with np.load(path, allow_pickle=False) as f:
            if "__meta__" not in f:
                raise FormatError(f"{path}: missing metadata header")
            meta = json.loads(str(f["__meta__"]))
            version = meta.get("format_version")
            if version != FORMAT_VERSION:
                raise FormatError(f"{path}: unsupported chain format version {version!r}")
            arrays = {name: f[name] for name in FAMILIES}
        return cls(meta=meta, **arrays)

    def export_csv(self, out_dir) -> list[Path]:
        """One long-format CSV per parameter family: draw, index columns, value."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for name, arr in self.arrays().items():
            path = out_dir / f"{name}.csv"
            idx_names = ["draw"] + [f"i{k}" for k in range(arr.ndim - 1)]
            grid = np.indices(arr.shape).reshape(arr.ndim, -1).T
            with path.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(idx_names + ["value"])
                for ix, value in zip(grid, arr.ravel()):
                    w.writerow([*ix.tolist(), repr(float(value))])
            written.append(path)
        return written

    @staticmethod
    def concatenate(chains: list["PosteriorDraws"]) -> "PosteriorDraws":
        """Pool chains along the draw axis (metadata from the first chain)."""
        if not chains:
            raise ValueError("no chains to pool")
        meta = dict(chains[0].meta, chain="pooled",
                    pooled_from=[c.label for c in chains])
        pooled = {name: np.concatenate([getattr(c, name) for c in chains])
                  for name in FAMILIES}
        return PosteriorDraws(meta=meta, **pooled)
