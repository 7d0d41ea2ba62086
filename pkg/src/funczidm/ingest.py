"""Long-format CSV in and out.

Layout: one header row, then one row per record with the individual id,
the time, covariate columns and one count column per taxon.  Columns that
are neither id, time nor a declared covariate are taken as taxa unless the
config lists them explicitly.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np

from .config import RunConfig
from .data import DataError, LongitudinalDataset

log = logging.getLogger(__name__)


def _read(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(cell.strip() for cell in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names")
    body = rows[1:]
    for k, row in enumerate(body):
        if len(row) != len(header):
            raise DataError(f"{path}: line {k + 2} has {len(row)} fields, expected {len(header)}")
    return header, body


def _float(value: str, what: str, line: int) -> float:
    try:
        out = float(value)
    except ValueError:
        raise DataError(f"line {line}: non-numeric {what} {value!r}") from None
    if not np.isfinite(out):
        raise DataError(f"line {line}: non-finite {what}")
    return out


def _count(value: str, taxon: str, line: int) -> int:
    x = _float(value, f"count for {taxon}", line)
    if x < 0:
        raise DataError(f"line {line}: negative count for {taxon}")
    if x != round(x):
        raise DataError(f"line {line}: non-integer count for {taxon}")
    return int(round(x))


def ingest_csv(path, config: RunConfig | None = None) -> LongitudinalDataset:
    """Read, validate and transform a count table.

    Taxa with a nonzero count in fewer than ``config.min_individuals``
    individuals are dropped, then records left without any count are
    dropped with a warning.  Continuous covariates are centred and/or scaled
    (sample standard deviation) over all records when flagged; categorical
    ones become indicator columns ``name[level]`` for every non-reference
    level.
    """
    config = config or RunConfig()
    header, body = _read(path)
    col = {name: k for k, name in enumerate(header)}
    for name in (config.id_column, config.time_column, *(c.name for c in config.covariates)):
        if name not in col:
            raise DataError(f"{path}: missing column {name!r}")
    reserved = {config.id_column, config.time_column, *(c.name for c in config.covariates)}
    if config.taxa is not None:
        missing = [t for t in config.taxa if t not in col]
        if missing:
            raise DataError(f"{path}: missing taxon columns {missing}")
        taxa = list(config.taxa)
    else:
        taxa = [h for h in header if h not in reserved]
    if not taxa:
        raise DataError(f"{path}: no count columns")

    ids_raw = [row[col[config.id_column]].strip() for row in body]
    times = np.array([_float(row[col[config.time_column]], "time", k + 2)
                      for k, row in enumerate(body)])
    Z = np.array([[_count(row[col[t]], t, k + 2) for t in taxa] for k, row in enumerate(body)],
                 dtype=np.int64).reshape(len(body), len(taxa))

    seen = set()
    for k, key in enumerate(zip(ids_raw, times)):
        if key in seen:
            raise DataError(f"line {k + 2}: duplicate record for id {key[0]!r} at time {key[1]}")
        seen.add(key)

    columns, names, functional, scaling = [], [], [], {}
    for spec in config.covariates:
        raw = [row[col[spec.name]].strip() for row in body]
        if spec.categorical:
            levels = sorted(set(raw))
            reference = spec.reference if spec.reference is not None else levels[0]
            if reference not in levels:
                raise DataError(f"reference level {reference!r} not found in {spec.name!r}")
            for level in levels:
                if level == reference:
                    continue
                columns.append(np.array([v == level for v in raw], dtype=float))
                names.append(f"{spec.name}[{level}]")
                functional.append(spec.functional)
            scaling[spec.name] = {"reference": reference, "levels": levels}
        else:
            x = np.array([_float(v, spec.name, k + 2) for k, v in enumerate(raw)])
            center = float(x.mean()) if spec.center else 0.0
            scale = float(x.std(ddof=1)) if spec.scale else 1.0
            if spec.scale and not scale > 0:
                raise DataError(f"covariate {spec.name!r} is constant and cannot be scaled")
            columns.append((x - center) / scale)
            names.append(spec.name)
            functional.append(spec.functional)
            scaling[spec.name] = {"center": center, "scale": scale}

    # taxon filter on the number of individuals with any nonzero count
    uniq = list(dict.fromkeys(ids_raw))
    index = {v: k for k, v in enumerate(uniq)}
    individual = np.array([index[v] for v in ids_raw], dtype=np.int64)
    present = np.zeros((len(uniq), len(taxa)), dtype=bool)
    np.logical_or.at(present, individual, Z > 0)
    keep = present.sum(axis=0) >= config.min_individuals
    dropped_taxa = [t for t, k in zip(taxa, keep) if not k]
    if dropped_taxa:
        log.info("dropping %d taxa seen in fewer than %d individuals: %s",
                 len(dropped_taxa), config.min_individuals, dropped_taxa)
    Z = Z[:, keep]
    taxa = [t for t, k in zip(taxa, keep) if k]
    if not taxa:
        raise DataError("no taxa left after filtering")

    empty = Z.sum(axis=1) == 0
    if empty.any():
        lines = (np.flatnonzero(empty) + 2).tolist()
        log.warning("rejecting %d all-zero records (lines %s)", int(empty.sum()), lines)
    rows = ~empty
    X = np.column_stack(columns) if columns else np.zeros((len(body), 0))
    ids_kept = [v for v, r in zip(ids_raw, rows) if r]
    uniq = list(dict.fromkeys(ids_kept))
    index = {v: k for k, v in enumerate(uniq)}
    scaling["_ingest"] = {"dropped_taxa": dropped_taxa,
                          "rejected_lines": (np.flatnonzero(empty) + 2).tolist()}
    return LongitudinalDataset(
        ids=uniq, individual=np.array([index[v] for v in ids_kept], dtype=np.int64),
        times=times[rows], X=X[rows], Z=Z[rows], covariate_names=names, taxon_names=taxa,
        functional=np.array(functional, dtype=bool), scaling=scaling)


def write_csv(data: LongitudinalDataset, path, id_column: str = "id",
              time_column: str = "time") -> Path:
    """Write a dataset in the layout ``ingest_csv`` reads (floats written exactly)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([id_column, time_column, *data.covariate_names, *data.taxon_names])
        for rec in range(data.R):
            w.writerow([data.ids[data.individual[rec]], repr(float(data.times[rec])),
                        *(repr(float(v)) for v in data.X[rec]),
                        *(int(v) for v in data.Z[rec])])
    return path
