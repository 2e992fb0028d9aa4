"""Tabular data with explicit missingness, plus CSV ingestion and export."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import InputError

log = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "NA", "na", "NaN", "nan"})
BOOL_TOKENS = {"true": 1.0, "false": 0.0, "TRUE": 1.0, "FALSE": 0.0,
               "True": 1.0, "False": 0.0}
MARGINS = ("raw", "gumbel", "laplace", "uniform")


@dataclass(frozen=True)
class Dataset:
    """Named numeric columns with a separate missingness mask per column.

    ``values[name]`` holds floats (the entry under a missing cell is 0.0 and
    must not be read); ``missing[name]`` is the boolean mask.
    """

    names: tuple
    values: Mapping[str, np.ndarray] = field(repr=False)
    missing: Mapping[str, np.ndarray] = field(repr=False)
    responses: tuple = ()
    covariates: tuple = ()
    margin: str = "raw"

    def __post_init__(self):
        lengths = {np.asarray(self.values[n]).shape[0] for n in self.names}
        if len(lengths) > 1:
            raise InputError("all columns must have the same number of rows")
        for n in tuple(self.responses) + tuple(self.covariates):
            if n not in self.names:
                raise InputError(f"declared column {n!r} not present")
        if self.margin not in MARGINS:
            raise InputError(f"margin tag must be one of {MARGINS}")

    @classmethod
    def from_arrays(cls, columns: Mapping[str, Iterable[float]],
                    responses: Sequence[str] = (), covariates: Sequence[str] = (),
                    margin: str = "raw") -> "Dataset":
        """Build from float arrays; NaN marks a missing cell."""
        values, missing = {}, {}
        for name, col in columns.items():
            a = np.asarray(col, dtype=float).ravel()
            m = ~np.isfinite(a)
            values[name] = np.where(m, 0.0, a)
            missing[name] = m
        return cls(tuple(columns), values, missing, tuple(responses), tuple(covariates), margin)

    @property
    def n_rows(self) -> int:
        return int(np.asarray(self.values[self.names[0]]).shape[0]) if self.names else 0

    def column(self, name: str) -> np.ndarray:
        """Column as floats with NaN in missing cells (a working copy)."""
        if name not in self.values:
            raise InputError(f"unknown column {name!r}")
        return np.where(self.missing[name], np.nan, self.values[name])

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        return np.column_stack([self.column(n) for n in names]) if names else np.empty((self.n_rows, 0))

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.names, {n: self.values[n][rows] for n in self.names},
                       {n: self.missing[n][rows] for n in self.names},
                       self.responses, self.covariates, self.margin)

    def with_column(self, name: str, col) -> "Dataset":
        a = np.asarray(col, dtype=float)
        names = self.names if name in self.names else self.names + (name,)
        values = dict(self.values)
        missing = dict(self.missing)
        values[name] = np.where(np.isfinite(a), a, 0.0)
        missing[name] = ~np.isfinite(a)
        return Dataset(names, values, missing, self.responses, self.covariates, self.margin)

    @property
    def n_missing(self) -> int:
        return int(sum(int(m.sum()) for m in self.missing.values()))


def _parse_cell(text: str, path, line: int, col: str):
    t = text.strip()
    if t in MISSING_TOKENS:
        return 0.0, True
    if t in BOOL_TOKENS:
        return BOOL_TOKENS[t], False
    try:
        return float(t), False
    except ValueError:
        raise InputError(f"{path}:{line}: cannot parse {text!r} in column {col!r}") from None


def ingest_csv(path, responses: Sequence[str] = (), covariates: Sequence[str] = (),
               margin: str = "raw", columns: Optional[Sequence[str]] = None) -> Dataset:
    """Read a headed CSV; empty fields and ``NA`` are missing.

    Boolean columns may be written 0/1 or true/false.  Ragged rows and
    unparseable cells raise with their line numbers.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: no header row") from None
        cols: dict[str, list] = {h: [] for h in header}
        miss: dict[str, list] = {h: [] for h in header}
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            for h, cell in zip(header, row):
                v, m = _parse_cell(cell, path, lineno, h)
                cols[h].append(v)
                miss[h].append(m)
    keep = list(columns) if columns is not None else header
    for c in keep:
        if c not in cols:
            raise InputError(f"{path}: column {c!r} not in header")
    values = {h: np.asarray(cols[h], dtype=float) for h in keep}
    missing = {h: np.asarray(miss[h], dtype=bool) for h in keep}
    ds = Dataset(tuple(keep), values, missing, tuple(responses), tuple(covariates), margin)
    if ds.n_rows == 0:
        log.warning("%s: header only, dataset is empty", path)
    log.info("%s: %d rows, %d missing cells", path, ds.n_rows, ds.n_missing)
    return ds


def export_csv(ds: Dataset, path) -> None:
    """Write ``ds``; missing cells become ``NA``.  Floats use ``repr`` so a
    re-ingest is value-identical."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ds.names)
        for i in range(ds.n_rows):
            w.writerow(["NA" if ds.missing[n][i] else repr(float(ds.values[n][i]))
                        for n in ds.names])
