"""Trial/observational datasets, black-box predictions and CSV I/O."""

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

SOURCES = ("RCT", "OS")


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TrialDataset:
    """A sample of (covariates, treatment, outcome) rows.

    Used for the randomized trial and, with ``source="OS"``, for
    observational training or test sets.  Arrays are made read-only on
    construction.
    """

    covariates: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    covariate_names: tuple = ()
    source: str = "RCT"
    ids: tuple = None

    def __post_init__(self):
        X = np.asarray(self.covariates, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise DataError("covariates must be a 2-d array")
        n = X.shape[0]
        if n < 1:
            raise DataError("empty dataset")
        a = np.asarray(self.treatment)
        y = np.asarray(self.outcome, dtype=float)
        if a.shape != (n,) or y.shape != (n,):
            raise DataError(
                f"length mismatch: covariates have {n} rows, treatment {a.shape}, "
                f"outcome {y.shape}")
        bad = ~np.isin(a, (0, 1))
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise DataError(f"row {i + 1}: treatment must be 0 or 1, got {a[i]!r}")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise DataError("covariates and outcome must be finite (no NaN)")
        names = tuple(self.covariate_names) or tuple(f"x{j + 1}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise DataError(f"{len(names)} covariate names for {X.shape[1]} columns")
        if self.source not in SOURCES:
            raise DataError(f"source must be one of {SOURCES}, got {self.source!r}")
        if self.ids is not None:
            ids = tuple(str(i) for i in self.ids)
            if len(ids) != n:
                raise DataError("ids must have one entry per row")
            object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "covariates", _frozen(X, float))
        object.__setattr__(self, "treatment", _frozen(a, np.int8))
        object.__setattr__(self, "outcome", _frozen(y, float))
        object.__setattr__(self, "covariate_names", names)

    def __len__(self):
        return self.outcome.shape[0]

    @property
    def n(self):
        return len(self)

    @property
    def p(self):
        return self.covariates.shape[1]

    def column(self, name):
        try:
            j = self.covariate_names.index(name)
        except ValueError:
            raise DataError(
                f"unknown covariate {name!r}; available: {', '.join(self.covariate_names)}"
            ) from None
        return self.covariates[:, j]

    def subset(self, rows, source=None):
        rows = np.asarray(rows)
        return TrialDataset(
            self.covariates[rows], self.treatment[rows], self.outcome[rows],
            self.covariate_names, source or self.source,
            None if self.ids is None else tuple(np.asarray(self.ids, dtype=object)[rows]),
        )


@dataclass(frozen=True, eq=False)
class PredictionSet:
    """Observational CATE predictions (and optionally propensities) per row."""

    tau_hat: np.ndarray
    e_hat: np.ndarray = None

    def __post_init__(self):
        tau = np.asarray(self.tau_hat, dtype=float)
        if tau.ndim != 1:
            raise DataError("tau_hat must be a vector")
        if not np.isfinite(tau).all():
            raise DataError("tau_hat must be finite")
        object.__setattr__(self, "tau_hat", _frozen(tau, float))
        if self.e_hat is not None:
            e = np.asarray(self.e_hat, dtype=float)
            if e.shape != tau.shape:
                raise DataError("e_hat and tau_hat lengths differ")
            bad = ~((e > 0) & (e < 1))
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise DataError(
                    f"row {i + 1}: e_hat must lie strictly inside (0, 1) "
                    f"(positivity), got {e[i]!r}")
            object.__setattr__(self, "e_hat", _frozen(e, float))

    def __len__(self):
        return self.tau_hat.shape[0]

    def subset(self, rows):
        rows = np.asarray(rows)
        return PredictionSet(self.tau_hat[rows],
                             None if self.e_hat is None else self.e_hat[rows])


@dataclass(frozen=True)
class Schema:
    """Maps CSV headers onto dataset roles.

    ``covariates=None`` means every column that is not the treatment,
    outcome or id column.
    """

    treatment: str = "a"
    outcome: str = "y"
    covariates: tuple = None
    id_column: str = "id"


def _read_csv(path):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file (no header row)") from None
        rows = [r for r in reader if any(cell.strip() for cell in r)]
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names in header")
    return header, rows


def _parse_float(cell, path, row, col):
    try:
        v = float(cell)
    except ValueError:
        raise DataError(f"{path}: row {row}, column {col!r}: cannot parse {cell!r} as a number") from None
    if math.isnan(v) or math.isinf(v):
        raise DataError(f"{path}: row {row}, column {col!r}: missing or non-finite value {cell!r}")
    return v


def load_dataset(path, schema=None, source="RCT"):
    """Read a CSV file into a :class:`TrialDataset`.

    Rows are numbered from 1, counting data records only (the header is not
    a row).  Rows with missing values are rejected, never imputed.
    """
    schema = schema or Schema()
    header, rows = _read_csv(path)
    for col in (schema.treatment, schema.outcome):
        if col not in header:
            raise DataError(f"{path}: missing column {col!r}")
    if schema.covariates is None:
        skip = {schema.treatment, schema.outcome, schema.id_column}
        cov_names = [h for h in header if h not in skip]
    else:
        cov_names = list(schema.covariates)
        for col in cov_names:
            if col not in header:
                raise DataError(f"{path}: missing column {col!r}")
    if not rows:
        raise DataError(f"{path}: empty dataset")

    idx = {h: j for j, h in enumerate(header)}
    has_id = schema.id_column in idx
    X = np.empty((len(rows), len(cov_names)))
    a = np.empty(len(rows), dtype=np.int8)
    y = np.empty(len(rows))
    ids = [] if has_id else None
    for i, rec in enumerate(rows, start=1):
        if len(rec) != len(header):
            raise DataError(f"{path}: row {i} has {len(rec)} fields, header has {len(header)}")
        cell = rec[idx[schema.treatment]].strip()
        if cell not in ("0", "1"):
            try:
                ok = float(cell) in (0.0, 1.0)
            except ValueError:
                ok = False
            if not ok:
                raise DataError(
                    f"{path}: row {i}, column {schema.treatment!r}: treatment must be 0 or 1, got {cell!r}")
        a[i - 1] = int(float(cell))
        y[i - 1] = _parse_float(rec[idx[schema.outcome]].strip(), path, i, schema.outcome)
        for j, col in enumerate(cov_names):
            X[i - 1, j] = _parse_float(rec[idx[col]].strip(), path, i, col)
        if has_id:
            ids.append(rec[idx[schema.id_column]].strip())
    if has_id and len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate ids in column {schema.id_column!r}")
    return TrialDataset(X, a, y, tuple(cov_names), source, None if ids is None else tuple(ids))


def write_dataset(ds, path, schema=None):
    """Write ``ds`` as CSV with 17 significant digits (exact round trip)."""
    schema = schema or Schema()
    header = list(ds.covariate_names) + [schema.treatment, schema.outcome]
    if ds.ids is not None:
        header = [schema.id_column] + header
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(ds.n):
            rec = [f"{v:.17g}" for v in ds.covariates[i]]
            rec += [str(int(ds.treatment[i])), f"{ds.outcome[i]:.17g}"]
            if ds.ids is not None:
                rec.insert(0, ds.ids[i])
            w.writerow(rec)


def write_predictions(preds, path, ids=None):
    header = ["tau_hat"] + (["e_hat"] if preds.e_hat is not None else [])
    if ids is not None:
        header.insert(0, "id")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(preds)):
            rec = [f"{preds.tau_hat[i]:.17g}"]
            if preds.e_hat is not None:
                rec.append(f"{preds.e_hat[i]:.17g}")
            if ids is not None:
                rec.insert(0, ids[i])
            w.writerow(rec)


def attach_predictions(ds, path, id_column="id"):
    """Read a prediction file and align it with the rows of ``ds``.

    Alignment is by row order unless both files carry an id column, in which
    case rows are joined on it.
    """
    header, rows = _read_csv(path)
    if "tau_hat" not in header:
        raise DataError(f"{path}: missing column 'tau_hat'")
    idx = {h: j for j, h in enumerate(header)}
    if len(rows) != ds.n:
        raise DataError(f"{path}: length mismatch, {len(rows)} prediction rows for {ds.n} dataset rows")
    tau = np.empty(len(rows))
    e = np.empty(len(rows)) if "e_hat" in idx else None
    pred_ids = []
    for i, rec in enumerate(rows, start=1):
        if len(rec) != len(header):
            raise DataError(f"{path}: row {i} has {len(rec)} fields, header has {len(header)}")
        tau[i - 1] = _parse_float(rec[idx["tau_hat"]].strip(), path, i, "tau_hat")
        if e is not None:
            v = _parse_float(rec[idx["e_hat"]].strip(), path, i, "e_hat")
            if not 0.0 < v < 1.0:
                raise DataError(f"{path}: row {i}, column 'e_hat': {v!r} outside (0, 1) violates positivity")
            e[i - 1] = v
        if id_column in idx:
            pred_ids.append(rec[idx[id_column]].strip())

    if id_column in idx and ds.ids is not None:
        if len(set(pred_ids)) != len(pred_ids):
            raise DataError(f"{path}: duplicate ids in column {id_column!r}")
        pos = {k: i for i, k in enumerate(pred_ids)}
        missing = [k for k in ds.ids if k not in pos]
        if missing:
            raise DataError(f"{path}: no prediction for id {missing[0]!r}")
        order = np.array([pos[k] for k in ds.ids])
        tau = tau[order]
        if e is not None:
            e = e[order]
    return PredictionSet(tau, e)


@dataclass
class SupportReport:
    out_of_range: dict = field(default_factory=dict)

    @property
    def ok(self):
        return not self.out_of_range


def check_common_support(ds, os_ranges):
    """Compare per-covariate RCT ranges with observational ranges.

    ``os_ranges`` maps covariate name to ``(min, max)``, or is a path to a CSV
    with columns ``covariate,min,max``.  Problems are emitted as warnings,
    never raised: marginal ranges cannot establish support overlap anyway.
    """
    if isinstance(os_ranges, (str, Path)):
        header, rows = _read_csv(os_ranges)
        idx = {h: j for j, h in enumerate(header)}
        for col in ("covariate", "min", "max"):
            if col not in idx:
                raise DataError(f"{os_ranges}: missing column {col!r}")
        os_ranges = {r[idx["covariate"]].strip(): (float(r[idx["min"]]), float(r[idx["max"]]))
                     for r in rows}
    report = SupportReport()
    for name, (lo, hi) in os_ranges.items():
        if name not in ds.covariate_names:
            continue
        x = ds.column(name)
        rlo, rhi = float(x.min()), float(x.max())
        if rlo < lo or rhi > hi:
            report.out_of_range[name] = (rlo, rhi, lo, hi)
            warnings.warn(
                f"covariate {name!r}: trial range [{rlo:g}, {rhi:g}] exceeds observational "
                f"range [{lo:g}, {hi:g}]; predictions there are extrapolations",
                stacklevel=2)
    return report
