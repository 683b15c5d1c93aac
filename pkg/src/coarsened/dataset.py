"""Tabular data model, CSV ingestion and stratum bookkeeping."""

from __future__ import annotations

import configparser
import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError

KINDS = ("continuous", "categorical")
ROLES = ("outcome", "treatment", "confounder", "ignore")
MISSING_TOKENS = ("", "NA")
MISSING_POLICIES = ("reject", "drop_rows")

# Reserved stratum label for rows that were never assigned or were pruned.
UNASSIGNED = -1


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str = "continuous"
    role: str = "confounder"
    levels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.role not in ROLES:
            raise ConfigError(f"column {self.name!r}: unknown role {self.role!r}")


def validate_schema(schema: Sequence[ColumnSpec]) -> None:
    roles = [c.role for c in schema]
    for role in ("outcome", "treatment"):
        if roles.count(role) != 1:
            raise ConfigError(f"schema needs exactly one {role} column, found {roles.count(role)}")
    if roles.count("confounder") < 1:
        raise ConfigError("schema needs at least one confounder column")
    names = [c.name for c in schema]
    if len(set(names)) != len(names):
        raise ConfigError("duplicate column names in schema")


def parse_schema_entry(name: str, value: str) -> ColumnSpec:
    """Parse ``"continuous confounder"`` / ``"outcome"`` style schema values."""
    kind, role = "continuous", None
    for tok in value.replace(",", " ").split():
        tok = tok.strip().lower()
        if tok in KINDS:
            kind = tok
        elif tok in ROLES:
            role = tok
        else:
            raise ConfigError(f"column {name!r}: cannot parse schema token {tok!r}")
    if role is None:
        raise ConfigError(f"column {name!r}: schema entry lacks a role")
    return ColumnSpec(name, kind, role)


def read_schema(path: str | Path) -> list[ColumnSpec]:
    """Read a sidecar schema: an INI file with a ``[columns]`` section.

    Each key is a column name and each value holds a kind and a role, e.g.
    ``age = continuous confounder``. A file without section headers is read as
    if it were the ``[columns]`` section.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"schema file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if not text.lstrip().startswith("["):
        text = "[columns]\n" + text
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_string(text)
    if not cp.has_section("columns"):
        raise ConfigError(f"{path}: no [columns] section")
    schema = [parse_schema_entry(k, v) for k, v in cp.items("columns")]
    validate_schema(schema)
    return schema


def schema_from_roles(outcome: str, treatment: str, continuous: Iterable[str] = (),
                      categorical: Iterable[str] = ()) -> list[ColumnSpec]:
    schema = [ColumnSpec(outcome, "continuous", "outcome"),
              ColumnSpec(treatment, "categorical", "treatment")]
    schema += [ColumnSpec(c, "continuous", "confounder") for c in continuous]
    schema += [ColumnSpec(c, "categorical", "confounder") for c in categorical]
    validate_schema(schema)
    return schema


@dataclass(frozen=True)
class LoadReport:
    rows_read: int
    rows_dropped: int
    missing_by_column: dict[str, int]
    unparseable_by_column: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "rows_read": self.rows_read,
            "rows_dropped": self.rows_dropped,
            "missing_by_column": dict(self.missing_by_column),
            "unparseable_by_column": dict(self.unparseable_by_column),
        }


def _frozen(a) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Outcome ``y``, binary treatment ``t`` and the n x p confounder matrix ``x``.

    ``specs`` describes the confounder columns in column order; categorical
    columns of ``x`` hold integer level codes indexing ``spec.levels``.
    ``center``/``scale`` are set when continuous columns were z-scored.
    """

    y: np.ndarray
    t: np.ndarray
    x: np.ndarray
    specs: tuple[ColumnSpec, ...]
    outcome_name: str = "y"
    treatment_name: str = "t"
    center: np.ndarray | None = None
    scale: np.ndarray | None = None
    load_report: LoadReport | None = field(default=None, compare=False)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        t = np.asarray(self.t)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        n = y.shape[0]
        if n < 1:
            raise DataError("dataset is empty")
        if t.shape != (n,) or x.shape[0] != n or y.ndim != 1:
            raise DataError("y, t and x must share the same number of rows")
        if x.shape[1] < 1:
            raise DataError("at least one confounder column is required")
        if not np.isin(t, (0, 1)).all():
            raise DataError("non-binary treatment value")
        t = t.astype(np.int8)
        if t.sum() == 0 or t.sum() == n:
            raise DataError("empty treatment arm")
        if not (np.isfinite(y).all() and np.isfinite(x).all()):
            raise DataError("missing or non-finite values present")
        specs = tuple(self.specs)
        if len(specs) != x.shape[1]:
            raise DataError("one ColumnSpec per confounder column required")
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "t", _frozen(t))
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "specs", specs)
        for name in ("center", "scale"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, _frozen(np.asarray(v, dtype=float)))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.specs]

    @property
    def categorical_mask(self) -> np.ndarray:
        return np.array([s.kind == "categorical" for s in self.specs])

    def column(self, name: str) -> np.ndarray:
        try:
            return self.x[:, self.names.index(name)]
        except ValueError:
            raise ConfigError(f"unknown confounder column {name!r}") from None

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return replace(self, y=self.y[rows], t=self.t[rows], x=self.x[rows], load_report=None)


def from_arrays(y, t, x, names: Sequence[str] | None = None,
                categorical: Iterable[int] = ()) -> Dataset:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    names = list(names) if names is not None else [f"x{j + 1}" for j in range(x.shape[1])]
    cats = set(categorical)
    specs = []
    for j, name in enumerate(names):
        if j in cats:
            levels = tuple(str(int(v)) for v in range(int(x[:, j].max()) + 1)) if x.shape[0] else ()
            specs.append(ColumnSpec(name, "categorical", "confounder", levels))
        else:
            specs.append(ColumnSpec(name, "continuous", "confounder"))
    return Dataset(y=y, t=t, x=x, specs=tuple(specs))


def _parse_float(s: str) -> float | None:
    try:
        v = float(s)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def load_csv(path: str | Path, schema: Sequence[ColumnSpec], missing_policy: str = "reject") -> Dataset:
    """Read a headered UTF-8 CSV into a :class:`Dataset`.

    Missing cells are empty strings or ``NA``. Under ``reject`` any missing or
    unparseable cell is an error; under ``drop_rows`` the offending rows are
    removed and counted in ``Dataset.load_report``.
    """
    if missing_policy not in MISSING_POLICIES:
        raise ConfigError(f"unknown missing policy {missing_policy!r}")
    validate_schema(schema)
    path = Path(path)
    if not path.is_file():
        raise DataError(f"data file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        rows = [r for r in reader if r]
    header = [h.strip() for h in header]
    missing_cols = [c.name for c in schema if c.name not in header]
    if missing_cols:
        raise DataError(f"header mismatch: columns {missing_cols} not in {path}")
    idx = {c.name: header.index(c.name) for c in schema}
    used = [c for c in schema if c.role != "ignore"]

    missing = {c.name: 0 for c in used}
    unparseable = {c.name: 0 for c in used}
    keep = []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        ok = True
        for c in used:
            cell = row[idx[c.name]].strip()
            if cell in MISSING_TOKENS:
                missing[c.name] += 1
                if missing_policy == "reject":
                    raise DataError(f"{path}:{lineno}: missing value in column {c.name!r}")
                ok = False
            elif c.role == "treatment":
                v = _parse_float(cell)
                if v not in (0.0, 1.0):
                    raise DataError(f"{path}:{lineno}: non-binary treatment value {cell!r}")
            elif c.kind == "continuous" and _parse_float(cell) is None:
                unparseable[c.name] += 1
                if missing_policy == "reject":
                    raise DataError(f"{path}:{lineno}: unparseable value {cell!r} in column {c.name!r}")
                ok = False
        if ok:
            keep.append(row)

    outcome = next(c for c in schema if c.role == "outcome")
    treatment = next(c for c in schema if c.role == "treatment")
    confounders = [c for c in schema if c.role == "confounder"]
    if not keep:
        raise DataError(f"{path}: no complete rows")
    y = np.array([float(r[idx[outcome.name]]) for r in keep])
    t = np.array([int(float(r[idx[treatment.name]])) for r in keep])
    cols, specs = [], []
    for c in confounders:
        raw = [r[idx[c.name]].strip() for r in keep]
        if c.kind == "categorical":
            levels: dict[str, int] = {}
            for v in raw:
                levels.setdefault(v, len(levels))
            cols.append(np.array([levels[v] for v in raw], dtype=float))
            specs.append(replace(c, levels=tuple(levels)))
        else:
            cols.append(np.array([float(v) for v in raw]))
            specs.append(c)
    report = LoadReport(rows_read=len(rows), rows_dropped=len(rows) - len(keep),
                        missing_by_column=missing, unparseable_by_column=unparseable)
    if t.sum() == 0 or t.sum() == len(t):
        raise DataError(f"{path}: empty treatment arm after loading")
    return Dataset(y=y, t=t, x=np.column_stack(cols), specs=tuple(specs),
                   outcome_name=outcome.name, treatment_name=treatment.name, load_report=report)


def standardize(d: Dataset, enabled: bool = True) -> Dataset:
    """Z-score continuous confounders (sample sd); categorical columns untouched."""
    if not enabled:
        return d
    x = d.x.copy()
    center = np.zeros(d.p)
    scale = np.ones(d.p)
    for j, spec in enumerate(d.specs):
        if spec.kind != "continuous":
            continue
        col = x[:, j]
        sd = col.std(ddof=1) if d.n > 1 else 0.0
        if not sd > 0:
            raise DataError(f"cannot standardize zero-variance column {spec.name!r}")
        center[j], scale[j] = col.mean(), sd
        x[:, j] = (col - center[j]) / sd
    return replace(d, x=x, center=center, scale=scale)


def destandardize(d: Dataset) -> Dataset:
    if d.center is None:
        return d
    return replace(d, x=d.x * d.scale + d.center, center=None, scale=None)


@dataclass(frozen=True, eq=False)
class StrataAssignment:
    """Dense stratum labels 0..J-1 per row (``UNASSIGNED`` for dropped rows).

    ``treated``/``control`` are per-stratum arm counts, or None when the
    assignment was built without a treatment vector (e.g. a bare clustering).
    """

    labels: np.ndarray
    sizes: np.ndarray
    treated: np.ndarray | None = None
    control: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "labels", _frozen(np.asarray(self.labels, dtype=np.int64)))
        object.__setattr__(self, "sizes", _frozen(np.asarray(self.sizes, dtype=np.int64)))
        if self.treated is not None:
            object.__setattr__(self, "treated", _frozen(np.asarray(self.treated, dtype=np.int64)))
            object.__setattr__(self, "control", _frozen(np.asarray(self.control, dtype=np.int64)))

    @property
    def J(self) -> int:
        return int(self.sizes.shape[0])

    @property
    def n_assigned(self) -> int:
        return int((self.labels != UNASSIGNED).sum())

    @property
    def counts(self) -> np.ndarray:
        """J x 3 array of (n_j, n_1j, n_0j)."""
        if self.treated is None:
            raise ValueError("assignment carries no treatment counts; use with_treatment(t)")
        return np.column_stack([self.sizes, self.treated, self.control])

    def members(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.labels == j)

    def with_treatment(self, t) -> "StrataAssignment":
        return _from_dense(self.labels, self.J, t)


def _from_dense(labels: np.ndarray, J: int, t=None) -> StrataAssignment:
    labels = np.asarray(labels, dtype=np.int64)
    ok = labels != UNASSIGNED
    sizes = np.bincount(labels[ok], minlength=J)
    if t is None:
        return StrataAssignment(labels, sizes)
    t = np.asarray(t)
    if t.shape != labels.shape:
        raise DataError("treatment vector and labels differ in length")
    treated = np.bincount(labels[ok], weights=t[ok], minlength=J).astype(np.int64)
    return StrataAssignment(labels, sizes, treated, sizes - treated)


def compact_strata(labels, t=None) -> StrataAssignment:
    """Relabel arbitrary stratum labels densely by order of first appearance.

    Negative labels are treated as unassigned and map to ``UNASSIGNED``.
    """
    labels = np.asarray(labels)
    out = np.full(labels.shape[0], UNASSIGNED, dtype=np.int64)
    assigned = labels >= 0 if np.issubdtype(labels.dtype, np.number) else np.ones(labels.shape[0], bool)
    uniq, first, inverse = np.unique(labels[assigned], return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.shape[0])
    out[assigned] = rank[inverse.ravel()]
    return _from_dense(out, uniq.shape[0], t)


def relabel_kept(s: StrataAssignment, keep: np.ndarray, t=None) -> StrataAssignment:
    """Keep the strata flagged in boolean ``keep`` (length J), preserving their order."""
    new_index = np.full(s.J, UNASSIGNED, dtype=np.int64)
    new_index[keep] = np.arange(int(keep.sum()))
    labels = np.where(s.labels == UNASSIGNED, UNASSIGNED, new_index[np.maximum(s.labels, 0)])
    return _from_dense(labels, int(keep.sum()), t)
