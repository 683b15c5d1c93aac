"""Coarsened exact matching: per-column coarsening, exact matching, pruning."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Union

import numpy as np

from .dataset import UNASSIGNED, Dataset, StrataAssignment, _from_dense, relabel_kept
from .errors import ConfigError, NumericError, StratificationWarning

ESTIMANDS = ("ACE", "ACET")
PRUNE_POLICIES = ("drop", "error")


@dataclass(frozen=True)
class EqualWidth:
    bins: int

    def __post_init__(self):
        if int(self.bins) < 1:
            raise ConfigError("equal-width coarsening needs bins >= 1")


@dataclass(frozen=True)
class Cutpoints:
    cuts: tuple[float, ...]

    def __post_init__(self):
        cuts = tuple(float(c) for c in self.cuts)
        if any(b <= a for a, b in zip(cuts, cuts[1:])):
            raise ConfigError("cutpoints must be strictly increasing")
        object.__setattr__(self, "cuts", cuts)


@dataclass(frozen=True)
class CategoricalIdentity:
    pass


@dataclass(frozen=True)
class CategoricalGrouping:
    groups: Mapping[str, str] = field(default_factory=dict)


CoarsenRule = Union[EqualWidth, Cutpoints, CategoricalIdentity, CategoricalGrouping]


def sturges_bins(n: int) -> int:
    return max(1, math.ceil(math.log2(n) + 1))


def default_rule(kind: str, n: int) -> CoarsenRule:
    return EqualWidth(sturges_bins(n)) if kind == "continuous" else CategoricalIdentity()


def rule_from_config(entry: Mapping) -> CoarsenRule:
    """Build a rule from a config mapping with one of ``bins``, ``cutpoints``, ``group``."""
    if "bins" in entry:
        return EqualWidth(int(entry["bins"]))
    if "cutpoints" in entry:
        cuts = entry["cutpoints"]
        if isinstance(cuts, (int, float)):
            cuts = [cuts]
        return Cutpoints(tuple(cuts))
    if "group" in entry:
        return CategoricalGrouping({str(k): str(v) for k, v in dict(entry["group"]).items()})
    if entry.get("identity"):
        return CategoricalIdentity()
    raise ConfigError(f"cannot build a coarsening rule from {dict(entry)}")


def _snap(r: np.ndarray, scale: float) -> np.ndarray:
    # bin positions within rounding error of an edge are placed on the edge
    nearest = np.round(r)
    close = np.abs(r - nearest) <= 1e-9 * max(scale, 1.0)
    return np.where(close, nearest, r)


def coarsen_column(values, rule: CoarsenRule, kind: str = "continuous",
                   levels: tuple[str, ...] | None = None) -> np.ndarray:
    """Integer codes 0..L-1 for one column.

    Equal-width bins span [min, max], are left-closed, and the last bin is
    closed on the right. Cutpoints c_1 < ... < c_k give the right-closed bins
    (-inf, c_1], (c_1, c_2], ..., (c_k, inf).
    """
    v = np.asarray(values, dtype=float)
    if isinstance(rule, (EqualWidth, Cutpoints)) and kind != "continuous":
        raise ConfigError(f"{type(rule).__name__} applies to continuous columns only")
    if isinstance(rule, (CategoricalIdentity, CategoricalGrouping)) and kind != "categorical":
        raise ConfigError(f"{type(rule).__name__} applies to categorical columns only")

    if isinstance(rule, EqualWidth):
        m = int(rule.bins)
        lo, hi = v.min(), v.max()
        if hi == lo:
            if m > 1:
                warnings.warn("equal-width coarsening of a constant column; all values in bin 0",
                              StratificationWarning, stacklevel=2)
            return np.zeros(v.shape[0], dtype=np.int64)
        pos = _snap((v - lo) / (hi - lo) * m, m)
        return np.clip(np.floor(pos), 0, m - 1).astype(np.int64)
    if isinstance(rule, Cutpoints):
        return np.searchsorted(np.asarray(rule.cuts), v, side="left").astype(np.int64)
    if isinstance(rule, CategoricalIdentity):
        return v.astype(np.int64)
    if isinstance(rule, CategoricalGrouping):
        codes = v.astype(np.int64)
        names = levels if levels is not None else tuple(str(c) for c in range(codes.max() + 1))
        group_code: dict[str, int] = {}
        for g in rule.groups.values():
            group_code.setdefault(g, len(group_code))
        table = np.full(len(names), -1, dtype=np.int64)
        for i, name in enumerate(names):
            if name in rule.groups:
                table[i] = group_code[rule.groups[name]]
        observed = np.unique(codes)
        unmapped = [names[c] for c in observed if table[c] < 0]
        if unmapped:
            raise ConfigError(f"grouping map does not cover observed levels {unmapped}")
        return table[codes]
    raise ConfigError(f"unknown coarsening rule {rule!r}")


def coarsen(d: Dataset, rules: Mapping[str, CoarsenRule] | None = None,
            default_bins: int | None = None) -> np.ndarray:
    """n x p code matrix; columns without an explicit rule get the default rule.

    ``default_bins`` overrides the Sturges bin count for continuous columns.
    """
    rules = dict(rules or {})
    unknown = set(rules) - set(d.names)
    if unknown:
        raise ConfigError(f"coarsening rules for unknown columns {sorted(unknown)}")
    codes = np.empty(d.x.shape, dtype=np.int64)
    for j, spec in enumerate(d.specs):
        rule = rules.get(spec.name)
        if rule is None:
            if spec.kind == "continuous" and default_bins is not None:
                rule = EqualWidth(default_bins)
            else:
                rule = default_rule(spec.kind, d.n)
        codes[:, j] = coarsen_column(d.x[:, j], rule, spec.kind, spec.levels)
    return codes


def exact_match_strata(codes, t=None) -> StrataAssignment:
    """Strata are the distinct code tuples, labelled in lexicographic tuple order."""
    codes = np.asarray(codes)
    if codes.ndim == 1:
        codes = codes[:, None]
    uniq, inverse = np.unique(codes, axis=0, return_inverse=True)
    return _from_dense(inverse.ravel(), uniq.shape[0], t)


@dataclass(frozen=True)
class PruneReport:
    estimand: str
    policy: str
    control_only_strata: tuple[int, ...]
    treated_only_strata: tuple[int, ...]
    dropped_treated: int
    dropped_control: int
    retained_treated: int
    retained_control: int
    restricted_to_matched_treated: bool = False

    @property
    def strata_dropped(self) -> int:
        return len(self.control_only_strata) + len(self.treated_only_strata)

    def to_dict(self) -> dict:
        return {
            "estimand": self.estimand,
            "policy": self.policy,
            "control_only_strata": list(self.control_only_strata),
            "treated_only_strata": list(self.treated_only_strata),
            "dropped_treated": self.dropped_treated,
            "dropped_control": self.dropped_control,
            "retained_treated": self.retained_treated,
            "retained_control": self.retained_control,
            "restricted_to_matched_treated": self.restricted_to_matched_treated,
        }


def prune(s: StrataAssignment, t, estimand: str = "ACE",
          policy: str = "drop") -> tuple[StrataAssignment, PruneReport]:
    """Discard strata lacking a treatment arm.

    Control-only strata are always discarded. Treated-only strata are
    discarded under ``policy="drop"`` (for ACET the result then describes the
    matched treated units only, which the report flags) or raise under
    ``policy="error"``.
    """
    estimand = estimand.upper()
    if estimand not in ESTIMANDS:
        raise ConfigError(f"unknown estimand {estimand!r}")
    if policy not in PRUNE_POLICIES:
        raise ConfigError(f"unknown prune policy {policy!r}")
    if s.treated is None:
        s = s.with_treatment(t)
    n1, n0 = s.treated, s.control
    control_only = np.flatnonzero((n1 == 0) & (n0 > 0))
    treated_only = np.flatnonzero((n0 == 0) & (n1 > 0))
    if policy == "error":
        if estimand == "ACE" and (control_only.size or treated_only.size):
            raise NumericError(f"{control_only.size + treated_only.size} strata lack a treatment arm")
        if estimand == "ACET" and treated_only.size:
            raise NumericError(f"{treated_only.size} strata contain treated units only")
    keep = (n1 > 0) & (n0 > 0)
    if not keep.any():
        raise NumericError("no estimable strata: every stratum lacks a treatment arm")
    out = relabel_kept(s, keep, t)
    report = PruneReport(
        estimand=estimand,
        policy=policy,
        control_only_strata=tuple(int(j) for j in control_only),
        treated_only_strata=tuple(int(j) for j in treated_only),
        dropped_treated=int(n1[~keep].sum()),
        dropped_control=int(n0[~keep].sum()),
        retained_treated=int(n1[keep].sum()),
        retained_control=int(n0[keep].sum()),
        restricted_to_matched_treated=bool(estimand == "ACET" and treated_only.size > 0),
    )
    return out, report


def cem_strata(d: Dataset, rules: Mapping[str, CoarsenRule] | None = None,
               default_bins: int | None = None) -> StrataAssignment:
    return exact_match_strata(coarsen(d, rules, default_bins), d.t)


def cem_for_target(d: Dataset, target_J: int, estimand: str = "ACE",
                   rules: Mapping[str, CoarsenRule] | None = None,
                   max_bins: int = 200) -> tuple[StrataAssignment, PruneReport, int]:
    """Pick the uniform bin count whose pruned strata count is closest to ``target_J``.

    CEM does not let J be chosen directly, so continuous columns without an
    explicit rule share one bin count M, scanned over 1..max_bins. Ties go to
    the smaller M. Returns the pruned assignment, its report and the chosen M.
    """
    best = None
    for m in range(1, min(max_bins, d.n) + 1):
        s = cem_strata(d, rules, default_bins=m)
        try:
            pruned, report = prune(s, d.t, estimand, "drop")
        except NumericError:
            continue
        gap = abs(pruned.J - target_J)
        if best is None or gap < best[0]:
            best = (gap, pruned, report, m)
        if gap == 0 or pruned.J > 4 * target_J:
            break
        if all(spec.kind != "continuous" or spec.name in (rules or {}) for spec in d.specs):
            break
    if best is None:
        raise NumericError("no estimable strata for any bin count")
    return best[1], best[2], best[3]


__all__ = [
    "EqualWidth", "Cutpoints", "CategoricalIdentity", "CategoricalGrouping", "CoarsenRule",
    "PruneReport", "coarsen_column", "coarsen", "exact_match_strata", "prune", "cem_strata",
    "cem_for_target", "sturges_bins", "rule_from_config", "UNASSIGNED",
]
