"""Stratified ACE / ACET point estimates, plug-in variances and Wald inference."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .cem import PruneReport
from .dataset import UNASSIGNED, Dataset, StrataAssignment
from .errors import ConfigError, DataError, NumericError, StratificationWarning

# na_rm mirrors summing per-stratum variances with missing values removed: a stratum
# with a singleton arm then contributes nothing to the variance, not even its other arm.
VARIANCE_POLICIES = ("zero_with_warning", "drop_stratum", "error", "na_rm")
WEIGHT_MODES = ("retained", "total")


@dataclass(frozen=True)
class StratumSummary:
    label: int
    n: int
    n1: int
    n0: int
    mean1: float
    mean0: float
    var1: float | None  # None when the arm has a single observation
    var0: float | None
    w: float = 1.0

    def to_dict(self) -> dict:
        return {"label": self.label, "n": self.n, "n1": self.n1, "n0": self.n0,
                "mean1": self.mean1, "mean0": self.mean0, "var1": self.var1, "var0": self.var0,
                "w": self.w}


def _sample_var(v: np.ndarray) -> float | None:
    return float(v.var(ddof=1)) if v.shape[0] > 1 else None


def summarize_strata(d: Dataset, s: StrataAssignment) -> list[StratumSummary]:
    """Per-stratum arm counts, means and sample variances (n-1 denominator).

    Every stratum must contain both arms; prune first. ``w`` is the ACET
    ratio (n_1j/n_1)/(n_0j/n_0) with n_1, n_0 totalled over the strata here.
    """
    labels = np.asarray(s.labels)
    if labels.shape[0] != d.n:
        raise DataError("strata labels and dataset differ in length")
    y, t = d.y, d.t
    groups = []
    for j in range(s.J):
        rows = labels == j
        y1 = y[rows & (t == 1)]
        y0 = y[rows & (t == 0)]
        if y1.shape[0] == 0 or y0.shape[0] == 0:
            raise DataError(f"stratum {j} lacks a treatment arm; prune before estimating")
        groups.append((j, y1, y0))
    n1_tot = sum(g[1].shape[0] for g in groups)
    n0_tot = sum(g[2].shape[0] for g in groups)
    out = []
    for j, y1, y0 in groups:
        n1, n0 = y1.shape[0], y0.shape[0]
        out.append(StratumSummary(
            label=j, n=n1 + n0, n1=n1, n0=n0,
            mean1=float(y1.mean()), mean0=float(y0.mean()),
            var1=_sample_var(y1), var0=_sample_var(y0),
            w=(n1 / n1_tot) / (n0 / n0_tot),
        ))
    return out


@dataclass(frozen=True)
class Estimate:
    estimand: str
    tau_hat: float
    var_hat: float
    se: float
    z: float
    p: float
    ci: tuple[float, float]
    weight_mode: str
    n_denominator: int
    strata: tuple[StratumSummary, ...]
    alpha: float = 0.05
    variance_policy: str = "zero_with_warning"
    att_conventional: bool = False
    prune_report: PruneReport | None = None
    notes: tuple[str, ...] = field(default=())

    @property
    def J(self) -> int:
        return len(self.strata)

    def to_dict(self, include_strata: bool = True) -> dict:
        out = {
            "estimand": self.estimand,
            "tau_hat": self.tau_hat,
            "var_hat": self.var_hat,
            "se": self.se,
            "z": self.z,
            "p": self.p,
            "ci": list(self.ci),
            "alpha": self.alpha,
            "J": self.J,
            "weight_mode": self.weight_mode,
            "n_denominator": self.n_denominator,
            "variance_policy": self.variance_policy,
            "att_conventional": self.att_conventional,
            "prune_report": self.prune_report.to_dict() if self.prune_report else None,
            "notes": list(self.notes),
        }
        if include_strata:
            out["strata"] = [s.to_dict() for s in self.strata]
        return out


def wald_inference(tau_hat: float, var_hat: float, alpha: float = 0.05):
    """Normal-reference z statistic, two-sided p-value and 1-alpha interval."""
    if var_hat < 0 or math.isnan(var_hat):
        raise NumericError(f"negative variance {var_hat!r}")
    se = math.sqrt(var_hat)
    crit = float(norm.ppf(1 - alpha / 2))
    ci = (tau_hat - crit * se, tau_hat + crit * se)
    if se == 0:
        warnings.warn("zero estimated variance; p-value is degenerate", StratificationWarning,
                      stacklevel=2)
        if tau_hat == 0:
            return 0.0, 1.0, ci
        return math.copysign(math.inf, tau_hat), 0.0, ci
    z = tau_hat / se
    p = float(2 * norm.sf(abs(z)))
    return z, p, ci


def _variance_terms(summaries: Sequence[StratumSummary], policy: str, notes: list[str]):
    """Per-stratum (var1/n1, var0/n0), resolving singleton arms per ``policy``.

    Returns the kept summaries, arm terms, and a per-stratum flag saying
    whether the stratum enters the variance at all.
    """
    if policy not in VARIANCE_POLICIES:
        raise ConfigError(f"unknown variance policy {policy!r}")
    kept, t1, t0, in_var = [], [], [], []
    undefined = 0
    for s in summaries:
        bad = s.var1 is None or s.var0 is None
        undefined += bad
        if bad and policy == "error":
            raise NumericError(f"stratum {s.label}: arm variance undefined (single observation)")
        if bad and policy == "drop_stratum":
            continue
        kept.append(s)
        t1.append(0.0 if s.var1 is None else s.var1 / s.n1)
        t0.append(0.0 if s.var0 is None else s.var0 / s.n0)
        in_var.append(not (bad and policy == "na_rm"))
    if undefined and policy != "error":
        msg = {
            "zero_with_warning": "undefined arm variances set to zero",
            "drop_stratum": "strata dropped",
            "na_rm": "strata left out of the variance sum",
        }[policy]
        notes.append(f"{undefined} strata have a singleton arm: {msg}")
        warnings.warn(notes[-1], StratificationWarning, stacklevel=3)
    if not kept:
        raise NumericError("no strata left after applying the variance policy")
    return kept, np.array(t1), np.array(t0), np.array(in_var)


def _weights(kept: Sequence[StratumSummary], n_total: int | None):
    sizes = np.array([s.n for s in kept], dtype=float)
    if n_total is None:
        return sizes / sizes.sum(), "retained", int(sizes.sum())
    if n_total < sizes.sum():
        raise ConfigError("n_total is smaller than the number of retained observations")
    return sizes / n_total, "total", int(n_total)


def estimate_ace(summaries: Sequence[StratumSummary], n_total: int | None = None,
                 variance_policy: str = "zero_with_warning", alpha: float = 0.05,
                 prune_report: PruneReport | None = None) -> Estimate:
    """tau = sum_j (n_j/n)(ybar_1j - ybar_0j); var = sum_j (n_j/n)^2 (s2_1j/n_1j + s2_0j/n_0j).

    ``n`` is the retained total unless ``n_total`` is given (the full-sample
    denominator, in which case the weights sum to less than one).
    """
    if not summaries:
        raise NumericError("no strata to estimate from")
    notes: list[str] = []
    kept, t1, t0, in_var = _variance_terms(summaries, variance_policy, notes)
    wt, mode, n = _weights(kept, n_total)
    diff = np.array([s.mean1 - s.mean0 for s in kept])
    tau = float(np.sum(wt * diff))
    var = float(np.sum((wt ** 2 * (t1 + t0))[in_var]))
    z, p, ci = wald_inference(tau, var, alpha)
    return Estimate("ACE", tau, var, math.sqrt(var), z, p, ci, mode, n, tuple(kept), alpha,
                    variance_policy, False, prune_report, tuple(notes))


def estimate_acet(summaries: Sequence[StratumSummary], n_total: int | None = None,
                  variance_policy: str = "zero_with_warning", alpha: float = 0.05,
                  prune_report: PruneReport | None = None,
                  att_conventional: bool = False) -> Estimate:
    """Effect on the treated.

    Default: tau = sum_j (n_j/n)(ybar_1j - w_j ybar_0j) with
    var = sum_j (n_j/n)^2 (s2_1j/n_1j + w_j^2 s2_0j/n_0j).
    ``att_conventional`` instead weights the within-stratum differences by the
    treated share n_1j/n_1.
    """
    if not summaries:
        raise NumericError("no strata to estimate from")
    notes: list[str] = []
    kept, t1, t0, in_var = _variance_terms(summaries, variance_policy, notes)
    if len(kept) != len(summaries):
        # weight ratios must refer to the strata actually used
        n1_tot = sum(s.n1 for s in kept)
        n0_tot = sum(s.n0 for s in kept)
        w = np.array([(s.n1 / n1_tot) / (s.n0 / n0_tot) for s in kept])
    else:
        w = np.array([s.w for s in kept])
    m1 = np.array([s.mean1 for s in kept])
    m0 = np.array([s.mean0 for s in kept])
    if att_conventional:
        n1 = np.array([s.n1 for s in kept], dtype=float)
        wt = n1 / n1.sum()
        mode, n = "treated", int(n1.sum())
        tau = float(np.sum(wt * (m1 - m0)))
        var = float(np.sum((wt ** 2 * (t1 + t0))[in_var]))
    else:
        wt, mode, n = _weights(kept, n_total)
        tau = float(np.sum(wt * (m1 - w * m0)))
        var = float(np.sum((wt ** 2 * (t1 + w ** 2 * t0))[in_var]))
    z, p, ci = wald_inference(tau, var, alpha)
    return Estimate("ACET", tau, var, math.sqrt(var), z, p, ci, mode, n, tuple(kept), alpha,
                    variance_policy, att_conventional, prune_report, tuple(notes))


def estimate(d: Dataset, s: StrataAssignment, estimand: str = "ACE", weight_mode: str = "retained",
             variance_policy: str = "zero_with_warning", alpha: float = 0.05,
             prune_report: PruneReport | None = None, att_conventional: bool = False,
             n_total: int | None = None) -> Estimate:
    """Summarize pruned strata and dispatch on the estimand.

    With ``weight_mode="total"`` the denominator is ``n_total`` (default: all
    rows of ``d``, pruned or not).
    """
    if weight_mode not in WEIGHT_MODES:
        raise ConfigError(f"unknown weight mode {weight_mode!r}")
    summaries = summarize_strata(d, s)
    denom = (n_total or d.n) if weight_mode == "total" else None
    estimand = estimand.upper()
    if estimand == "ACE":
        return estimate_ace(summaries, denom, variance_policy, alpha, prune_report)
    if estimand == "ACET":
        return estimate_acet(summaries, denom, variance_policy, alpha, prune_report,
                             att_conventional)
    raise ConfigError(f"unknown estimand {estimand!r}")


def estimating_function(tau: float, y, t, labels) -> float:
    """Stratified estimating function U(tau) whose root is the ACE point estimate.

    Observation i in stratum j contributes
    (n_j/n)(T_i Y_i / n_1j - (1 - T_i) Y_i / n_0j) - tau/n, with n the
    number of assigned rows; rows labelled ``UNASSIGNED`` contribute nothing.
    """
    y = np.asarray(y, dtype=float)
    t = np.asarray(t)
    labels = np.asarray(labels)
    ok = labels != UNASSIGNED
    y, t, labels = y[ok], t[ok], labels[ok]
    n = y.shape[0]
    J = int(labels.max()) + 1
    nj = np.bincount(labels, minlength=J).astype(float)
    n1j = np.bincount(labels, weights=t, minlength=J)
    n0j = nj - n1j
    contrib = (nj[labels] / n) * (t * y / n1j[labels] - (1 - t) * y / n0j[labels]) - tau / n
    return float(contrib.sum())
