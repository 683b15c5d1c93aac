"""Monte Carlo data generators and coverage/bias studies for stratified estimators."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import partial
from itertools import product
from pathlib import Path
from typing import Sequence, Union

import numpy as np
import yaml
from scipy.special import expit
from scipy.stats import kstest, norm

from .cem import Cutpoints
from .dataset import ColumnSpec, Dataset
from .errors import ConfigError, DataError, NumericError
from .estimator import estimate
from .extrapolation import GridPoint, extrapolate
from .seeds import derive_seed
from .stratify import CEMMethod, Method, stratify

LAWS = ("gaussian", "uniform", "mixed_with_binary")
POSITIVITY_EPS = 0.01
KS_CRIT_1PCT = 1.63


@dataclass(frozen=True)
class ConfounderLaw:
    """Independent columns: N(0,1), U(0,1), or leading Bernoulli(1/2) columns then N(0,1)."""

    kind: str = "gaussian"
    n_binary: int = 0

    def __post_init__(self):
        if self.kind not in LAWS:
            raise ConfigError(f"unknown confounder law {self.kind!r}")

    def is_binary(self, j: int) -> bool:
        return self.kind == "mixed_with_binary" and j < self.n_binary

    def draw(self, rng: np.random.Generator, n: int, p: int) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(size=(n, p))
        x = rng.standard_normal((n, p))
        if self.kind == "mixed_with_binary":
            x[:, : self.n_binary] = rng.integers(0, 2, size=(n, min(self.n_binary, p)))
        return x

    def cdf(self, j: int, v: float) -> float:
        if self.is_binary(j):
            return 0.0 if v < 0 else (0.5 if v < 1 else 1.0)
        if self.kind == "uniform":
            return float(min(max(v, 0.0), 1.0))
        return float(norm.cdf(v))

    def mean(self, j: int) -> float:
        return 0.5 if (self.is_binary(j) or self.kind == "uniform") else 0.0


@dataclass(frozen=True)
class LinearSurface:
    intercept0: float
    coef0: tuple[float, ...]
    intercept1: float
    coef1: tuple[float, ...]
    kind = "linear"

    def mu(self, x: np.ndarray, arm: int) -> np.ndarray:
        a, b = (self.intercept1, self.coef1) if arm else (self.intercept0, self.coef0)
        return a + x[:, : len(b)] @ np.asarray(b, dtype=float)

    def true_tau(self, law: ConfounderLaw, p: int) -> float | None:
        diff = np.asarray(self.coef1, float) - np.asarray(self.coef0, float)
        means = np.array([law.mean(j) for j in range(len(diff))])
        return float(self.intercept1 - self.intercept0 + diff @ means)


@dataclass(frozen=True)
class PiecewiseSurface:
    """Constant outcome levels on the cells cut out by per-column cutpoints.

    Column j uses the right-closed bins of ``cutpoints[j]``; cells are numbered
    row-major over the leading ``len(cutpoints)`` columns.
    """

    cutpoints: tuple[tuple[float, ...], ...]
    levels0: tuple[float, ...]
    levels1: tuple[float, ...]
    kind = "piecewise"

    def __post_init__(self):
        cells = math.prod(len(c) + 1 for c in self.cutpoints)
        if len(self.levels0) != cells or len(self.levels1) != cells:
            raise ConfigError(f"piecewise surface needs {cells} levels per arm")

    def cell(self, x: np.ndarray) -> np.ndarray:
        idx = np.zeros(x.shape[0], dtype=np.int64)
        for j, cuts in enumerate(self.cutpoints):
            idx = idx * (len(cuts) + 1) + np.searchsorted(np.asarray(cuts), x[:, j], side="left")
        return idx

    def mu(self, x: np.ndarray, arm: int) -> np.ndarray:
        lv = np.asarray(self.levels1 if arm else self.levels0, dtype=float)
        return lv[self.cell(x)]

    def cell_probs(self, law: ConfounderLaw) -> np.ndarray:
        per_col = []
        for j, cuts in enumerate(self.cutpoints):
            edges = [0.0] + [law.cdf(j, c) for c in cuts] + [1.0]
            per_col.append(np.diff(edges))
        return np.array([math.prod(c) for c in product(*per_col)])

    def true_tau(self, law: ConfounderLaw, p: int) -> float | None:
        diff = np.asarray(self.levels1, float) - np.asarray(self.levels0, float)
        return float(self.cell_probs(law) @ diff)


@dataclass(frozen=True)
class NonlinearSurface:
    """Smooth preset: mu0 = sin(x1) + x2^2 / 2, mu1 = mu0 + shift + cos(x1) / 2."""

    shift: float = 1.0
    kind = "nonlinear"

    def mu(self, x: np.ndarray, arm: int) -> np.ndarray:
        base = np.sin(x[:, 0]) + 0.5 * x[:, 1] ** 2
        return base + (self.shift + 0.5 * np.cos(x[:, 0]) if arm else 0.0)

    def true_tau(self, law: ConfounderLaw, p: int) -> float | None:
        return None  # no closed form across laws; SimConfig falls back to quadrature


Surface = Union[LinearSurface, PiecewiseSurface, NonlinearSurface]


@dataclass(frozen=True)
class SimConfig:
    name: str
    n: int
    p: int
    law: ConfounderLaw
    surface: Surface
    treat_intercept: float = 0.0
    treat_coef: tuple[float, ...] = ()
    noise_sd: float = 1.0
    positivity_eps: float = POSITIVITY_EPS

    def __post_init__(self):
        if self.n < 4 or self.p < 1:
            raise ConfigError("simulation needs n >= 4 and p >= 1")
        if len(self.treat_coef) > self.p:
            raise ConfigError("more treatment coefficients than confounders")
        if isinstance(self.surface, PiecewiseSurface) and len(self.surface.cutpoints) > self.p:
            raise ConfigError("piecewise surface uses more columns than p")
        if isinstance(self.surface, NonlinearSurface) and self.p < 2:
            raise ConfigError("nonlinear preset needs p >= 2")
        if not 0 < self.positivity_eps < 0.5:
            raise ConfigError("positivity epsilon must lie in (0, 0.5)")
        if not (np.isfinite(self.treat_intercept) and np.all(np.isfinite(self.treat_coef))):
            raise ConfigError("treatment model coefficients must be finite")

    def propensity(self, x: np.ndarray) -> np.ndarray:
        """Logistic propensity squeezed into [eps, 1 - eps] so positivity always holds."""
        lin = self.treat_intercept + x[:, : len(self.treat_coef)] @ np.asarray(self.treat_coef, float)
        e = self.positivity_eps
        return e + (1 - 2 * e) * expit(lin)

    def specs(self) -> tuple[ColumnSpec, ...]:
        return tuple(
            ColumnSpec(f"x{j + 1}", "categorical", "confounder", ("0", "1")) if self.law.is_binary(j)
            else ColumnSpec(f"x{j + 1}", "continuous", "confounder")
            for j in range(self.p)
        )

    def to_dict(self) -> dict:
        surf = {"kind": self.surface.kind, **asdict(self.surface)}
        return {"name": self.name, "n": self.n, "p": self.p, "law": asdict(self.law),
                "surface": surf, "treatment": {"intercept": self.treat_intercept,
                                               "coef": list(self.treat_coef)},
                "noise_sd": self.noise_sd, "positivity_eps": self.positivity_eps}


def generate(cfg: SimConfig, rep_seed: int) -> tuple[Dataset, float]:
    """One replicate: X from the law, T | X logistic, Y = mu_T(X) + noise.

    Returns the dataset and the population ACE.
    """
    rng = np.random.default_rng(rep_seed)
    x = cfg.law.draw(rng, cfg.n, cfg.p)
    t = (rng.uniform(size=cfg.n) < cfg.propensity(x)).astype(np.int8)
    mu1, mu0 = cfg.surface.mu(x, 1), cfg.surface.mu(x, 0)
    y = np.where(t == 1, mu1, mu0) + cfg.noise_sd * rng.standard_normal(cfg.n)
    return Dataset(y=y, t=t, x=x, specs=cfg.specs()), true_ace(cfg)


_QUAD_DRAWS = 1_000_000
_QUAD_SEED = 20240101


def _quadrature_sample(cfg: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(_QUAD_SEED)
    x = cfg.law.draw(rng, _QUAD_DRAWS, cfg.p)
    return x, cfg.surface.mu(x, 1) - cfg.surface.mu(x, 0)


def true_ace(cfg: SimConfig) -> float:
    exact = cfg.surface.true_tau(cfg.law, cfg.p)
    if exact is not None:
        return exact
    return float(_quadrature_sample(cfg)[1].mean())


def true_acet(cfg: SimConfig) -> float:
    """E[mu1 - mu0 | T = 1] by large-sample quadrature."""
    x, diff = _quadrature_sample(cfg)
    e = cfg.propensity(x)
    return float(np.sum(e * diff) / np.sum(e))


def sigma2_oracle(cfg: SimConfig, draws: int = 200_000, seed: int = 7) -> float:
    """Var[mu1(X) - mu0(X)] over a fresh sample from the generator."""
    x = cfg.law.draw(np.random.default_rng(seed), draws, cfg.p)
    return float(np.var(cfg.surface.mu(x, 1) - cfg.surface.mu(x, 0)))


# --- presets ---------------------------------------------------------------

def _presets(n: int = 2000) -> dict[str, SimConfig]:
    g2 = ConfounderLaw("gaussian")
    return {
        "null": SimConfig("null", n, 2, g2, LinearSurface(1.0, (1.0, 0.5), 1.0, (1.0, 0.5)),
                          0.0, (0.0, 0.0)),
        "constant-effect": SimConfig("constant-effect", n, 2, g2,
                                     LinearSurface(0.0, (1.0, 1.0), 2.0, (1.0, 1.0)),
                                     0.0, (0.5, -0.5)),
        "aligned-piecewise": SimConfig(
            "aligned-piecewise", n, 2, g2,
            PiecewiseSurface(((0.0,), (0.5,)), (0.0, 1.0, 2.0, 3.0), (1.0, 2.5, 2.5, 4.0)),
            -0.2, (0.8, 0.8)),
        "smooth-linear": SimConfig("smooth-linear", n, 2, g2,
                                   LinearSurface(0.0, (1.0, 1.0), 1.0, (1.5, 1.0)),
                                   0.0, (1.0, 1.0)),
        "smooth-nonlinear": SimConfig("smooth-nonlinear", n, 2, g2, NonlinearSurface(1.0),
                                      0.0, (0.8, 0.8)),
    }


SCENARIOS = tuple(_presets())


def scenario(name: str, n: int | None = None) -> SimConfig:
    presets = _presets()
    if name not in presets:
        raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    cfg = presets[name]
    return replace(cfg, n=n) if n is not None else cfg


def _surface_from_dict(d: dict) -> Surface:
    d = dict(d)
    kind = d.pop("kind", "linear")
    if kind == "linear":
        return LinearSurface(float(d["intercept0"]), tuple(d["coef0"]), float(d["intercept1"]),
                             tuple(d["coef1"]))
    if kind == "piecewise":
        return PiecewiseSurface(tuple(tuple(c) for c in d["cutpoints"]), tuple(d["levels0"]),
                                tuple(d["levels1"]))
    if kind == "nonlinear":
        return NonlinearSurface(float(d.get("shift", 1.0)))
    raise ConfigError(f"unknown surface kind {kind!r}")


def config_from_dict(d: dict) -> SimConfig:
    try:
        law = d.get("law", {"kind": "gaussian"})
        law = ConfounderLaw(**law) if isinstance(law, dict) else ConfounderLaw(str(law))
        treat = d.get("treatment", {})
        return SimConfig(
            name=str(d.get("name", "custom")), n=int(d["n"]), p=int(d["p"]), law=law,
            surface=_surface_from_dict(d["surface"]),
            treat_intercept=float(treat.get("intercept", 0.0)),
            treat_coef=tuple(float(c) for c in treat.get("coef", ())),
            noise_sd=float(d.get("noise_sd", 1.0)),
            positivity_eps=float(d.get("positivity_eps", POSITIVITY_EPS)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad scenario config: {exc}") from exc


def load_scenario(name_or_path: str, n: int | None = None) -> SimConfig:
    """A preset name or a YAML/JSON file mirroring :class:`SimConfig`."""
    path = Path(name_or_path)
    if name_or_path in SCENARIOS or not path.suffix:
        return scenario(name_or_path, n)
    if not path.is_file():
        raise ConfigError(f"scenario file not found: {path}")
    cfg = config_from_dict(yaml.safe_load(path.read_text(encoding="utf-8")))
    return replace(cfg, n=n) if n is not None else cfg


def aligned_cem(cfg: SimConfig) -> CEMMethod:
    """CEM whose cutpoints reproduce the generating partition of a piecewise surface."""
    if not isinstance(cfg.surface, PiecewiseSurface):
        raise ConfigError("aligned CEM needs a piecewise surface")
    rules = {f"x{j + 1}": Cutpoints(c) for j, c in enumerate(cfg.surface.cutpoints)}
    # columns outside the partition are left unsplit
    for j in range(len(cfg.surface.cutpoints), cfg.p):
        rules[f"x{j + 1}"] = Cutpoints(())
    return CEMMethod(rules=rules)


# --- Monte Carlo -----------------------------------------------------------

def normality_check(z: Sequence[float], min_size: int = 500) -> tuple[float, bool]:
    """One-sample KS distance to N(0, 1); passes below the asymptotic 1% critical value."""
    z = np.asarray(z, dtype=float)
    if z.shape[0] < min_size:
        raise ConfigError(f"normality check needs at least {min_size} values, got {z.shape[0]}")
    stat = float(kstest(z, "norm").statistic)
    return stat, stat < KS_CRIT_1PCT / math.sqrt(z.shape[0])


@dataclass(frozen=True)
class RepResult:
    rep: int
    seed: int
    ok: bool
    tau_hat: float = math.nan
    se: float = math.nan
    covered: bool = False
    J: int = 0
    grid: tuple[tuple[int, int, float, float], ...] = ()  # (requested, realized, tau, var)
    corrected: float = math.nan
    corrected_se: float = math.nan
    corrected_covered: bool = False
    error: str = ""


def _one_rep(rep: int, cfg: SimConfig, method: Method, estimand: str, k: int | None,
             grid: tuple[int, ...], seed: int, truth: float, weight_mode: str,
             variance_policy: str, shared_seed: bool) -> RepResult:
    rep_seed = derive_seed(seed, rep)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            d, _ = generate(cfg, rep_seed)
            strat_seed = derive_seed(rep_seed, 1)
            out = {}
            if k is not None or (isinstance(method, CEMMethod) and not grid):
                st = stratify(d, method, estimand, k=k, seed=strat_seed)
                est = estimate(d, st.pruned, estimand, weight_mode, variance_policy,
                               prune_report=st.report)
                out.update(tau_hat=est.tau_hat, se=est.se, J=st.J,
                           covered=bool(est.ci[0] <= truth <= est.ci[1]))
            if grid:
                pts, rows = [], []
                cache: dict | None = {} if shared_seed else None
                for g, K in enumerate(grid):
                    gseed = strat_seed if shared_seed else derive_seed(strat_seed, g + 1)
                    st = stratify(d, method, estimand, k=K, seed=gseed, rf_cache=cache)
                    est = estimate(d, st.pruned, estimand, weight_mode, variance_policy)
                    pts.append(GridPoint(st.J, est.tau_hat, est.var_hat, method.name, gseed, K))
                    rows.append((K, st.J, est.tau_hat, est.var_hat))
                res = extrapolate(pts)
                crit = float(norm.ppf(0.975))
                lo = res.tau_corrected - crit * res.se_corrected
                hi = res.tau_corrected + crit * res.se_corrected
                out.update(grid=tuple(rows), corrected=res.tau_corrected,
                           corrected_se=res.se_corrected,
                           corrected_covered=bool(lo <= truth <= hi))
                if "tau_hat" not in out:
                    out.update(tau_hat=res.tau_corrected, se=res.se_corrected,
                               covered=out["corrected_covered"], J=pts[-1].J)
        return RepResult(rep, rep_seed, True, **out)
    except (NumericError, DataError) as exc:
        return RepResult(rep, rep_seed, False, error=str(exc))


def _run_chunk(reps: Sequence[int], **kw) -> list[RepResult]:
    return [_one_rep(r, **kw) for r in reps]


@dataclass(frozen=True)
class MCReport:
    scenario: str
    estimand: str
    reps: int
    failed: int
    true_tau: float
    mean_tau_hat: float
    bias: float
    emp_sd: float
    mc_se: float
    mean_se: float
    rmse: float
    coverage: float
    ks_stat: float | None
    ks_pass: bool | None
    sigma2_oracle: float
    n_times_mean_var: float
    per_J: tuple[dict, ...] = ()
    corrected: dict | None = None
    results: tuple[RepResult, ...] = field(default=(), repr=False)

    @property
    def failed_fraction(self) -> float:
        return self.failed / self.reps

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in (
            "scenario", "estimand", "reps", "failed", "failed_fraction", "true_tau",
            "mean_tau_hat", "bias", "emp_sd", "mc_se", "mean_se", "rmse", "coverage", "ks_stat",
            "ks_pass", "sigma2_oracle", "n_times_mean_var")}
        out["per_J"] = list(self.per_J)
        out["corrected"] = self.corrected
        return out

    def per_rep_rows(self) -> list[dict]:
        rows = []
        for r in self.results:
            row = {"rep": r.rep, "seed": r.seed, "ok": r.ok, "tau_hat": r.tau_hat, "se": r.se,
                   "covered": r.covered, "J": r.J, "corrected": r.corrected,
                   "corrected_se": r.corrected_se}
            for K, J, tau, var in r.grid:
                row[f"tau_K{K}"] = tau
                row[f"var_K{K}"] = var
                row[f"J_K{K}"] = J
            rows.append(row)
        return rows


def _summary(values: np.ndarray, truth: float) -> dict:
    m = float(values.mean())
    sd = float(values.std(ddof=1)) if values.shape[0] > 1 else 0.0
    return {"mean": m, "bias": m - truth, "sd": sd, "mc_se": sd / math.sqrt(values.shape[0]),
            "rmse": float(np.sqrt(np.mean((values - truth) ** 2)))}


def run_mc(cfg: SimConfig, method: Method, estimand: str = "ACE", reps: int = 1000,
           seed: int = 0, k: int | None = None, grid: Sequence[int] = (),
           weight_mode: str = "retained", variance_policy: str = "zero_with_warning",
           shared_seed: bool = False, workers: int = 1) -> MCReport:
    """generate -> stratify -> prune -> estimate, ``reps`` times.

    Replicate ``r`` uses seed ``(seed, r)``, so the report does not depend on
    ``workers``. With ``grid`` each replicate also runs the 1/J extrapolation;
    the headline numbers then describe the fixed-``k`` estimator when ``k`` is
    given and the corrected estimator otherwise.
    """
    estimand = estimand.upper()
    if reps < 1:
        raise ConfigError("reps must be at least 1")
    grid = tuple(int(g) for g in grid)
    if k is None and not grid and not isinstance(method, CEMMethod):
        raise ConfigError(f"method {method.name} needs k or a grid")
    truth = true_ace(cfg) if estimand == "ACE" else true_acet(cfg)
    kw = dict(cfg=cfg, method=method, estimand=estimand, k=k, grid=grid, seed=seed, truth=truth,
              weight_mode=weight_mode, variance_policy=variance_policy, shared_seed=shared_seed)
    if workers > 1:
        chunks = [list(range(i, reps, workers)) for i in range(workers)]
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(partial(_run_chunk, **kw), chunks))
        results = sorted((r for part in parts for r in part), key=lambda r: r.rep)
    else:
        results = _run_chunk(range(reps), **kw)

    ok = [r for r in results if r.ok]
    if not ok:
        raise NumericError("every replicate failed")
    tau = np.array([r.tau_hat for r in ok])
    se = np.array([r.se for r in ok])
    main = _summary(tau, truth)
    ks_stat = ks_pass = None
    if len(ok) >= 500:
        with np.errstate(divide="ignore", invalid="ignore"):
            zs = (tau - truth) / se
        ks_stat, ks_pass = normality_check(zs[np.isfinite(zs)])
    per_J, corrected = [], None
    if grid:
        for g, K in enumerate(grid):
            vals = np.array([r.grid[g][2] for r in ok])
            realized = np.array([r.grid[g][1] for r in ok])
            per_J.append({"K": K, "mean_J": float(realized.mean()), **_summary(vals, truth)})
        corr = np.array([r.corrected for r in ok])
        corrected = {**_summary(corr, truth),
                     "mean_se": float(np.mean([r.corrected_se for r in ok])),
                     "coverage": float(np.mean([r.corrected_covered for r in ok]))}
    return MCReport(
        scenario=cfg.name, estimand=estimand, reps=reps, failed=reps - len(ok), true_tau=truth,
        mean_tau_hat=main["mean"], bias=main["bias"], emp_sd=main["sd"], mc_se=main["mc_se"],
        mean_se=float(se.mean()), rmse=main["rmse"],
        coverage=float(np.mean([r.covered for r in ok])), ks_stat=ks_stat, ks_pass=ks_pass,
        sigma2_oracle=sigma2_oracle(cfg), n_times_mean_var=float(cfg.n * np.mean(se ** 2)),
        per_J=tuple(per_J), corrected=corrected, results=tuple(results),
    )
