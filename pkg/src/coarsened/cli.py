"""Command-line front end.

Subcommands: ``estimate``, ``bias-correct``, ``simulate`` and ``strata``.
Settings come from built-in defaults, then an optional INI config file
(``--config``), then command-line flags, later sources winning.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric or
degenerate input.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import sys
import warnings
from pathlib import Path

import numpy as np
import yaml

from . import __version__, report
from .cem import Cutpoints, rule_from_config
from .dataset import Dataset, load_csv, parse_schema_entry, read_schema, schema_from_roles
from .errors import CoarsenedError, ConfigError, DataError
from .estimator import estimate
from .extrapolation import GridPoint, extrapolate, run_grid
from .seeds import derive_seed
from .simulation import PiecewiseSurface, aligned_cem, load_scenario, run_mc
from .stratify import CEMMethod, KMeansMethod, RFMethod, rf_clustering_for, stratify

DEFAULTS = {
    "method": "cem",
    "estimand": "ACE",
    "missing": "reject",
    "weight_mode": "retained",
    "variance_policy": "zero_with_warning",
    "prune_policy": "drop",
    "standardize": False,
    "att_conventional": False,
    "shared_seed": False,
    "alpha": 0.05,
    "workers": 1,
    "format": "json",
    "restarts": 10,
    "init": "kmeanspp",
    "max_iter": 100,
    "tol": 1e-8,
    "trees": 1000,
    "min_leaf": 1,
    "prox": "oob",
    "max_bins": 200,
    "reps": 1000,
}

INT_KEYS = {"k", "seed", "workers", "restarts", "max_iter", "trees", "mtry", "min_leaf",
            "max_depth", "default_bins", "max_bins", "reps", "n"}
FLOAT_KEYS = {"alpha", "tol"}
BOOL_KEYS = {"standardize", "att_conventional", "shared_seed"}


def _convert(key: str, value):
    if value is None or not isinstance(value, str):
        return value
    try:
        if key in INT_KEYS:
            return int(value)
        if key in FLOAT_KEYS:
            return float(value)
        if key in BOOL_KEYS:
            return value.strip().lower() in ("1", "true", "yes", "on")
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    return value


def read_config(path: str | None) -> tuple[dict, dict, list]:
    """Flat settings, per-column CEM rules, and inline schema entries from an INI file."""
    if not path:
        return {}, {}, []
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read(p, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{p}: {exc}") from exc
    flat, rules, schema = {}, {}, []
    for section in cp.sections():
        items = dict(cp.items(section))
        if section == "columns":
            schema = [parse_schema_entry(k, v) for k, v in items.items()]
        elif section.startswith("cem."):
            parsed = {k: yaml.safe_load(v) for k, v in items.items()}
            rules[section[4:]] = rule_from_config(parsed)
        else:
            for k, v in items.items():
                flat[k.replace("-", "_")] = v
    return flat, rules, schema


def resolve(args: argparse.Namespace) -> tuple[dict, dict, list]:
    flat, rules, schema = read_config(getattr(args, "config", None))
    cfg = dict(DEFAULTS)
    cfg.update({k: _convert(k, v) for k, v in flat.items()})
    for k, v in vars(args).items():
        if k in ("func", "config") or v is None:
            continue
        cfg[k] = v
    cfg["estimand"] = str(cfg["estimand"]).upper()
    if isinstance(cfg.get("grid"), str):
        cfg["grid"] = parse_grid(cfg["grid"])
    return cfg, rules, schema


def parse_grid(text: str) -> list[int]:
    try:
        return [int(v) for v in str(text).replace(" ", "").split(",") if v]
    except ValueError:
        raise ConfigError(f"bad grid {text!r}; expected comma-separated integers") from None


def _schema(cfg: dict, inline: list):
    if cfg.get("schema"):
        return read_schema(cfg["schema"])
    if inline:
        return inline
    if cfg.get("outcome") and cfg.get("treatment"):
        split = lambda s: [c for c in (s or "").split(",") if c]  # noqa: E731
        return schema_from_roles(cfg["outcome"], cfg["treatment"], split(cfg.get("continuous")),
                                 split(cfg.get("categorical")))
    raise ConfigError("no schema: give --schema, a [columns] config section, or --outcome/--treatment")


def load_data(cfg: dict, inline: list) -> Dataset:
    if not cfg.get("data"):
        raise ConfigError("--data is required")
    return load_csv(cfg["data"], _schema(cfg, inline), cfg["missing"])


def build_method(cfg: dict, rules: dict):
    m = cfg["method"]
    if m == "cem":
        cuts = {}
        if cfg.get("cutpoints"):
            for part in str(cfg["cutpoints"]).split(";"):
                name, _, vals = part.partition("=")
                try:
                    cuts[name.strip()] = Cutpoints(tuple(float(v) for v in vals.split(",") if v))
                except ValueError:
                    raise ConfigError(f"bad cutpoints {part!r}") from None
        return CEMMethod({**rules, **cuts}, cfg.get("default_bins"), cfg["max_bins"])
    if m == "kmeans":
        return KMeansMethod(cfg["restarts"], cfg["init"], cfg["max_iter"], cfg["tol"], cfg["standardize"])
    if m == "rf":
        return RFMethod(cfg["trees"], cfg.get("mtry"), cfg["min_leaf"], cfg.get("max_depth"),
                        {"all": "all_pairs"}.get(cfg["prox"], cfg["prox"]), cfg["standardize"])
    raise ConfigError(f"unknown method {m!r}")


def _require_seed(cfg: dict) -> None:
    if cfg["method"] in ("kmeans", "rf") and cfg.get("seed") is None:
        raise ConfigError(f"--seed is required for method {cfg['method']}")


def _stage_seeds(cfg: dict, method) -> dict:
    seeds = {"master": cfg.get("seed")}
    if cfg.get("seed") is None:
        return seeds
    if isinstance(method, KMeansMethod):
        seeds["kmeans_restarts"] = [derive_seed(cfg["seed"], r) for r in range(method.restarts)]
    elif isinstance(method, RFMethod):
        seeds["rf_synthetic"] = derive_seed(cfg["seed"], 0)
        seeds["rf_forest"] = derive_seed(cfg["seed"], 1)
    return seeds


def _echo(cfg: dict, method=None) -> dict:
    out = {k: v for k, v in sorted(cfg.items()) if k not in ("out", "format", "csv", "counts_out",
                                                              "prox_out", "labels_out")}
    if method is not None:
        out["method_config"] = method.describe()
    return out


def _emit(rep: dict, cfg: dict, text_view) -> None:
    body = report.dumps(rep)
    if cfg.get("out"):
        Path(cfg["out"]).write_text(body, encoding="utf-8")
    if cfg.get("format") == "text":
        sys.stdout.write(text_view(rep))
    elif not cfg.get("out"):
        sys.stdout.write(body)


def cmd_estimate(args) -> int:
    cfg, rules, inline = resolve(args)
    _require_seed(cfg)
    method = build_method(cfg, rules)
    d = load_data(cfg, inline)
    st = stratify(d, method, cfg["estimand"], k=cfg.get("k"), seed=cfg.get("seed"),
                  prune_policy=cfg["prune_policy"], workers=cfg["workers"])
    est = estimate(d, st.pruned, cfg["estimand"], cfg["weight_mode"], cfg["variance_policy"],
                   cfg["alpha"], st.report, cfg["att_conventional"])
    rep = report.build(
        "estimate", _echo(cfg, method), _stage_seeds(cfg, method),
        load_report=d.load_report.to_dict() if d.load_report else None,
        stratification={"method": method.name, "requested_k": cfg.get("k"), "J": st.J,
                        **st.diagnostics},
        estimate=est.to_dict(),
    )
    _emit(rep, cfg, report.estimate_text)
    return 0


def _read_points(path: str) -> list[GridPoint]:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"points file not found: {p}")
    with p.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    try:
        return [GridPoint(int(r["J"]), float(r["tau_hat"]), float(r["var_hat"]),
                          r.get("method") or "replay") for r in rows]
    except (KeyError, ValueError) as exc:
        raise DataError(f"{p}: expected columns J, tau_hat, var_hat ({exc})") from exc


def cmd_bias_correct(args) -> int:
    cfg, rules, inline = resolve(args)
    if cfg.get("replay"):
        res = extrapolate(_read_points(cfg["replay"]))
        method_desc = {"method": "replay", "points": cfg["replay"]}
        seeds = {"master": cfg.get("seed")}
    else:
        grid = cfg.get("grid")
        if not grid:
            raise ConfigError("--grid is required")
        _require_seed(cfg)
        method = build_method(cfg, rules)
        d = load_data(cfg, inline)
        res = run_grid(d, method, grid, cfg["estimand"], cfg.get("seed"), cfg["shared_seed"],
                       cfg["weight_mode"], cfg["variance_policy"], cfg["workers"],
                       cfg["att_conventional"])
        method_desc = method.describe()
        seeds = {"master": cfg.get("seed"), "grid_points": [p.seed for p in res.points]}
    echo = _echo(cfg)
    echo["method_config"] = method_desc
    rep = report.build("bias-correct", echo, seeds, result=res.to_dict())
    _emit(rep, cfg, report.bias_text)
    return 0


def cmd_simulate(args) -> int:
    cfg, rules, _ = resolve(args)
    if not cfg.get("scenario"):
        raise ConfigError("--scenario is required")
    if cfg.get("seed") is None:
        raise ConfigError("--seed is required for simulate")
    sim = load_scenario(cfg["scenario"], cfg.get("n"))
    method = build_method(cfg, rules)
    if isinstance(method, CEMMethod) and not method.rules and isinstance(sim.surface, PiecewiseSurface):
        method = aligned_cem(sim)
    grid = cfg.get("grid") or ()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        mc = run_mc(sim, method, cfg["estimand"], cfg["reps"], cfg["seed"], cfg.get("k"), grid,
                    cfg["weight_mode"], cfg["variance_policy"], cfg["shared_seed"], cfg["workers"])
    rep = report.build("simulate", _echo(cfg, method),
                       {"master": cfg["seed"], "rep_seeds": "derive_seed(master, rep)"},
                       scenario_config=sim.to_dict(), mc=mc.to_dict())
    if cfg.get("csv"):
        rows = mc.per_rep_rows()
        with open(cfg["csv"], "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    _emit(rep, cfg, report.simulate_text)
    return 0


def cmd_strata(args) -> int:
    cfg, rules, inline = resolve(args)
    _require_seed(cfg)
    method = build_method(cfg, rules)
    d = load_data(cfg, inline)
    st = stratify(d, method, cfg["estimand"], k=cfg.get("k"), seed=cfg.get("seed"),
                  prune_policy=cfg["prune_policy"], workers=cfg["workers"])
    counts = [{"stratum": j, "n": int(n), "n1": int(n1), "n0": int(n0)}
              for j, (n, n1, n0) in enumerate(st.pruned.counts)]
    if cfg.get("labels_out"):
        with open(cfg["labels_out"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "stratum", "raw_stratum"])
            for i, (lab, raw) in enumerate(zip(st.pruned.labels, st.raw.labels)):
                w.writerow([i, "" if lab < 0 else int(lab), int(raw)])
    if cfg.get("counts_out"):
        with open(cfg["counts_out"], "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=["stratum", "n", "n1", "n0"])
            w.writeheader()
            w.writerows(counts)
    if cfg.get("prox_out"):
        if not isinstance(method, RFMethod):
            raise ConfigError("--prox-out needs --method rf")
        clus = rf_clustering_for(d, method, cfg["seed"], cfg["workers"])
        np.savetxt(cfg["prox_out"], clus.proximity.values, delimiter=",", fmt="%.17g")
    rep = report.build("strata", _echo(cfg, method), _stage_seeds(cfg, method),
                       stratification={"method": method.name, "requested_k": cfg.get("k"),
                                       "J": st.J, **st.diagnostics},
                       prune_report=st.report.to_dict(), counts=counts)
    _emit(rep, cfg, lambda r: "\n".join(f"{c['stratum']},{c['n']},{c['n1']},{c['n0']}"
                                        for c in r["counts"]) + "\n")
    return 0


def _common(p: argparse.ArgumentParser, data: bool = True) -> None:
    p.add_argument("--config", help="INI config file; flags override its values")
    if data:
        p.add_argument("--data", help="CSV data file")
        p.add_argument("--schema", help="schema sidecar (INI [columns]: name = kind role)")
        p.add_argument("--outcome")
        p.add_argument("--treatment")
        p.add_argument("--continuous", help="comma-separated continuous confounders")
        p.add_argument("--categorical", help="comma-separated categorical confounders")
        p.add_argument("--missing", choices=["reject", "drop_rows"])
        p.add_argument("--standardize", action="store_true", default=None)
    p.add_argument("--method", choices=["cem", "kmeans", "rf"])
    p.add_argument("--estimand", type=str.upper, choices=["ACE", "ACET"])
    p.add_argument("--k", type=int, help="number of strata for kmeans / rf")
    p.add_argument("--seed", type=int)
    p.add_argument("--weight-mode", dest="weight_mode", choices=["retained", "total"])
    p.add_argument("--variance-policy", dest="variance_policy",
                   choices=["zero_with_warning", "drop_stratum", "error", "na_rm"])
    p.add_argument("--prune-policy", dest="prune_policy", choices=["drop", "error"])
    p.add_argument("--att-conventional", dest="att_conventional", action="store_true", default=None)
    p.add_argument("--alpha", type=float)
    p.add_argument("--restarts", type=int)
    p.add_argument("--init", choices=["kmeanspp", "random_points"])
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--trees", type=int)
    p.add_argument("--mtry", type=int)
    p.add_argument("--min-leaf", dest="min_leaf", type=int)
    p.add_argument("--max-depth", dest="max_depth", type=int)
    p.add_argument("--prox", choices=["oob", "all", "all_pairs"])
    p.add_argument("--bins", dest="default_bins", type=int, help="CEM bins for every continuous column")
    p.add_argument("--cutpoints", help="CEM cutpoints, e.g. 'age=40,60;bmi=25'")
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--format", choices=["json", "text"])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="coarsened", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"coarsened {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="stratify, prune and estimate once")
    _common(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("bias-correct", help="estimate over a grid of J and extrapolate to 1/J = 0")
    _common(p)
    p.add_argument("--grid", type=parse_grid, help="comma-separated stratum counts")
    p.add_argument("--shared-seed", dest="shared_seed", action="store_true", default=None)
    p.add_argument("--replay", help="CSV of recorded points (J, tau_hat, var_hat) to extrapolate")
    p.set_defaults(func=cmd_bias_correct)

    p = sub.add_parser("simulate", help="Monte Carlo study on a generated scenario")
    _common(p, data=False)
    p.add_argument("--scenario", help="preset name or YAML/JSON scenario file")
    p.add_argument("--n", type=int, help="override the scenario sample size")
    p.add_argument("--reps", type=int)
    p.add_argument("--grid", type=parse_grid)
    p.add_argument("--shared-seed", dest="shared_seed", action="store_true", default=None)
    p.add_argument("--csv", help="write per-replicate estimates here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("strata", help="dump stratum labels and counts")
    _common(p)
    p.add_argument("--labels-out", dest="labels_out", help="CSV of row -> stratum")
    p.add_argument("--counts-out", dest="counts_out", help="CSV of per-stratum arm counts")
    p.add_argument("--prox-out", dest="prox_out", help="CSV dump of the rf proximity matrix")
    p.set_defaults(func=cmd_strata)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CoarsenedError as exc:
        err = {"error": exc.code, "message": str(exc), "exit_code": exc.exit_code}
        sys.stderr.write(json.dumps(err) + "\n")
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
