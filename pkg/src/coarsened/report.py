"""JSON report assembly, plain-text views and schema validation."""

from __future__ import annotations

import json
import math
from importlib import resources

from . import __version__

SCHEMAS = {
    "estimate": "estimate.schema.json",
    "bias-correct": "bias_correct.schema.json",
    "simulate": "simulate.schema.json",
    "strata": "strata.schema.json",
}


def clean(obj):
    """Make ``obj`` strict-JSON friendly: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def build(command: str, config: dict, seeds: dict, **body) -> dict:
    report = {"tool": "coarsened", "version": __version__, "command": command,
              "config": config, "seeds": seeds}
    report.update(body)
    return clean(report)


def dumps(report: dict) -> str:
    return json.dumps(report, indent=2, allow_nan=False) + "\n"


def load_schema(command: str) -> dict:
    text = resources.files("coarsened.schemas").joinpath(SCHEMAS[command]).read_text("utf-8")
    return json.loads(text)


def validate(report: dict) -> None:
    import jsonschema

    jsonschema.validate(report, load_schema(report["command"]))


def _fmt(v, spec=".6g") -> str:
    return "NA" if v is None else format(v, spec)


def estimate_text(report: dict) -> str:
    est = report["estimate"]
    strat = report["stratification"]
    lines = [
        f"{est['estimand']} via {strat['method']}  (J = {est['J']}, weights: {est['weight_mode']})",
        f"  estimate  {_fmt(est['tau_hat'])}",
        f"  std.err   {_fmt(est['se'])}",
        f"  z         {_fmt(est['z'], '.4f')}    p = {_fmt(est['p'], '.4g')}",
        f"  {100 * (1 - est['alpha']):.0f}% CI    [{_fmt(est['ci'][0])}, {_fmt(est['ci'][1])}]",
    ]
    pr = est.get("prune_report")
    if pr:
        lines.append(f"  pruned    {len(pr['control_only_strata'])} control-only, "
                     f"{len(pr['treated_only_strata'])} treated-only strata "
                     f"({pr['dropped_treated']} treated, {pr['dropped_control']} control rows)")
    for note in est.get("notes", []):
        lines.append(f"  note: {note}")
    if est.get("strata"):
        lines.append("")
        lines.append(f"  {'stratum':>7} {'n':>6} {'n1':>6} {'n0':>6} {'mean1':>10} {'mean0':>10} {'w':>8}")
        for s in est["strata"]:
            lines.append(f"  {s['label']:>7} {s['n']:>6} {s['n1']:>6} {s['n0']:>6} "
                         f"{s['mean1']:>10.4g} {s['mean0']:>10.4g} {s['w']:>8.4g}")
    return "\n".join(lines) + "\n"


def bias_text(report: dict) -> str:
    r = report["result"]
    lines = [f"{'J':>5} {'requested':>9} {'estimate':>12} {'variance':>12}"]
    for p in r["points"]:
        req = "" if p["requested"] is None else p["requested"]
        lines.append(f"{p['J']:>5} {req:>9} {p['tau_hat']:>12.6g} {p['var_hat']:>12.6g}")
    lines.append("")
    lines.append(f"corrected estimate {_fmt(r['tau_corrected'])}  (slope {_fmt(r['tau_fit']['slope'])}, "
                 f"R2 {_fmt(r['tau_fit']['r2'], '.3f')})")
    lines.append(f"corrected variance {_fmt(r['var_corrected'])}  se {_fmt(r['se_corrected'])}"
                 + ("  [clamped]" if r["var_clamped"] else ""))
    return "\n".join(lines) + "\n"


def simulate_text(report: dict) -> str:
    m = report["mc"]
    lines = [f"scenario {m['scenario']}  reps {m['reps']}  failed {m['failed']}",
             f"  true tau {_fmt(m['true_tau'])}  mean estimate {_fmt(m['mean_tau_hat'])}",
             f"  bias {_fmt(m['bias'])}  (MC se {_fmt(m['mc_se'])})  rmse {_fmt(m['rmse'])}",
             f"  emp. sd {_fmt(m['emp_sd'])}  mean se {_fmt(m['mean_se'])}  coverage {_fmt(m['coverage'], '.3f')}"]
    if m["ks_stat"] is not None:
        lines.append(f"  KS {_fmt(m['ks_stat'], '.4f')}  {'pass' if m['ks_pass'] else 'FAIL'}")
    for row in m["per_J"]:
        lines.append(f"  K={row['K']:<4} mean J {row['mean_J']:.1f}  bias {_fmt(row['bias'])}  "
                     f"sd {_fmt(row['sd'])}")
    if m["corrected"]:
        lines.append(f"  corrected bias {_fmt(m['corrected']['bias'])}  sd {_fmt(m['corrected']['sd'])}")
    return "\n".join(lines) + "\n"
