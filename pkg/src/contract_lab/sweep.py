"""Parameter sweeps producing CSV tables, and the preset figure bundle."""

from __future__ import annotations

import csv
import functools
import io
import itertools
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from .bernoulli import BernoulliDomainError
from .contract import expected_risk_share, risk_share_decomposition, sign_of_k, solve, value_ratio
from .mitigation import c_inv, solve_mitigation
from .model import (
    FirstBest,
    Mitigation,
    MoralHazard,
    NotApplicable,
    Problem,
    ValidationError,
    problem_from_dict,
    validate,
)

PARAM_AXES = ("gamma_p", "gamma_a", "kappa", "horizon", "y_pc", "x0", "effort_bound")
AXES = PARAM_AXES + ("lambda", "theta", "invest_cost", "t")
METRICS = (
    "sign_k0",
    "k0_fb",
    "k0_mh",
    "expected_risk_share_paper",
    "expected_risk_share_exact",
    "expected_risk_share_mc",
    "ratio_phi",
    "t_max",
    "c_inv",
    "k_star_at",
    "k_star_plain",
)
NA = "NA"


@dataclass(frozen=True)
class Axis:
    name: str
    lo: float
    hi: float
    count: int

    def values(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.count)


@dataclass(frozen=True)
class SweepSpec:
    base: Mapping[str, Any]
    axes: tuple
    metrics: tuple
    t: float = 0.0
    mc_draws: int = 100_000
    seed: int = 0


def sweep_from_dict(d: Mapping[str, Any]) -> SweepSpec:
    if not isinstance(d, Mapping):
        raise ValueError("sweep spec must be a JSON object")
    base = d.get("base")
    if not isinstance(base, Mapping):
        raise ValueError("sweep spec needs a 'base' problem config")
    problem_from_dict(base)  # parse errors surface here
    raw_axes = d.get("axes")
    if not isinstance(raw_axes, list) or not 1 <= len(raw_axes) <= 2:
        raise ValueError("'axes' must list one or two axes")
    axes = []
    for a in raw_axes:
        name = a.get("name")
        if name not in AXES:
            raise ValueError(f"unknown axis {name!r}; choose from {', '.join(AXES)}")
        count = a.get("count")
        if not isinstance(count, int) or count < 2:
            raise ValueError(f"axis {name!r}: count must be an integer >= 2")
        lo, hi = float(a["min"]), float(a["max"])
        if not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo:
            raise ValueError(f"axis {name!r}: need finite min <= max")
        axes.append(Axis(name, lo, hi, count))
    if len({a.name for a in axes}) != len(axes):
        raise ValueError("axis names must be distinct")
    metrics = d.get("metrics")
    if not isinstance(metrics, list) or not metrics:
        raise ValueError("'metrics' must be a non-empty list")
    for m in metrics:
        if m not in METRICS:
            raise ValueError(f"unknown metric {m!r}; choose from {', '.join(METRICS)}")
    return SweepSpec(
        base=dict(base),
        axes=tuple(axes),
        metrics=tuple(metrics),
        t=float(d.get("t", 0.0)),
        mc_draws=int(d.get("mc_draws", 100_000)),
        seed=int(d.get("seed", 0)),
    )


def _node_problem(spec: SweepSpec, values: dict) -> tuple:
    cfg = json.loads(json.dumps(spec.base))
    t = spec.t
    for name, v in values.items():
        if name in PARAM_AXES:
            cfg[name] = v
        elif name == "lambda":
            cfg["intensity"] = {"kind": "constant", "lambda": v}
        elif name in ("theta", "invest_cost"):
            var = cfg.get("variant", {})
            if var.get("kind") != "mitigation":
                raise NotApplicable(f"axis {name} needs a mitigation variant")
            var[name] = v
        elif name == "t":
            t = v
    return problem_from_dict(cfg), t


@functools.lru_cache(maxsize=256)
def _solution(params, intensity, variant):
    if isinstance(variant, Mitigation):
        return solve_mitigation(params, intensity, variant.theta, variant.invest_cost)
    return solve(params, intensity, variant), None


def _plain_variant(variant):
    return MoralHazard() if isinstance(variant, Mitigation) else variant


def _metric(name: str, prob: Problem, t: float, spec: SweepSpec, node: int):
    p, lam, var = prob.params, prob.intensity, prob.variant
    if name == "sign_k0":
        validate(p, lam, var).require()
        return int(sign_of_k(p, var))
    if name in ("k0_fb", "k0_mh"):
        v = FirstBest() if name == "k0_fb" else MoralHazard()
        return float(_solution(p, lam, v)[0].k_star(0.0))
    if name.startswith("expected_risk_share"):
        sol = _solution(p, lam, var)[0]
        if name == "expected_risk_share_mc":
            seed = int(np.random.SeedSequence([spec.seed, node]).generate_state(1, np.uint64)[0])
            return expected_risk_share(sol, spec.mc_draws, seed).mc_value
        dec = risk_share_decomposition(sol)
        T = p.horizon
        stop = -math.expm1(-float(lam.lam) * T)
        if name == "expected_risk_share_paper":
            return dec.k0 + dec.slope * stop / T
        return dec.k0 + dec.slope * (stop / float(lam.lam) if lam.lam > 0 else T)
    if name == "ratio_phi":
        return value_ratio(p, lam)
    if name in ("t_max", "c_inv"):
        if not isinstance(var, Mitigation):
            raise NotApplicable(f"{name} needs a mitigation variant")
        validate(p, lam, var).require()
        if name == "c_inv":
            return c_inv(p, var.theta)
        pol = _solution(p, lam, var)[1]
        return NA if pol.t_max is None else pol.t_max
    if name == "k_star_at":
        _check_t(t, p.horizon)
        return float(_solution(p, lam, var)[0].k_star(t))
    if name == "k_star_plain":
        _check_t(t, p.horizon)
        return float(_solution(p, lam, _plain_variant(var))[0].k_star(t))
    raise ValueError(f"unknown metric {name!r}")


def _check_t(t, T):
    if not 0.0 <= t <= T:
        raise ValueError(f"t={t} outside [0, {T}]")


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".9g")


def _eval_node(spec: SweepSpec, idx: int, values: dict) -> list:
    reasons = []
    out = []
    try:
        prob, t = _node_problem(spec, values)
    except (ValueError, NotApplicable) as exc:
        return [NA] * len(spec.metrics) + [str(exc)]
    for m in spec.metrics:
        try:
            out.append(_fmt(_metric(m, prob, t, spec, idx)))
        except ValidationError as exc:
            out.append(NA)
            reasons.append(f"{m}: invalid ({'; '.join(v for v in exc.report.violations)})")
        except (NotApplicable, BernoulliDomainError, ValueError, ArithmeticError) as exc:
            out.append(NA)
            reasons.append(f"{m}: {exc}")
    return out + [" | ".join(reasons)]


def run_sweep(spec: SweepSpec, threads: int | None = None) -> tuple:
    """Evaluate every grid node; returns (header, rows) in grid order."""
    names = [a.name for a in spec.axes]
    grid = list(itertools.product(*(a.values() for a in spec.axes)))
    header = names + list(spec.metrics) + ["reason"]

    def work(item):
        i, vals = item
        values = {n: float(v) for n, v in zip(names, vals)}
        return [_fmt(float(v)) for v in vals] + _eval_node(spec, i, values)

    if threads is None:
        threads = int(os.environ.get("CONTRACT_LAB_THREADS", "1") or 1)
    items = list(enumerate(grid))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(work, items))
    else:
        rows = [work(it) for it in items]
    return header, rows


def rows_to_csv(header: list, rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def rows_to_json(header: list, rows: list) -> str:
    return json.dumps([dict(zip(header, r)) for r in rows], indent=1) + "\n"


# -- preset figure bundle ----------------------------------------------------


def _base(gp=1.0, ga=1.0, kappa=1.0, lam=1.0, T=1.0, variant=None) -> dict:
    return {
        "gamma_p": gp,
        "gamma_a": ga,
        "kappa": kappa,
        "horizon": T,
        "intensity": {"kind": "constant", "lambda": lam},
        "variant": variant or {"kind": "moral_hazard"},
    }


def _axis(name, lo, hi, n) -> dict:
    return {"name": name, "min": lo, "max": hi, "count": n}


def figure_specs(resolution: int = 100) -> dict:
    """File name -> sweep spec for every preset table."""
    n = resolution
    g2 = [_axis("gamma_p", 0.1, 10.0, n), _axis("gamma_a", 0.1, 10.0, n)]
    specs = {}
    for kind, tag in (("first_best", "fb"), ("moral_hazard", "mh")):
        for kappa in (1.0, 2.0):
            specs[f"sign_k0_{tag}_kappa{kappa:g}.csv"] = {
                "base": _base(kappa=kappa, variant={"kind": kind}),
                "axes": g2,
                "metrics": ["sign_k0"],
            }
        for lam in (0.5, 1.0, 5.0):
            specs[f"expected_value_{tag}_lambda{lam:g}.csv"] = {
                "base": _base(lam=lam, variant={"kind": kind}),
                "axes": g2,
                "metrics": ["expected_risk_share_paper", "expected_risk_share_exact"],
            }
    for lam in (0.5, 1.0, 5.0):
        specs[f"ratio_phi_lambda{lam:g}.csv"] = {"base": _base(lam=lam), "axes": g2, "metrics": ["ratio_phi"]}

    k0 = ["k0_fb", "k0_mh"]
    for ga in (0.5, 1.5, 5.0):
        specs[f"k0_vs_gamma_p_ga{ga:g}.csv"] = {"base": _base(ga=ga), "axes": [_axis("gamma_p", 0.1, 10.0, n)], "metrics": k0}
    for gp in (0.5, 1.0, 3.0):
        specs[f"k0_vs_gamma_a_gp{gp:g}.csv"] = {"base": _base(gp=gp), "axes": [_axis("gamma_a", 0.1, 10.0, n)], "metrics": k0}
    for gp, ga in ((4.0, 4.0), (1.0, 1.0)):
        specs[f"k0_vs_lambda_gp{gp:g}_ga{ga:g}.csv"] = {
            "base": _base(gp=gp, ga=ga),
            "axes": [_axis("lambda", 0.0, 5.0, n)],
            "metrics": k0,
        }
    for gp, ga in ((1.0, 1.0), (1.0, 3.0), (3.0, 3.0)):
        specs[f"k0_vs_kappa_gp{gp:g}_ga{ga:g}.csv"] = {
            "base": _base(gp=gp, ga=ga),
            "axes": [_axis("kappa", 0.1, 5.0, n)],
            "metrics": k0,
        }
        specs[f"k0_vs_horizon_gp{gp:g}_ga{ga:g}.csv"] = {
            "base": _base(gp=gp, ga=ga),
            "axes": [_axis("horizon", 0.1, 5.0, n)],
            "metrics": k0,
        }

    def mit(lam=1.0, theta=0.9, i=0.1):
        return _base(ga=0.5, lam=lam, variant={"kind": "mitigation", "theta": theta, "invest_cost": i})

    t_axis = [_axis("t", 0.0, 1.0, n)]
    mk = ["k_star_at", "k_star_plain"]
    for lam in (0.5, 1.0, 5.0):
        specs[f"mitigation_k_star_lambda{lam:g}.csv"] = {"base": mit(lam=lam), "axes": t_axis, "metrics": mk}
    for i in (0.05, 0.1, 0.15):
        specs[f"mitigation_k_star_i{i:g}.csv"] = {"base": mit(i=i), "axes": t_axis, "metrics": mk}
    for theta in (0.85, 0.9):
        specs[f"mitigation_k_star_theta{theta:g}.csv"] = {"base": mit(theta=theta), "axes": t_axis, "metrics": mk}
    specs["mitigation_t_max.csv"] = {
        "base": mit(),
        "axes": [_axis("theta", 0.5, 0.99, max(2, n // 4)), _axis("invest_cost", 0.01, 0.3, max(2, n // 4))],
        "metrics": ["c_inv", "t_max"],
    }
    return specs


def write_figures(out_dir: str, resolution: int = 100, threads: int | None = None) -> list:
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for fname, d in figure_specs(resolution).items():
        header, rows = run_sweep(sweep_from_dict(d), threads)
        path = os.path.join(out_dir, fname)
        with open(path, "w", newline="") as fh:
            fh.write(rows_to_csv(header, rows))
        written.append(path)
    return written
