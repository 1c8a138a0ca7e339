"""Command-line front end.

Exit codes: 0 success, 1 a verification check failed, 2 bad input
(unreadable or malformed config, failed validation, bad flags).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys

import numpy as np

from .bernoulli import BernoulliDomainError
from .contract import solve
from .mitigation import mitigation_to_dict, solve_mitigation
from .model import Mitigation, NotApplicable, ValidationError, problem_from_dict, problem_to_dict
from .simulate import SimConfig, dump_paths_csv, policy_from_solution, restart_from_policy, simulate_paths
from .sweep import rows_to_csv, rows_to_json, run_sweep, sweep_from_dict, write_figures
from .verify import run_all

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


def _load_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def _load_problem(path: str):
    d = _load_json(path)
    try:
        prob = problem_from_dict(d)
    except (ValueError, TypeError) as exc:
        raise InputError(f"{path}: {exc}") from exc
    report = prob.validate()
    if not report.ok:
        raise InputError("validation failed:\n" + json.dumps(report.to_dict(), indent=1))
    return prob, d


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _json(obj) -> str:
    return json.dumps(obj, indent=1, allow_nan=False, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([format(v, ".9g") if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _sim_config(args, d: dict) -> SimConfig:
    sim = d.get("simulation", {}) if isinstance(d.get("simulation", {}), dict) else {}
    try:
        return SimConfig(
            n_paths=int(args.paths if args.paths is not None else sim.get("n_paths", 10_000)),
            n_steps=int(args.steps if args.steps is not None else sim.get("n_steps", 256)),
            master_seed=int(args.seed if args.seed is not None else sim.get("master_seed", 0)),
            post_default=bool(getattr(args, "post_default", False) or sim.get("post_default", False)),
            keep_paths=bool(getattr(args, "paths_csv", None)),
        )
    except (ValueError, TypeError) as exc:
        raise InputError(f"simulation settings: {exc}") from exc


def cmd_solve(args) -> int:
    prob, _ = _load_problem(args.config)
    if isinstance(prob.variant, Mitigation):
        sol, pol = solve_mitigation(prob.params, prob.intensity, prob.variant.theta, prob.variant.invest_cost)
        payload = mitigation_to_dict(sol, pol, args.grid)
    else:
        sol = solve(prob.params, prob.intensity, prob.variant)
        payload = sol.to_dict(args.grid)
    if args.format == "csv":
        rows = [(t, k, phi) for (t, k), (_, phi) in zip(payload["k_star_grid"], payload["phi0_grid"])]
        _emit(_csv(["t", "k_star", "phi0"], rows), args.out)
    else:
        _emit(_json(payload), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    prob, d = _load_problem(args.config)
    cfg = _sim_config(args, d)
    sol = solve(prob.params, prob.intensity, prob.variant)
    restart = None
    if isinstance(prob.variant, Mitigation):
        _, pol = solve_mitigation(prob.params, prob.intensity, prob.variant.theta, prob.variant.invest_cost)
        restart = restart_from_policy(pol, args.restart_sensitivity)
    rep = simulate_paths(prob.params, prob.intensity, policy_from_solution(sol), cfg, restart)
    payload = rep.to_dict()
    payload["config"] = problem_to_dict(prob)
    payload["target_principal_utility"] = sol.value()
    payload["target_agent_utility"] = float(prob.params.utility_a(prob.params.y_pc))
    if args.format == "csv":
        rows = [(k, payload[k][0], payload[k][1]) for k in ("principal_utility", "agent_utility", "default_frequency", "mean_wage")]
        _emit(_csv(["quantity", "estimate", "standard_error"], rows), args.out)
    else:
        _emit(_json(payload), args.out)
    if args.paths_csv:
        dump_paths_csv(rep, args.paths_csv, prob.params)
    return EXIT_OK


def cmd_verify(args) -> int:
    prob, d = _load_problem(args.config)
    if args.paths is None and "simulation" not in d:
        args.paths = 20_000
    cfg = _sim_config(args, d)
    report = run_all(prob.params, prob.intensity, prob.variant, cfg, phi_shift=args.perturb_phi)
    if args.format == "csv":
        rows = [(c["name"], c["status"], _scalar(c["value"]), _scalar(c["tolerance"])) for c in report["checks"]]
        _emit(_csv(["check", "status", "value", "tolerance"], rows), args.out)
    else:
        _emit(_json(report), args.out)
    return EXIT_OK if report["passed"] else EXIT_FAIL


def _scalar(v):
    if isinstance(v, list):
        return max(v) if v else "NA"
    return "NA" if v is None else v


def cmd_sweep(args) -> int:
    d = _load_json(args.config)
    try:
        spec = sweep_from_dict(d)
    except (ValueError, TypeError, KeyError) as exc:
        raise InputError(f"{args.config}: {exc}") from exc
    if args.seed is not None:
        spec = type(spec)(spec.base, spec.axes, spec.metrics, spec.t, spec.mc_draws, args.seed)
    header, rows = run_sweep(spec)
    _emit(rows_to_json(header, rows) if args.format == "json" else rows_to_csv(header, rows), args.out)
    return EXIT_OK


def cmd_figures(args) -> int:
    if args.resolution < 2:
        raise InputError("--resolution must be at least 2")
    paths = write_figures(args.out or "figures", args.resolution)
    for p in paths:
        sys.stdout.write(p + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="contract-lab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, fmt=("json", "csv"), config=True):
        if config:
            p.add_argument("--config", required=True, help="JSON problem config (sweep spec for 'sweep')")
        p.add_argument("--out", help="output file (default stdout)")
        p.add_argument("--format", choices=fmt, default=fmt[0])

    def sim_flags(p):
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--paths", type=int, help="number of Monte-Carlo paths")
        p.add_argument("--steps", type=int, help="time steps on [0, T]")

    p = sub.add_parser("solve", help="closed-form optimal contract")
    common(p)
    p.add_argument("--grid", type=int, default=101, help="points in the K* and phi0 tables")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="Monte-Carlo utilities under the optimal contract")
    common(p)
    sim_flags(p)
    p.add_argument("--paths-csv", help="write per-path results to this CSV")
    p.add_argument("--post-default", action="store_true", help="simulate the restarted project (mitigation)")
    p.add_argument("--restart-sensitivity", choices=("z1", "z_star"), default="z1")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="HJB, first-order, representation and incentive checks")
    common(p)
    sim_flags(p)
    p.add_argument("--perturb-phi", type=float, default=0.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="evaluate metrics over a parameter grid")
    common(p, fmt=("csv", "json"))
    p.add_argument("--seed", type=int, help="override the sweep seed for Monte-Carlo metrics")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("figures", help="write the preset CSV bundle")
    p.add_argument("--out", help="output directory (default ./figures)")
    p.add_argument("--resolution", type=int, default=100, help="grid points per axis")
    p.set_defaults(func=cmd_figures)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT
    except ValidationError as exc:
        sys.stderr.write("validation failed:\n" + json.dumps(exc.report.to_dict(), indent=1) + "\n")
        return EXIT_INPUT
    except (NotApplicable, BernoulliDomainError, OverflowError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
