"""Monte-Carlo engine for output and wage paths under a given contract.

The wage is a functional of output. It is driven by the *recommended*
effort a_rec (the one the contract compensates), while output drifts with
the *actual* effort the agent exerts. Under the optimal policy both
coincide; deviation tests change only the actual effort.

Pre-default dynamics on [0, T ^ tau]:

    dX = e dt + dB
    dW = z (dX - a_rec dt) + [gamma_a/2 z^2 + kappa a_rec^2/2 + (lambda/gamma_a)(e^{-gamma_a k} - 1)] dt

At tau <= T the transfer k(tau-) is added to W and both processes freeze.

Every path owns a Philox stream keyed by the master seed with the path
index in the high counter word, so results do not depend on block size or
thread count.
"""

from __future__ import annotations

import csv
import functools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from .contract import ContractSolution, optimal_sensitivity
from .mitigation import MitigationPolicy
from .model import FirstBest, IntensitySpec, ModelParams, MoralHazard, NotApplicable

BLOCK_PATHS = 1024


@dataclass(frozen=True)
class SimConfig:
    n_paths: int
    n_steps: int
    master_seed: int = 0
    post_default: bool = False  # simulate the restarted project instead of booking its value
    keep_paths: bool = False  # keep per-path results on the report
    threads: Optional[int] = None

    def __post_init__(self):
        if int(self.n_paths) < 1:
            raise ValueError("n_paths must be at least 1")
        if int(self.n_steps) < 64:
            raise ValueError("n_steps must be at least 64")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")


def _const(v: float) -> Callable:
    v = float(v)

    def f(t):
        return np.full(np.shape(t), v) if np.ndim(t) else v

    return f


@dataclass(frozen=True)
class WagePolicy:
    """Deterministic contract schedule plus the agent's actual effort."""

    z: Callable
    k: Callable
    effort: Callable
    recommended: Optional[Callable] = None

    def recommended_effort(self) -> Callable:
        return self.effort if self.recommended is None else self.recommended

    def with_effort(self, effort) -> "WagePolicy":
        e = effort if callable(effort) else _const(effort)
        return WagePolicy(self.z, self.k, e, self.recommended_effort())


def policy_from_solution(sol: ContractSolution, effort=None) -> WagePolicy:
    """Optimal wage schedule of ``sol``; ``effort`` overrides the agent's action."""
    a = _const(sol.a_star)
    pol = WagePolicy(_const(sol.z_star), sol.k_star, a, a)
    return pol if effort is None else pol.with_effort(effort)


@dataclass(frozen=True)
class Restart:
    """Post-default restart: invest rule, restarted contract and its efforts."""

    policy: MitigationPolicy
    z_post: float
    recommended_post: float
    effort_post: float


def restart_from_policy(policy: MitigationPolicy, sensitivity: str = "z1", effort_post=None) -> Restart:
    """``sensitivity`` picks Z1 (restarted optimum) or "z_star" (pre-default Z*)."""
    if sensitivity == "z1":
        z, a = policy.z_post, policy.effort_post
    elif sensitivity == "z_star":
        z = optimal_sensitivity(policy.params, MoralHazard())
        a = policy.effort_post_pre_sensitivity
    else:
        raise ValueError(f"unknown sensitivity {sensitivity!r}")
    return Restart(policy, z, a, a if effort_post is None else float(effort_post))


@dataclass
class PathResults:
    tau: np.ndarray  # inf when no default before T
    x_end: np.ndarray
    w_end: np.ndarray
    cost: np.ndarray
    log_up: np.ndarray  # log(-U_P) including the booked continuation factor
    log_ua: np.ndarray  # log(-U_A)
    b_end: np.ndarray  # Brownian motion under the actual measure at T ^ tau
    invested: np.ndarray


@dataclass
class SimReport:
    principal_utility: tuple
    agent_utility: tuple
    default_frequency: tuple
    mean_wage: tuple
    seeds_used: dict
    n_paths: int
    n_steps: int
    paths: Optional[PathResults] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "principal_utility": list(self.principal_utility),
            "agent_utility": list(self.agent_utility),
            "default_frequency": list(self.default_frequency),
            "mean_wage": list(self.mean_wage),
            "seeds_used": self.seeds_used,
            "n_paths": self.n_paths,
            "n_steps": self.n_steps,
        }


# -- random streams ----------------------------------------------------------


@functools.lru_cache(maxsize=64)
def _master_key(master_seed: int) -> tuple:
    return tuple(int(v) for v in np.random.SeedSequence(int(master_seed)).generate_state(2, np.uint64))


def path_generator(master_seed: int, index: int) -> np.random.Generator:
    key = np.array(_master_key(master_seed), dtype=np.uint64)
    counter = np.array([0, 0, 0, index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def sample_default(intensity: IntensitySpec, rng: np.random.Generator, horizon: float) -> Optional[float]:
    """Default time by inverse CDF, or None when it falls after ``horizon``."""
    tau = float(sample_defaults(intensity, rng, horizon, 1)[0])
    return None if math.isinf(tau) else tau


def sample_defaults(intensity: IntensitySpec, rng: np.random.Generator, horizon: float, size: int) -> np.ndarray:
    """Vectorised sample_default: ``size`` draws, inf where no default by ``horizon``.

    Consumes the uniform stream exactly as ``size`` scalar calls would.
    """
    e = -np.log1p(-rng.random(size))
    taus = _tau_from_exponential(intensity, e, horizon)
    return np.array([np.inf if v is None else v for v in taus])


def _tau_from_exponential(intensity: IntensitySpec, e: np.ndarray, horizon: float) -> list:
    lam_T = float(intensity.cumulative(horizon))
    out = [None] * len(e)
    hit = np.nonzero(e <= lam_T)[0] if lam_T > 0 else np.array([], dtype=int)
    if len(hit):
        tau = np.atleast_1d(intensity.inverse_cumulative(e[hit]))
        for j, tj in zip(hit, tau):
            out[j] = min(float(tj), horizon)
    return out


def _n_threads(cfg: SimConfig) -> int:
    if cfg.threads is not None:
        return max(1, int(cfg.threads))
    env = os.environ.get("CONTRACT_LAB_THREADS")
    if env:
        return max(1, int(env))
    return max(1, min(os.cpu_count() or 1, 8))


# -- engine ------------------------------------------------------------------


class _Schedule:
    """Contract quantities sampled at the left end of every time step."""

    def __init__(self, params, intensity, policy: WagePolicy, n_steps: int):
        T = params.horizon
        self.dt = T / n_steps
        self.t = np.linspace(0.0, T, n_steps + 1)
        left = self.t[:-1]
        self.z = _sample(policy.z, left)
        self.k = _sample(policy.k, left)
        self.e = _sample(policy.effort, left)
        self.a_rec = _sample(policy.recommended_effort(), left)
        A = params.effort_bound
        if np.any(np.abs(self.e) > A * (1 + 1e-12)) or np.any(np.abs(self.a_rec) > A * (1 + 1e-12)):
            raise ValueError(f"effort exceeds the bound A={A}")
        for name in ("z", "k", "e", "a_rec"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"policy component {name} is not finite on [0, T]")
        lam = np.asarray(intensity.rate(left), dtype=float) * np.ones_like(left)
        ga, kap = params.gamma_a, params.kappa
        self.drift = (
            0.5 * ga * self.z**2
            + 0.5 * kap * self.a_rec**2
            + lam / ga * np.expm1(-ga * self.k)
            + self.z * (self.e - self.a_rec)
        )
        self.cost_rate = 0.5 * kap * self.e**2
        self.k_func = policy.k


def _sample(f, t):
    return np.asarray(f(t), dtype=float) * np.ones_like(t)


def _draw_block(cfg: SimConfig, intensity, horizon, lo: int, hi: int, extra: bool):
    n = hi - lo
    xi = np.empty((n, cfg.n_steps))
    e = np.empty(n)
    zeta = np.zeros(n)
    for r in range(n):
        g = path_generator(cfg.master_seed, lo + r)
        e[r] = -math.log1p(-g.random())
        g.standard_normal(out=xi[r])
        if extra:
            zeta[r] = g.standard_normal()
    taus = _tau_from_exponential(intensity, e, horizon)
    tau = np.array([np.inf if v is None else v for v in taus])
    return tau, xi, zeta


def _run_block(params, intensity, sched: _Schedule, cfg, restart: Optional[Restart], lo, hi, detail=False):
    T = params.horizon
    extra = restart is not None and cfg.post_default
    tau, xi, zeta = _draw_block(cfg, intensity, T, lo, hi, extra)
    t = sched.t
    dt_eff = np.clip(np.minimum(t[None, 1:], tau[:, None]) - t[None, :-1], 0.0, sched.dt)
    dB = xi * np.sqrt(dt_eff)
    b_end = dB.sum(axis=1)
    x_end = params.x0 + (dt_eff * sched.e).sum(axis=1) + b_end
    w_end = params.y_pc + (dB * sched.z).sum(axis=1) + (dt_eff * sched.drift).sum(axis=1)
    cost = (dt_eff * sched.cost_rate).sum(axis=1)
    defaulted = np.isfinite(tau)
    if np.any(defaulted):
        tl = np.nextafter(tau[defaulted], -np.inf)
        w_end[defaulted] += np.asarray(sched.k_func(tl), dtype=float)
    gp, ga = params.gamma_p, params.gamma_a
    log_extra = np.zeros(hi - lo)
    invested = np.zeros(hi - lo, dtype=bool)
    if restart is not None and np.any(defaulted):
        pol = restart.policy
        if cfg.post_default:
            invested = np.array([bool(d) and pol.decide(float(tt)) for d, tt in zip(defaulted, tau)])
            if np.any(invested):
                xp, wp, cp = _restart_paths(params, sched, restart, tau[invested], xi[invested], zeta[invested])
                x_end[invested] += xp
                w_end[invested] += wp
                cost[invested] += cp
                log_extra[invested] = gp * pol.invest_cost
        else:
            log_extra[defaulted] = np.log(pol.multiplier(tau[defaulted]))
            invested[defaulted] = np.array([pol.decide(float(tt)) for tt in tau[defaulted]])
    log_up = -gp * (x_end - w_end) + log_extra
    log_ua = -ga * (w_end - cost)
    res = PathResults(tau, x_end, w_end, cost, log_up, log_ua, b_end, invested)
    if detail:
        return res, dB, dt_eff
    return res


def _restart_paths(params, sched: _Schedule, restart: Restart, tau, xi, zeta):
    """Increments of X, W and effort cost on [tau, T] under the restarted contract."""
    t = sched.t
    theta, kap, ga = restart.policy.theta, params.kappa, params.gamma_a
    dt_post = np.clip(t[None, 1:] - np.maximum(t[None, :-1], tau[:, None]), 0.0, sched.dt)
    split = (t[None, :-1] < tau[:, None]) & (t[None, 1:] > tau[:, None])
    noise = np.where(split, zeta[:, None], xi)
    dB = noise * np.sqrt(dt_post)
    e, a_rec, z = restart.effort_post, restart.recommended_post, restart.z_post
    span = dt_post.sum(axis=1)
    dx = theta * e * span + dB.sum(axis=1)
    dw = z * (dx - theta * a_rec * span) + (0.5 * ga * z * z + 0.5 * kap * a_rec * a_rec) * span
    dc = 0.5 * kap * e * e * span
    return dx, dw, dc


def _mean_neg_exp(log_vals: np.ndarray) -> tuple:
    """Mean and standard error of -exp(log_vals), computed with a common shift."""
    n = len(log_vals)
    c = float(np.max(log_vals))
    if c > 709.0:
        raise OverflowError(f"utility exponent {c:.6g} overflows")
    scaled = np.exp(log_vals - c)
    mean = -math.exp(logsumexp(log_vals) - math.log(n))
    se = float(np.std(scaled, ddof=1) * math.exp(c) / math.sqrt(n)) if n > 1 else 0.0
    return mean, se


def _mean_se(v: np.ndarray) -> tuple:
    n = len(v)
    se = float(np.std(v, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(np.mean(v)), se


def _concat(parts: list) -> PathResults:
    return PathResults(*(np.concatenate([getattr(p, f) for p in parts]) for f in PathResults.__dataclass_fields__))


def simulate_paths(
    params: ModelParams,
    intensity: IntensitySpec,
    policy: WagePolicy,
    cfg: SimConfig,
    restart: Optional[Restart] = None,
) -> SimReport:
    """Estimate principal and agent expected utilities by Euler-Maruyama."""
    sched = _Schedule(params, intensity, policy, cfg.n_steps)
    bounds = [(lo, min(lo + BLOCK_PATHS, cfg.n_paths)) for lo in range(0, cfg.n_paths, BLOCK_PATHS)]

    def work(b):
        return _run_block(params, intensity, sched, cfg, restart, *b)

    threads = _n_threads(cfg)
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, bounds))
    else:
        parts = [work(b) for b in bounds]
    res = _concat(parts)

    key = _master_key(cfg.master_seed)
    seeds = {"master_seed": int(cfg.master_seed), "philox_key": [int(k) for k in key], "stream": "path index in counter word 3"}
    for arr in (res.log_up, res.log_ua):
        bad = np.nonzero(~np.isfinite(arr) | (arr > 709.0))[0]
        if len(bad):
            j = int(bad[0])
            raise OverflowError(
                f"exponential utility overflows on path {j} (master_seed={cfg.master_seed}, philox_key={list(key)}, counter=[0,0,0,{j}])"
            )
    up = _mean_neg_exp(res.log_up)
    ua = _mean_neg_exp(res.log_ua)
    dflt = _mean_se(np.isfinite(res.tau).astype(float))
    wage = _mean_se(res.w_end)
    return SimReport(up, ua, dflt, wage, seeds, cfg.n_paths, cfg.n_steps, res if cfg.keep_paths else None)


@dataclass(frozen=True)
class PathDetail:
    index: int
    tau: Optional[float]
    t: np.ndarray
    dB: np.ndarray
    dt: np.ndarray
    x: np.ndarray
    w: np.ndarray
    w_end: float
    b_end: float


def simulate_path_detail(
    params: ModelParams, intensity: IntensitySpec, policy: WagePolicy, cfg: SimConfig, index: int = 0
) -> PathDetail:
    """One path with its increments and the pre-jump X, W trajectories on the grid."""
    sched = _Schedule(params, intensity, policy, cfg.n_steps)
    res, dB, dt_eff = _run_block(params, intensity, sched, cfg, None, index, index + 1, detail=True)
    dB, dt_eff = dB[0], dt_eff[0]
    x = params.x0 + np.concatenate([[0.0], np.cumsum(dt_eff * sched.e + dB)])
    w = params.y_pc + np.concatenate([[0.0], np.cumsum(dB * sched.z + dt_eff * sched.drift)])
    tau = float(res.tau[0]) if np.isfinite(res.tau[0]) else None
    return PathDetail(index, tau, sched.t, dB, dt_eff, x, w, float(res.w_end[0]), float(res.b_end[0]))


def wage_closed_form(sol: ContractSolution, b_end: float, tau: Optional[float]) -> float:
    """Terminal optimal wage as a function of B* and the stopping time T ^ tau."""
    p = sol.params
    s = p.horizon if tau is None else min(tau, p.horizon)
    a = 1.0 / p.kappa if isinstance(sol.variant, FirstBest) else sol.a_star
    hm_rate = 0.5 * p.gamma_a * sol.z_star**2 + 0.5 * p.kappa * a * a
    k0 = float(sol.k_star(0.0))
    slope = -(float(sol.c1) + float(sol.c2)) / (p.gamma_p + p.gamma_a)
    return sol.y0 + sol.z_star * b_end + hm_rate * s + k0 + slope * s


def wage_closed_form_check(params: ModelParams, intensity: IntensitySpec, sol: ContractSolution, path: PathDetail) -> float:
    """|simulated terminal wage - closed-form wage| on one optimal path."""
    if not intensity.is_constant:
        raise NotApplicable("the linear wage representation needs a constant intensity")
    return abs(path.w_end - wage_closed_form(sol, path.b_end, path.tau))


def dump_paths_csv(report: SimReport, path, params: ModelParams) -> None:
    if report.paths is None:
        raise ValueError("report has no per-path data; run with keep_paths=True")
    r = report.paths
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path_id", "tau", "X_end", "W_end", "agent_cost_integral", "U_P_realized", "U_A_realized"])
        for j in range(len(r.tau)):
            tau = "NA" if not np.isfinite(r.tau[j]) else f"{r.tau[j]:.9g}"
            w.writerow(
                [
                    j,
                    tau,
                    f"{r.x_end[j]:.9g}",
                    f"{r.w_end[j]:.9g}",
                    f"{r.cost[j]:.9g}",
                    f"{-math.exp(r.log_up[j]):.9g}",
                    f"{-math.exp(r.log_ua[j]):.9g}",
                ]
            )
