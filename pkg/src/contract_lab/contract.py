"""Explicit optimal contracts for the first-best and moral-hazard problems.

The principal's value is U_P(x - y) * phi0(t) where phi0 solves a Bernoulli
ODE whose constants depend on the variant. Every contract control follows
from phi0:

    K*(t) = log(phi0(t) / m(t)) / (gamma_p + gamma_a)

with m = 1 unless production can be restarted after a shutdown (see
``contract_lab.mitigation``).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import cumulative_simpson

from .bernoulli import BernoulliCoefficients, PhiFunction, _expm1_over_x, phi_closed_form, phi_numeric
from .model import (
    ConstantIntensity,
    FirstBest,
    IntensitySpec,
    Mitigation,
    ModelParams,
    MoralHazard,
    NotApplicable,
    ProblemVariant,
    validate,
    variant_to_dict,
)

# RK4 step used when the intensity is time dependent, as a fraction of T
NUMERIC_STEPS = 8192


def _rate_terms(params: ModelParams, variant: ProblemVariant) -> tuple:
    """(positive, negative) parts of the lambda-free rate c1 + c2."""
    gp, ga, k = params.gamma_p, params.gamma_a, params.kappa
    if isinstance(variant, FirstBest):
        return gp * gp * ga / (2.0 * (gp + ga)), gp / (2.0 * k)
    ki = 1.0 / k
    d = 2.0 * (gp + ga + ki)
    return gp * gp * ga / d, gp * ki * (gp + ki) / d


def base_rate(params: ModelParams, variant: ProblemVariant) -> float:
    pos, neg = _rate_terms(params, variant)
    return pos - neg


def jump_loading(params: ModelParams) -> float:
    """(gamma_p + gamma_a) / gamma_a, the factor multiplying lambda in c1 and c2."""
    return (params.gamma_p + params.gamma_a) / params.gamma_a


def coefficients(params: ModelParams, intensity: IntensitySpec, variant: ProblemVariant) -> BernoulliCoefficients:
    if isinstance(variant, Mitigation):
        from .mitigation import mitigation_coefficients

        return mitigation_coefficients(params, intensity, variant)
    g = base_rate(params, variant)
    load = jump_loading(params)
    if intensity.is_constant:
        c2 = intensity.lam * load
        return BernoulliCoefficients(g - c2, c2, params.alpha, params.horizon)

    def c1(t):
        return g - load * intensity.rate(t)

    def c2(t):
        return load * intensity.rate(t)

    return BernoulliCoefficients(c1, c2, params.alpha, params.horizon, tuple(intensity.knots))


@dataclass(frozen=True)
class ContractSolution:
    variant: ProblemVariant
    params: ModelParams
    intensity: IntensitySpec
    y0: float
    z_star: float
    a_star: float
    coef: BernoulliCoefficients
    phi0: PhiFunction
    jump_multiplier: Optional[Callable] = None

    @property
    def c1(self):
        return self.coef.c1

    @property
    def c2(self):
        return self.coef.c2

    def k_star(self, t):
        """Default-compensation control K*(t)."""
        log_phi = self.phi0.log(t)
        if self.jump_multiplier is not None:
            log_phi = log_phi - np.log(self.jump_multiplier(t))
        return log_phi / (self.params.gamma_p + self.params.gamma_a)

    def value(self, x: float | None = None, y: float | None = None) -> float:
        """Principal's expected utility U_P(x - y) phi0(0)."""
        x = self.params.x0 if x is None else x
        y = self.y0 if y is None else y
        return float(self.params.utility_p(x - y) * self.phi0(0.0))

    def to_dict(self, n_grid: int = 101) -> dict:
        t = np.linspace(0.0, self.params.horizon, n_grid)
        return {
            "variant": variant_to_dict(self.variant),
            "y0": self.y0,
            "z_star": self.z_star,
            "a_star": self.a_star,
            "c1": _coef_out(self.coef.c1, t),
            "c2": _coef_out(self.coef.c2, t),
            "k_star_grid": [[a, b] for a, b in zip(t.tolist(), np.atleast_1d(self.k_star(t)).tolist())],
            "phi0_grid": [[a, b] for a, b in zip(t.tolist(), np.atleast_1d(self.phi0(t)).tolist())],
        }


def _coef_out(c, t):
    if callable(c):
        return [[a, b] for a, b in zip(t.tolist(), np.asarray(c(t), dtype=float).tolist())]
    return float(c)


def optimal_sensitivity(params: ModelParams, variant: ProblemVariant) -> float:
    gp, ga = params.gamma_p, params.gamma_a
    if isinstance(variant, FirstBest):
        return gp / (gp + ga)
    ki = 1.0 / params.kappa
    return (gp + ki) / (gp + ga + ki)


def solve(params: ModelParams, intensity: IntensitySpec, variant: ProblemVariant) -> ContractSolution:
    """Closed-form optimal contract; time-dependent intensities go through RK4."""
    validate(params, intensity, variant).require()
    if isinstance(variant, Mitigation):
        from .mitigation import solve_mitigation

        return solve_mitigation(params, intensity, variant.theta, variant.invest_cost)[0]

    coef = coefficients(params, intensity, variant)
    if coef.c1_constant and coef.c2_constant:
        phi0 = phi_closed_form(coef)
    else:
        phi0 = phi_numeric(coef, params.horizon / NUMERIC_STEPS)
    z = optimal_sensitivity(params, variant)
    if isinstance(variant, FirstBest):
        a = 1.0 / params.kappa
    else:
        a = float(params.clamp_effort(z))
    return ContractSolution(variant, params, intensity, params.y_pc, z, a, coef, phi0)


# -- analytics that need a constant intensity --------------------------------


def _require_constant(intensity: IntensitySpec, what: str) -> float:
    if not isinstance(intensity, ConstantIntensity):
        raise NotApplicable(f"{what} is only defined for a constant intensity")
    return float(intensity.lam)


def k_star_expectation_form(params: ModelParams, intensity: IntensitySpec, variant: ProblemVariant, t):
    """K*(t) = log E[exp(beta * ((T - t) ^ tau))] / gamma_a, tau ~ Exp(lambda).

    beta = alpha (c1 + c2). The expectation is split into the survival term
    e^{(beta - lambda) r} and the default term lambda * int_0^r e^{(beta - lambda) s} ds.
    """
    if isinstance(variant, Mitigation):
        raise NotApplicable("the expectation representation does not cover mitigation")
    lam = _require_constant(intensity, "the expectation representation")
    beta = params.alpha * base_rate(params, variant)
    r = params.horizon - np.asarray(t, dtype=float)
    drift = beta - lam
    survive = np.exp(beta * r) * np.exp(-lam * r)
    defaulted = lam * r * _expm1_over_x(drift * r)
    out = np.log(survive + defaulted) / params.gamma_a
    return out if np.ndim(t) else float(out)


class Sign(enum.IntEnum):
    NEGATIVE = -1
    ZERO = 0
    POSITIVE = 1


def sign_of_k(params: ModelParams, variant: ProblemVariant) -> Sign:
    """Sign of K* on [0, T), i.e. sign(c1 + c2) (lambda cancels)."""
    if isinstance(variant, Mitigation):
        raise NotApplicable("K* can change sign under mitigation")
    pos, neg = _rate_terms(params, variant)
    if abs(pos - neg) <= 1e-12 * (abs(pos) + abs(neg)):
        return Sign.ZERO
    return Sign.POSITIVE if pos > neg else Sign.NEGATIVE


def mh_sign_predicate(params: ModelParams) -> float:
    """gamma_p gamma_a - gamma_p / kappa - 1 / kappa**2, same sign as moral-hazard K*."""
    ki = 1.0 / params.kappa
    return params.gamma_p * params.gamma_a - params.gamma_p * ki - ki * ki


class AffinityError(ArithmeticError):
    pass


@dataclass(frozen=True)
class RiskShareDecomposition:
    k0: float
    slope: float
    t: np.ndarray
    f: np.ndarray
    measured_slope: float
    max_chord_deviation: float

    def __call__(self, t):
        return self.k0 + self.slope * np.asarray(t, dtype=float)


def risk_share_decomposition(sol: ContractSolution, n_grid: int = 2048, tol: float = 1e-7) -> RiskShareDecomposition:
    """Affine decomposition f(t) = K*(t) + int_0^t (lambda/gamma_a)(e^{-gamma_a K*} - 1) ds.

    f is evaluated numerically on ``n_grid`` panels and checked against its
    chord; the analytic slope is -(c1 + c2)/(gamma_p + gamma_a).
    """
    if isinstance(sol.variant, Mitigation):
        raise NotApplicable("the linear decomposition does not cover mitigation")
    lam = _require_constant(sol.intensity, "the linear decomposition")
    p = sol.params
    T = p.horizon
    t = np.linspace(0.0, T, n_grid + 1)
    k = np.asarray(sol.k_star(t))
    integrand = lam / p.gamma_a * np.expm1(-p.gamma_a * k)
    f = k + cumulative_simpson(integrand, x=t, initial=0.0)
    measured = (f[-1] - f[0]) / T
    dev = float(np.max(np.abs(f - (f[0] + measured * t))))
    if dev > tol:
        raise AffinityError(f"f deviates from its chord by {dev:.3g} > {tol:.3g}")
    slope = -(float(sol.c1) + float(sol.c2)) / (p.gamma_p + p.gamma_a)
    return RiskShareDecomposition(float(k[0]), slope, t, f, float(measured), dev)


@dataclass(frozen=True)
class ExpectedRiskShare:
    paper_value: float
    exact_value: float
    mc_value: float
    mc_se: float
    n_draws: int


def expected_time_to_stop(lam: float, T: float) -> float:
    """E[T ^ tau] for tau ~ Exp(lam)."""
    return T * float(_expm1_over_x(-lam * T)) if lam > 0 else T


def expected_risk_share(sol: ContractSolution, n_draws: int = 10**6, seed: int = 0) -> ExpectedRiskShare:
    """E[f(T ^ tau)] three ways.

    ``paper_value`` divides 1 - e^{-lambda T} by T (agrees with the exact
    value only when lambda = T),
    ``exact_value`` uses E[T ^ tau] = (1 - e^{-lambda T})/lambda, and
    ``mc_value`` samples tau directly.
    """
    dec = risk_share_decomposition(sol)
    lam = float(sol.intensity.lam)
    T = sol.params.horizon
    over_t = dec.k0 + dec.slope * (-math.expm1(-lam * T)) / T
    exact = dec.k0 + dec.slope * expected_time_to_stop(lam, T)
    rng = np.random.Generator(np.random.Philox(seed))
    if lam > 0:
        tau = rng.exponential(1.0 / lam, size=n_draws)
    else:
        tau = np.full(n_draws, np.inf)
    vals = dec(np.minimum(tau, T))
    return ExpectedRiskShare(
        float(over_t), float(exact), float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_draws)), n_draws
    )


def value_ratio(params: ModelParams, intensity: IntensitySpec) -> float:
    """phi0 under moral hazard over phi0 under first best, both at t = 0."""
    mh = solve(params, intensity, MoralHazard())
    fb = solve(params, intensity, FirstBest())
    return float(np.exp(mh.phi0.log(0.0) - fb.phi0.log(0.0)))
