"""Restarting production after a shutdown.

At the default time the principal may pay ``invest_cost`` to restart the
project with a degraded productivity ``theta``. The restarted project is a
classical moral-hazard problem with effective effort cost kappa / theta**2,
whose certainty-equivalent rate is ``c_inv``. Its value enters the
pre-default problem only through the multiplier

    m(t) = min(1, e^{gamma_p i} phi1(t)),   phi1(t) = exp(-gamma_p c_inv (T - t)),

which scales c2 and shifts K*.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bernoulli import BernoulliCoefficients, phi_integral_form
from .contract import ContractSolution, base_rate, jump_loading, optimal_sensitivity
from .model import ConstantIntensity, IntensitySpec, Mitigation, ModelParams, MoralHazard, NotApplicable, validate


def c_inv(params: ModelParams, theta: float) -> float:
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"theta must lie in (0,1], got {theta!r}")
    gp, ga = params.gamma_p, params.gamma_a
    s = theta * theta / params.kappa
    return (gp + s) ** 2 / (2.0 * (gp + ga + s)) - gp / 2.0


def post_default_sensitivity(params: ModelParams, theta: float) -> float:
    """Z1, the optimal sensitivity of the restarted contract."""
    s = theta * theta / params.kappa
    return (params.gamma_p + s) / (params.gamma_p + params.gamma_a + s)


@dataclass(frozen=True)
class MitigationPolicy:
    params: ModelParams
    theta: float
    invest_cost: float
    c_inv: float
    t_max: Optional[float]

    def phi1(self, t, theta: float | None = None):
        c = self.c_inv if theta is None else c_inv(self.params, theta)
        return np.exp(-self.params.gamma_p * c * (self.params.horizon - np.asarray(t, dtype=float)))

    def multiplier(self, t):
        """m(t) = min(1, e^{gamma_p i} phi1(t)), computed in log space."""
        gp, T = self.params.gamma_p, self.params.horizon
        log_m = np.minimum(0.0, gp * (self.invest_cost - self.c_inv * (T - np.asarray(t, dtype=float))))
        return np.exp(log_m)

    def decide(self, tau: float) -> bool:
        return decide_invest(self, tau)

    @property
    def z_post(self) -> float:
        return post_default_sensitivity(self.params, self.theta)

    @property
    def effort_post(self) -> float:
        """theta * Z1 / kappa, the restarted contract's effort."""
        return self.theta * self.z_post / self.params.kappa

    @property
    def effort_post_pre_sensitivity(self) -> float:
        """theta * Z* / kappa with the pre-default Z*, the alternative reading."""
        return self.theta * optimal_sensitivity(self.params, MoralHazard()) / self.params.kappa

    def to_dict(self) -> dict:
        return {
            "c_inv": self.c_inv,
            "t_max": self.t_max,
            "theta": self.theta,
            "invest_cost": self.invest_cost,
            "z_post": self.z_post,
            "effort_post": self.effort_post,
            "effort_post_pre_sensitivity": self.effort_post_pre_sensitivity,
        }


def mitigation_policy(params: ModelParams, theta: float, invest_cost: float) -> MitigationPolicy:
    c = c_inv(params, theta)
    T = params.horizon
    t_max = T - invest_cost / c if c > 0 and invest_cost < T * c else None
    if t_max is not None:
        t_max = max(t_max, 0.0)
    return MitigationPolicy(params, float(theta), float(invest_cost), c, t_max)


def decide_invest(policy: MitigationPolicy, tau: float) -> bool:
    """Invest at the default time iff the restart value beats the cost strictly."""
    T = policy.params.horizon
    if not 0.0 <= tau <= T:
        raise ValueError(f"tau must lie in [0, {T}], got {tau!r}")
    return policy.c_inv > 0 and policy.invest_cost < policy.c_inv * (T - tau)


def mitigation_coefficients(
    params: ModelParams, intensity: IntensitySpec, variant: Mitigation, policy: MitigationPolicy | None = None
) -> BernoulliCoefficients:
    if not isinstance(intensity, ConstantIntensity):
        raise NotApplicable("mitigation needs a constant intensity")
    if policy is None:
        policy = mitigation_policy(params, variant.theta, variant.invest_cost)
    g = base_rate(params, MoralHazard())
    c2 = intensity.lam * jump_loading(params)
    alpha = params.alpha

    def c2_t(t):
        return c2 * policy.multiplier(t) ** alpha

    knots = () if policy.t_max is None else (policy.t_max,)
    return BernoulliCoefficients(g - c2, c2_t, alpha, params.horizon, knots)


def solve_mitigation(params: ModelParams, intensity: IntensitySpec, theta: float, invest_cost: float):
    """Optimal pre-default contract when a restart is available. Returns (solution, policy)."""
    variant = Mitigation(theta, invest_cost)
    validate(params, intensity, variant).require()
    policy = mitigation_policy(params, theta, invest_cost)
    coef = mitigation_coefficients(params, intensity, variant, policy)
    phi0 = phi_integral_form(coef)
    z = optimal_sensitivity(params, MoralHazard())
    sol = ContractSolution(
        variant, params, intensity, params.y_pc, z, float(params.clamp_effort(z)), coef, phi0, policy.multiplier
    )
    return sol, policy


def mitigation_to_dict(sol: ContractSolution, policy: MitigationPolicy, n_grid: int = 101) -> dict:
    out = sol.to_dict(n_grid)
    out.update(policy.to_dict())
    t = np.linspace(0.0, sol.params.horizon, n_grid)
    out["k_star_mitigation_grid"] = out["k_star_grid"]
    out["phi1_grid"] = [[a, b] for a, b in zip(t.tolist(), policy.phi1(t).tolist())]
    return out


def t_max_or_nan(policy: MitigationPolicy) -> float:
    return math.nan if policy.t_max is None else policy.t_max
