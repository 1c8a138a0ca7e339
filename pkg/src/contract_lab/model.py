"""Exogenous model inputs: parameters, default intensity and problem variant.

Everything here is immutable. ``validate`` collects every violated constraint
into a report instead of raising on the first one, so the CLI can print the
full list.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence, Union

import numpy as np


class ValidationError(ValueError):
    """Raised when inputs are used without a passing validation report."""

    def __init__(self, report: "ValidationReport"):
        self.report = report
        super().__init__("; ".join(report.violations))


class NotApplicable(ValueError):
    """An analytic that only holds for a constant intensity was requested otherwise."""


@dataclass(frozen=True)
class ModelParams:
    gamma_p: float
    gamma_a: float
    kappa: float
    horizon: float
    y_pc: float = 0.0
    x0: float = 0.0
    effort_bound: float = 10.0

    @property
    def alpha(self) -> float:
        """Exponent ratio gamma_a / (gamma_p + gamma_a) of the linearised ODE."""
        return self.gamma_a / (self.gamma_p + self.gamma_a)

    def utility_p(self, x):
        return -np.exp(-self.gamma_p * np.asarray(x, dtype=float))

    def utility_a(self, x):
        return -np.exp(-self.gamma_a * np.asarray(x, dtype=float))

    def clamp_effort(self, z):
        """Agent best response a*(z) to sensitivity z, clamped to [-A, A]."""
        return np.clip(np.asarray(z, dtype=float) / self.kappa, -self.effort_bound, self.effort_bound)

    def effort_cost(self, a):
        a = np.asarray(a, dtype=float)
        return 0.5 * self.kappa * a * a


# -- intensities -------------------------------------------------------------


@dataclass(frozen=True)
class ConstantIntensity:
    lam: float

    @property
    def is_constant(self) -> bool:
        return True

    @property
    def knots(self) -> tuple:
        return ()

    def rate(self, t):
        t = np.asarray(t, dtype=float)
        return np.full_like(t, self.lam) if t.ndim else float(self.lam)

    def cumulative(self, t):
        return self.lam * np.asarray(t, dtype=float)

    def inverse_cumulative(self, e):
        """Smallest t with cumulative(t) = e; inf when the intensity is zero."""
        e = np.asarray(e, dtype=float)
        if self.lam == 0.0:
            return np.full_like(e, np.inf)
        return e / self.lam

    def values(self) -> np.ndarray:
        return np.array([self.lam], dtype=float)


@dataclass(frozen=True)
class GridIntensity:
    """Intensity sampled on a time grid.

    ``interp="step"`` holds each value until the next node (and the last one
    forever); ``interp="linear"`` interpolates between nodes and requires the
    grid to reach the horizon.
    """

    times: tuple
    lams: tuple
    interp: str = "step"
    _t: np.ndarray = field(init=False, repr=False, compare=False)
    _l: np.ndarray = field(init=False, repr=False, compare=False)
    _cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        lam = np.asarray(self.lams, dtype=float)
        object.__setattr__(self, "times", tuple(t.tolist()))
        object.__setattr__(self, "lams", tuple(lam.tolist()))
        object.__setattr__(self, "_t", t)
        object.__setattr__(self, "_l", lam)
        if len(t) >= 1 and len(t) == len(lam):
            dt = np.diff(t)
            if self.interp == "linear":
                seg = 0.5 * (lam[:-1] + lam[1:]) * dt
            else:
                seg = lam[:-1] * dt
            object.__setattr__(self, "_cum", np.concatenate([[0.0], np.cumsum(seg)]))
        else:
            object.__setattr__(self, "_cum", np.zeros(len(t)))

    @property
    def is_constant(self) -> bool:
        return False

    @property
    def knots(self) -> tuple:
        return self.times

    def rate(self, t):
        t_arr = np.asarray(t, dtype=float)
        if self.interp == "linear":
            out = np.interp(t_arr, self._t, self._l)
        else:
            idx = np.clip(np.searchsorted(self._t, t_arr, side="right") - 1, 0, len(self._t) - 1)
            out = self._l[idx]
        return out if t_arr.ndim else float(out)

    def cumulative(self, t):
        t_arr = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self._t, t_arr, side="right") - 1, 0, len(self._t) - 1)
        t0 = self._t[idx]
        l0 = self._l[idx]
        s = t_arr - t0
        if self.interp == "linear":
            nxt = np.minimum(idx + 1, len(self._t) - 1)
            span = self._t[nxt] - t0
            slope = np.where(span > 0, (self._l[nxt] - l0) / np.where(span > 0, span, 1.0), 0.0)
            out = self._cum[idx] + l0 * s + 0.5 * slope * s * s
        else:
            out = self._cum[idx] + l0 * s
        return out if t_arr.ndim else float(out)

    def inverse_cumulative(self, e):
        """Smallest t with cumulative(t) = e (inf if never reached)."""
        e_arr = np.atleast_1d(np.asarray(e, dtype=float))
        out = np.full(e_arr.shape, np.inf)
        idx = np.clip(np.searchsorted(self._cum, e_arr, side="left") - 1, 0, len(self._t) - 1)
        for j, (ej, k) in enumerate(zip(e_arr, idx)):
            if ej <= 0.0:
                out[j] = self._t[0]
                continue
            # walk forward past flat (zero-rate) segments
            while k + 1 < len(self._t) and self._cum[k + 1] < ej:
                k += 1
            rem = ej - self._cum[k]
            l0 = self._l[k]
            if self.interp == "linear" and k + 1 < len(self._t):
                span = self._t[k + 1] - self._t[k]
                slope = (self._l[k + 1] - l0) / span
                if slope == 0.0:
                    out[j] = self._t[k] + rem / l0
                else:
                    # 0.5*slope*s^2 + l0*s - rem = 0, stable root
                    disc = l0 * l0 + 2.0 * slope * rem
                    out[j] = self._t[k] + 2.0 * rem / (l0 + math.sqrt(max(disc, 0.0)))
            elif l0 > 0.0:
                out[j] = self._t[k] + rem / l0
        return out if np.ndim(e) else float(out[0])

    def values(self) -> np.ndarray:
        return self._l


IntensitySpec = Union[ConstantIntensity, GridIntensity]


# -- variants ----------------------------------------------------------------


@dataclass(frozen=True)
class FirstBest:
    kind = "first_best"


@dataclass(frozen=True)
class MoralHazard:
    kind = "moral_hazard"


@dataclass(frozen=True)
class Mitigation:
    theta: float
    invest_cost: float
    kind = "mitigation"


ProblemVariant = Union[FirstBest, MoralHazard, Mitigation]


def is_moral_hazard(variant: ProblemVariant) -> bool:
    return isinstance(variant, (MoralHazard, Mitigation))


def mh_effort_threshold(params: ModelParams) -> float:
    """Lower bound on A that keeps the moral-hazard best response interior."""
    ki = 1.0 / params.kappa
    return (params.gamma_p + ki) / (params.kappa * (params.gamma_p + params.gamma_a) + 1.0)


# -- validation --------------------------------------------------------------


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def require(self) -> None:
        if not self.ok:
            raise ValidationError(self)

    def to_dict(self) -> dict:
        return {"ok": self.ok, "violations": list(self.violations)}


def validate(params: ModelParams, intensity: IntensitySpec, variant: ProblemVariant) -> ValidationReport:
    bad = []
    for name in ("gamma_p", "gamma_a", "kappa", "horizon", "y_pc", "x0", "effort_bound"):
        v = getattr(params, name)
        if not isinstance(v, (int, float)) or not math.isfinite(v):
            bad.append(f"{name} must be a finite real, got {v!r}")
    for name in ("gamma_p", "gamma_a", "kappa", "horizon", "effort_bound"):
        v = getattr(params, name)
        if isinstance(v, (int, float)) and math.isfinite(v) and v <= 0:
            bad.append(f"{name} must be > 0, got {v!r}")
    if bad:
        return ValidationReport(tuple(bad))

    if is_moral_hazard(variant):
        bound = mh_effort_threshold(params)
        if not params.effort_bound > bound:
            bad.append(f"effort_bound {params.effort_bound!r} must exceed {bound:.6g} for moral hazard")
    elif isinstance(variant, FirstBest):
        if params.effort_bound < 1.0 / params.kappa:
            bad.append(f"effort_bound {params.effort_bound!r} must be >= 1/kappa = {1.0 / params.kappa:.6g}")
    else:
        bad.append(f"unknown variant {variant!r}")

    if isinstance(variant, Mitigation):
        th, i = variant.theta, variant.invest_cost
        if not (isinstance(th, (int, float)) and math.isfinite(th) and 0.0 < th < 1.0):
            bad.append(f"theta must lie strictly in (0,1), got {th!r}")
        if not (isinstance(i, (int, float)) and math.isfinite(i) and i > 0.0):
            bad.append(f"invest_cost must be > 0, got {i!r}")
        if not intensity.is_constant:
            bad.append("mitigation requires a constant intensity")

    bad.extend(_intensity_violations(intensity, params.horizon))
    return ValidationReport(tuple(bad))


def _intensity_violations(intensity: IntensitySpec, horizon: float) -> list:
    bad = []
    if isinstance(intensity, ConstantIntensity):
        lam = intensity.lam
        if not (isinstance(lam, (int, float)) and math.isfinite(lam)):
            bad.append(f"lambda must be finite, got {lam!r}")
        elif lam < 0:
            bad.append(f"lambda must be >= 0, got {lam!r}")
        return bad
    if isinstance(intensity, GridIntensity):
        t = np.asarray(intensity.times, dtype=float)
        lam = np.asarray(intensity.lams, dtype=float)
        if intensity.interp not in ("step", "linear"):
            bad.append(f"unknown interpolation rule {intensity.interp!r}")
        if len(t) == 0 or len(t) != len(lam):
            bad.append("intensity grid needs matching, non-empty time and value lists")
            return bad
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(lam))):
            bad.append("intensity grid entries must be finite")
            return bad
        if np.any(lam < 0):
            bad.append("intensity values must be >= 0")
        if np.any(np.diff(t) <= 0):
            bad.append("intensity grid times must be strictly increasing")
        if t[0] != 0.0:
            bad.append(f"intensity grid must start at t=0, starts at {t[0]!r}")
        if intensity.interp == "linear" and t[-1] < horizon:
            bad.append(f"linear intensity grid must reach the horizon {horizon!r}")
        return bad
    return [f"unknown intensity {intensity!r}"]


def default_probability(intensity: IntensitySpec, t, horizon: float | None = None):
    """P(tau <= t) = 1 - exp(-Lambda_t)."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or (horizon is not None and np.any(t_arr > horizon)):
        raise ValueError(f"t must lie in [0, {horizon}]")
    out = -np.expm1(-np.asarray(intensity.cumulative(t_arr), dtype=float))
    return out if t_arr.ndim else float(out)


# -- JSON config -------------------------------------------------------------


@dataclass(frozen=True)
class Problem:
    params: ModelParams
    intensity: IntensitySpec
    variant: ProblemVariant

    def validate(self) -> ValidationReport:
        return validate(self.params, self.intensity, self.variant)


def intensity_from_dict(d: Mapping[str, Any]) -> IntensitySpec:
    kind = d.get("kind")
    if kind == "constant":
        return ConstantIntensity(_num(d, "lambda"))
    if kind == "grid":
        pts = d.get("points")
        if not isinstance(pts, Sequence) or not all(isinstance(p, Sequence) and len(p) == 2 for p in pts):
            raise ValueError("grid intensity needs 'points': [[t, lambda], ...]")
        return GridIntensity(
            tuple(float(p[0]) for p in pts), tuple(float(p[1]) for p in pts), str(d.get("interp", "step"))
        )
    raise ValueError(f"unknown intensity kind {kind!r}")


def intensity_to_dict(intensity: IntensitySpec) -> dict:
    if isinstance(intensity, ConstantIntensity):
        return {"kind": "constant", "lambda": intensity.lam}
    return {
        "kind": "grid",
        "points": [[t, v] for t, v in zip(intensity.times, intensity.lams)],
        "interp": intensity.interp,
    }


def variant_from_dict(d: Mapping[str, Any]) -> ProblemVariant:
    kind = d.get("kind")
    if kind == "first_best":
        return FirstBest()
    if kind == "moral_hazard":
        return MoralHazard()
    if kind == "mitigation":
        return Mitigation(_num(d, "theta"), _num(d, "invest_cost"))
    raise ValueError(f"unknown variant kind {kind!r}")


def variant_to_dict(variant: ProblemVariant) -> dict:
    if isinstance(variant, Mitigation):
        return {"kind": "mitigation", "theta": variant.theta, "invest_cost": variant.invest_cost}
    return {"kind": variant.kind}


def problem_from_dict(d: Mapping[str, Any]) -> Problem:
    if not isinstance(d, Mapping):
        raise ValueError("config must be a JSON object")
    params = ModelParams(
        gamma_p=_num(d, "gamma_p"),
        gamma_a=_num(d, "gamma_a"),
        kappa=_num(d, "kappa"),
        horizon=_num(d, "horizon"),
        y_pc=_num(d, "y_pc", 0.0),
        x0=_num(d, "x0", 0.0),
        effort_bound=_num(d, "effort_bound", 10.0),
    )
    intensity = intensity_from_dict(d.get("intensity", {"kind": "constant", "lambda": 0.0}))
    variant = variant_from_dict(d.get("variant", {"kind": "moral_hazard"}))
    return Problem(params, intensity, variant)


def problem_to_dict(problem: Problem) -> dict:
    p = problem.params
    return {
        "gamma_p": p.gamma_p,
        "gamma_a": p.gamma_a,
        "kappa": p.kappa,
        "horizon": p.horizon,
        "y_pc": p.y_pc,
        "x0": p.x0,
        "effort_bound": p.effort_bound,
        "intensity": intensity_to_dict(problem.intensity),
        "variant": variant_to_dict(problem.variant),
    }


_MISSING = object()


def _num(d: Mapping[str, Any], key: str, default: Any = _MISSING) -> float:
    if key not in d:
        if default is _MISSING:
            raise ValueError(f"missing required field {key!r}")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"field {key!r} must be a number, got {v!r}")
    return float(v)
