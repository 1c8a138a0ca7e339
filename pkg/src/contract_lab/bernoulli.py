"""Terminal-value Bernoulli ODE for the principal's value multiplier.

    phi'(t) + c1(t) phi(t) + c2(t) phi(t)**(1 - alpha) = 0,   phi(T) = 1

With u = phi**alpha the equation becomes linear,

    u'(t) + alpha c1(t) u(t) = -alpha c2(t),   u(T) = 1,

which is what every solver below works with. Three routes are provided:

* ``phi_closed_form``: constant coefficients, exact.
* ``phi_integral_form``: constant c1, time-varying c2, variation of constants
  with composite Simpson quadrature.
* ``phi_numeric``: any coefficients, backward RK4. Used as the independent
  oracle for the other two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

Coefficient = Union[float, Callable[[np.ndarray], np.ndarray]]


class BernoulliDomainError(ArithmeticError):
    """The linearised solution u = phi**alpha is not positive at time ``t``."""

    def __init__(self, msg: str, t: float):
        self.t = t
        super().__init__(f"{msg} (at t={t:.9g})")


@dataclass(frozen=True)
class BernoulliCoefficients:
    """Coefficients of the Bernoulli ODE on [0, horizon].

    ``c1``/``c2`` are floats or vectorised callables of time. ``knots`` lists
    times where a callable coefficient is only piecewise smooth; numeric
    routes put a grid node on each of them.
    """

    c1: Coefficient
    c2: Coefficient
    alpha: float
    horizon: float
    knots: tuple = ()

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0,1), got {self.alpha!r}")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    @property
    def c1_constant(self) -> bool:
        return not callable(self.c1)

    @property
    def c2_constant(self) -> bool:
        return not callable(self.c2)

    def c1_at(self, t):
        return _eval(self.c1, t)

    def c2_at(self, t):
        return _eval(self.c2, t)

    def inner_knots(self) -> list:
        T = self.horizon
        return sorted({float(k) for k in self.knots if 0.0 < k < T})


def _eval(c: Coefficient, t):
    t = np.asarray(t, dtype=float)
    if callable(c):
        return np.asarray(c(t), dtype=float) * np.ones_like(t)
    return np.full_like(t, float(c))


def _expm1_over_x(x):
    """(e**x - 1)/x, continuous through x = 0."""
    x = np.asarray(x, dtype=float)
    safe = np.where(x == 0.0, 1.0, x)
    return np.where(x == 0.0, 1.0, np.expm1(safe) / safe)


@dataclass(frozen=True)
class PhiFunction:
    """Positive solution phi on [0, T] together with its linearised form u."""

    u_func: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    coef: BernoulliCoefficients
    method: str

    def u(self, t):
        t_arr = np.asarray(t, dtype=float)
        out = self.u_func(np.atleast_1d(t_arr))
        return out if t_arr.ndim else float(out[0])

    def __call__(self, t):
        return self.u(t) ** (1.0 / self.coef.alpha)

    def log(self, t):
        """log phi(t), computed as log(u)/alpha to avoid the power."""
        return np.log(self.u(t)) / self.coef.alpha


def phi_closed_form(coef: BernoulliCoefficients) -> PhiFunction:
    """Exact solution for constant coefficients.

    Written as u = e**x + alpha c2 (T - t) (e**x - 1)/x with x = alpha c1 (T - t),
    which equals ((c1 + c2)/c1) e**x - c2/c1 and stays finite as c1 -> 0.
    """
    if not (coef.c1_constant and coef.c2_constant):
        raise ValueError("closed form needs constant c1 and c2")
    a, c1, c2, T = coef.alpha, float(coef.c1), float(coef.c2), coef.horizon

    def u(t):
        r = T - t
        x = a * c1 * r
        return np.exp(x) + a * c2 * r * _expm1_over_x(x)

    u0 = float(u(np.array([0.0]))[0])
    if not u0 > 0.0:
        # u is monotone in t, so the bracket first vanishes where e**x (c1 + c2) = c2
        r = math.log(c2 / (c1 + c2)) / (a * c1) if c1 != 0 and c2 / (c1 + c2) > 0 else T
        raise BernoulliDomainError("closed-form bracket is not positive", T - r)
    return PhiFunction(u, coef, "closed_form")


def _segment_grid(T: float, knots: list, max_step: float) -> np.ndarray:
    bps = [0.0] + knots + [T]
    parts = []
    for a, b in zip(bps[:-1], bps[1:]):
        n = max(1, math.ceil((b - a) / max_step - 1e-12))
        parts.append(np.linspace(a, b, n + 1)[:-1])
    parts.append(np.array([T]))
    return np.concatenate(parts)


def phi_numeric(coef: BernoulliCoefficients, grid_step: float) -> PhiFunction:
    """Backward RK4 on the linearised ODE, with cubic Hermite dense output.

    Coefficients are sampled with one-sided limits inside each step so a
    knot never leaks the value from the neighbouring piece.
    """
    T = coef.horizon
    if not 0.0 < grid_step <= T / 16.0:
        raise ValueError(f"grid_step must lie in (0, T/16], got {grid_step!r}")
    a = coef.alpha
    nodes = _segment_grid(T, coef.inner_knots(), grid_step)
    lo, hi = nodes[:-1], nodes[1:]
    h = hi - lo
    lo_in = np.nextafter(lo, hi)
    hi_in = np.nextafter(hi, lo)
    mid = 0.5 * (lo + hi)

    # v(s) = u(hi - s) obeys v' = p v + q with p = alpha c1, q = alpha c2
    p1, q1 = a * coef.c1_at(hi_in), a * coef.c2_at(hi_in)
    pm, qm = a * coef.c1_at(mid), a * coef.c2_at(mid)
    p4, q4 = a * coef.c1_at(lo_in), a * coef.c2_at(lo_in)

    def step(v):
        k1 = p1 * v + q1
        k2 = pm * (v + 0.5 * h * k1) + qm
        k3 = pm * (v + 0.5 * h * k2) + qm
        k4 = p4 * (v + h * k3) + q4
        return v + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    B = step(np.zeros_like(h))
    A = step(np.ones_like(h)) - B
    u_nodes = np.empty(len(nodes))
    u_nodes[-1] = 1.0
    val = 1.0
    A_l, B_l = A.tolist(), B.tolist()
    for j in range(len(h) - 1, -1, -1):
        val = A_l[j] * val + B_l[j]
        u_nodes[j] = val
    if np.any(u_nodes <= 0.0):
        j = int(np.max(np.nonzero(u_nodes <= 0.0)[0]))
        raise BernoulliDomainError("numeric solution u is not positive", float(nodes[j]))

    # one-sided slopes du/dt at both ends of each interval
    d_lo = -(p4 * u_nodes[:-1] + q4)
    d_hi = -(p1 * u_nodes[1:] + q1)

    def u(t):
        t = np.clip(t, 0.0, T)
        j = np.clip(np.searchsorted(nodes, t, side="right") - 1, 0, len(h) - 1)
        s = (t - lo[j]) / h[j]
        s2, s3 = s * s, s * s * s
        return (
            (2 * s3 - 3 * s2 + 1) * u_nodes[j]
            + (s3 - 2 * s2 + s) * h[j] * d_lo[j]
            + (-2 * s3 + 3 * s2) * u_nodes[j + 1]
            + (s3 - s2) * h[j] * d_hi[j]
        )

    return PhiFunction(u, coef, "numeric")


def _panel_grid(T: float, knots: list, n_base: int) -> np.ndarray:
    """Panel edges on [0, T] aligned to the knots, width at most T/n_base."""
    bps = [0.0] + knots + [T]
    parts = []
    for a, b in zip(bps[:-1], bps[1:]):
        n = max(1, math.ceil((b - a) * n_base / T - 1e-9))
        parts.append(np.linspace(a, b, n + 1)[:-1])
    parts.append(np.array([T]))
    return np.concatenate(parts)


def _simpson_panels(f: Callable, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Simpson's rule on each [lo, hi]; one-sided samples at the ends."""
    a = np.nextafter(lo, hi)
    b = np.nextafter(hi, lo)
    return (hi - lo) / 6.0 * (f(a) + 4.0 * f(0.5 * (lo + hi)) + f(b))


def phi_integral_form(coef: BernoulliCoefficients, rtol: float = 1e-10) -> PhiFunction:
    """Variation-of-constants solution for constant c1 and time-varying c2.

        u(t) = e**(alpha c1 (T - t)) * (1 + alpha * int_t^T c2(s) e**(alpha c1 (s - T)) ds)

    The integral uses composite Simpson on panels aligned to the knots, width
    at most T/2048, halving the width until the brackets at every panel edge
    agree to ``rtol``. Points between edges add a Simpson rule
    on the partial panel.
    """
    if not coef.c1_constant:
        raise ValueError("integral form needs a constant c1")
    a, c1, T = coef.alpha, float(coef.c1), coef.horizon
    knots = coef.inner_knots()

    def g(s):
        return coef.c2_at(s) * np.exp(a * c1 * (s - T))

    def tails(edges):
        pieces = _simpson_panels(g, edges[:-1], edges[1:])
        return np.concatenate([np.cumsum(pieces[::-1])[::-1], [0.0]])

    edges = _panel_grid(T, knots, 2048)
    tail = tails(edges)
    while True:
        fine_edges = np.empty(2 * len(edges) - 1)
        fine_edges[0::2] = edges
        fine_edges[1::2] = 0.5 * (edges[:-1] + edges[1:])
        fine_tail = tails(fine_edges)
        # compare the brackets 1 + alpha * tail, which is what u depends on
        err = a * np.abs(fine_tail[0::2] - tail)
        edges, tail = fine_edges, fine_tail
        if np.all(err <= rtol * np.abs(1.0 + a * fine_tail[0::2])) or len(edges) > 2**21:
            break

    def u(t):
        t = np.clip(np.asarray(t, dtype=float), 0.0, T)
        j = np.clip(np.searchsorted(edges, t, side="right") - 1, 0, len(edges) - 2)
        right = edges[j + 1]
        part = np.where(right > t, _simpson_panels(g, t, right), 0.0)
        return np.exp(a * c1 * (T - t)) * (1.0 + a * (tail[j + 1] + part))

    out = PhiFunction(u, coef, "integral_form")
    u_all = u(edges)
    if np.any(u_all <= 0.0):
        j = int(np.max(np.nonzero(u_all <= 0.0)[0]))
        raise BernoulliDomainError("integral-form bracket is not positive", float(edges[j]))
    return out


def derivative(f: Callable, t, h: float, T: float) -> np.ndarray:
    """Fourth-order finite difference of f on [0, T].

    Five-point central stencil in the interior, five-point one-sided within
    2h of either end.
    """
    if not 0.0 < 4 * h <= T:
        raise ValueError(f"step {h!r} must satisfy 0 < 4h <= T")
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty_like(t)
    left = t - 2 * h < 0.0
    right = (t + 2 * h > T) & ~left
    mid = ~(left | right)
    if np.any(mid):
        tm = t[mid]
        out[mid] = (f(tm - 2 * h) - 8 * f(tm - h) + 8 * f(tm + h) - f(tm + 2 * h)) / (12 * h)
    for mask, s in ((left, 1.0), (right, -1.0)):
        if np.any(mask):
            tb = t[mask]
            w = -25 * f(tb) + 48 * f(tb + s * h) - 36 * f(tb + 2 * s * h) + 16 * f(tb + 3 * s * h) - 3 * f(tb + 4 * s * h)
            out[mask] = s * w / (12 * h)
    return out


def residual(phi: PhiFunction, t, step: float = 1e-4) -> np.ndarray:
    """Pointwise ODE residual, derivative by finite differences."""
    coef = phi.coef
    t = np.atleast_1d(np.asarray(t, dtype=float))
    val = phi(t)
    return derivative(phi, t, step, coef.horizon) + coef.c1_at(t) * val + coef.c2_at(t) * val ** (1.0 - coef.alpha)
