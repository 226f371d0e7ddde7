"""MATI mapping T(L, gamma, lambda) and the clock function phi.

phi solves  phi' = -2 L phi - gamma (phi^2 + 1),  phi(0) = 1/lambda_star,
and T is the time at which phi reaches lambda_star. Both are evaluated in
closed form; which branch applies depends on the sign of gamma - L.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConstraintError

EQUAL_BRANCH_RTOL = 1e-9
NEGLIGIBLE_L = 1e-13


@dataclass(frozen=True)
class MatiParams:
    L: float
    gamma: float
    lambda_star: float

    def __post_init__(self):
        if not (math.isfinite(self.L) and math.isfinite(self.gamma) and math.isfinite(self.lambda_star)):
            raise ConstraintError("MATI parameters must be finite")
        if self.gamma <= 0:
            raise ConstraintError(f"gamma must be positive, got {self.gamma}")
        if not 0 < self.lambda_star < 1:
            raise ConstraintError(f"lambda_star must lie in (0, 1), got {self.lambda_star}")
        if self.L < 0:
            raise ConstraintError(f"L must be nonnegative, got {self.L}")

    @property
    def branch(self) -> str:
        """'above' when gamma > L, 'equal' inside the tolerance band, else 'below'."""
        if abs(self.gamma - self.L) <= EQUAL_BRANCH_RTOL * max(self.gamma, self.L):
            return "equal"
        return "above" if self.gamma > self.L else "below"


def mati_bound(p: MatiParams) -> float:
    """Maximum allowable transmission interval T(L, gamma, lambda)."""
    L, g, lam = p.L, p.gamma, p.lambda_star
    if L <= NEGLIGIBLE_L * g:  # (gamma/L)^2 would overflow; the L = 0 form is exact to rounding
        return (math.atan(1.0 / lam) - math.atan(lam)) / g
    branch = p.branch
    if branch == "equal":
        return (1.0 - lam) / (L * (1.0 + lam))
    ratio = g / L
    r = math.sqrt(abs(ratio * ratio - 1.0))
    arg = r * (1.0 - lam) / (2.0 * (lam / (1.0 + lam)) * (ratio - 1.0) + 1.0 + lam)
    if branch == "above":
        return math.atan(arg) / (L * r)
    return math.atanh(arg) / (L * r)


@dataclass(frozen=True)
class PhiClock:
    params: MatiParams

    @property
    def initial(self) -> float:
        return 1.0 / self.params.lambda_star


def phi_eval(clock: PhiClock, tau):
    """Closed-form phi(tau); accepts a scalar or an array of times >= 0.

    With psi = phi + L/gamma the ODE becomes psi' = -gamma (psi^2 + c) where
    c = 1 - (L/gamma)^2, giving a tan, rational or coth solution.
    """
    p = clock.params
    L, g = p.L, p.gamma
    t = np.asarray(tau, dtype=float)
    if np.any(t < 0):
        raise ConstraintError("phi is only defined for tau >= 0")
    shift = L / g
    psi0 = clock.initial + shift
    branch = "above" if L == 0.0 else p.branch
    if branch == "above":
        c = math.sqrt(1.0 - shift * shift)
        arg = math.atan(psi0 / c) - g * c * t
        # phi escapes to -inf when arg reaches -pi/2; tan would wrap around
        with np.errstate(invalid="ignore"):
            psi = np.where(arg > -0.5 * math.pi, c * np.tan(np.maximum(arg, -0.5 * math.pi)), -np.inf)
    elif branch == "equal":
        psi = psi0 / (1.0 + g * psi0 * t)
    else:
        k = math.sqrt(shift * shift - 1.0)
        # psi0 > L/gamma > k, so the coth solution applies
        u0 = 0.5 * math.log((psi0 + k) / (psi0 - k))
        psi = k / np.tanh(u0 + g * k * t)
    out = np.where(t == 0.0, clock.initial, psi - shift)
    return float(out) if np.ndim(out) == 0 else out


def phi_derivative(clock: PhiClock, phi):
    p = clock.params
    return -2.0 * p.L * phi - p.gamma * (phi * phi + 1.0)


def phi_crossing_time(clock: PhiClock, rtol: float = 1e-15) -> float:
    """Time at which phi falls to lambda_star, by bisection on phi_eval."""
    target = clock.params.lambda_star
    lo, hi = 0.0, 1.0
    while phi_eval(clock, hi) > target:
        lo, hi = hi, 2.0 * hi
        if hi > 1e12:
            raise ConstraintError("phi never reaches lambda_star")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if phi_eval(clock, mid) > target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= rtol * hi:
            break
    return 0.5 * (lo + hi)


def phi_rk4(clock: PhiClock, tau: float, steps: int) -> float:
    """Fixed-step RK4 reference for phi(tau); used to cross-check phi_eval."""
    h = tau / steps
    y = clock.initial
    for _ in range(steps):
        k1 = phi_derivative(clock, y)
        k2 = phi_derivative(clock, y + 0.5 * h * k1)
        k3 = phi_derivative(clock, y + 0.5 * h * k2)
        k4 = phi_derivative(clock, y + h * k3)
        y += h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
    return y
