"""Conserved quantities: the Ermakov invariant, the Casimir pair of the
degenerate (class-1) structure, and the angle-to-time quadrature.

Conventions are recorded alongside values because two of them are real
choices rather than mathematics:

* the forcing integral Lambda(theta) = integral of G from 0 to theta
  starts at zero;
* the second Casimir multiplies its radial quadrature by the branch sign
  sigma = sign(-u/v), so it is conserved on both sides of a turning
  point, with the quadrature taken from the turning point itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import expr as ex
from .expr import DomainError, Expr
from .systems import DEFAULT_FLOORS, Floors, PhaseState

__all__ = [
    "InvariantValue",
    "BranchError",
    "forcing_integral",
    "ermakov_invariant",
    "grad_ermakov",
    "casimir_C1",
    "casimir_C2",
    "is_singular_oscillator",
    "h_of_theta",
    "elapsed_time",
    "spiral_radius",
]


class BranchError(ValueError):
    """The branch sign sigma = sign(-u/v) is undefined (u = 0 away from a
    turning point)."""


@dataclass(frozen=True)
class InvariantValue:
    """A conserved-quantity sample together with the conventions under
    which it was computed (integration limits, branch signs)."""

    name: str
    value: float
    conventions: dict = field(default_factory=dict)


def forcing_integral(g: Expr, theta: float, tol: float = 1e-12) -> float:
    """Lambda(theta): the forcing G integrated from 0 to theta."""
    return ex.quad_adaptive(lambda lam: ex.evaluate(g, {"theta": lam}), 0.0, theta, tol)


def ermakov_invariant(
    g: Expr, s: PhaseState, tol: float = 1e-12, record: bool = False
):
    """I = v^2/2 + Lambda(theta); the Hamiltonian of both structure classes."""
    value = 0.5 * s.v * s.v + forcing_integral(g, s.theta, tol)
    if record:
        return InvariantValue("I", value, {"lambda_lower_limit": 0.0})
    return value


def grad_ermakov(g: Expr, s: PhaseState) -> np.ndarray:
    """Phase-space gradient of the invariant: (0, G(theta), 0, v)."""
    return np.array([0.0, ex.evaluate(g, {"theta": s.theta}), 0.0, s.v])


def casimir_C1(
    potential: Expr,
    s: PhaseState,
    t: float = 0.0,
    floors: Floors = DEFAULT_FLOORS,
) -> float:
    """First Casimir of a pseudo-potential structure:

        C1 = (1/2)(u/v)^2 + V(1/r, t).
    """
    alpha = s.alpha(floors.v_min)
    v_val = ex.evaluate(potential, {"rbar": 1.0 / s.r, "t": t})
    return 0.5 * alpha * alpha + v_val


_OSC_PROBES = (0.43, 0.71, 1.0, 1.618, 2.34, 3.27)


def is_singular_oscillator(potential: Expr) -> bool:
    """Whether the potential evaluates as 1/(2 rbar^2) (no t dependence).

    Detection is by evaluation at fixed probes, so spelling variants all
    qualify for the closed-form Casimir path.
    """
    if "t" in ex.free_vars(potential):
        return False
    for lam in _OSC_PROBES:
        ref = 1.0 / (2.0 * lam * lam)
        try:
            val = ex.evaluate(potential, {"rbar": lam})
        except ex.ExprError:
            return False
        if abs(val - ref) > 1e-12 * max(1.0, abs(ref)):
            return False
    return True


def _turning_point(potential: Expr, c1: float, rbar: float, t: float) -> float:
    """Solve V(lam, t) = c1 for the turning point sharing a well with rbar.

    Scans geometrically on both sides of rbar for a sign change of
    c1 - V, then bisects.  Raises if no bracket is found."""

    def gap(lam: float) -> float:
        return c1 - ex.evaluate(potential, {"rbar": lam, "t": t})

    g0 = gap(rbar)
    if g0 < 0.0:
        raise DomainError(
            f"state lies outside its own well: c1 - V(1/r) = {g0!r} < 0"
        )
    for direction in (0.93, 1.07):
        lam_prev = rbar
        lam = rbar
        for _ in range(400):
            lam *= direction
            try:
                g_here = gap(lam)
            except ex.ExprError:
                break
            if g_here <= 0.0:
                lo, hi = (lam, lam_prev) if lam < lam_prev else (lam_prev, lam)
                for _ in range(200):
                    mid = 0.5 * (lo + hi)
                    if gap(mid) > 0.0:
                        if lam < lam_prev:
                            hi = mid
                        else:
                            lo = mid
                    else:
                        if lam < lam_prev:
                            lo = mid
                        else:
                            hi = mid
                return 0.5 * (lo + hi)
            lam_prev = lam
    raise DomainError(
        "no turning point V(lam) = c1 found near rbar; pass lam0 explicitly"
    )


def _radial_quadrature(
    potential: Expr, c1: float, lam0: float, rbar: float, t: float, tol: float
) -> float:
    """(1/sqrt(2)) * integral of (c1 - V)^(-1/2) from lam0 to rbar.

    When the lower limit is a simple turning point the substitution
    lam = lam0 +/- s^2 removes the inverse-square-root endpoint
    singularity; the s = 0 sample is the analytic limit 2/sqrt(|V'|).
    """
    if rbar == lam0:
        return 0.0
    direction = 1.0 if rbar > lam0 else -1.0
    gap0 = c1 - ex.evaluate(potential, {"rbar": lam0, "t": t})
    singular_end = abs(gap0) <= 1e-10 * max(1.0, abs(c1))
    if not singular_end:
        return (1.0 / math.sqrt(2.0)) * ex.quad_adaptive(
            lambda lam: 1.0
            / math.sqrt(c1 - ex.evaluate(potential, {"rbar": lam, "t": t})),
            lam0,
            rbar,
            tol,
        )
    dpot = ex.differentiate(potential, "rbar")
    slope = ex.evaluate(dpot, {"rbar": lam0, "t": t})
    # approaching the well from the turning point: c1 - V must grow
    if direction * slope >= 0.0:
        raise DomainError(
            f"turning point at lam0={lam0!r} is not integrable in the "
            f"direction of 1/r (V' = {slope!r})"
        )

    def transformed(sv: float) -> float:
        if sv == 0.0:
            return 2.0 / math.sqrt(abs(slope))
        lam = lam0 + direction * sv * sv
        gap = c1 - ex.evaluate(potential, {"rbar": lam, "t": t})
        if gap <= 0.0:
            # roundoff right next to the turning point
            gap = abs(slope) * sv * sv
        return 2.0 * sv / math.sqrt(gap)

    s_max = math.sqrt(abs(rbar - lam0))
    val = ex.quad_adaptive(transformed, 0.0, s_max, tol)
    return direction * val / math.sqrt(2.0)


def casimir_C2(
    potential: Expr,
    s: PhaseState,
    t: float = 0.0,
    c1: Optional[float] = None,
    lam0: Optional[float] = None,
    tol: float = 1e-10,
    floors: Floors = DEFAULT_FLOORS,
    record: bool = False,
):
    """Second Casimir of a pseudo-potential structure:

        C2 = theta - sigma * (1/sqrt(2)) * integral_{lam0}^{1/r}
                 (c1 - V(lam, t))^(-1/2) dlam,
        sigma = sign(-u/v).

    The lower limit defaults to the turning point V = c1, making C2
    continuous through it; there the quadrature vanishes and C2 = theta
    even though sigma is undefined.  For the singular oscillator
    V = 1/(2 lam^2) the closed form

        theta - sigma * (1/(2 c1)) * sqrt(2 c1 / r^2 - 1)

    is used instead of quadrature.
    """
    if c1 is None:
        c1 = casimir_C1(potential, s, t, floors)
    conventions = {
        "branch_sign": "sign(-u/v)",
        "lower_limit": "turning_point" if lam0 is None else lam0,
    }
    if is_singular_oscillator(potential):
        conventions["form"] = "closed"
        radicand = 2.0 * c1 / (s.r * s.r) - 1.0
        scale = max(1.0, abs(2.0 * c1 / (s.r * s.r)))
        if radicand < -1e-9 * scale:
            raise DomainError(f"negative radicand {radicand!r} in closed-form C2")
        radicand = max(radicand, 0.0)
        if s.u == 0.0:
            if radicand > 1e-9 * scale:
                raise BranchError(
                    "u = 0 away from the turning point: branch sign undefined"
                )
            value = s.theta
        else:
            sigma = math.copysign(1.0, -s.u / s.v)
            value = s.theta - sigma * math.sqrt(radicand) / (2.0 * c1)
        if record:
            return InvariantValue("C2", value, conventions)
        return value
    conventions["form"] = "quadrature"
    rbar = 1.0 / s.r
    if lam0 is None:
        lam0 = _turning_point(potential, c1, rbar, t)
    quad = _radial_quadrature(potential, c1, lam0, rbar, t, tol)
    if s.u == 0.0:
        if abs(quad) <= 1e-9:
            value = s.theta
        else:
            raise BranchError(
                "u = 0 away from the turning point: branch sign undefined"
            )
    else:
        sigma = math.copysign(1.0, -s.u / s.v)
        value = s.theta - sigma * quad
    if record:
        return InvariantValue("C2", value, conventions)
    return value


def h_of_theta(g: Expr, theta: float, invariant: float, tol: float = 1e-12) -> float:
    """h(theta, I) = sqrt(2 (I - Lambda(theta))); equals |v| on shell."""
    radicand = 2.0 * (invariant - forcing_integral(g, theta, tol))
    if radicand < 0.0:
        if radicand > -1e-12 * max(1.0, abs(invariant)):
            return 0.0
        raise DomainError(
            f"negative radicand {radicand!r}: theta={theta!r} is beyond the "
            f"turning angle for I={invariant!r}"
        )
    return math.sqrt(radicand)


def elapsed_time(
    orbit: Callable[[float], float],
    g: Expr,
    invariant: float,
    theta0: float,
    theta1: float,
    tol: float = 1e-10,
) -> float:
    """Time elapsed while theta sweeps [theta0, theta1] on a known orbit:

        t1 - t0 = integral r(lam)^2 / h(lam, I) dlam.

    A turning angle (h -> 0) inside the interval surfaces as a
    quadrature error."""

    def integrand(lam: float) -> float:
        r_val = orbit(lam)
        h_val = h_of_theta(g, lam, invariant)
        if h_val == 0.0:
            raise DomainError(f"h vanishes at theta={lam!r} (turning angle)")
        return r_val * r_val / h_val

    return ex.quad_adaptive(integrand, theta0, theta1, tol)


def spiral_radius(c1: float, c2: float, theta):
    """Radius of the singular-oscillator orbit:

        r^2 = 2 c1 / (1 + 4 c1^2 (theta - c2)^2).

    Accepts scalar or array theta."""
    if not (c1 > 0.0):
        raise ValueError(f"c1 must be positive, got {c1!r}")
    th = np.asarray(theta, dtype=float)
    rsq = 2.0 * c1 / (1.0 + 4.0 * c1 * c1 * (th - c2) ** 2)
    out = np.sqrt(rsq)
    if np.isscalar(theta) or out.ndim == 0:
        return float(out)
    return out
