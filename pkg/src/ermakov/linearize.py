"""The orbit-equation view: 1/r against the angle.

With rbar = 1/r as dependent variable and theta as the independent one,
the radial dynamics becomes the second-order orbit equation

    d^2 rbar / dtheta^2 = (abar / rbar^2) phi(-abar, 1/rbar, theta, t),
    abar = d rbar / dtheta = -u/v,

with t a mere parameter.  This module maps time trajectories onto that
curve, integrates the equation directly as the characteristic system
(d rbar/dtheta = abar, d abar/dtheta = the right side), and tests
whether the right side is affine in (abar, rbar), which is exactly when
the orbit equation is linear.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import expr as ex
from .integrate import Trajectory, hermite_eval, integrate_ode
from .systems import FuncHandle

__all__ = [
    "OrbitCurve",
    "AffinityResult",
    "to_orbit_curve",
    "integrate_characteristic",
    "integrate_linear",
    "orbit_match",
    "affinity_test",
]

_EVAL_ERRORS = (ValueError, ZeroDivisionError, OverflowError)


@dataclass(frozen=True)
class OrbitCurve:
    """Samples (theta, rbar, abar) of an orbit, theta strictly monotone.

    abar is d rbar / dtheta, so the (rbar, abar) columns are value and
    slope for Hermite interpolation.  dabar (slope of abar) is optional
    and enables Hermite sampling of abar as well.
    """

    theta: np.ndarray
    rbar: np.ndarray
    abar: np.ndarray
    dabar: Optional[np.ndarray] = None

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=float)
        if len(th) < 2:
            raise ValueError("an orbit curve needs at least two samples")
        steps = np.diff(th)
        if not (np.all(steps > 0.0) or np.all(steps < 0.0)):
            raise ValueError("theta must be strictly monotone along the curve")
        if np.any(np.asarray(self.rbar) <= 0.0):
            raise ValueError("rbar must stay positive along the curve")

    def __len__(self) -> int:
        return len(self.theta)

    @property
    def theta_range(self) -> Tuple[float, float]:
        lo = float(min(self.theta[0], self.theta[-1]))
        hi = float(max(self.theta[0], self.theta[-1]))
        return lo, hi

    def _ordered(self):
        if self.theta[0] < self.theta[-1]:
            return self.theta, self.rbar, self.abar, self.dabar
        rev = slice(None, None, -1)
        dab = None if self.dabar is None else self.dabar[rev]
        return self.theta[rev], self.rbar[rev], self.abar[rev], dab

    def rbar_at(self, theta):
        """rbar interpolated at theta (scalar or array), cubic Hermite."""
        th, rb, ab, _ = self._ordered()
        out = hermite_eval(th, rb[:, None], ab[:, None], theta)
        return float(out[0]) if np.ndim(theta) == 0 else out[:, 0]

    def abar_at(self, theta):
        """abar interpolated at theta; Hermite when dabar is known."""
        th, rb, ab, dab = self._ordered()
        if dab is None:
            out = np.interp(np.asarray(theta, dtype=float), th, ab)
            return float(out) if np.ndim(theta) == 0 else out
        out = hermite_eval(th, ab[:, None], dab[:, None], theta)
        return float(out[0]) if np.ndim(theta) == 0 else out[:, 0]


def to_orbit_curve(traj: Trajectory) -> OrbitCurve:
    """Pointwise map of a time trajectory: (r, theta, u, v) ->
    (theta, 1/r, -u/v).

    Requires v of one sign along the trajectory (theta monotone);
    curvature slopes come from the stored flow by the chain rule."""
    vs = traj.ys[:, 3]
    if not (np.all(vs > 0.0) or np.all(vs < 0.0)):
        i = int(np.argmax(vs[:-1] * vs[1:] <= 0.0))
        raise ValueError(
            f"v changes sign between samples {i} and {i + 1} "
            f"(t={traj.ts[i]!r}..{traj.ts[i + 1]!r}); theta is not monotone"
        )
    rs = traj.ys[:, 0]
    us = traj.ys[:, 2]
    udots = traj.fs[:, 2]
    vdots = traj.fs[:, 3]
    # d abar/dtheta = -(udot v - u vdot) / v^2 / thetadot, thetadot = v/r^2
    dabar = -(udots * vs - us * vdots) * rs * rs / vs**3
    return OrbitCurve(
        theta=traj.ys[:, 1].copy(),
        rbar=1.0 / rs,
        abar=-us / vs,
        dabar=dabar,
    )


def _curvature_fn(phi: FuncHandle, t_param: float):
    """Right side of d abar/dtheta, with two refinements.

    For a potential-induced phi the product (abar/rbar^2) phi reduces
    exactly to -dV/drbar, which stays finite at abar = 0.  For a generic
    phi whose evaluation fails at abar = 0 the limit is probed
    symmetrically at +-eps; off zero, failures propagate."""
    dpot = getattr(phi, "dpotential", None)
    if dpot is not None:

        def reduced(theta: float, rbar: float, abar: float) -> float:
            return -ex.evaluate(dpot, {"rbar": rbar, "t": t_param})

        return reduced

    def raw(theta: float, rbar: float, abar: float) -> float:
        return (abar / (rbar * rbar)) * phi(-abar, 1.0 / rbar, theta, t_param)

    def curvature(theta: float, rbar: float, abar: float) -> float:
        try:
            return raw(theta, rbar, abar)
        except _EVAL_ERRORS:
            if abar != 0.0:
                raise
            eps = 1e-7
            return 0.5 * (raw(theta, rbar, eps) + raw(theta, rbar, -eps))

    return curvature


def integrate_characteristic(
    phi: FuncHandle,
    rbar0: float,
    abar0: float,
    theta0: float,
    theta1: float,
    t_param: float = 0.0,
    method: str = "dp45",
    rtol: float = 1e-10,
    atol: float = 1e-12,
    max_steps: int = 200000,
) -> OrbitCurve:
    """Integrate the characteristic system in the angle:

        d rbar / dtheta = abar,
        d abar / dtheta = (abar / rbar^2) phi(-abar, 1/rbar, theta, t).

    t is frozen at t_param.  theta may run in either direction; the
    curve keeps the direction of integration."""
    if not rbar0 > 0.0:
        raise ValueError(f"rbar0={rbar0!r} must be positive")
    if theta1 == theta0:
        raise ValueError("theta1 must differ from theta0")
    curvature = _curvature_fn(phi, t_param)
    forward = theta1 > theta0
    sign = 1.0 if forward else -1.0

    def rhs(tau: float, y: np.ndarray) -> np.ndarray:
        rbar, abar = y
        if rbar <= 0.0:
            raise ValueError(f"rbar={rbar!r} left the positive domain")
        theta = theta0 + sign * tau
        return sign * np.array([abar, curvature(theta, rbar, abar)])

    def check(tau: float, y: np.ndarray) -> Optional[str]:
        if y[0] <= 0.0:
            return f"rbar={y[0]!r} not positive at theta={theta0 + sign * tau!r}"
        return None

    traj = integrate_ode(
        rhs,
        np.array([rbar0, abar0]),
        0.0,
        abs(theta1 - theta0),
        method=method,
        rtol=rtol,
        atol=atol,
        max_steps=max_steps,
        accept_check=check,
    )
    thetas = theta0 + sign * traj.ts
    return OrbitCurve(
        theta=thetas,
        rbar=traj.ys[:, 0].copy(),
        abar=traj.ys[:, 1].copy(),
        dabar=sign * traj.fs[:, 1],
    )


def integrate_linear(
    coeff_a: float,
    coeff_b: float,
    coeff_c: float,
    rbar0: float,
    abar0: float,
    theta0: float,
    theta1: float,
    rtol: float = 1e-10,
    atol: float = 1e-12,
) -> OrbitCurve:
    """Integrate the affine orbit equation
    rbar'' = A rbar' + B rbar + C with constant coefficients."""
    if not theta1 > theta0:
        raise ValueError("theta1 must exceed theta0 for the linear reference")

    def rhs(tau: float, y: np.ndarray) -> np.ndarray:
        rbar, abar = y
        return np.array([abar, coeff_a * abar + coeff_b * rbar + coeff_c])

    traj = integrate_ode(
        rhs,
        np.array([rbar0, abar0]),
        theta0,
        theta1,
        rtol=rtol,
        atol=atol,
    )
    return OrbitCurve(
        theta=traj.ts.copy(),
        rbar=traj.ys[:, 0].copy(),
        abar=traj.ys[:, 1].copy(),
        dabar=traj.fs[:, 1].copy(),
    )


def orbit_match(traj, curve: OrbitCurve, n_grid: int = 400) -> float:
    """Max |rbar| discrepancy between a trajectory (or curve) and a
    reference curve over a uniform grid on their common theta range.

    Both sides are Hermite-interpolated, so the result is meaningful
    between nodes as well."""
    first = to_orbit_curve(traj) if isinstance(traj, Trajectory) else traj
    lo1, hi1 = first.theta_range
    lo2, hi2 = curve.theta_range
    lo, hi = max(lo1, lo2), min(hi1, hi2)
    if not lo < hi:
        raise ValueError(
            f"theta ranges [{lo1!r}, {hi1!r}] and [{lo2!r}, {hi2!r}] "
            f"do not overlap"
        )
    grid = np.linspace(lo, hi, n_grid)
    delta = first.rbar_at(grid) - curve.rbar_at(grid)
    return float(np.max(np.abs(delta)))


@dataclass(frozen=True)
class AffinityResult:
    """Least-squares verdict on whether the orbit equation is linear at
    one angle: right side ~ A abar + B rbar + C."""

    affine: bool
    A: float
    B: float
    C: float
    residual: float


def affinity_test(
    phi: FuncHandle,
    theta: float,
    t: float,
    rbar_range: Tuple[float, float],
    abar_range: Tuple[float, float],
    n: int = 8,
    threshold: float = 1e-8,
) -> AffinityResult:
    """Fit (abar/rbar^2) phi(-abar, 1/rbar, theta, t) to an affine model
    over an n-by-n grid and report the normalized max residual.

    affine = residual < threshold.  Singular phi evaluations on the grid
    propagate; choose ranges that avoid the singular set."""
    if n < 6:
        raise ValueError(f"need at least a 6x6 grid, got n={n!r}")
    rb_lo, rb_hi = rbar_range
    ab_lo, ab_hi = abar_range
    if not (0.0 < rb_lo < rb_hi):
        raise ValueError(f"rbar_range {rbar_range!r} must be positive and ordered")
    if not ab_lo < ab_hi:
        raise ValueError(f"abar_range {abar_range!r} must be ordered")
    curvature = _curvature_fn(phi, t)
    rbs = np.linspace(rb_lo, rb_hi, n)
    abs_ = np.linspace(ab_lo, ab_hi, n)
    rows = []
    lhs = []
    for rb in rbs:
        for ab in abs_:
            lhs.append(curvature(theta, rb, ab))
            rows.append((ab, rb, 1.0))
    design = np.array(rows)
    target = np.array(lhs)
    coeffs, *_ = np.linalg.lstsq(design, target, rcond=None)
    fitted = design @ coeffs
    scale = max(1.0, float(np.max(np.abs(target))))
    residual = float(np.max(np.abs(target - fitted))) / scale
    a_fit, b_fit, c_fit = (float(c) for c in coeffs)
    return AffinityResult(
        affine=residual < threshold,
        A=a_fit,
        B=b_fit,
        C=c_fit,
        residual=residual,
    )
