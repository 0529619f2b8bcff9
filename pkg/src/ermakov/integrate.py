"""Time integration of the polar flows.

Two steppers: classical fixed-step RK4 and the Dormand-Prince embedded
4(5) pair with standard PI step-size control.  Node derivatives are kept
so trajectories support cubic Hermite dense output.

Singularities follow a stop-and-report policy.  Stage evaluations run
against floors relaxed by half; a failing stage halves the step until it
underflows.  Accepted states are checked against the configured floors.
Either way the trajectory ends at the last good state with status
"singular_stop" and a reason, rather than raising.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Optional

import numpy as np

from .systems import (
    DEFAULT_FLOORS,
    Floors,
    PhaseState,
    SystemSpec,
    vector_field,
)

__all__ = [
    "IntegrationError",
    "Trajectory",
    "QuantityDrift",
    "DriftReport",
    "hermite_eval",
    "integrate_ode",
    "integrate",
    "drift",
]


class IntegrationError(RuntimeError):
    """Step budget exhausted or a sample fell outside the trajectory."""


# Exceptions that mark a failed stage evaluation rather than a bug:
# state validation, floor checks, math domain errors, quadrature blowup.
_STAGE_ERRORS = (ValueError, ZeroDivisionError, OverflowError, FloatingPointError)


def hermite_eval(ts: np.ndarray, ys: np.ndarray, fs: np.ndarray, t):
    """Piecewise cubic Hermite interpolation.

    Args:
        ts: strictly increasing sample times, shape (n,).
        ys: sample values, shape (n, d).
        fs: derivatives at the samples, shape (n, d).
        t: scalar or array of query times inside [ts[0], ts[-1]].

    Returns:
        Array of shape (d,) for scalar t, else (len(t), d).
    """
    ts = np.asarray(ts, dtype=float)
    ys = np.asarray(ys, dtype=float)
    fs = np.asarray(fs, dtype=float)
    scalar = np.ndim(t) == 0
    tq = np.atleast_1d(np.asarray(t, dtype=float))
    lo, hi = ts[0], ts[-1]
    slack = 1e-12 * max(1.0, abs(lo), abs(hi))
    if np.any(tq < lo - slack) or np.any(tq > hi + slack):
        raise IntegrationError(
            f"sample time outside [{lo!r}, {hi!r}]"
        )
    tq = np.clip(tq, lo, hi)
    idx = np.searchsorted(ts, tq, side="right") - 1
    idx = np.clip(idx, 0, len(ts) - 2)
    h = ts[idx + 1] - ts[idx]
    s = (tq - ts[idx]) / h
    s2 = s * s
    s3 = s2 * s
    h00 = 2.0 * s3 - 3.0 * s2 + 1.0
    h10 = s3 - 2.0 * s2 + s
    h01 = -2.0 * s3 + 3.0 * s2
    h11 = s3 - s2
    hcol = h[:, None]
    out = (
        h00[:, None] * ys[idx]
        + h10[:, None] * hcol * fs[idx]
        + h01[:, None] * ys[idx + 1]
        + h11[:, None] * hcol * fs[idx + 1]
    )
    return out[0] if scalar else out


@dataclass(frozen=True)
class Trajectory:
    """Ordered integration output with enough data for dense sampling.

    ts are strictly increasing; ys holds one state per row and fs the
    vector field there.  status is "completed" when t1 was reached and
    "singular_stop" when integration stopped early at the last good
    state (stop_reason says why).
    """

    ts: np.ndarray
    ys: np.ndarray
    fs: np.ndarray
    method: str
    rtol: float
    atol: float
    status: str
    stop_reason: Optional[str]
    stats: Mapping[str, int]

    def __len__(self) -> int:
        return len(self.ts)

    def state(self, i: int) -> PhaseState:
        if self.ys.shape[1] != 4:
            raise ValueError("not a phase-space trajectory")
        r, theta, u, v = self.ys[i]
        return PhaseState(r=r, theta=theta, u=u, v=v)

    def states(self):
        return [self.state(i) for i in range(len(self.ts))]

    @property
    def final_state(self) -> PhaseState:
        return self.state(len(self.ts) - 1)

    def sample(self, t):
        """Dense output at time(s) t via cubic Hermite interpolation."""
        return hermite_eval(self.ts, self.ys, self.fs, t)


# Dormand-Prince 4(5) tableau; the last row of A doubles as the 5th
# order weights (FSAL), _E is b - bhat for the embedded error estimate.
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_E = np.array(
    [
        71 / 57600,
        0.0,
        -71 / 16695,
        71 / 1920,
        -17253 / 339200,
        22 / 525,
        -1 / 40,
    ]
)


def _dp_step(f, t, y, h, k1):
    """One Dormand-Prince attempt.  Returns (y_new, f_new, err_vec)."""
    k = [k1]
    for i in range(1, 7):
        yi = y + h * sum(a * kk for a, kk in zip(_DP_A[i], k))
        k.append(np.asarray(f(t + _DP_C[i] * h, yi), dtype=float))
    y_new = y + h * sum(a * kk for a, kk in zip(_DP_A[6], k))
    # A[6] are the 5th order weights, so y_new is already the k[6] input
    err = h * sum(e * kk for e, kk in zip(_DP_E, k))
    return y_new, k[6], err


def _rk4_step(f, t, y, h, k1):
    """One classical RK4 step.  Returns y_new."""
    k2 = np.asarray(f(t + 0.5 * h, y + 0.5 * h * k1), dtype=float)
    k3 = np.asarray(f(t + 0.5 * h, y + 0.5 * h * k2), dtype=float)
    k4 = np.asarray(f(t + h, y + h * k3), dtype=float)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _initial_step(f, t0, y0, f0, t1, rtol, atol):
    """Hairer-style starting step size guess."""
    sc = atol + rtol * np.abs(y0)
    d0 = math.sqrt(float(np.mean((y0 / sc) ** 2)))
    d1 = math.sqrt(float(np.mean((f0 / sc) ** 2)))
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, t1 - t0)
    try:
        f1 = np.asarray(f(t0 + h0, y0 + h0 * f0), dtype=float)
        d2 = math.sqrt(float(np.mean(((f1 - f0) / sc) ** 2))) / h0
    except _STAGE_ERRORS:
        return h0 * 1e-2
    dmax = max(d1, d2)
    if dmax <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / dmax) ** 0.2
    return min(100.0 * h0, h1, t1 - t0)


def integrate_ode(
    f: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    t0: float,
    t1: float,
    method: str = "dp45",
    rtol: float = 1e-10,
    atol: float = 1e-12,
    dt: Optional[float] = None,
    first_step: Optional[float] = None,
    max_step: Optional[float] = None,
    max_steps: int = 200000,
    accept_check: Optional[Callable[[float, np.ndarray], Optional[str]]] = None,
) -> Trajectory:
    """Integrate dy/dt = f(t, y) from t0 to t1.

    f may raise (state validation, floors, math domain) to signal that a
    stage left the admissible region; the step is then halved until it
    underflows, at which point integration stops with "singular_stop".
    accept_check inspects each accepted (t, y) and returns a stop reason
    or None.

    Args:
        method: "rk4" (fixed step dt, default span/1000) or "dp45".
        max_steps: budget on accepted plus rejected steps; exceeding it
            raises IntegrationError.
    """
    if not t1 > t0:
        raise ValueError(f"t1={t1!r} must exceed t0={t0!r}")
    if method not in ("rk4", "dp45"):
        raise ValueError(f"unknown method {method!r}")
    y = np.asarray(y0, dtype=float).copy()
    t = t0
    f_cur = np.asarray(f(t0, y), dtype=float)  # s0 admissible is a precondition
    ts = [t0]
    ys = [y.copy()]
    fs = [f_cur.copy()]
    span = t1 - t0
    if method == "rk4":
        h = dt if dt is not None else span / 1000.0
    else:
        h = first_step if first_step is not None else _initial_step(
            f, t0, y, f_cur, t1, rtol, atol
        )
    if max_step is not None:
        h = min(h, max_step)
    if not h > 0.0:
        raise ValueError(f"step size {h!r} must be positive")

    status = "completed"
    stop_reason: Optional[str] = None
    n_accepted = n_rejected = n_failed = 0
    n_feval = 1
    err_old = 1.0

    while t < t1 - 1e-14 * max(1.0, abs(t1)):
        if n_accepted + n_rejected + n_failed >= max_steps:
            raise IntegrationError(
                f"step budget {max_steps} exhausted at t={t!r}"
            )
        h_try = min(h, t1 - t)
        h_floor = 1e-14 * max(1.0, abs(t))
        if h_try <= h_floor:
            status = "singular_stop"
            stop_reason = f"step size underflow at t={t!r}"
            break
        try:
            if method == "rk4":
                y_new = _rk4_step(f, t, y, h_try, f_cur)
                n_feval += 3
                f_new = np.asarray(f(t + h_try, y_new), dtype=float)
                n_feval += 1
                err_norm = 0.0
            else:
                y_new, f_new, err_vec = _dp_step(f, t, y, h_try, f_cur)
                n_feval += 6
                sc = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
                err_norm = math.sqrt(float(np.mean((err_vec / sc) ** 2)))
            if not (np.all(np.isfinite(y_new)) and np.all(np.isfinite(f_new))):
                raise FloatingPointError("non-finite stage result")
        except _STAGE_ERRORS as exc:
            n_failed += 1
            last_failure = str(exc) or type(exc).__name__
            if h_try <= 2.0 * h_floor:
                status = "singular_stop"
                stop_reason = (
                    f"step size underflow at t={t!r} "
                    f"while avoiding: {last_failure}"
                )
                break
            h = 0.5 * h_try
            continue

        if method == "dp45" and err_norm > 1.0:
            n_rejected += 1
            h = h_try * min(1.0, max(0.2, 0.9 * err_norm**-0.2))
            continue

        t = t + h_try
        y = y_new
        f_cur = f_new
        ts.append(t)
        ys.append(y.copy())
        fs.append(f_cur.copy())
        n_accepted += 1
        if method == "dp45":
            scaled = max(err_norm, 1e-10)
            factor = 0.9 * scaled**-0.14 * err_old**0.08
            h = h_try * min(5.0, max(0.2, factor))
            if max_step is not None:
                h = min(h, max_step)
            err_old = scaled
        if accept_check is not None:
            reason = accept_check(t, y)
            if reason is not None:
                status = "singular_stop"
                stop_reason = reason
                break

    return Trajectory(
        ts=np.array(ts),
        ys=np.array(ys),
        fs=np.array(fs),
        method=method,
        rtol=rtol,
        atol=atol,
        status=status,
        stop_reason=stop_reason,
        stats={
            "n_accepted": n_accepted,
            "n_rejected": n_rejected,
            "n_stage_failures": n_failed,
            "n_feval": n_feval,
        },
    )


def integrate(
    spec: SystemSpec,
    s0: PhaseState,
    t0: float,
    t1: float,
    method: str = "dp45",
    rtol: float = 1e-10,
    atol: float = 1e-12,
    dt: Optional[float] = None,
    first_step: Optional[float] = None,
    max_step: Optional[float] = None,
    max_steps: int = 200000,
    floors: Floors = DEFAULT_FLOORS,
) -> Trajectory:
    """Integrate the first-order flow of a system from state s0.

    Stage evaluations use floors relaxed by half so a step may probe
    slightly past the configured limits; accepted states are checked
    against the configured floors and trigger a "singular_stop".
    """
    stage_floors = floors.relaxed(0.5)

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        s = PhaseState(r=y[0], theta=y[1], u=y[2], v=y[3])
        return vector_field(spec, s, t, stage_floors).as_array()

    def check(t: float, y: np.ndarray) -> Optional[str]:
        if y[0] < floors.r_min:
            return (
                f"r={float(y[0])!r} below floor r_min={floors.r_min!r} "
                f"at t={t!r}"
            )
        if abs(y[3]) <= floors.v_min:
            return (
                f"|v|={float(abs(y[3]))!r} at or below floor "
                f"v_min={floors.v_min!r} at t={t!r}"
            )
        return None

    return integrate_ode(
        rhs,
        s0.as_array(),
        t0,
        t1,
        method=method,
        rtol=rtol,
        atol=atol,
        dt=dt,
        first_step=first_step,
        max_step=max_step,
        max_steps=max_steps,
        accept_check=check,
    )


@dataclass(frozen=True)
class QuantityDrift:
    name: str
    initial: float
    drift: float
    t_at_max: float


@dataclass(frozen=True)
class DriftReport:
    """Per-quantity relative drift along a trajectory."""

    entries: tuple

    def __getitem__(self, name: str) -> QuantityDrift:
        for entry in self.entries:
            if entry.name == name:
                return entry
        raise KeyError(name)

    @property
    def max_drift(self) -> float:
        return max(entry.drift for entry in self.entries)

    def as_dict(self) -> dict:
        return {
            entry.name: {
                "initial": entry.initial,
                "drift": entry.drift,
                "t_at_max": entry.t_at_max,
            }
            for entry in self.entries
        }


def drift(
    traj: Trajectory,
    quantities: Mapping[str, Callable[[PhaseState, float], float]],
) -> DriftReport:
    """Maximum relative drift of each quantity over the trajectory nodes.

    Drift is max over samples of |Q(t) - Q(t0)| / max(1, |Q(t0)|).  A
    quantity that fails to evaluate names the offending sample index.
    """
    entries = []
    states = traj.states()
    for name, func in quantities.items():
        values = []
        for i, (s, t) in enumerate(zip(states, traj.ts)):
            try:
                values.append(float(func(s, float(t))))
            except Exception as exc:
                raise ValueError(
                    f"quantity {name!r} failed at sample {i} "
                    f"(t={float(t)!r}): {exc}"
                ) from exc
        q0 = values[0]
        scale = max(1.0, abs(q0))
        deviations = [abs(q - q0) / scale for q in values]
        worst = int(np.argmax(deviations))
        entries.append(
            QuantityDrift(
                name=name,
                initial=q0,
                drift=deviations[worst],
                t_at_max=float(traj.ts[worst]),
            )
        )
    return DriftReport(entries=tuple(entries))
