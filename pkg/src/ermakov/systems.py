"""Ermakov systems in polar phase-space coordinates.

State is (r, theta, u, v) with u = dr/dt and v = r^2 dtheta/dt.  A system
is an angular forcing G(theta), an optional frequency-shift term F(theta),
and one coupling function that selects the structure class:

* ``class1``   -- phi(alpha, r, theta, t) free, with alpha = u/v,
* ``class2``   -- psi(alpha, r, theta, t) free, phi constructed from it,
* ``pseudo_potential`` -- phi induced by a potential V(rbar, t), rbar = 1/r.

The first-order flow shared by all classes:

    dr/dt     = u
    dtheta/dt = v / r^2
    dv/dt     = -G(theta) / r^2

and du/dt carries the class-dependent coupling.  The natural frequency
omega^2 is never an input here; it is derived from a state and the
coupling (``frequency_squared``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import expr as ex
from .expr import Binary, Expr, Num, Unary, Var

__all__ = [
    "Floors",
    "DEFAULT_FLOORS",
    "SingularStateError",
    "PhaseState",
    "Flow4",
    "FuncHandle",
    "Class2Phi",
    "SystemSpec",
    "vector_field",
    "frequency_squared",
    "build_phi_from_potential",
    "polar_from_cartesian",
]


class SingularStateError(ValueError):
    """A state violated one of the configured domain floors."""


@dataclass(frozen=True)
class Floors:
    """Domain floors below which the formulation is treated as singular.

    These are configuration, not constants: long-run benchmarks raise
    them so trajectories stop while the arithmetic is still clean.
    """

    r_min: float = 1e-9
    u_min: float = 1e-12
    v_min: float = 1e-12
    psi_min: float = 1e-12

    def relaxed(self, factor: float = 0.5) -> "Floors":
        """Floors scaled down, used for stage evaluations inside integrators
        so that a run can land an accepted state just below the configured
        floor before stopping."""
        return Floors(
            self.r_min * factor, self.u_min * factor, self.v_min * factor, self.psi_min
        )


DEFAULT_FLOORS = Floors()


@dataclass(frozen=True)
class PhaseState:
    """One point (r, theta, u, v) of the polar phase space; r must be positive."""

    r: float
    theta: float
    u: float
    v: float

    def __post_init__(self):
        if not (self.r > 0.0):
            raise ValueError(f"r must be positive, got {self.r!r}")

    def alpha(self, v_min: float = DEFAULT_FLOORS.v_min) -> float:
        """The ratio u/v; undefined when |v| sits below the v_min floor."""
        if abs(self.v) <= v_min:
            raise SingularStateError(
                f"alpha undefined: |v|={abs(self.v)!r} at or below floor v_min={v_min!r}"
            )
        return self.u / self.v

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.theta, self.u, self.v], dtype=float)


@dataclass(frozen=True)
class Flow4:
    """Right-hand side of the first-order system at one state."""

    rdot: float
    thetadot: float
    udot: float
    vdot: float

    def as_array(self) -> np.ndarray:
        return np.array([self.rdot, self.thetadot, self.udot, self.vdot], dtype=float)


_HANDLE_VARS = ("alpha", "r", "theta", "t")


class FuncHandle:
    """A scalar coupling function of (alpha, r, theta, t).

    Usually wraps an expression tree, in which case symbolic partial
    derivatives are available; plain callables are accepted too (partials
    then fall back to differencing at the call sites that need them).
    """

    def __init__(
        self,
        fn: Optional[Callable[[float, float, float, float], float]] = None,
        tree: Optional[Expr] = None,
        name: str = "",
        potential: Optional[Expr] = None,
        dpotential: Optional[Expr] = None,
    ):
        if fn is None and tree is None:
            raise ValueError("FuncHandle needs a callable or an expression tree")
        if tree is not None:
            bad = sorted(ex.free_vars(tree) - set(_HANDLE_VARS))
            if bad:
                raise ValueError(
                    f"expression uses variables {bad} outside {_HANDLE_VARS}"
                )
        self._fn = fn
        self.tree = tree
        self.name = name or (ex.to_text(tree) if tree is not None else "<callable>")
        # set when the handle was induced by a potential V(rbar, t)
        self.potential = potential
        self.dpotential = dpotential

    @classmethod
    def from_expr(cls, tree: Expr, name: str = "") -> "FuncHandle":
        return cls(tree=tree, name=name)

    @classmethod
    def from_text(cls, text: str) -> "FuncHandle":
        return cls(tree=ex.parse(text), name=text)

    def __call__(self, alpha: float, r: float, theta: float, t: float = 0.0) -> float:
        if self.tree is not None:
            return ex.evaluate(
                self.tree, {"alpha": alpha, "r": r, "theta": theta, "t": t}
            )
        return float(self._fn(alpha, r, theta, t))

    def depends_on(self, var: str) -> bool:
        """Whether the handle can vary with ``var``.  Conservative for plain
        callables (assumes yes)."""
        if self.tree is not None:
            return var in ex.free_vars(self.tree)
        return True

    def partial(self, var: str) -> Optional["FuncHandle"]:
        """Symbolic partial derivative, or None when only a callable is held."""
        if self.tree is None:
            return None
        return FuncHandle(
            tree=ex.differentiate(self.tree, var), name=f"d({self.name})/d{var}"
        )

    def __repr__(self):
        return f"FuncHandle({self.name})"


ZERO_HANDLE = FuncHandle(tree=Num(0.0), name="0")


class Class2Phi:
    """phi constructed from a class-2 coupling psi.

    phi(alpha, r, theta, t) =
        ( integral_{lam0}^{alpha} dlam / psi(lam)^2 *
            [ d(psi)/dr + d(psi)/dtheta / (r^2 lam) - (2/r) psi(lam) ]
          + chi(r, theta, t) ) * psi(alpha)

    with psi arguments (lam, r, theta, t).  The 1/lam term is present only
    when psi actually depends on theta; in that case the integration path
    must not touch lam = 0.  The derivative with respect to alpha is exact
    (fundamental theorem of calculus), which matters for consistency-
    condition checks: differencing the quadrature would cost five to six
    digits.
    """

    def __init__(
        self,
        psi: FuncHandle,
        chi: Optional[Expr] = None,
        lam0: float = 0.0,
        tol: float = 1e-12,
        psi_min: float = DEFAULT_FLOORS.psi_min,
    ):
        if chi is not None:
            bad = sorted(ex.free_vars(chi) - {"r", "theta", "t"})
            if bad:
                raise ValueError(f"chi uses variables {bad} outside (r, theta, t)")
        self.psi = psi
        self.chi = chi
        self.lam0 = float(lam0)
        self.tol = float(tol)
        self.psi_min = float(psi_min)
        self._psi_r = psi.partial("r")
        self._psi_theta = psi.partial("theta")
        self._theta_dependent = psi.depends_on("theta")

    def _psi_at(self, lam: float, r: float, theta: float, t: float) -> float:
        w = self.psi(lam, r, theta, t)
        if abs(w) <= self.psi_min:
            raise SingularStateError(
                f"|psi|={abs(w)!r} at or below floor psi_min={self.psi_min!r} "
                f"(lambda={lam!r})"
            )
        return w

    def _partial_num(self, which: str, lam, r, theta, t, h=1e-6) -> float:
        args = {"alpha": lam, "r": r, "theta": theta, "t": t}
        hi = dict(args)
        lo = dict(args)
        hi[which] += h
        lo[which] -= h
        f = lambda a: self.psi(a["alpha"], a["r"], a["theta"], a["t"])
        return (f(hi) - f(lo)) / (2.0 * h)

    def integrand(self, lam: float, r: float, theta: float, t: float) -> float:
        w = self._psi_at(lam, r, theta, t)
        if self._psi_r is not None:
            dr = self._psi_r(lam, r, theta, t)
        else:
            dr = self._partial_num("r", lam, r, theta, t)
        val = dr - (2.0 / r) * w
        if self._theta_dependent:
            if lam == 0.0:
                raise SingularStateError(
                    "class-2 phi integrand has a 1/lambda term and the path "
                    "touches lambda=0"
                )
            if self._psi_theta is not None:
                dth = self._psi_theta(lam, r, theta, t)
            else:
                dth = self._partial_num("theta", lam, r, theta, t)
            val += dth / (r * r * lam)
        return val / (w * w)

    def _check_path(self, alpha: float):
        if self._theta_dependent:
            lo, hi = min(self.lam0, alpha), max(self.lam0, alpha)
            if lo <= 0.0 <= hi:
                raise SingularStateError(
                    f"class-2 phi integration path [{lo!r}, {hi!r}] crosses "
                    f"lambda=0 while psi depends on theta"
                )

    def __call__(self, alpha: float, r: float, theta: float, t: float = 0.0) -> float:
        self._check_path(alpha)
        k = ex.quad_adaptive(
            lambda lam: self.integrand(lam, r, theta, t), self.lam0, alpha, self.tol
        )
        if self.chi is not None:
            k += ex.evaluate(self.chi, {"r": r, "theta": theta, "t": t})
        return k * self._psi_at(alpha, r, theta, t)

    def partial_alpha(self, alpha: float, r: float, theta: float, t: float = 0.0) -> float:
        """Exact d(phi)/d(alpha) via the fundamental theorem."""
        w = self._psi_at(alpha, r, theta, t)
        pa = self.psi.partial("alpha")
        if pa is not None:
            dpsi = pa(alpha, r, theta, t)
        else:
            dpsi = self._partial_num("alpha", alpha, r, theta, t)
        return self.integrand(alpha, r, theta, t) * w + self(alpha, r, theta, t) * dpsi / w


_CLASSES = ("class1", "class2", "pseudo_potential")


@dataclass(frozen=True)
class SystemSpec:
    """Declarative description of an Ermakov system.

    Build through the classmethods; ``g`` and optional ``f`` are
    expressions in theta only.
    """

    kind: str
    g: Expr
    f: Optional[Expr] = None
    phi: Optional[FuncHandle] = None
    psi: Optional[FuncHandle] = None
    chi: Optional[Expr] = None
    potential: Optional[Expr] = None
    dpotential: Optional[Expr] = field(default=None, repr=False)
    lam0: float = 0.0
    quad_tol: float = 1e-12

    def __post_init__(self):
        if self.kind not in _CLASSES:
            raise ValueError(f"unknown system class {self.kind!r}")
        for name, tree in (("G", self.g), ("F", self.f)):
            if tree is not None:
                bad = sorted(ex.free_vars(tree) - {"theta"})
                if bad:
                    raise ValueError(f"{name} uses variables {bad}, only theta is allowed")

    @classmethod
    def class1(cls, g: Expr, phi: FuncHandle, f: Optional[Expr] = None) -> "SystemSpec":
        return cls(kind="class1", g=g, f=f, phi=phi)

    @classmethod
    def class2(
        cls,
        g: Expr,
        psi: FuncHandle,
        chi: Optional[Expr] = None,
        f: Optional[Expr] = None,
        lam0: float = 0.0,
        quad_tol: float = 1e-12,
    ) -> "SystemSpec":
        return cls(
            kind="class2", g=g, f=f, psi=psi, chi=chi, lam0=lam0, quad_tol=quad_tol
        )

    @classmethod
    def pseudo_potential(
        cls, g: Expr, potential: Expr, f: Optional[Expr] = None
    ) -> "SystemSpec":
        bad = sorted(ex.free_vars(potential) - {"rbar", "t"})
        if bad:
            raise ValueError(
                f"potential uses variables {bad}, only (rbar, t) are allowed"
            )
        phi = build_phi_from_potential(potential)
        return cls(
            kind="pseudo_potential",
            g=g,
            f=f,
            phi=phi,
            potential=potential,
            dpotential=phi.dpotential,
        )

    def class2_phi(self, floors: Floors = DEFAULT_FLOORS) -> Class2Phi:
        if self.kind != "class2":
            raise ValueError("class2_phi is only defined for class-2 systems")
        return Class2Phi(
            self.psi, self.chi, lam0=self.lam0, tol=self.quad_tol, psi_min=floors.psi_min
        )

    def as_class1(self) -> "SystemSpec":
        """Lower a pseudo-potential system to an explicit class-1 system."""
        if self.kind != "pseudo_potential":
            raise ValueError("as_class1 applies to pseudo_potential systems")
        return SystemSpec.class1(g=self.g, phi=self.phi, f=self.f)

    def g_at(self, theta: float) -> float:
        return ex.evaluate(self.g, {"theta": theta})

    def f_at(self, theta: float) -> float:
        if self.f is None:
            return 0.0
        return ex.evaluate(self.f, {"theta": theta})

    def dpotential_at(self, rbar: float, t: float) -> float:
        return ex.evaluate(self.dpotential, {"rbar": rbar, "t": t})


def build_phi_from_potential(potential: Expr) -> FuncHandle:
    """Coupling induced by a potential V(rbar, t) with rbar = 1/r.

    phi(alpha, r, theta, t) = (dV/drbar)(1/r, t) / (r^2 * alpha).  The
    returned handle keeps V and dV/drbar around so flow evaluations can
    use the algebraically reduced product u*v*phi = (v^2/r^2) * dV/drbar,
    which has no 0/0 at u = 0.
    """
    dpot = ex.differentiate(potential, "rbar")
    inv_r = Binary("/", Num(1.0), Var("r"))
    numerator = ex.substitute(dpot, "rbar", inv_r)
    tree = Binary(
        "/",
        numerator,
        Binary("*", Binary("^", Var("r"), Num(2.0)), Var("alpha")),
    )
    return FuncHandle(
        tree=tree,
        name=f"phi[V={ex.to_text(potential)}]",
        potential=potential,
        dpotential=dpot,
    )


def _check_floors(s: PhaseState, floors: Floors):
    if s.r < floors.r_min:
        raise SingularStateError(
            f"r={s.r!r} below floor r_min={floors.r_min!r}"
        )
    if abs(s.v) <= floors.v_min:
        raise SingularStateError(
            f"|v|={abs(s.v)!r} at or below floor v_min={floors.v_min!r}"
        )


def _coupling_udot(
    spec: SystemSpec, s: PhaseState, t: float, floors: Floors
) -> float:
    """The coupling part of du/dt (everything except the -u G/(r^2 v) term)."""
    r, u, v = s.r, s.u, s.v
    if spec.kind == "pseudo_potential":
        # reduced product, finite at u = 0
        return (v * v) / (r * r) * spec.dpotential_at(1.0 / r, t)
    alpha = u / v
    if spec.kind == "class1":
        return u * v * spec.phi(alpha, r, s.theta, t)
    phi2 = spec.class2_phi(floors)
    psi_val = spec.psi(alpha, r, s.theta, t)
    return u * v * (phi2(alpha, r, s.theta, t) + 2.0 * v * psi_val / r)


def vector_field(
    spec: SystemSpec,
    s: PhaseState,
    t: float = 0.0,
    floors: Floors = DEFAULT_FLOORS,
) -> Flow4:
    """First-order flow at a state.

    du/dt = -u G(theta) / (r^2 v) + coupling, where the coupling is
    u v phi for class 1, u v (phi + 2 v psi / r) for class 2, and the
    reduced (v^2/r^2) dV/drbar product for pseudo-potential systems.
    """
    _check_floors(s, floors)
    r, th, u, v = s.r, s.theta, s.u, s.v
    g = spec.g_at(th)
    udot = -u * g / (r * r * v) + _coupling_udot(spec, s, t, floors)
    return Flow4(u, v / (r * r), udot, -g / (r * r))


def frequency_squared(
    spec: SystemSpec,
    s: PhaseState,
    t: float = 0.0,
    floors: Floors = DEFAULT_FLOORS,
) -> float:
    """Natural frequency omega^2 consistent with the flow at this state:

        du/dt = -omega^2 r + (v^2 + F(theta)) / r^3.

    Derived output only; omega never parametrizes a system here.
    """
    _check_floors(s, floors)
    r, th, u, v = s.r, s.theta, s.u, s.v
    g = spec.g_at(th)
    f = spec.f_at(th)
    base = (v * v + f) / r**4 + u * g / (r**3 * v)
    return base - _coupling_udot(spec, s, t, floors) / r


def polar_from_cartesian(x: float, y: float, xdot: float, ydot: float) -> PhaseState:
    """Map planar Cartesian data to (r, theta, u, v).

    u is the radial velocity (x xdot + y ydot)/r and v = x ydot - y xdot
    is the angular momentum.  The origin is rejected.
    """
    r = math.hypot(x, y)
    if r == 0.0:
        raise ValueError("origin has no polar representation")
    return PhaseState(
        r=r,
        theta=math.atan2(y, x),
        u=(x * xdot + y * ydot) / r,
        v=x * ydot - y * xdot,
    )
