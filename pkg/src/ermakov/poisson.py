"""Noncanonical Poisson matrices for Ermakov flows, and the numerical
checks that certify them.

Both structure classes share

    J12 = 0,  J14 = u/v,  J24 = 1/r^2,  J23 = u/(r^2 v)

and differ in J13 and J34:

    class 1:  J13 = (u/v)^2,            J34 = u phi
    class 2:  J13 = (u/v)^2 + u psi,    J34 = u phi + 2 u v psi / r

with phi free in class 1 and constructed from psi in class 2.  Checks
offered here: the four Jacobi-identity cyclic sums (finite differences),
determinant versus Pfaffian, Hamiltonian flow reconstruction, the
class-2 consistency condition, and Casimir residuals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import expr as ex
from .systems import (
    DEFAULT_FLOORS,
    Class2Phi,
    Floors,
    Flow4,
    FuncHandle,
    PhaseState,
    SingularStateError,
)

__all__ = [
    "SkewMatrix4",
    "MatrixField",
    "matrix_class1",
    "matrix_class2",
    "phi_class2",
    "pfaffian",
    "determinant",
    "det_class2_quoted",
    "bracket",
    "jacobi_residuals",
    "JACOBI_TRIPLES",
    "hamiltonian_flow",
    "consistency_residual",
    "casimir_residuals",
    "perturb_j34",
]

# cyclic index triples (1-based) whose sums must vanish for a Poisson matrix
JACOBI_TRIPLES = ((1, 2, 3), (1, 2, 4), (1, 3, 4), (2, 3, 4))


@dataclass(frozen=True)
class SkewMatrix4:
    """A 4x4 skew-symmetric matrix stored by its upper triangle.

    Field names carry the 1-based index pair of the entry, matching the
    coordinate order (r, theta, u, v).  Skewness is exact by
    construction: the lower triangle only ever exists as a negation.
    """

    j12: float
    j13: float
    j14: float
    j23: float
    j24: float
    j34: float

    def as_array(self) -> np.ndarray:
        a = np.zeros((4, 4))
        for (i, j), val in self.items():
            a[i - 1, j - 1] = val
            a[j - 1, i - 1] = -val
        return a

    def items(self):
        return (
            ((1, 2), self.j12),
            ((1, 3), self.j13),
            ((1, 4), self.j14),
            ((2, 3), self.j23),
            ((2, 4), self.j24),
            ((3, 4), self.j34),
        )

    def entry(self, mu: int, nu: int) -> float:
        """Entry J[mu][nu], indices in 1..4."""
        if not (1 <= mu <= 4 and 1 <= nu <= 4):
            raise IndexError(f"indices must be in 1..4, got ({mu}, {nu})")
        if mu == nu:
            return 0.0
        if mu < nu:
            return getattr(self, f"j{mu}{nu}")
        return -getattr(self, f"j{nu}{mu}")

    def norm(self) -> float:
        """Frobenius norm."""
        return math.sqrt(
            2.0
            * (
                self.j12**2
                + self.j13**2
                + self.j14**2
                + self.j23**2
                + self.j24**2
                + self.j34**2
            )
        )


@dataclass(frozen=True)
class MatrixField:
    """State-dependent Poisson matrix: a closure plus a class tag."""

    evaluate: Callable[[PhaseState, float], SkewMatrix4]
    kind: str

    def __call__(self, s: PhaseState, t: float = 0.0) -> SkewMatrix4:
        return self.evaluate(s, t)


def _common_entries(s: PhaseState, floors: Floors):
    if s.r < floors.r_min:
        raise SingularStateError(f"r={s.r!r} below floor r_min={floors.r_min!r}")
    alpha = s.alpha(floors.v_min)
    r2 = s.r * s.r
    return alpha, alpha, 1.0 / r2, s.u / (r2 * s.v)  # alpha, j14, j24, j23


def matrix_class1(
    phi: Union[FuncHandle, Callable],
    s: PhaseState,
    t: float = 0.0,
    floors: Floors = DEFAULT_FLOORS,
) -> SkewMatrix4:
    """Class-1 Poisson matrix at a state; phi(alpha, r, theta, t) is free."""
    alpha, j14, j24, j23 = _common_entries(s, floors)
    phi_val = phi(alpha, s.r, s.theta, t)
    return SkewMatrix4(
        j12=0.0,
        j13=alpha * alpha,
        j14=j14,
        j23=j23,
        j24=j24,
        j34=s.u * phi_val,
    )


def phi_class2(
    psi: FuncHandle,
    chi,
    s: PhaseState,
    t: float = 0.0,
    lam0: float = 0.0,
    tol: float = 1e-12,
    floors: Floors = DEFAULT_FLOORS,
) -> float:
    """Evaluate the phi constructed from a class-2 psi at a state.

    chi(r, theta, t) is the free integration constant (an expression tree
    or None).  The quadrature runs from lam0 (default 0) to u/v; when psi
    depends on theta the integrand carries a 1/lambda factor and the path
    must stay clear of zero, which is enforced.
    """
    alpha = s.alpha(floors.v_min)
    builder = Class2Phi(psi, chi, lam0=lam0, tol=tol, psi_min=floors.psi_min)
    return builder(alpha, s.r, s.theta, t)


def matrix_class2(
    psi: FuncHandle,
    chi,
    s: PhaseState,
    t: float = 0.0,
    lam0: float = 0.0,
    tol: float = 1e-12,
    floors: Floors = DEFAULT_FLOORS,
) -> SkewMatrix4:
    """Class-2 Poisson matrix at a state.

    At u = 0 every psi- and phi-proportional entry vanishes and the
    matrix degenerates to the class-1 shape; callers relying on
    non-degeneracy should keep |u| above the u_min floor.
    """
    alpha, j14, j24, j23 = _common_entries(s, floors)
    builder = Class2Phi(psi, chi, lam0=lam0, tol=tol, psi_min=floors.psi_min)
    psi_val = psi(alpha, s.r, s.theta, t)
    phi_val = builder(alpha, s.r, s.theta, t)
    return SkewMatrix4(
        j12=0.0,
        j13=alpha * alpha + s.u * psi_val,
        j14=j14,
        j23=j23,
        j24=j24,
        j34=s.u * phi_val + 2.0 * s.u * s.v * psi_val / s.r,
    )


def pfaffian(m: SkewMatrix4) -> float:
    """Pf(J) = J12 J34 - J13 J24 + J14 J23; det(J) equals its square."""
    return m.j12 * m.j34 - m.j13 * m.j24 + m.j14 * m.j23


def _det3(a) -> float:
    return (
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    )


def determinant(m: SkewMatrix4) -> float:
    """Determinant by cofactor expansion along the first row.

    For an exactly skew matrix this equals pfaffian(m)**2 up to rounding,
    so the pair (determinant, pfaffian) doubles as a skewness check.
    """
    a = m.as_array()
    total = 0.0
    for col in range(4):
        minor = [
            [a[row][c] for c in range(4) if c != col] for row in range(1, 4)
        ]
        total += ((-1.0) ** col) * a[0][col] * _det3(minor)
    return total


def det_class2_quoted(psi_val: float, s: PhaseState) -> float:
    """The closed form usually quoted for the class-2 determinant,

        (u^2 psi / r^4) (2 u / v^2 + psi).

    Kept verbatim for verification sweeps.  Note it disagrees with the
    determinant of the class-2 matrix defined above, whose Pfaffian is
    -u psi / r^2 and whose determinant is therefore (u psi / r^2)^2; the
    quoted form amounts to expanding (J13 J24)^2 - (J14 J23)^2 instead of
    (J13 J24 - J14 J23)^2.  Non-degeneracy for u psi != 0 holds either
    way.
    """
    u, v, r = s.u, s.v, s.r
    return (u * u * psi_val / r**4) * (2.0 * u / (v * v) + psi_val)


def bracket(grad_a: Sequence[float], grad_b: Sequence[float], m: SkewMatrix4) -> float:
    """Generalized bracket {A, B} = (grad A)^T J (grad B) at one state."""
    ga = np.asarray(grad_a, dtype=float)
    gb = np.asarray(grad_b, dtype=float)
    if ga.shape != (4,) or gb.shape != (4,):
        raise ValueError("gradients must be 4-vectors")
    return float(ga @ m.as_array() @ gb)


def jacobi_residuals(
    field: MatrixField,
    s: PhaseState,
    t: float = 0.0,
    h: float = 1e-5,
) -> np.ndarray:
    """The four cyclic sums J^{mu a} d_mu J^{bc} + J^{mu b} d_mu J^{ca}
    + J^{mu c} d_mu J^{ab} for (a,b,c) in JACOBI_TRIPLES.

    Phase-space derivatives are central differences with step h; time is
    held fixed.  All four vanish (to differencing accuracy) exactly when
    the field is Poisson.
    """
    center = field(s, t).as_array()
    coords = s.as_array()
    grads = []
    for k in range(4):
        hi = coords.copy()
        lo = coords.copy()
        hi[k] += h
        lo[k] -= h
        m_hi = field(PhaseState(*hi), t).as_array()
        m_lo = field(PhaseState(*lo), t).as_array()
        grads.append((m_hi - m_lo) / (2.0 * h))
    out = np.zeros(len(JACOBI_TRIPLES))
    for n, (a, b, c) in enumerate(JACOBI_TRIPLES):
        i, j, k = a - 1, b - 1, c - 1
        acc = 0.0
        for mu in range(4):
            acc += (
                center[mu, i] * grads[mu][j, k]
                + center[mu, j] * grads[mu][k, i]
                + center[mu, k] * grads[mu][i, j]
            )
        out[n] = acc
    return out


def hamiltonian_flow(
    field: MatrixField,
    grad_h: Sequence[float],
    s: PhaseState,
    t: float = 0.0,
) -> Flow4:
    """The flow J grad(H) generated by a Hamiltonian gradient."""
    g = np.asarray(grad_h, dtype=float)
    if g.shape != (4,):
        raise ValueError("grad_h must be a 4-vector")
    x = field(s, t).as_array() @ g
    return Flow4(*x)


def _phi_dalpha(phi, alpha: float, r: float, theta: float, t: float, h: float) -> float:
    if isinstance(phi, Class2Phi):
        return phi.partial_alpha(alpha, r, theta, t)
    if isinstance(phi, FuncHandle):
        p = phi.partial("alpha")
        if p is not None:
            return p(alpha, r, theta, t)
    return (phi(alpha + h, r, theta, t) - phi(alpha - h, r, theta, t)) / (2.0 * h)


def consistency_residual(
    psi: FuncHandle,
    phi,
    s: PhaseState,
    t: float = 0.0,
    fd_step: float = 1e-6,
    floors: Floors = DEFAULT_FLOORS,
) -> float:
    """Residual of the compatibility condition linking psi and phi:

        psi phi' - psi' phi  -  [ d(psi)/dr + v/(r^2 u) d(psi)/dtheta
                                  - (2/r) psi ]

    with ' = d/d(alpha) at alpha = u/v.  Zero (to numerical accuracy)
    exactly when (psi, phi) assemble into a Poisson matrix.  Derivatives
    are symbolic where the handles carry trees; a Class2Phi phi supplies
    its exact alpha-derivative, anything else is centrally differenced
    with fd_step.
    """
    if abs(s.u) <= floors.u_min:
        raise SingularStateError(
            f"|u|={abs(s.u)!r} at or below floor u_min={floors.u_min!r}"
        )
    alpha = s.alpha(floors.v_min)
    r, theta, u, v = s.r, s.theta, s.u, s.v

    psi_val = psi(alpha, r, theta, t)
    pa = psi.partial("alpha")
    if pa is not None:
        psi_prime = pa(alpha, r, theta, t)
    else:
        psi_prime = (
            psi(alpha + fd_step, r, theta, t) - psi(alpha - fd_step, r, theta, t)
        ) / (2.0 * fd_step)
    pr = psi.partial("r")
    if pr is not None:
        psi_r = pr(alpha, r, theta, t)
    else:
        psi_r = (
            psi(alpha, r + fd_step, theta, t) - psi(alpha, r - fd_step, theta, t)
        ) / (2.0 * fd_step)
    pth = psi.partial("theta")
    if pth is not None:
        psi_theta = pth(alpha, r, theta, t)
    else:
        psi_theta = (
            psi(alpha, r, theta + fd_step, t) - psi(alpha, r, theta - fd_step, t)
        ) / (2.0 * fd_step)

    phi_val = phi(alpha, r, theta, t)
    phi_prime = _phi_dalpha(phi, alpha, r, theta, t, fd_step)

    left = psi_val * phi_prime - psi_prime * phi_val
    right = psi_r + v / (r * r * u) * psi_theta - (2.0 / r) * psi_val
    return left - right


def casimir_residuals(
    field: MatrixField,
    grad_c: Sequence[float],
    s: PhaseState,
    t: float = 0.0,
) -> np.ndarray:
    """The 4-vector J grad(C).  All components vanish when C is a Casimir
    of the structure; under a non-degenerate matrix no nonconstant C can
    achieve that."""
    g = np.asarray(grad_c, dtype=float)
    if g.shape != (4,):
        raise ValueError("grad_c must be a 4-vector")
    return field(s, t).as_array() @ g


def perturb_j34(field: MatrixField, amount: Callable[[PhaseState, float], float]) -> MatrixField:
    """A copy of the field with J34 shifted by amount(s, t).

    Breaks the Jacobi identities for any non-constant shift; used as the
    negative control in verification sweeps.
    """

    def tampered(s: PhaseState, t: float = 0.0) -> SkewMatrix4:
        m = field(s, t)
        return SkewMatrix4(
            j12=m.j12,
            j13=m.j13,
            j14=m.j14,
            j23=m.j23,
            j24=m.j24,
            j34=m.j34 + amount(s, t),
        )

    return MatrixField(evaluate=tampered, kind=field.kind + "+tampered")


def matrix_field_class1(
    phi, floors: Floors = DEFAULT_FLOORS
) -> MatrixField:
    return MatrixField(
        evaluate=lambda s, t=0.0: matrix_class1(phi, s, t, floors), kind="class1"
    )


def matrix_field_class2(
    psi: FuncHandle,
    chi=None,
    lam0: float = 0.0,
    tol: float = 1e-12,
    floors: Floors = DEFAULT_FLOORS,
) -> MatrixField:
    return MatrixField(
        evaluate=lambda s, t=0.0: matrix_class2(psi, chi, s, t, lam0, tol, floors),
        kind="class2",
    )


__all__ += ["matrix_field_class1", "matrix_field_class2"]
