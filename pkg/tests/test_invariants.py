import math

import numpy as np
import pytest
from scipy.integrate import quad as scipy_quad

from ermakov import expr as ex
from ermakov.expr import DomainError
from ermakov.invariants import (
    BranchError,
    InvariantValue,
    casimir_C1,
    casimir_C2,
    elapsed_time,
    ermakov_invariant,
    forcing_integral,
    grad_ermakov,
    h_of_theta,
    is_singular_oscillator,
    spiral_radius,
)
from ermakov.systems import PhaseState

from helpers import spiral_start
from test_systems import OSC

ZERO = ex.parse("0")
SIN = ex.parse("sin(theta)")
LINEAR = ex.parse("rbar")


def test_forcing_integral_starts_at_zero():
    assert forcing_integral(SIN, 0.0) == 0.0
    assert forcing_integral(SIN, 2.0) == pytest.approx(1.0 - math.cos(2.0), abs=1e-12)
    assert forcing_integral(SIN, -1.0) == pytest.approx(1.0 - math.cos(1.0), abs=1e-12)


def test_invariant_is_kinetic_plus_forcing():
    s = PhaseState(r=1.7, theta=math.pi / 6, u=0.4, v=2.0)
    assert ermakov_invariant(ex.parse("cos(theta)"), s) == pytest.approx(2.5, abs=1e-12)
    assert ermakov_invariant(ZERO, spiral_start()) == 0.5


def test_invariant_records_its_lower_limit():
    iv = ermakov_invariant(ZERO, spiral_start(), record=True)
    assert isinstance(iv, InvariantValue)
    assert iv.name == "I"
    assert iv.value == 0.5
    assert iv.conventions == {"lambda_lower_limit": 0.0}


def test_invariant_gradient():
    s = PhaseState(r=2.0, theta=0.7, u=-0.3, v=1.5)
    g = grad_ermakov(ex.parse("cos(theta)"), s)
    assert g.shape == (4,)
    assert g[0] == 0.0 and g[2] == 0.0
    assert g[1] == pytest.approx(math.cos(0.7))
    assert g[3] == 1.5


def test_first_casimir_values():
    assert casimir_C1(OSC, spiral_start()) == 0.5
    assert casimir_C1(OSC, PhaseState(1.0, 0.0, -1.0, 1.0)) == 1.0
    s = PhaseState(r=2.0, theta=0.0, u=1.0, v=2.0)
    assert casimir_C1(ex.parse("rbar*t"), s, t=2.0) == pytest.approx(0.125 + 1.0)


def test_oscillator_detection_accepts_spelling_variants():
    assert is_singular_oscillator(OSC)
    assert is_singular_oscillator(ex.parse("0.5*rbar^-2"))
    assert is_singular_oscillator(ex.parse("1/2 * 1/rbar^2"))


def test_oscillator_detection_rejects_near_misses():
    assert not is_singular_oscillator(LINEAR)
    assert not is_singular_oscillator(ex.parse("1/(2*rbar^2) + 0.001"))
    assert not is_singular_oscillator(ex.parse("1/(2*rbar^2) + t"))
    assert not is_singular_oscillator(ex.parse("1/(2*rbar^2) * t/t"))


def test_second_casimir_closed_form_value():
    s = PhaseState(r=1.0, theta=0.0, u=-1.0, v=1.0)
    # c1 = 1, sigma = +1, radicand = 1
    assert casimir_C2(OSC, s) == pytest.approx(-0.5, abs=1e-12)
    flipped = PhaseState(r=1.0, theta=0.0, u=1.0, v=1.0)
    assert casimir_C2(OSC, flipped) == pytest.approx(0.5, abs=1e-12)


def test_second_casimir_at_turning_point_is_theta():
    assert casimir_C2(OSC, spiral_start()) == 0.0
    shifted = PhaseState(r=1.0, theta=1.3, u=0.0, v=1.0)
    assert casimir_C2(OSC, shifted) == 1.3


def test_second_casimir_branch_error_off_the_turning_point():
    s = PhaseState(r=1.0, theta=0.0, u=0.0, v=1.0)
    with pytest.raises(BranchError):
        casimir_C2(OSC, s, c1=1.0)


def test_second_casimir_negative_radicand():
    s = PhaseState(r=1.0, theta=0.0, u=0.0, v=1.0)
    with pytest.raises(DomainError):
        casimir_C2(OSC, s, c1=0.4)


def test_second_casimir_conventions_record():
    iv = casimir_C2(OSC, PhaseState(1.0, 0.0, -1.0, 1.0), record=True)
    assert iv.name == "C2"
    assert iv.conventions["form"] == "closed"
    assert iv.conventions["branch_sign"] == "sign(-u/v)"
    assert iv.conventions["lower_limit"] == "turning_point"
    iv2 = casimir_C2(LINEAR, PhaseState(1.0, 0.3, -0.5, 1.0), lam0=0.5, record=True)
    assert iv2.conventions["form"] == "quadrature"
    assert iv2.conventions["lower_limit"] == 0.5


def test_closed_form_matches_direct_quadrature():
    s = PhaseState(r=1.3, theta=0.7, u=-0.8, v=1.2)
    c1 = casimir_C1(OSC, s)
    lam_turn = 1.0 / math.sqrt(2.0 * c1)
    integrand = lambda lam: 1.0 / math.sqrt(c1 - 1.0 / (2.0 * lam * lam))
    quad, err = scipy_quad(integrand, lam_turn, 1.0 / s.r, points=[lam_turn])
    assert err < 1e-9
    expected = s.theta - quad / math.sqrt(2.0)  # sigma = +1 here
    assert casimir_C2(OSC, s) == pytest.approx(expected, abs=1e-7)


def test_quadrature_casimir_linear_potential():
    # V(lam) = lam: turning point at lam = c1, everything in closed form
    s = PhaseState(r=1.0, theta=0.3, u=-0.5, v=1.0)
    c1 = casimir_C1(LINEAR, s)
    assert c1 == pytest.approx(1.125)
    assert casimir_C2(LINEAR, s) == pytest.approx(0.8, abs=1e-9)


def test_quadrature_casimir_explicit_lower_limit():
    s = PhaseState(r=1.0, theta=0.3, u=-0.5, v=1.0)
    # plain quadrature from a nonsingular endpoint:
    # (1/sqrt 2) * [-2 sqrt(c1-lam)] from 0.5 to 1 = sqrt(1.25) - 0.5
    expected = 0.3 - (math.sqrt(1.25) - 0.5)
    assert casimir_C2(LINEAR, s, lam0=0.5) == pytest.approx(expected, abs=1e-9)


def test_second_casimir_is_continuous_through_a_turning_point():
    # characteristic of V(lam) = lam from (rbar, abar) = (1, 1/2):
    # abar(theta) = 1/2 - theta, rbar(theta) = 1 + theta/2 - theta^2/2,
    # turning point crossed at theta = 1/2 where u changes sign
    for theta in (0.0, 0.2, 0.45, 0.5, 0.55, 0.8, 1.0):
        abar = 0.5 - theta
        rbar = 1.0 + 0.5 * theta - 0.5 * theta * theta
        s = PhaseState(r=1.0 / rbar, theta=theta, u=-abar, v=1.0)
        assert casimir_C2(LINEAR, s) == pytest.approx(0.5, abs=1e-6)


def test_state_outside_its_well_is_rejected():
    s = PhaseState(r=0.5, theta=0.0, u=-0.5, v=1.0)
    with pytest.raises(DomainError, match="outside its own well"):
        casimir_C2(LINEAR, s, c1=1.0)


def test_missing_turning_point_is_reported():
    s = PhaseState(r=1.0, theta=0.0, u=-0.5, v=1.0)
    with pytest.raises(DomainError, match="no turning point"):
        casimir_C2(ZERO, s)


def test_angular_speed_from_invariant():
    assert h_of_theta(ZERO, 3.0, 0.5) == pytest.approx(1.0, abs=1e-12)
    assert h_of_theta(ZERO, 1.0, 0.0) == 0.0
    g = ex.parse("cos(theta)")
    assert h_of_theta(g, 0.5, 2.0) == pytest.approx(
        math.sqrt(2.0 * (2.0 - math.sin(0.5))), abs=1e-10
    )
    with pytest.raises(DomainError):
        h_of_theta(g, math.pi / 2.0, 0.5)


def test_elapsed_time_constant_radius():
    assert elapsed_time(lambda lam: 2.0, ZERO, 0.5, 0.0, 1.0) == pytest.approx(
        4.0, abs=1e-10
    )


def test_elapsed_time_on_the_free_spiral():
    orbit = lambda lam: spiral_radius(0.5, 0.0, lam)
    value = elapsed_time(orbit, ZERO, 0.5, 0.0, 1.0)
    assert value == pytest.approx(math.pi / 4.0, abs=1e-9)


def test_elapsed_time_detects_a_turning_angle():
    g = ex.parse("cos(theta)")
    with pytest.raises((DomainError, ex.QuadratureError)):
        elapsed_time(lambda lam: 1.0, g, 0.3, 0.0, 1.0)


def test_spiral_radius_values_and_shapes():
    assert spiral_radius(0.5, 0.0, 0.0) == pytest.approx(1.0)
    assert spiral_radius(0.5, 0.0, 2.0) == spiral_radius(0.5, 0.0, -2.0)
    arr = spiral_radius(0.5, 0.25, np.linspace(-1.0, 1.0, 7))
    assert arr.shape == (7,)
    assert float(np.max(arr)) <= 1.0
    with pytest.raises(ValueError):
        spiral_radius(0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        spiral_radius(-1.0, 0.0, 1.0)


def test_spiral_radius_peaks_at_the_second_casimir():
    th = np.linspace(-2.0, 2.0, 2001)
    arr = spiral_radius(0.8, 0.25, th)
    assert th[int(np.argmax(arr))] == pytest.approx(0.25, abs=2e-3)
    assert float(np.max(arr)) == pytest.approx(math.sqrt(1.6), abs=1e-6)
