"""Run configuration for the command line tools.

A run is described by one JSON document.  Expression-valued fields are
strings in the grammar of :mod:`ermakov.expr`.  Validation is strict:
unknown keys anywhere are rejected, so typos fail loudly instead of
silently using a default.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from . import expr as ex
from .systems import DEFAULT_FLOORS, Floors, FuncHandle, PhaseState, SystemSpec

__all__ = [
    "ConfigError",
    "RunConfig",
    "VerifySettings",
    "OrbitSettings",
    "LinearizeSettings",
    "load_config",
    "parse_config",
    "config_hash",
    "sample_states",
]


class ConfigError(ValueError):
    """The configuration document is unusable (syntax, schema, ranges)."""


def config_hash(data: bytes) -> str:
    """sha256 of the configuration bytes, embedded in every report."""
    return hashlib.sha256(data).hexdigest()


def _check_keys(section: dict, allowed, where: str):
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys {unknown} in {where}")


def _section(doc: dict, key: str, where: str = "config") -> dict:
    val = doc.get(key, {})
    if not isinstance(val, dict):
        raise ConfigError(f"{where}.{key} must be an object")
    return val


def _number(val, where: str) -> float:
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{where} must be a number, got {val!r}")
    return float(val)

def _positive(val, where: str) -> float:
    num = _number(val, where)
    if not num > 0.0:
        raise ConfigError(f"{where} must be positive, got {num!r}")
    return num


def _count(val, where: str) -> int:
    if isinstance(val, bool) or not isinstance(val, int) or val <= 0:
        raise ConfigError(f"{where} must be a positive integer, got {val!r}")
    return val


def _expr_field(section: dict, key: str, where: str, default: Optional[str] = None):
    text = section.get(key, default)
    if text is None:
        return None
    if not isinstance(text, str):
        raise ConfigError(f"{where}.{key} must be an expression string, got {text!r}")
    try:
        return ex.parse(text)
    except ex.ParseError as exc:
        raise ConfigError(f"{where}.{key}: {exc}") from exc


def _span(val, where: str) -> Tuple[float, float]:
    if not (isinstance(val, (list, tuple)) and len(val) == 2):
        raise ConfigError(f"{where} must be a two-element array")
    lo = _number(val[0], f"{where}[0]")
    hi = _number(val[1], f"{where}[1]")
    if not hi > lo:
        raise ConfigError(f"{where} must increase, got [{lo!r}, {hi!r}]")
    return lo, hi


def _build_system(section: dict) -> SystemSpec:
    _check_keys(
        section,
        ("kind", "g", "f", "phi", "psi", "chi", "potential", "lam0", "quad_tol"),
        "system",
    )
    kind = section.get("kind")
    if kind not in ("class1", "class2", "pseudo_potential"):
        raise ConfigError(
            f"system.kind must be class1, class2 or pseudo_potential, got {kind!r}"
        )
    g = _expr_field(section, "g", "system", default="0")
    f = _expr_field(section, "f", "system")
    try:
        if kind == "class1":
            phi_tree = _expr_field(section, "phi", "system", default="0")
            phi = FuncHandle(tree=phi_tree, name=section.get("phi", "0"))
            return SystemSpec.class1(g, phi, f)
        if kind == "class2":
            if "psi" not in section:
                raise ConfigError("system.psi is required for class2")
            psi_tree = _expr_field(section, "psi", "system")
            psi = FuncHandle(tree=psi_tree, name=section["psi"])
            chi = _expr_field(section, "chi", "system")
            lam0 = _number(section.get("lam0", 0.0), "system.lam0")
            quad_tol = _positive(section.get("quad_tol", 1e-12), "system.quad_tol")
            return SystemSpec.class2(g, psi, chi, f, lam0=lam0, quad_tol=quad_tol)
        if "potential" not in section:
            raise ConfigError("system.potential is required for pseudo_potential")
        potential = _expr_field(section, "potential", "system")
        return SystemSpec.pseudo_potential(g, potential, f)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"system: {exc}") from exc


def _build_state(section: dict) -> PhaseState:
    _check_keys(section, ("r", "theta", "u", "v"), "initial_state")
    for key in ("r", "theta", "u", "v"):
        if key not in section:
            raise ConfigError(f"initial_state.{key} is required")
    try:
        return PhaseState(
            r=_number(section["r"], "initial_state.r"),
            theta=_number(section["theta"], "initial_state.theta"),
            u=_number(section["u"], "initial_state.u"),
            v=_number(section["v"], "initial_state.v"),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"initial_state: {exc}") from exc


def _build_floors(section: dict) -> Floors:
    _check_keys(section, ("r_min", "u_min", "v_min", "psi_min"), "floors")
    kwargs = {}
    for key in ("r_min", "u_min", "v_min", "psi_min"):
        if key in section:
            kwargs[key] = _positive(section[key], f"floors.{key}")
    return Floors(
        r_min=kwargs.get("r_min", DEFAULT_FLOORS.r_min),
        u_min=kwargs.get("u_min", DEFAULT_FLOORS.u_min),
        v_min=kwargs.get("v_min", DEFAULT_FLOORS.v_min),
        psi_min=kwargs.get("psi_min", DEFAULT_FLOORS.psi_min),
    )


_TOLERANCE_KEYS = ("jacobi", "flow", "casimir", "consistency", "determinant")


@dataclass(frozen=True)
class VerifySettings:
    samples: int = 1000
    seed: int = 20260823
    fd_step: float = 1e-5
    u_floor: float = 0.05
    branch: str = "any"
    tamper_j34: bool = False
    tolerances: dict = field(default_factory=dict)
    phi_override: Optional[object] = None
    casimir_potential: Optional[object] = None

    def tolerance(self, which: str, default: float) -> float:
        return self.tolerances.get(which, default)


def _build_verify(section: dict) -> VerifySettings:
    _check_keys(
        section,
        (
            "samples",
            "seed",
            "fd_step",
            "u_floor",
            "branch",
            "tamper_j34",
            "tolerance",
            "phi_override",
            "casimir_potential",
        ),
        "verify",
    )
    tol_section = _section(section, "tolerance", "verify")
    _check_keys(tol_section, _TOLERANCE_KEYS, "verify.tolerance")
    tolerances = {
        key: _positive(tol_section[key], f"verify.tolerance.{key}")
        for key in tol_section
    }
    branch = section.get("branch", "any")
    if branch not in ("any", "fixed"):
        raise ConfigError(f"verify.branch must be any or fixed, got {branch!r}")
    tamper = section.get("tamper_j34", False)
    if not isinstance(tamper, bool):
        raise ConfigError(f"verify.tamper_j34 must be a boolean, got {tamper!r}")
    seed = section.get("seed", 20260823)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"verify.seed must be a nonnegative integer, got {seed!r}")
    return VerifySettings(
        samples=_count(section.get("samples", 1000), "verify.samples"),
        seed=seed,
        fd_step=_positive(section.get("fd_step", 1e-5), "verify.fd_step"),
        u_floor=_positive(section.get("u_floor", 0.05), "verify.u_floor"),
        branch=branch,
        tamper_j34=tamper,
        tolerances=tolerances,
        phi_override=_expr_field(section, "phi_override", "verify"),
        casimir_potential=_expr_field(section, "casimir_potential", "verify"),
    )


@dataclass(frozen=True)
class OrbitSettings:
    theta_span: Tuple[float, float] = (0.0, 1.0)
    tolerance: float = 1e-6
    time_tolerance: float = 1e-5
    n_grid: int = 400


def _build_orbit(section: dict) -> OrbitSettings:
    _check_keys(
        section, ("theta_span", "tolerance", "time_tolerance", "n_grid"), "orbit"
    )
    span = (
        _span(section["theta_span"], "orbit.theta_span")
        if "theta_span" in section
        else (0.0, 1.0)
    )
    return OrbitSettings(
        theta_span=span,
        tolerance=_positive(section.get("tolerance", 1e-6), "orbit.tolerance"),
        time_tolerance=_positive(
            section.get("time_tolerance", 1e-5), "orbit.time_tolerance"
        ),
        n_grid=_count(section.get("n_grid", 400), "orbit.n_grid"),
    )


@dataclass(frozen=True)
class AffinityProbe:
    theta: float = 0.0
    t: float = 0.0
    rbar_range: Tuple[float, float] = (0.5, 2.0)
    abar_range: Tuple[float, float] = (0.1, 1.0)
    n: int = 8


@dataclass(frozen=True)
class LinearizeSettings:
    tolerance: float = 1e-6
    n_grid: int = 400
    affinity: AffinityProbe = field(default_factory=AffinityProbe)


def _build_linearize(section: dict) -> LinearizeSettings:
    _check_keys(section, ("tolerance", "n_grid", "affinity"), "linearize")
    aff_section = _section(section, "affinity", "linearize")
    _check_keys(
        aff_section, ("theta", "t", "rbar_range", "abar_range", "n"), "linearize.affinity"
    )
    probe = AffinityProbe(
        theta=_number(aff_section.get("theta", 0.0), "linearize.affinity.theta"),
        t=_number(aff_section.get("t", 0.0), "linearize.affinity.t"),
        rbar_range=(
            _span(aff_section["rbar_range"], "linearize.affinity.rbar_range")
            if "rbar_range" in aff_section
            else (0.5, 2.0)
        ),
        abar_range=(
            _span(aff_section["abar_range"], "linearize.affinity.abar_range")
            if "abar_range" in aff_section
            else (0.1, 1.0)
        ),
        n=_count(aff_section.get("n", 8), "linearize.affinity.n"),
    )
    if probe.n < 6:
        raise ConfigError(f"linearize.affinity.n must be at least 6, got {probe.n}")
    return LinearizeSettings(
        tolerance=_positive(section.get("tolerance", 1e-6), "linearize.tolerance"),
        n_grid=_count(section.get("n_grid", 400), "linearize.n_grid"),
        affinity=probe,
    )


@dataclass(frozen=True)
class RunConfig:
    spec: SystemSpec
    s0: Optional[PhaseState]
    t0: float
    t1: float
    method: str
    rtol: float
    atol: float
    dt: Optional[float]
    max_steps: int
    floors: Floors
    verify: VerifySettings
    orbit: OrbitSettings
    linearize: LinearizeSettings
    sha256: str
    raw: dict


_TOP_KEYS = (
    "system",
    "initial_state",
    "time_span",
    "integrator",
    "floors",
    "verify",
    "orbit",
    "linearize",
)


def parse_config(data: bytes) -> RunConfig:
    """Parse and validate a configuration document from raw bytes."""
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"not valid UTF-8 JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a JSON object")
    _check_keys(doc, _TOP_KEYS, "config")
    if "system" not in doc:
        raise ConfigError("config.system is required")
    spec = _build_system(_section(doc, "system"))
    s0 = (
        _build_state(_section(doc, "initial_state"))
        if "initial_state" in doc
        else None
    )
    t0, t1 = (
        _span(doc["time_span"], "time_span") if "time_span" in doc else (0.0, 1.0)
    )
    integ = _section(doc, "integrator")
    _check_keys(integ, ("method", "rtol", "atol", "dt", "max_steps"), "integrator")
    method = integ.get("method", "dp45")
    if method not in ("rk4", "dp45"):
        raise ConfigError(f"integrator.method must be rk4 or dp45, got {method!r}")
    dt = _positive(integ["dt"], "integrator.dt") if "dt" in integ else None
    return RunConfig(
        spec=spec,
        s0=s0,
        t0=t0,
        t1=t1,
        method=method,
        rtol=_positive(integ.get("rtol", 1e-10), "integrator.rtol"),
        atol=_positive(integ.get("atol", 1e-12), "integrator.atol"),
        dt=dt,
        max_steps=_count(integ.get("max_steps", 200000), "integrator.max_steps"),
        floors=_build_floors(_section(doc, "floors")),
        verify=_build_verify(_section(doc, "verify")),
        orbit=_build_orbit(_section(doc, "orbit")),
        linearize=_build_linearize(_section(doc, "linearize")),
        sha256=config_hash(data),
        raw=doc,
    )


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as handle:
            data = handle.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    return parse_config(data)


def sample_states(
    rng: np.random.Generator,
    n: int,
    u_floor: float = 0.05,
    branch: str = "any",
) -> list:
    """Draw admissible verification states, reproducibly for a seeded rng.

    r in [0.5, 3], theta in [-pi, pi], |u| in [u_floor, 2], |v| in
    [0.5, 3].  branch "any" flips the signs of u and v independently;
    "fixed" pins u < 0, v > 0 so sign(-u/v) is constant across the
    sample.
    """
    if branch not in ("any", "fixed"):
        raise ValueError(f"branch must be any or fixed, got {branch!r}")
    states = []
    for _ in range(n):
        r = rng.uniform(0.5, 3.0)
        theta = rng.uniform(-math.pi, math.pi)
        mag_u = rng.uniform(u_floor, 2.0)
        mag_v = rng.uniform(0.5, 3.0)
        if branch == "fixed":
            u, v = -mag_u, mag_v
        else:
            u = mag_u if rng.random() < 0.5 else -mag_u
            v = mag_v if rng.random() < 0.5 else -mag_v
        states.append(PhaseState(r=r, theta=theta, u=u, v=v))
    return states
