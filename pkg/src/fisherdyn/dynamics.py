"""Analytical reference vehicle models.

Two single-track (bicycle) systems with closed-form Jacobians:

* kinematic: state (x, y, theta), input (v, delta), rear-axle reference,
  theta-dot = v tan(delta) / L;
* dynamic: state (x, y, theta, vx, vy, omega), input (throttle, delta),
  lateral tire forces from the magic-formula law
  F = K + D sin(C arctan(B a - E (B a - arctan(B a G)))) and a net
  longitudinal force F_rx = (Cm1 T - Cm2 vx) - Cr0 - Cd vx^2.

Five unmodeled-disturbance channels (crosswind, road bank, bumps, roll-induced
stiffness loss, tire temperature) can be attached to the dynamic model; force
kinds add to the lateral acceleration, the other two rescale the tire peak
factor D.

States and inputs are plain float64 arrays in the component orders above.
All functions are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "DomainError",
    "ConfigError",
    "GRAVITY",
    "VX_MIN",
    "DELTA_MAX",
    "VehicleParams",
    "PacejkaCoefficients",
    "TirePair",
    "DrivetrainCoefficients",
    "DisturbanceConfig",
    "kinematic_rhs",
    "kinematic_jacobian",
    "pacejka_lateral_force",
    "pacejka_derivative",
    "slip_angles",
    "longitudinal_force",
    "dynamic_rhs",
    "dynamic_jacobian",
    "disturbance_lateral_force",
    "KinematicModel",
    "DynamicModel",
    "wrap_angle",
]

GRAVITY = 9.81
# Slip angles divide by vx; below this speed the model is outside its envelope.
VX_MIN = 0.5
# Steering bound used across sampling and controllers (30 deg).
DELTA_MAX = 0.5236


class DomainError(ValueError):
    """Evaluation requested outside a model's valid envelope."""


class ConfigError(ValueError):
    """Malformed model or disturbance configuration."""


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.fmod(theta + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


# ---------------------------------------------------------------------------
# parameter containers


@dataclass(frozen=True)
class VehicleParams:
    """Geometry and inertia. L is the kinematic wheelbase; lf/lr split the
    dynamic model's axle distances. Ts is the discrete sampling step."""

    m: float = 0.041
    Iz: float = 27.8e-6
    lf: float = 0.029
    lr: float = 0.033
    L: float = 2.5
    Ts: float = 0.02

    def __post_init__(self):
        for name in ("m", "Iz", "lf", "lr", "L", "Ts"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"VehicleParams.{name} must be > 0")

    @classmethod
    def kinematic_default(cls) -> "VehicleParams":
        # Full-size wheelbase and 0.1 s step of the kinematic case study.
        return cls(L=2.5, Ts=0.1)

    @classmethod
    def dynamic_default(cls) -> "VehicleParams":
        # Desk-scale (1:43) racecar; consistent with the default tire peak
        # forces of ~0.17-0.19 N.
        return cls(m=0.041, Iz=27.8e-6, lf=0.029, lr=0.033, L=0.062, Ts=0.02)


@dataclass(frozen=True)
class PacejkaCoefficients:
    """One axle's magic-formula coefficients (D carries the force unit)."""

    B: float
    C: float
    D: float
    E: float
    G: float = 1.0
    K: float = 0.0

    def __post_init__(self):
        if self.B <= 0 or self.C <= 0 or self.D < 0:
            raise ConfigError("PacejkaCoefficients require B > 0, C > 0, D >= 0")


@dataclass(frozen=True)
class TirePair:
    front: PacejkaCoefficients
    rear: PacejkaCoefficients

    @classmethod
    def default(cls) -> "TirePair":
        return cls(
            front=PacejkaCoefficients(B=5.579, C=1.2, D=0.192, E=-0.083),
            rear=PacejkaCoefficients(B=5.3852, C=1.2691, D=0.1737, E=-0.019),
        )


@dataclass(frozen=True)
class DrivetrainCoefficients:
    Cm1: float = 0.287
    Cm2: float = 0.0545
    Cr0: float = 0.0518
    Cd: float = 0.00035

    def __post_init__(self):
        for name in ("Cm1", "Cm2", "Cr0", "Cd"):
            if getattr(self, name) < 0:
                raise ConfigError(f"DrivetrainCoefficients.{name} must be >= 0")


_DISTURBANCE_KEYS = {
    "wind": ("rho", "area", "Cw", "vw"),
    "bank": ("beta",),
    "bump": ("ks", "cs", "z_amplitude", "z_frequency"),
    "roll": ("k_phi", "c_phi", "stiffness_sensitivity"),
    "tire_temperature": ("mu0", "kT", "T0", "T_initial", "T_rate"),
}

FORCE_KINDS = ("wind", "bank", "bump")
SCALE_KINDS = ("roll", "tire_temperature")


@dataclass(frozen=True)
class DisturbanceConfig:
    """One active disturbance channel. Multiple configs compose additively on
    forces; scale kinds compose multiplicatively on the tire D factor.

    The tire-temperature profile is linear in time,
    T_tire(t) = T_initial + T_rate * t, and the bump road profile is
    z(t) = z_amplitude * sin(2 pi z_frequency t).
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _DISTURBANCE_KEYS:
            raise ConfigError(f"unknown disturbance kind {self.kind!r}")
        missing = [k for k in _DISTURBANCE_KEYS[self.kind] if k not in self.params]
        if missing:
            raise ConfigError(f"disturbance {self.kind!r} missing parameters {missing}")
        for key, val in self.params.items():
            if key in ("beta", "T_initial", "T_rate", "T0"):
                continue  # signed quantities
            if val < 0:
                raise ConfigError(f"disturbance {self.kind!r} parameter {key} must be >= 0")

    @classmethod
    def wind(cls, rho: float, area: float, Cw: float, vw: float) -> "DisturbanceConfig":
        return cls("wind", {"rho": rho, "area": area, "Cw": Cw, "vw": vw})

    @classmethod
    def bank(cls, beta: float) -> "DisturbanceConfig":
        return cls("bank", {"beta": beta})

    @classmethod
    def bump(cls, ks: float, cs: float, z_amplitude: float, z_frequency: float) -> "DisturbanceConfig":
        return cls("bump", {"ks": ks, "cs": cs, "z_amplitude": z_amplitude,
                            "z_frequency": z_frequency})

    @classmethod
    def roll(cls, k_phi: float, c_phi: float, stiffness_sensitivity: float) -> "DisturbanceConfig":
        return cls("roll", {"k_phi": k_phi, "c_phi": c_phi,
                            "stiffness_sensitivity": stiffness_sensitivity})

    @classmethod
    def tire_temperature(cls, mu0: float, kT: float, T0: float,
                         T_initial: float, T_rate: float = 0.0) -> "DisturbanceConfig":
        return cls("tire_temperature", {"mu0": mu0, "kT": kT, "T0": T0,
                                        "T_initial": T_initial, "T_rate": T_rate})


# ---------------------------------------------------------------------------
# kinematic bicycle


def kinematic_rhs(s, u, p: VehicleParams) -> np.ndarray:
    """(x-dot, y-dot, theta-dot) = (v cos th, v sin th, v tan d / L)."""
    _, _, theta = s
    v, delta = u
    if abs(delta) >= math.pi / 2:
        raise DomainError(f"|delta|={abs(delta):.3f} >= pi/2")
    return np.array([v * math.cos(theta), v * math.sin(theta),
                     v * math.tan(delta) / p.L])


def kinematic_jacobian(s, u, p: VehicleParams) -> np.ndarray:
    """d(rhs)/d(x, y, theta); only the theta column is nonzero."""
    _, _, theta = s
    v, delta = u
    if abs(delta) >= math.pi / 2:
        raise DomainError(f"|delta|={abs(delta):.3f} >= pi/2")
    jac = np.zeros((3, 3))
    jac[0, 2] = -v * math.sin(theta)
    jac[1, 2] = v * math.cos(theta)
    return jac


# ---------------------------------------------------------------------------
# tire and drivetrain force laws


def _pacejka_parts(alpha: float, c: PacejkaCoefficients):
    """sin(C arctan(psi)) and its alpha-derivative, with
    psi = B a - E (B a - arctan(B a G))."""
    ba = c.B * alpha
    inner = math.atan(ba * c.G)
    psi = ba - c.E * (ba - inner)
    arg = c.C * math.atan(psi)
    sin_part = math.sin(arg)
    dpsi = c.B * (1.0 - c.E * (1.0 - c.G / (1.0 + (ba * c.G) ** 2)))
    dsin = math.cos(arg) * c.C * dpsi / (1.0 + psi * psi)
    return sin_part, dsin


def pacejka_lateral_force(alpha: float, c: PacejkaCoefficients) -> float:
    """Lateral tire force at slip angle ``alpha`` [N]."""
    sin_part, _ = _pacejka_parts(alpha, c)
    return c.K + c.D * sin_part


def pacejka_derivative(alpha: float, c: PacejkaCoefficients) -> float:
    """Exact dF/dalpha of the tire force law [N/rad]."""
    _, dsin = _pacejka_parts(alpha, c)
    return c.D * dsin


def slip_angles(s, u, p: VehicleParams, vx_min: float = VX_MIN):
    """Front/rear sideslip angles of the single-track model.

    alpha_f = delta - arctan((vy + lf w) / vx), alpha_r = -arctan((vy - lr w) / vx).
    """
    vx, vy, omega = s[3], s[4], s[5]
    delta = u[1]
    if vx <= vx_min:
        raise DomainError(f"vx={vx:.3f} <= vx_min={vx_min}; slip angles undefined")
    alpha_f = delta - math.atan((vy + p.lf * omega) / vx)
    alpha_r = -math.atan((vy - p.lr * omega) / vx)
    return alpha_f, alpha_r


def longitudinal_force(throttle: float, vx: float, d: DrivetrainCoefficients) -> float:
    """Net drivetrain force: propulsion minus rolling resistance and drag."""
    return (d.Cm1 * throttle - d.Cm2 * vx) - d.Cr0 - d.Cd * vx * vx


# ---------------------------------------------------------------------------
# disturbances


def _tire_scale(dist: DisturbanceConfig, s, t: float, p: VehicleParams) -> float:
    """Multiplicative factor applied to the tire peak factor D (clamped at 0)."""
    q = dist.params
    if dist.kind == "roll":
        # Quasi-static roll angle from centripetal acceleration through the
        # spring law k_phi * phi = m * a_y (unit moment arm), a_y = vx * omega.
        phi = p.m * s[3] * s[5] / q["k_phi"]
        return max(0.0, 1.0 - q["stiffness_sensitivity"] * abs(phi))
    if dist.kind == "tire_temperature":
        T_tire = q["T_initial"] + q["T_rate"] * t
        return max(0.0, 1.0 - math.exp(-q["kT"] * (T_tire - q["T0"])))
    raise ConfigError(f"{dist.kind!r} is not a tire-scale disturbance")


def _tire_scale_gradient(dist: DisturbanceConfig, s, t: float, p: VehicleParams):
    """(dS/dvx, dS/domega) of a scale-kind disturbance factor."""
    q = dist.params
    if dist.kind == "roll":
        phi = p.m * s[3] * s[5] / q["k_phi"]
        if 1.0 - q["stiffness_sensitivity"] * abs(phi) <= 0.0:
            return 0.0, 0.0  # clamped region
        sgn = math.copysign(1.0, phi) if phi != 0.0 else 0.0
        coef = -q["stiffness_sensitivity"] * sgn * p.m / q["k_phi"]
        return coef * s[5], coef * s[3]
    return 0.0, 0.0  # temperature scale is time-only


def disturbance_lateral_force(dist: DisturbanceConfig, s, t: float,
                              p: VehicleParams) -> float:
    """Evaluate one disturbance channel.

    Force kinds return Newtons added laterally to the body; scale kinds return
    the multiplicative tire-D factor.
    """
    q = dist.params
    if dist.kind == "wind":
        # v_w is the *effective* crosswind: the car's own lateral velocity
        # reduces the relative airflow. At vy = 0 this is 1/2 rho A Cw vw^2.
        v_rel = q["vw"] - s[4]
        return 0.5 * q["rho"] * q["area"] * q["Cw"] * v_rel * abs(v_rel)
    if dist.kind == "bank":
        return p.m * GRAVITY * math.sin(q["beta"])
    if dist.kind == "bump":
        w = 2.0 * math.pi * q["z_frequency"]
        z = q["z_amplitude"] * math.sin(w * t)
        zdot = q["z_amplitude"] * w * math.cos(w * t)
        return q["ks"] * z + q["cs"] * zdot
    if dist.kind in SCALE_KINDS:
        return _tire_scale(dist, s, t, p)
    raise ConfigError(f"unknown disturbance kind {dist.kind!r}")


# ---------------------------------------------------------------------------
# dynamic bicycle


def _lateral_setup(s, u, p, tires, disturbances, t):
    """Common slip/force evaluation shared by rhs and jacobian."""
    alpha_f, alpha_r = slip_angles(s, u, p)
    scale = 1.0
    for dist in disturbances:
        if dist.kind in SCALE_KINDS:
            scale *= _tire_scale(dist, s, t, p)
    sin_f, dsin_f = _pacejka_parts(alpha_f, tires.front)
    sin_r, dsin_r = _pacejka_parts(alpha_r, tires.rear)
    F_fy = tires.front.K + scale * tires.front.D * sin_f
    F_ry = tires.rear.K + scale * tires.rear.D * sin_r
    return alpha_f, alpha_r, scale, (sin_f, dsin_f, F_fy), (sin_r, dsin_r, F_ry)


def dynamic_rhs(s, u, p: VehicleParams, tires: TirePair,
                drivetrain: DrivetrainCoefficients,
                disturbances=(), t: float = 0.0) -> np.ndarray:
    """Continuous-time derivatives of (x, y, theta, vx, vy, omega)."""
    x, y, theta, vx, vy, omega = s
    throttle, delta = u
    _, _, _, (_, _, F_fy), (_, _, F_ry) = _lateral_setup(s, u, p, tires, disturbances, t)
    F_rx = longitudinal_force(throttle, vx, drivetrain)

    F_lat = 0.0
    for dist in disturbances:
        if dist.kind in FORCE_KINDS:
            F_lat += disturbance_lateral_force(dist, s, t, p)

    sd, cd = math.sin(delta), math.cos(delta)
    return np.array([
        vx * math.cos(theta) - vy * math.sin(theta),
        vx * math.sin(theta) + vy * math.cos(theta),
        omega,
        (F_rx - F_fy * sd) / p.m + vy * omega,
        (F_ry + F_fy * cd + F_lat) / p.m - vx * omega,
        (F_fy * p.lf * cd - F_ry * p.lr) / p.Iz,
    ])


def dynamic_jacobian(s, u, p: VehicleParams, tires: TirePair,
                     drivetrain: DrivetrainCoefficients,
                     disturbances=(), t: float = 0.0) -> np.ndarray:
    """Exact 6x6 state Jacobian of :func:`dynamic_rhs` (inputs held)."""
    x, y, theta, vx, vy, omega = s
    throttle, delta = u
    (alpha_f, alpha_r, scale,
     (sin_f, dsin_f, F_fy), (sin_r, dsin_r, F_ry)) = _lateral_setup(
        s, u, p, tires, disturbances, t)
    sd, cd = math.sin(delta), math.cos(delta)

    # slip-angle partials w.r.t. (vx, vy, omega)
    qf = (vy + p.lf * omega) / vx
    qr = (vy - p.lr * omega) / vx
    den_f = 1.0 + qf * qf
    den_r = 1.0 + qr * qr
    daf = np.array([qf / (vx * den_f), -1.0 / (vx * den_f), -p.lf / (vx * den_f)])
    dar = np.array([qr / (vx * den_r), -1.0 / (vx * den_r), p.lr / (vx * den_r)])

    # roll-type scale factors depend on (vx, omega); temperature does not
    dscale = np.zeros(3)  # over (vx, vy, omega)
    if scale != 0.0:
        for dist in disturbances:
            if dist.kind in SCALE_KINDS:
                si = _tire_scale(dist, s, t, p)
                gvx, gom = _tire_scale_gradient(dist, s, t, p)
                if si > 0.0:
                    # product rule over composed scale factors
                    dscale[0] += scale / si * gvx
                    dscale[2] += scale / si * gom

    # tire force partials over (vx, vy, omega)
    dF_fy = scale * tires.front.D * dsin_f * daf + tires.front.D * sin_f * dscale
    dF_ry = scale * tires.rear.D * dsin_r * dar + tires.rear.D * sin_r * dscale
    dF_rx_dvx = -drivetrain.Cm2 - 2.0 * drivetrain.Cd * vx

    jac = np.zeros((6, 6))
    jac[0, 2] = -vx * math.sin(theta) - vy * math.cos(theta)
    jac[0, 3] = math.cos(theta)
    jac[0, 4] = -math.sin(theta)
    jac[1, 2] = vx * math.cos(theta) - vy * math.sin(theta)
    jac[1, 3] = math.sin(theta)
    jac[1, 4] = math.cos(theta)
    jac[2, 5] = 1.0

    jac[3, 3] = (dF_rx_dvx - sd * dF_fy[0]) / p.m
    jac[3, 4] = -sd * dF_fy[1] / p.m + omega
    jac[3, 5] = -sd * dF_fy[2] / p.m + vy

    jac[4, 3] = (dF_ry[0] + cd * dF_fy[0]) / p.m - omega
    jac[4, 4] = (dF_ry[1] + cd * dF_fy[1]) / p.m
    jac[4, 5] = (dF_ry[2] + cd * dF_fy[2]) / p.m - vx
    for dist in disturbances:
        if dist.kind == "wind":
            q = dist.params
            jac[4, 4] -= q["rho"] * q["area"] * q["Cw"] * abs(q["vw"] - vy) / p.m

    jac[5, 3] = (p.lf * cd * dF_fy[0] - p.lr * dF_ry[0]) / p.Iz
    jac[5, 4] = (p.lf * cd * dF_fy[1] - p.lr * dF_ry[1]) / p.Iz
    jac[5, 5] = (p.lf * cd * dF_fy[2] - p.lr * dF_ry[2]) / p.Iz
    return jac


# ---------------------------------------------------------------------------
# system wrappers (the rhs+jacobian pair consumed by Fisher-field evaluation)


class KinematicModel:
    """Kinematic bicycle as an (rhs, jacobian) system."""

    state_dim = 3
    input_dim = 2
    state_names = ("x", "y", "theta")
    input_names = ("v", "delta")

    def __init__(self, params: VehicleParams | None = None):
        self.params = params or VehicleParams.kinematic_default()

    def rhs(self, s, u, t: float = 0.0) -> np.ndarray:
        return kinematic_rhs(s, u, self.params)

    def jacobian(self, s, u, t: float = 0.0) -> np.ndarray:
        return kinematic_jacobian(s, u, self.params)


class DynamicModel:
    """Dynamic bicycle (optionally disturbed) as an (rhs, jacobian) system."""

    state_dim = 6
    input_dim = 2
    state_names = ("x", "y", "theta", "vx", "vy", "omega")
    input_names = ("throttle", "delta")

    def __init__(self, params: VehicleParams | None = None,
                 tires: TirePair | None = None,
                 drivetrain: DrivetrainCoefficients | None = None,
                 disturbances=()):
        self.params = params or VehicleParams.dynamic_default()
        self.tires = tires or TirePair.default()
        self.drivetrain = drivetrain or DrivetrainCoefficients()
        self.disturbances = tuple(disturbances)

    def rhs(self, s, u, t: float = 0.0) -> np.ndarray:
        return dynamic_rhs(s, u, self.params, self.tires, self.drivetrain,
                           self.disturbances, t)

    def jacobian(self, s, u, t: float = 0.0) -> np.ndarray:
        return dynamic_jacobian(s, u, self.params, self.tires, self.drivetrain,
                                self.disturbances, t)

    def with_tires(self, tires: TirePair) -> "DynamicModel":
        return DynamicModel(self.params, tires, self.drivetrain, self.disturbances)

    def without_disturbances(self) -> "DynamicModel":
        return DynamicModel(self.params, self.tires, self.drivetrain, ())
