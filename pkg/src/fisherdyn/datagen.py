"""Synthetic experiment data.

Circular reference paths, a pure-pursuit look-ahead controller, closed-loop
RK4 rollouts (controller re-evaluated every step, disturbance forces held
within a step like the inputs), and CSV dataset files that round-trip
bit-exactly.

Recorded headings are left unwrapped (continuous) so that rollout losses and
finite differences across a lap stay smooth; the (-pi, pi] convention is
applied only inside controller geometry.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from .dynamics import DELTA_MAX, DomainError, ConfigError, wrap_angle
from .numerics import rk4_step

__all__ = [
    "ReferencePath",
    "SimulationConfig",
    "Trajectory",
    "circular_path",
    "lookahead_steer",
    "PurePursuitController",
    "ManeuverController",
    "simulate",
    "write_dataset",
    "read_dataset",
    "write_points",
    "read_points",
    "derivative_samples",
    "generate_kinematic_dataset",
    "generate_dynamic_dataset",
]


@dataclass(frozen=True)
class ReferencePath:
    waypoints: np.ndarray  # (n, 2)
    closed: bool = False

    def __post_init__(self):
        pts = np.asarray(self.waypoints, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ConfigError("a path needs at least two (x, y) waypoints")
        if np.any(np.all(np.diff(pts, axis=0) == 0.0, axis=1)):
            raise ConfigError("consecutive waypoints must be distinct")
        object.__setattr__(self, "waypoints", pts)


@dataclass(frozen=True)
class SimulationConfig:
    dt: float = 0.1
    total_time: float = 31.0
    wheelbase: float = 2.5
    lookahead: float = 3.0
    speed: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.dt <= 0 or self.total_time < self.dt or self.lookahead <= 0:
            raise ConfigError("need dt > 0, total_time >= dt, lookahead > 0")

    @property
    def n_samples(self) -> int:
        return int(round(self.total_time / self.dt)) + 1


@dataclass
class Trajectory:
    """One rollout: aligned times, states, inputs and recorded RHS values."""

    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    derivs: np.ndarray
    disturbance_kind: str = "none"
    exit_reason: str = ""
    state_names: tuple = ()
    input_names: tuple = ()

    def __len__(self) -> int:
        return self.times.size


def circular_path(radius: float, n: int) -> ReferencePath:
    """n evenly spaced samples of (R cos th, R sin th), th over one turn."""
    if radius <= 0 or n < 3:
        raise ConfigError("need radius > 0 and n >= 3")
    theta = 2.0 * math.pi * np.arange(n) / n
    return ReferencePath(np.column_stack([radius * np.cos(theta),
                                          radius * np.sin(theta)]), closed=True)


def _segment_lengths(path: ReferencePath) -> np.ndarray:
    pts = path.waypoints
    nxt = np.roll(pts, -1, axis=0) if path.closed else pts[1:]
    base = pts if path.closed else pts[:-1]
    return np.linalg.norm(nxt - base, axis=1)


def lookahead_steer(state, path: ReferencePath, d_lookahead: float, L: float,
                    delta_max: float = DELTA_MAX) -> float:
    """Pure-pursuit steering toward the path point >= d_lookahead ahead.

    delta = arctan(2 L sin(alpha) / d_lookahead), alpha the heading error to
    the target point, clamped to +-delta_max.
    """
    x, y, theta = state[0], state[1], state[2]
    pts = path.waypoints
    nearest = int(np.argmin(np.hypot(pts[:, 0] - x, pts[:, 1] - y)))
    seg = _segment_lengths(path)
    n = pts.shape[0]

    target = pts[-1]
    acc = 0.0
    steps = n if path.closed else n - 1 - nearest
    idx = nearest
    for _ in range(steps):
        acc += seg[idx % seg.size]
        idx = (idx + 1) % n
        if acc >= d_lookahead:
            target = pts[idx]
            break
    else:
        target = pts[idx % n]

    alpha = wrap_angle(math.atan2(target[1] - y, target[0] - x) - theta)
    delta = math.atan(2.0 * L * math.sin(alpha) / d_lookahead)
    return float(np.clip(delta, -delta_max, delta_max))


class PurePursuitController:
    """Constant-speed pure pursuit for the kinematic bicycle."""

    def __init__(self, path: ReferencePath, cfg: SimulationConfig):
        self.path = path
        self.cfg = cfg

    def __call__(self, state, t: float) -> np.ndarray:
        delta = lookahead_steer(state, self.path, self.cfg.lookahead,
                                self.cfg.wheelbase)
        return np.array([self.cfg.speed, delta])


class ManeuverController:
    """Scripted steering plus proportional speed hold for the dynamic model.

    steering(t) and throttle feedback T = clip(T_ff + k_speed (v_set(t) - vx))
    give repeatable slalom maneuvers without needing a racing line; a time-
    varying setpoint keeps the longitudinal channel excited.
    """

    def __init__(self, steer_fn, v_set, k_speed: float = 1.0,
                 throttle_ff: float = 0.2, delta_max: float = DELTA_MAX):
        self.steer_fn = steer_fn
        self.v_set = v_set if callable(v_set) else (lambda t: v_set)
        self.k_speed = k_speed
        self.throttle_ff = throttle_ff
        self.delta_max = delta_max

    def __call__(self, state, t: float) -> np.ndarray:
        vx = state[3]
        throttle = np.clip(self.throttle_ff + self.k_speed * (self.v_set(t) - vx),
                           0.0, 1.0)
        delta = np.clip(self.steer_fn(t), -self.delta_max, self.delta_max)
        return np.array([throttle, delta])


def simulate(model, controller, cfg: SimulationConfig, initial_state) -> Trajectory:
    """Closed-loop rollout of ``model`` (which carries its own disturbances).

    Records n = total_time/dt + 1 samples with t_i = i*dt exactly; on an
    envelope exit the trajectory is truncated and the reason recorded.
    """
    n = cfg.n_samples
    state = np.asarray(initial_state, dtype=float).copy()
    times, states, inputs, derivs = [], [], [], []
    exit_reason = ""
    for i in range(n):
        t = i * cfg.dt
        u = np.asarray(controller(state, t), dtype=float)
        try:
            xdot = model.rhs(state, u, t)
        except DomainError as err:
            exit_reason = f"envelope exit at t={t:g}: {err}"
            break
        times.append(t)
        states.append(state.copy())
        inputs.append(u)
        derivs.append(xdot)
        if i == n - 1:
            break
        try:
            state = rk4_step(lambda xx, uu: model.rhs(xx, uu, t), state, u, cfg.dt)
        except DomainError as err:
            exit_reason = f"envelope exit at t={t + cfg.dt:g}: {err}"
            break
    kinds = sorted({d.kind for d in getattr(model, "disturbances", ())})
    return Trajectory(np.array(times), np.array(states), np.array(inputs),
                      np.array(derivs),
                      disturbance_kind="+".join(kinds) if kinds else "none",
                      exit_reason=exit_reason,
                      state_names=tuple(model.state_names),
                      input_names=tuple(model.input_names))


# ---------------------------------------------------------------------------
# dataset files


def _fmt(v: float) -> str:
    return repr(float(v))


def _traj_to_csv(traj: Trajectory) -> str:
    s_names = traj.state_names or tuple(f"s{i}" for i in range(traj.states.shape[1]))
    i_names = traj.input_names or tuple(f"u{i}" for i in range(traj.inputs.shape[1]))
    header = (["t"] + list(s_names) + list(i_names)
              + [f"xdot_{n}" for n in s_names] + ["disturbance_kind"])
    lines = [",".join(header)]
    for k in range(len(traj)):
        row = ([_fmt(traj.times[k])]
               + [_fmt(v) for v in traj.states[k]]
               + [_fmt(v) for v in traj.inputs[k]]
               + [_fmt(v) for v in traj.derivs[k]]
               + [traj.disturbance_kind])
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _traj_from_csv(text: str, path: str) -> Trajectory:
    lines = [ln for ln in text.split("\n") if ln.strip()]
    header = lines[0].split(",")
    n_total = len(header)
    try:
        first_xdot = next(i for i, h in enumerate(header) if h.startswith("xdot_"))
    except StopIteration:
        raise ConfigError(f"{path}:1: missing xdot columns in header")
    # layout: t | states | inputs | xdot (one per state) | disturbance_kind
    n_state = n_total - 1 - first_xdot
    s_names = tuple(header[1:1 + n_state])
    i_names = tuple(header[1 + n_state:first_xdot])

    times, states, inputs, derivs, kind = [], [], [], [], "none"
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != n_total:
            raise ConfigError(f"{path}:{lineno}: expected {n_total} fields, got {len(parts)}")
        try:
            vals = [float(v) for v in parts[:-1]]
        except ValueError as err:
            raise ConfigError(f"{path}:{lineno}: {err}")
        times.append(vals[0])
        states.append(vals[1:1 + n_state])
        inputs.append(vals[1 + n_state:first_xdot])
        derivs.append(vals[first_xdot:n_total - 1])
        kind = parts[-1]
    return Trajectory(np.array(times), np.array(states), np.array(inputs),
                      np.array(derivs), disturbance_kind=kind,
                      state_names=s_names, input_names=i_names)


def write_dataset(trajectories, directory, manifest_extra: dict | None = None) -> list:
    """Write one CSV per trajectory plus a provenance manifest; returns paths."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    entries = []
    for i, traj in enumerate(trajectories):
        name = f"traj_{i:03d}.csv"
        path = os.path.join(directory, name)
        with open(path, "w") as fh:
            fh.write(_traj_to_csv(traj))
        paths.append(path)
        entries.append({"file": name, "samples": len(traj),
                        "disturbance_kind": traj.disturbance_kind,
                        "exit_reason": traj.exit_reason})
    manifest = {"trajectories": entries}
    if manifest_extra:
        manifest.update(manifest_extra)
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return paths


def read_dataset(directory) -> list:
    manifest_path = os.path.join(directory, "manifest.json")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    out = []
    for entry in manifest["trajectories"]:
        path = os.path.join(directory, entry["file"])
        with open(path) as fh:
            traj = _traj_from_csv(fh.read(), path)
        traj.exit_reason = entry.get("exit_reason", "")
        out.append(traj)
    return out


def write_points(points, path) -> None:
    """Collocation samples [(state, input), ...] to a two-block CSV."""
    points = list(points)
    if not points:
        raise ConfigError("refusing to write an empty collocation file")
    ns, ni = len(points[0][0]), len(points[0][1])
    header = [f"state_{i}" for i in range(ns)] + [f"input_{i}" for i in range(ni)]
    lines = [",".join(header)]
    for s, u in points:
        lines.append(",".join([_fmt(v) for v in s] + [_fmt(v) for v in u]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_points(path) -> list:
    with open(path) as fh:
        lines = [ln for ln in fh.read().split("\n") if ln.strip()]
    header = lines[0].split(",")
    ns = sum(1 for h in header if h.startswith("state_"))
    out = []
    for lineno, ln in enumerate(lines[1:], start=2):
        try:
            vals = [float(v) for v in ln.split(",")]
        except ValueError as err:
            raise ConfigError(f"{path}:{lineno}: {err}")
        out.append((np.array(vals[:ns]), np.array(vals[ns:])))
    return out


def derivative_samples(trajectories, noise_sigma: float = 0.0, seed: int = 0):
    """Stack (states, inputs, xdot) from trajectories; optional zero-mean
    Gaussian noise on the derivative channel only."""
    states = np.concatenate([t.states for t in trajectories])
    inputs = np.concatenate([t.inputs for t in trajectories])
    derivs = np.concatenate([t.derivs for t in trajectories])
    if noise_sigma > 0.0:
        rng = np.random.default_rng(seed)
        derivs = derivs + rng.normal(0.0, noise_sigma, size=derivs.shape)
    return states, inputs, derivs


# ---------------------------------------------------------------------------
# stock dataset generators


def generate_kinematic_dataset(model, cfg: SimulationConfig,
                               radius: float = 20.0, n_waypoints: int = 1000,
                               n_arcs: int = 4, n_straights: int = 3) -> list:
    """Circular tracking run + random constant-steer arcs + straight runs.

    Covers the heading/speed/steering box the collocation bounds describe
    while keeping every trajectory dynamically feasible.
    """
    rng = np.random.default_rng(cfg.seed)
    path = circular_path(radius, n_waypoints)
    start = np.array([radius, 0.0, math.pi / 2.0])  # tangent start on the circle
    trajs = [simulate(model, PurePursuitController(path, cfg), cfg, start)]

    short = SimulationConfig(dt=cfg.dt, total_time=min(cfg.total_time, 8.0),
                             wheelbase=cfg.wheelbase, lookahead=cfg.lookahead,
                             speed=cfg.speed, seed=cfg.seed)

    class _Const:
        def __init__(self, v, d):
            self.u = np.array([v, d])

        def __call__(self, state, t):
            return self.u

    for _ in range(n_arcs):
        v = rng.uniform(0.5, 5.0)
        d = rng.uniform(-DELTA_MAX, DELTA_MAX)
        s0 = np.array([rng.uniform(-20, 20), rng.uniform(-5, 5),
                       rng.uniform(-0.5236, 0.5236)])
        trajs.append(simulate(model, _Const(v, d), short, s0))
    for _ in range(n_straights):
        v = rng.uniform(0.5, 5.0)
        s0 = np.array([rng.uniform(-20, 20), rng.uniform(-5, 5),
                       rng.uniform(-0.5236, 0.5236)])
        trajs.append(simulate(model, _Const(v, 0.0), short, s0))
    return trajs


# designed excitation schedule for the desk-scale car: two straight-line
# speed sweeps that pin the drivetrain, then a slalom severity ladder that
# walks the tires from moderate slip to full saturation.
_LONGITUDINAL_RUNS = ((1.6, 0.7, 0.15), (2.6, 0.6, 0.25))  # (v0, dv, fv)
_SLALOM_RUNS = (  # (amplitude, v0, steer frequency)
    (0.25, 1.6, 0.20), (0.30, 2.8, 0.45), (0.36, 2.0, 0.30),
    (0.42, 3.0, 0.35), (0.48, 2.4, 0.25), (DELTA_MAX, 2.6, 0.40),
)


def generate_dynamic_dataset(model, n_runs: int = 8, duration: float = 20.0,
                             dt: float = 0.02, seed: int = 0) -> list:
    """Designed maneuver ladder for the desk-scale car.

    Straight-line speed sweeps pin the drivetrain coefficients; the slalom
    ladder sweeps steering severity up to tire saturation. The seed only
    jitters the slalom phases, so every seed sees the same excitation ladder.
    """
    rng = np.random.default_rng(seed)
    cfg = SimulationConfig(dt=dt, total_time=duration, speed=0.0, seed=seed)
    schedule = []
    for v0, dv, fv in _LONGITUDINAL_RUNS:
        schedule.append((0.0, v0, 0.3, dv, fv, 0.0))
    for amp, v0, f1 in _SLALOM_RUNS:
        schedule.append((amp, v0, f1, 0.2, 0.2, rng.uniform(0.0, 2.0 * math.pi)))

    trajs = []
    for amp, v0, f1, dv, fv, phase in schedule[:n_runs]:
        def steer(t, a1=amp, f1=f1, ph=phase):
            return (a1 * math.sin(2.0 * math.pi * f1 * t + ph)
                    + 0.2 * a1 * math.sin(2.0 * math.pi * 0.8 * t))

        def v_set(t, v0=v0, dv=dv, fv=fv):
            return v0 + dv * math.sin(2.0 * math.pi * fv * t)

        controller = ManeuverController(steer, v_set, k_speed=1.5,
                                        throttle_ff=0.25)
        s0 = np.array([0.0, 0.0, 0.0, v0, 0.0, 0.0])
        trajs.append(simulate(model, controller, cfg, s0))
    return trajs
