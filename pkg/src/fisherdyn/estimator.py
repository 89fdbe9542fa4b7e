"""Recurrent coefficient estimator for the dynamic bicycle model.

A history of tau (state, input, input-increment) steps feeds a GRU; a small
mish head maps the final hidden state to unconstrained outputs; the Physics
Guard squashes them into per-coefficient bounds; the guarded coefficients
drive one RK4 step of the nominal velocity dynamics, and the loss is the mean
squared (vx, vy, omega) prediction error.

Gradients are exact through guard, head and GRU (backprop through time); the
sensitivity of the physics step to the twelve estimated coefficients is taken
by central differences with bound-scaled steps, which is cheap because the
step is vectorized over the whole batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (DrivetrainCoefficients, PacejkaCoefficients, TirePair,
                       VehicleParams)
from .nets import (GruSpec, LayerSpec, NetworkParams, PhysicsGuardBounds,
                   adam_step, gru_backward, gru_forward_cache, init_adam,
                   init_gru, init_network, mlp_forward_cache, mlp_vjp,
                   physics_guard, physics_guard_derivative)
from .training import ddm_loss

__all__ = [
    "COEFFICIENT_NAMES",
    "EstimatorConfig",
    "EstimatorModel",
    "EstimatorRun",
    "true_coefficients",
    "coefficients_to_structs",
    "default_guard_bounds",
    "build_windows",
    "predict_next_velocities",
    "train_coefficient_estimator",
]

COEFFICIENT_NAMES = ("Bf", "Cf", "Df", "Ef", "Br", "Cr", "Dr", "Er",
                     "Cm1", "Cm2", "Cr0", "Cd")


def true_coefficients(tires: TirePair, drivetrain: DrivetrainCoefficients) -> np.ndarray:
    f, r = tires.front, tires.rear
    return np.array([f.B, f.C, f.D, f.E, r.B, r.C, r.D, r.E,
                     drivetrain.Cm1, drivetrain.Cm2, drivetrain.Cr0, drivetrain.Cd])


def coefficients_to_structs(vec, template: TirePair):
    """Rebuild parameter structs from a coefficient vector (G and K are not
    estimated; they come from the template tires)."""
    vec = np.asarray(vec, dtype=float)
    front = PacejkaCoefficients(B=vec[0], C=vec[1], D=vec[2], E=vec[3],
                                G=template.front.G, K=template.front.K)
    rear = PacejkaCoefficients(B=vec[4], C=vec[5], D=vec[6], E=vec[7],
                               G=template.rear.G, K=template.rear.K)
    drive = DrivetrainCoefficients(Cm1=vec[8], Cm2=vec[9], Cr0=vec[10], Cd=vec[11])
    return TirePair(front, rear), drive


def default_guard_bounds(tires: TirePair, drivetrain: DrivetrainCoefficients,
                         bc_width: float = 0.5, d_width: float = 0.15,
                         drivetrain_width: float = 0.15,
                         e_half: float = 0.1) -> PhysicsGuardBounds:
    """Tiered brackets around the nominal values.

    Stiffness/curvature factors B, C get wide relative windows (surface
    dependent), peak factors D and the drivetrain narrower ones (measurable
    on a skidpad / dyno), and the shape factors E an absolute window since
    their nominal magnitudes are tiny but their drift is not.
    """
    truth = true_coefficients(tires, drivetrain)
    lower, upper = [], []
    for name, val in zip(COEFFICIENT_NAMES, truth):
        if name in ("Ef", "Er"):
            half = e_half
        elif name in ("Df", "Dr"):
            half = d_width * abs(val)
        elif name in ("Cm1", "Cm2", "Cr0", "Cd"):
            half = drivetrain_width * abs(val)
        else:
            half = bc_width * abs(val)
        lower.append(val - half)
        upper.append(val + half)
    return PhysicsGuardBounds(np.array(lower), np.array(upper))


# ---------------------------------------------------------------------------
# batched nominal physics


def _batched_pacejka(alpha, B, C, D, E, G, K):
    ba = B * alpha
    psi = ba - E * (ba - np.arctan(ba * G))
    return K + D * np.sin(C * np.arctan(psi))


def _velocity_rhs(vel, throttle, delta, coef, p: VehicleParams, template: TirePair):
    """(vx-dot, vy-dot, omega-dot) for a batch; coef has shape (n, 12)."""
    vx, vy, om = vel[:, 0], vel[:, 1], vel[:, 2]
    alpha_f = delta - np.arctan((vy + p.lf * om) / vx)
    alpha_r = -np.arctan((vy - p.lr * om) / vx)
    F_fy = _batched_pacejka(alpha_f, coef[:, 0], coef[:, 1], coef[:, 2], coef[:, 3],
                            template.front.G, template.front.K)
    F_ry = _batched_pacejka(alpha_r, coef[:, 4], coef[:, 5], coef[:, 6], coef[:, 7],
                            template.rear.G, template.rear.K)
    F_rx = (coef[:, 8] * throttle - coef[:, 9] * vx) - coef[:, 10] - coef[:, 11] * vx * vx
    sd, cd = np.sin(delta), np.cos(delta)
    return np.column_stack([
        (F_rx - F_fy * sd) / p.m + vy * om,
        (F_ry + F_fy * cd) / p.m - vx * om,
        (F_fy * p.lf * cd - F_ry * p.lr) / p.Iz,
    ])


def predict_next_velocities(states, coef, p: VehicleParams, template: TirePair,
                            Ts: float) -> np.ndarray:
    """One RK4 step of the nominal velocity subsystem with held inputs.

    ``states`` rows are (vx, vy, omega, throttle, delta); matches the data
    generator's integrator so that exact coefficients give exact predictions.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    vel = states[:, :3]
    throttle, delta = states[:, 3], states[:, 4]
    k1 = _velocity_rhs(vel, throttle, delta, coef, p, template)
    k2 = _velocity_rhs(vel + 0.5 * Ts * k1, throttle, delta, coef, p, template)
    k3 = _velocity_rhs(vel + 0.5 * Ts * k2, throttle, delta, coef, p, template)
    k4 = _velocity_rhs(vel + Ts * k3, throttle, delta, coef, p, template)
    return vel + (Ts / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# ---------------------------------------------------------------------------
# window assembly


@dataclass
class WindowSet:
    """tau-step feature histories plus the sample each one predicts."""

    features: np.ndarray   # (n, tau, 7): vx, vy, omega, T, delta, dT, ddelta
    base_states: np.ndarray  # (n, 5): vx, vy, omega, T, delta at the window end
    targets: np.ndarray    # (n, 3): next (vx, vy, omega)
    sources: list          # (trajectory index, sample index of the window end)

    def __len__(self) -> int:
        return self.features.shape[0]


def build_windows(trajectories, tau: int) -> WindowSet:
    """Assemble histories from dynamic-model trajectories (states include
    (.., vx, vy, omega), inputs are (throttle, delta))."""
    feats, bases, targets, sources = [], [], [], []
    for ti, traj in enumerate(trajectories):
        vel = traj.states[:, 3:6]
        u = traj.inputs
        du = np.diff(u, axis=0)  # du[k] applied at step k
        n = len(traj)
        step_feats = np.column_stack([vel[:-1], u[:-1], du])
        for t in range(tau - 1, n - 1):
            feats.append(step_feats[t - tau + 1:t + 1])
            bases.append(np.concatenate([vel[t], u[t]]))
            targets.append(vel[t + 1])
            sources.append((ti, t))
    if not feats:
        raise ValueError("trajectories too short for the requested history length")
    return WindowSet(np.stack(feats), np.stack(bases), np.stack(targets), sources)


# ---------------------------------------------------------------------------
# the estimator


@dataclass(frozen=True)
class EstimatorConfig:
    tau: int = 5
    hidden_size: int = 32
    head_width: int = 32
    lr: float = 1.9e-3
    epochs: int = 150
    batch_size: int = 512
    seed: int = 0
    fd_step_rel: float = 1e-6

    def __post_init__(self):
        if self.tau < 1:
            raise ValueError("history length tau must be >= 1")


class EstimatorModel:
    """GRU + mish head + Physics Guard over the twelve nominal coefficients."""

    def __init__(self, cfg: EstimatorConfig, bounds: PhysicsGuardBounds,
                 params: VehicleParams, template: TirePair, Ts: float,
                 feat_offset, feat_scale):
        self.cfg = cfg
        self.bounds = bounds
        self.params = params
        self.template = template
        self.Ts = Ts
        self.feat_offset = np.asarray(feat_offset, dtype=float)
        self.feat_scale = np.asarray(feat_scale, dtype=float)
        n_coef = len(COEFFICIENT_NAMES)
        self.gru = init_gru(7, cfg.hidden_size, seed=cfg.seed)
        self.head = init_network(cfg.hidden_size,
                                 (LayerSpec(cfg.head_width, "mish"),
                                  LayerSpec(n_coef, "linear")),
                                 seed=cfg.seed + 1)
        # Small head output weights start the guard near mid-bounds.
        self.head.weights[-1] *= 0.01

    def param_list(self) -> list:
        return self.gru.param_list() + self.head.param_list()

    def _normalize(self, features):
        return (features - self.feat_offset) / self.feat_scale

    def estimate(self, features, with_cache: bool = False):
        """Guarded coefficient estimates for a (n, tau, 7) feature batch."""
        h, gru_cache = gru_forward_cache(self.gru, self._normalize(features))
        z, head_cache = mlp_forward_cache(self.head, h)
        phi = physics_guard(z, self.bounds)
        if with_cache:
            return phi, (z, gru_cache, head_cache)
        return phi

    def backward(self, cache, grad_phi):
        """Gradients for ``param_list()`` given dLoss/dPhi."""
        z, gru_cache, head_cache = cache
        grad_z = grad_phi * physics_guard_derivative(z, self.bounds)
        grad_h, head_grads = mlp_vjp(self.head, head_cache, grad_z)
        gru_grads = gru_backward(self.gru, gru_cache, grad_h)
        return gru_grads + [a for pair in head_grads for a in pair]

    def predict(self, windows: WindowSet, phi=None) -> np.ndarray:
        if phi is None:
            phi = self.estimate(windows.features)
        return predict_next_velocities(windows.base_states, phi, self.params,
                                       self.template, self.Ts)


@dataclass
class EstimatorRun:
    model: EstimatorModel
    loss_curve: list
    phi_records: np.ndarray  # (n_windows, 12) final per-window estimates
    sources: list
    diverged: bool = False
    wall_time_s: float = 0.0


def _phi_gradient(model: EstimatorModel, windows: WindowSet, idx, phi, resid):
    """dLoss/dPhi by batched central differences, one coefficient at a time."""
    n, three = resid.shape
    width = model.bounds.upper - model.bounds.lower
    grad = np.zeros_like(phi)
    base = windows.base_states[idx]
    for j in range(phi.shape[1]):
        h = model.cfg.fd_step_rel * width[j]
        up = phi.copy()
        up[:, j] += h
        dn = phi.copy()
        dn[:, j] -= h
        pu = predict_next_velocities(base, up, model.params, model.template, model.Ts)
        pd = predict_next_velocities(base, dn, model.params, model.template, model.Ts)
        dpred = (pu - pd) / (2.0 * h)
        grad[:, j] = np.sum(resid * dpred, axis=1) * (2.0 / (three * n))
    return grad


def train_coefficient_estimator(cfg: EstimatorConfig, trajectories,
                                params: VehicleParams, template: TirePair,
                                bounds: PhysicsGuardBounds | None = None,
                                Ts: float | None = None) -> EstimatorRun:
    """Fit the estimator on (possibly disturbed) trajectories against the
    nominal physics; returns the trained model plus per-window estimates."""
    import time as _time
    start = _time.perf_counter()

    windows = build_windows(trajectories, cfg.tau)
    if Ts is None:
        Ts = float(trajectories[0].times[1] - trajectories[0].times[0])
    flat = windows.features.reshape(-1, windows.features.shape[2])
    offset = flat.mean(axis=0)
    scale = np.maximum(flat.std(axis=0), 1e-6)
    if bounds is None:
        bounds = default_guard_bounds(template, DrivetrainCoefficients())

    model = EstimatorModel(cfg, bounds, params, template, Ts, offset, scale)
    opt = init_adam(model.param_list(), lr=cfg.lr)

    n = len(windows)
    curve = []
    diverged = False
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng(cfg.seed * 913 + epoch)
        order = rng.permutation(n)
        epoch_loss = 0.0
        seen = 0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            feats = windows.features[idx]
            phi, cache = model.estimate(feats, with_cache=True)
            pred = predict_next_velocities(windows.base_states[idx], phi,
                                           model.params, model.template, model.Ts)
            resid = pred - windows.targets[idx]
            loss = float(np.mean(resid * resid))
            if not math.isfinite(loss):
                diverged = True
                break
            grad_phi = _phi_gradient(model, windows, idx, phi, resid)
            grads = model.backward(cache, grad_phi)
            adam_step(model.param_list(), grads, opt)
            epoch_loss += loss * idx.size
            seen += idx.size
        if diverged:
            curve.append(math.inf)
            break
        curve.append(epoch_loss / max(seen, 1))

    phi_final = model.estimate(windows.features)
    return EstimatorRun(model, curve, phi_final, windows.sources, diverged,
                        _time.perf_counter() - start)
