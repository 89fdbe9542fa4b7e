"""Classical Fisher information of linearized deterministic dynamics.

For a stability matrix A = grad_x F(x, u) and a unit perturbation du, the
information scalar is the variance of the logarithmic derivative L = 2 Abar,
Abar = A - <A> I:

    g = 4 (<A^T A> - <A>^2),     <X> = du^T X du.

Under the flow-aligned direction du = xdot/|xdot| this equals
4 kappa^2 |xdot|^2 with kappa the phase-space trajectory curvature, and it is
always bounded by 0 <= g/4 <= sigma_max(A)^2.

``evaluate_field`` sweeps a system's (rhs, jacobian) pair over a point set and
returns a :class:`FisherField` that stores g together with sigma_max^2 so the
bound stays auditable after the fact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dynamics import DomainError
from .numerics import largest_singular_value

__all__ = [
    "EquilibriumError",
    "AlignmentError",
    "FLOW_FLOOR",
    "PerturbationDirection",
    "FisherSample",
    "FisherField",
    "expectation",
    "log_derivative",
    "classical_fisher",
    "flow_direction",
    "curvature_fisher",
    "evaluate_field",
]

# Below this flow norm a point is treated as an equilibrium: the flow-aligned
# direction (and with it g) is undefined there.
FLOW_FLOOR = 1e-8


class EquilibriumError(ValueError):
    """Flow-aligned direction requested at (numerically) zero flow."""


class AlignmentError(ValueError):
    """Two Fisher fields do not share point lists / direction policies."""


@dataclass(frozen=True)
class PerturbationDirection:
    """A unit perturbation vector plus the policy that produced it."""

    du: np.ndarray
    policy: str = "fixed"

    def __post_init__(self):
        du = np.asarray(self.du, dtype=float)
        norm = np.linalg.norm(du)
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"|du| = {norm!r}, expected a unit vector")
        object.__setattr__(self, "du", du)


def basis_axis(index: int, dim: int) -> PerturbationDirection:
    du = np.zeros(dim)
    du[index] = 1.0
    return PerturbationDirection(du, policy=f"basis_axis({index})")


def expectation(x, direction: PerturbationDirection) -> float:
    """<X> = du^T X du (equals Tr(X rho) with rho = du du^T)."""
    x = np.asarray(x, dtype=float)
    du = direction.du
    if x.shape != (du.size, du.size):
        raise ValueError(f"matrix shape {x.shape} does not match direction dim {du.size}")
    return float(du @ x @ du)


def log_derivative(a, direction: PerturbationDirection):
    """Return (Abar, L) with Abar = A - <A> I and L = 2 Abar.

    L is the operator satisfying rho-dot = (L rho + rho L)/2 for the pure
    perturbation state rho = du du^T; by construction <Abar> = 0.
    """
    a = np.asarray(a, dtype=float)
    mean = expectation(a, direction)
    a_bar = a - mean * np.eye(a.shape[0])
    return a_bar, 2.0 * a_bar


def classical_fisher(a, direction: PerturbationDirection) -> float:
    """g = 4 (<A^T A> - <A>^2) >= 0 (round-off negatives clamp to zero)."""
    a = np.asarray(a, dtype=float)
    du = direction.du
    if a.shape != (du.size, du.size):
        raise ValueError(f"matrix shape {a.shape} does not match direction dim {du.size}")
    adu = a @ du
    g = 4.0 * (float(adu @ adu) - float(du @ adu) ** 2)
    return max(g, 0.0)


def flow_direction(xdot, flow_floor: float = FLOW_FLOOR) -> PerturbationDirection:
    """Unit direction along the flow; equilibria are rejected."""
    xdot = np.asarray(xdot, dtype=float)
    norm = np.linalg.norm(xdot)
    if norm <= flow_floor:
        raise EquilibriumError(f"|xdot| = {norm:.3e} <= flow floor {flow_floor:.1e}")
    return PerturbationDirection(xdot / norm, policy="flow_aligned")


def curvature_fisher(a, xdot, flow_floor: float = FLOW_FLOOR) -> float:
    """g via the curvature form 4 kappa^2 |xdot|^2 with xddot = A xdot.

    Algebraically identical to ``classical_fisher(a, flow_direction(xdot))``;
    kept separate as the geometric cross-check.
    """
    a = np.asarray(a, dtype=float)
    xdot = np.asarray(xdot, dtype=float)
    speed = np.linalg.norm(xdot)
    if speed <= flow_floor:
        raise EquilibriumError(f"|xdot| = {speed:.3e} <= flow floor {flow_floor:.1e}")
    u = xdot / speed
    xddot = a @ xdot
    perp = xddot - (u @ xddot) * u
    kappa = np.linalg.norm(perp) / speed**2
    return 4.0 * kappa**2 * speed**2


@dataclass(frozen=True)
class FisherSample:
    """g and the singular-value bound at one (state, input) point."""

    state: np.ndarray
    input: np.ndarray
    g: float
    sigma_max_sq: float
    direction: PerturbationDirection | None
    t: float = 0.0
    skip: str = ""  # "", "equilibrium", or "domain: ..."

    @property
    def skipped(self) -> bool:
        return bool(self.skip)


@dataclass
class FisherField:
    """Ordered Fisher samples over a domain, plus provenance."""

    samples: list
    policy: str
    domain_descriptor: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)

    def g_values(self) -> np.ndarray:
        """g per sample; NaN where skipped."""
        return np.array([np.nan if s.skipped else s.g for s in self.samples])

    def valid_mask(self) -> np.ndarray:
        return np.array([not s.skipped for s in self.samples])

    def to_csv(self, path) -> None:
        n_state = self.samples[0].state.size if self.samples else 0
        n_input = self.samples[0].input.size if self.samples else 0
        header = ([f"state_{i}" for i in range(n_state)]
                  + [f"input_{i}" for i in range(n_input)]
                  + ["g", "sigma_max_sq", "skip_flag"])
        lines = [",".join(header)]
        for s in self.samples:
            vals = [repr(float(v)) for v in s.state] + [repr(float(v)) for v in s.input]
            if s.skipped:
                vals += ["nan", "nan", s.skip]
            else:
                vals += [repr(float(s.g)), repr(float(s.sigma_max_sq)), ""]
            lines.append(",".join(vals))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    def to_json_dict(self) -> dict:
        return {
            "policy": self.policy,
            "domain_descriptor": self.domain_descriptor,
            "samples": [
                {
                    "state": [float(v) for v in s.state],
                    "input": [float(v) for v in s.input],
                    "t": float(s.t),
                    "g": None if s.skipped else float(s.g),
                    "sigma_max_sq": None if s.skipped else float(s.sigma_max_sq),
                    "skip_flag": s.skip,
                }
                for s in self.samples
            ],
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def _resolve_direction(policy, xdot, dim) -> PerturbationDirection:
    if isinstance(policy, PerturbationDirection):
        return policy
    if policy == "flow_aligned":
        return flow_direction(xdot)
    if isinstance(policy, str) and policy.startswith("basis_axis"):
        index = int(policy[policy.index("(") + 1:policy.index(")")])
        return basis_axis(index, dim)
    raise ValueError(f"unknown direction policy {policy!r}")


def evaluate_field(system, points, policy="flow_aligned",
                   domain_descriptor: dict | None = None) -> FisherField:
    """Evaluate g over ``points`` = iterable of (state, input[, t]).

    Per point: A = system.jacobian, direction per ``policy`` (flow alignment
    uses system.rhs), g and sigma_max^2 stored. Equilibria and out-of-envelope
    points are recorded with a skip flag instead of aborting the sweep.
    """
    samples = []
    for point in points:
        state, inp = np.asarray(point[0], float), np.asarray(point[1], float)
        t = float(point[2]) if len(point) > 2 else 0.0
        try:
            a = system.jacobian(state, inp, t)
            xdot = system.rhs(state, inp, t) if policy == "flow_aligned" else None
            direction = _resolve_direction(policy, xdot, state.size)
            g = classical_fisher(a, direction)
            sig2 = largest_singular_value(a) ** 2
            samples.append(FisherSample(state, inp, g, sig2, direction, t))
        except EquilibriumError:
            samples.append(FisherSample(state, inp, float("nan"), float("nan"),
                                        None, t, skip="equilibrium"))
        except DomainError as err:
            samples.append(FisherSample(state, inp, float("nan"), float("nan"),
                                        None, t, skip=f"domain: {err}"))
    policy_name = policy.policy if isinstance(policy, PerturbationDirection) else str(policy)
    return FisherField(samples, policy_name, domain_descriptor or {})
