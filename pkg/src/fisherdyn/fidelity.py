"""Geometric-fidelity evaluation between a true and a learned system.

The integrated Fisher-field discrepancy is quadrature-weighted:

    e_fi = V * mean_valid[(g_true - g_learned)^2]

with V the domain volume of the evaluation scheme (grid studies pass the
product of the swept interval lengths; trajectory/dataset studies use V = 1,
i.e. a normalized measure). The coordinate-dependent mean Frobenius Jacobian
difference is reported alongside as the baseline it is meant to improve on.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .fisher import AlignmentError, FisherField

__all__ = [
    "FidelityReport",
    "ParameterBiasTable",
    "fisher_discrepancy",
    "jacobian_baseline",
    "well_trained_verdict",
    "parameter_bias_table",
    "comparison_curves",
    "DEFAULT_TOLERANCES",
]

# (epsilon_d, epsilon_p, epsilon) defaults: normalized trajectory RMS, physics
# residual MSE, relative Fisher discrepancy.
DEFAULT_TOLERANCES = {"eps_d": 1e-2, "eps_p": 1e-3, "eps": 0.05}


def _aligned_valid(true_field: FisherField, learned_field: FisherField):
    if len(true_field) != len(learned_field):
        raise AlignmentError(
            f"field lengths differ: {len(true_field)} vs {len(learned_field)}")
    if true_field.policy != learned_field.policy:
        raise AlignmentError(
            f"direction policies differ: {true_field.policy!r} vs {learned_field.policy!r}")
    for st, sl in zip(true_field.samples, learned_field.samples):
        if (np.max(np.abs(st.state - sl.state)) > 1e-12
                or np.max(np.abs(st.input - sl.input)) > 1e-12):
            raise AlignmentError("fields were not evaluated at identical points")
    mask = true_field.valid_mask() & learned_field.valid_mask()
    return true_field.g_values()[mask], learned_field.g_values()[mask]


def fisher_discrepancy(true_field: FisherField, learned_field: FisherField,
                       volume: float = 1.0):
    """(e_fi, e_fi_relative). Skip-flagged points are excluded pairwise."""
    g_true, g_learned = _aligned_valid(true_field, learned_field)
    if g_true.size == 0:
        return 0.0, 0.0
    sq = (g_true - g_learned) ** 2
    e_fi = float(volume * np.mean(sq))
    denom = float(np.sum(g_true**2))
    rel = 0.0 if denom == 0.0 and np.sum(sq) == 0.0 else (
        math.inf if denom == 0.0 else float(np.sum(sq) / denom))
    return e_fi, rel


def jacobian_baseline(system_true, system_learned, points) -> float:
    """Mean Frobenius norm of A - Ahat over the points (the coordinate-
    dependent comparison the Fisher metric is held against)."""
    diffs = []
    for point in points:
        s, u = np.asarray(point[0], float), np.asarray(point[1], float)
        t = float(point[2]) if len(point) > 2 else 0.0
        a = system_true.jacobian(s, u, t)
        ahat = system_learned.jacobian(s, u, t)
        diffs.append(float(np.linalg.norm(a - ahat)))
    return float(np.mean(diffs))


def well_trained_verdict(traj_err: float, physics_resid: float,
                         e_fi_relative: float, tolerances: dict | None = None) -> dict:
    """Pass iff all three strict inequalities hold; echoes values and
    thresholds and names the failing criteria."""
    tol = dict(DEFAULT_TOLERANCES)
    if tolerances:
        tol.update(tolerances)
    for name, val in (("traj_err", traj_err), ("physics_resid", physics_resid),
                      ("e_fi_relative", e_fi_relative)):
        if val < 0:
            raise ValueError(f"{name} must be >= 0")
    failing = []
    if not traj_err < tol["eps_d"]:
        failing.append("trajectory_error")
    if not physics_resid < tol["eps_p"]:
        failing.append("physics_residual")
    if not e_fi_relative < tol["eps"]:
        failing.append("fisher_discrepancy")
    return {
        "verdict": "geometric_fidelity_pass" if not failing else "fail",
        "failing": failing,
        "traj_err": traj_err,
        "physics_resid": physics_resid,
        "e_fi_relative": e_fi_relative,
        "tolerances": tol,
    }


@dataclass
class FidelityReport:
    e_fi: float
    e_fi_relative: float
    jacobian_baseline: float
    per_sample: list  # (index, g_true, g_learned, diff) over valid pairs
    verdict: dict

    def to_json_dict(self) -> dict:
        return {
            "e_fi": self.e_fi,
            "e_fi_relative": self.e_fi_relative,
            "jacobian_baseline": self.jacobian_baseline,
            "n_samples": len(self.per_sample),
            "per_sample": [[int(i), g1, g2, d] for i, g1, g2, d in self.per_sample],
            "verdict": self.verdict,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def comparison_curves(true_field: FisherField, learned_field: FisherField) -> str:
    """Per-sample CSV (index, g_true, g_learned, difference) over valid pairs."""
    rows = per_sample_rows(true_field, learned_field)
    lines = ["index,g_true,g_learned,difference"]
    for i, gt, gl, d in rows:
        lines.append(f"{i},{gt!r},{gl!r},{d!r}")
    return "\n".join(lines) + "\n"


def per_sample_rows(true_field: FisherField, learned_field: FisherField) -> list:
    _aligned_valid(true_field, learned_field)  # alignment check
    rows = []
    for i, (st, sl) in enumerate(zip(true_field.samples, learned_field.samples)):
        if st.skipped or sl.skipped:
            continue
        rows.append((i, float(st.g), float(sl.g), float(st.g - sl.g)))
    return rows


@dataclass
class ParameterBiasTable:
    names: list
    means: np.ndarray
    stds: np.ndarray
    true_values: np.ndarray

    def relative_deviation(self) -> np.ndarray:
        return np.abs(self.means - self.true_values) / np.abs(self.true_values)

    def most_deviated(self) -> list:
        """Coefficient names sorted by |mean - true| / |true|, worst first."""
        order = np.argsort(-self.relative_deviation())
        return [self.names[i] for i in order]

    def to_csv(self) -> str:
        lines = ["parameter,mean,std,true"]
        for i, name in enumerate(self.names):
            lines.append(f"{name},{self.means[i]!r},{self.stds[i]!r},"
                         f"{self.true_values[i]!r}")
        return "\n".join(lines) + "\n"


def parameter_bias_table(names, records, true_values) -> ParameterBiasTable:
    """Sample mean and population standard deviation per coefficient.

    ``records`` has one row per estimate, one column per coefficient.
    """
    records = np.asarray(records, dtype=float)
    if records.ndim != 2 or records.shape[0] < 2:
        raise ValueError("need at least two estimate records per coefficient")
    if records.shape[1] != len(names):
        raise ValueError("record width does not match the coefficient names")
    return ParameterBiasTable(list(names), records.mean(axis=0),
                              records.std(axis=0),
                              np.asarray(true_values, dtype=float))
