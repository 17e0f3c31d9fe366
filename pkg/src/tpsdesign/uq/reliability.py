"""Reliability of a set of material samples against the interface threshold."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError
from ..thermal import GridSpec, ThermalScenario
from .posterior import FDModel

__all__ = ["ReliabilityReport", "reliability", "cross_verify"]


@dataclass
class ReliabilityReport:
    n_total: int
    n_ok: int
    r_hat: float  # percent
    model: str
    temperatures: np.ndarray
    threshold: float
    subsampled_from: int | None = None
    indices: np.ndarray | None = None

    def to_dict(self):
        return {
            "n_total": self.n_total,
            "n_ok": self.n_ok,
            "r_hat_percent": self.r_hat,
            "model": self.model,
            "threshold": self.threshold,
            "subsampled_from": self.subsampled_from,
        }


def reliability(samples, model, threshold, model_name=None) -> ReliabilityReport:
    """Percentage of samples whose predicted interface temperature is below ``threshold``.

    Under constant surface flux the interface heats monotonically, so its
    maximum over the flight equals its value at ``t_eval``.
    """
    q = np.atleast_2d(np.asarray(samples, dtype=float))
    if q.size == 0:
        raise InvalidInputError("reliability needs at least one sample")
    temps = np.asarray(model(q), dtype=float)
    n_ok = int(np.count_nonzero(temps < threshold))
    name = model_name or getattr(model, "name", type(model).__name__)
    return ReliabilityReport(len(q), n_ok, 100.0 * n_ok / len(q), name, temps, float(threshold))


def cross_verify(samples, scenario: ThermalScenario, grid: GridSpec = GridSpec(), threshold=None,
                 max_fd=200, seed=0) -> ReliabilityReport:
    """Reliability recomputed with the finite-difference solver.

    When there are more than ``max_fd`` samples a seeded uniform subsample
    (without replacement) of that size is verified; the report records the
    original count and the chosen indices.
    """
    q = np.atleast_2d(np.asarray(samples, dtype=float))
    if q.size == 0:
        raise InvalidInputError("cross-verification needs at least one sample")
    threshold = scenario.threshold if threshold is None else threshold
    indices = None
    n_orig = len(q)
    if n_orig > max_fd:
        rng = np.random.default_rng(seed)
        indices = np.sort(rng.choice(n_orig, size=max_fd, replace=False))
        q = q[indices]
    report = reliability(q, FDModel(scenario, grid), threshold)
    if indices is not None:
        report.subsampled_from = n_orig
        report.indices = indices
    return report
