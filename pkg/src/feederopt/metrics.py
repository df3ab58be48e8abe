"""Voltage-variation and energy-savings metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distflow import NetworkState

V0 = 1.0  # substation voltage is held at 1 p.u.


class UndefinedSavingsError(ValueError):
    """Baseline loss is zero, so relative savings are undefined."""


@dataclass(frozen=True)
class ScenarioMetrics:
    delta_v: float
    loss: float
    savings: float


def voltage_variation(state: NetworkState | np.ndarray) -> float:
    """Largest |V_j(t) - V0| / V0 over every node and slot."""
    V = state.V if isinstance(state, NetworkState) else np.asarray(state, dtype=float)
    if V.size == 0:
        return 0.0
    return float(np.max(np.abs(V - V0)) / V0)


def energy_savings(loss_baseline: float, loss_method: float) -> float:
    """Signed fractional loss reduction relative to the baseline."""
    if not loss_baseline > 0:
        raise UndefinedSavingsError(f"baseline loss must be positive, got {loss_baseline}")
    return (loss_baseline - loss_method) / loss_baseline
