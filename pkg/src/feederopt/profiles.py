"""Hourly demand/solar series, slot expansion and per-node power profiles."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .feeder import PerUnitBase, PvPlacement

HOURS_PER_DAY = 24


@dataclass(frozen=True)
class TimeGrid:
    """Slot grid. ``slots`` shortens the horizon below a full day (small test cases)."""

    slots_per_hour: int = 3
    slots: int | None = None

    def __post_init__(self) -> None:
        if self.slots_per_hour < 1:
            raise ValueError(f"slots_per_hour must be >= 1, got {self.slots_per_hour}")
        if self.slots is not None and self.slots < 1:
            raise ValueError(f"slots must be >= 1, got {self.slots}")

    @property
    def T(self) -> int:
        if self.slots is not None:
            return self.slots
        return HOURS_PER_DAY * self.slots_per_hour

    @property
    def dt(self) -> float:
        """Slot duration in hours."""
        return 1.0 / self.slots_per_hour


def _hourly(values, name: str = "series") -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.shape != (HOURS_PER_DAY,):
        raise ValueError(f"{name} must hold exactly {HOURS_PER_DAY} hourly values, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class DayProfile:
    """Raw hourly demand and solar generation in source watts."""

    demand_w: np.ndarray
    solar_w: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "demand_w", _hourly(self.demand_w, "demand"))
        object.__setattr__(self, "solar_w", _hourly(self.solar_w, "solar"))


def read_profile_csv(path) -> DayProfile:
    """Read a ``hour,demand_w,solar_w`` file with 24 rows, hours 1..24."""
    demand = [None] * HOURS_PER_DAY
    solar = [None] * HOURS_PER_DAY
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"hour", "demand_w", "solar_w"} - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            hour = int(row["hour"])
            if not 1 <= hour <= HOURS_PER_DAY:
                raise ValueError(f"{path}: hour {hour} outside 1..24")
            if demand[hour - 1] is not None:
                raise ValueError(f"{path}: duplicate hour {hour}")
            demand[hour - 1] = float(row["demand_w"])
            solar[hour - 1] = float(row["solar_w"])
    if any(v is None for v in demand):
        absent = [h + 1 for h, v in enumerate(demand) if v is None]
        raise ValueError(f"{path}: missing hours {absent}")
    return DayProfile(np.array(demand), np.array(solar))


def write_profile_csv(profile: DayProfile, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["hour", "demand_w", "solar_w"])
        for h in range(HOURS_PER_DAY):
            w.writerow([h + 1, repr(float(profile.demand_w[h])), repr(float(profile.solar_w[h]))])


def default_profile() -> DayProfile:
    """Built-in synthetic late-October day: evening demand peak, midday solar bell."""
    ref = resources.files("feederopt") / "data" / "synthetic_profile.csv"
    with resources.as_file(ref) as path:
        return read_profile_csv(Path(path))


def expand_to_slots(series, grid: TimeGrid) -> np.ndarray:
    """Step-hold an hourly series onto the slot grid (slot t takes hour ceil(t/k))."""
    return np.repeat(_hourly(series), grid.slots_per_hour)


@dataclass(frozen=True)
class NodeProfiles:
    """Per-node, per-slot power data in p.u.

    Arrays have shape ``(n + 1, T)``; row 0 is the substation and stays zero.
    ``s`` has shape ``(n + 1,)``.
    """

    grid: TimeGrid
    p_c: np.ndarray
    q_c: np.ndarray
    p_g: np.ndarray
    s: np.ndarray
    q_g_max: np.ndarray
    pv_nodes: tuple[int, ...]

    @property
    def n(self) -> int:
        return self.p_c.shape[0] - 1

    @property
    def T(self) -> int:
        return self.p_c.shape[1]


def var_capability(s, p_g) -> np.ndarray:
    """Inverter VAR headroom sqrt(max(0, s^2 - p_g^2)), broadcasting ``s`` over slots."""
    s = np.asarray(s, dtype=float)
    p_g = np.asarray(p_g, dtype=float)
    if s.ndim == 1 and p_g.ndim == 2:
        s = s[:, None]
    return np.sqrt(np.maximum(0.0, s**2 - p_g**2))


def split_demand(demand_pu: np.ndarray, demand_pf: float | None) -> tuple[np.ndarray, np.ndarray]:
    """Return (p_c, q_c). Without a power factor both equal the scaled demand."""
    if demand_pf is None:
        return demand_pu.copy(), demand_pu.copy()
    if not 0 < demand_pf <= 1:
        raise ValueError(f"demand_pf must lie in (0, 1], got {demand_pf}")
    return demand_pu * demand_pf, demand_pu * np.sqrt(1.0 - demand_pf**2)


def build_node_profiles(
    demand,
    solar,
    demand_scale: float,
    solar_scale: float,
    base: PerUnitBase,
    placement: PvPlacement | None,
    s_max: float,
    grid: TimeGrid,
    *,
    n: int,
    demand_pf: float | None = None,
) -> NodeProfiles:
    """Scale hourly source-watt series to p.u. and spread them over an ``n``-node feeder.

    Every load node receives the same scaled demand; PV nodes additionally get
    the scaled solar profile as real generation and an inverter rated at
    ``s_max`` times their peak generation.
    """
    if demand_scale <= 0 or solar_scale <= 0:
        raise ValueError("scale factors must be positive")
    if s_max < 1:
        warnings.warn(
            f"s_max={s_max} < 1: inverter rating below peak generation, VAR headroom clamped to 0",
            stacklevel=2,
        )
    T = grid.T
    demand_pu = expand_to_slots(demand, grid) / demand_scale / base.s_base
    solar_pu = expand_to_slots(solar, grid) / solar_scale / base.s_base
    if np.any(solar_pu < 0):
        raise ValueError("solar generation must be non-negative")

    p_c = np.zeros((n + 1, T))
    q_c = np.zeros((n + 1, T))
    p_c[1:], q_c[1:] = split_demand(demand_pu, demand_pf)

    pv_nodes = tuple(placement.pv_nodes) if placement is not None else ()
    if any(not 1 <= j <= n for j in pv_nodes):
        raise ValueError(f"PV nodes {pv_nodes} outside 1..{n}")
    p_g = np.zeros((n + 1, T))
    s = np.zeros(n + 1)
    for j in pv_nodes:
        p_g[j] = solar_pu
        s[j] = s_max * solar_pu.max()
    q_g_max = var_capability(s, p_g)
    return NodeProfiles(grid, p_c, q_c, p_g, s, q_g_max, pv_nodes)


def daily_consumption_kwh(monthly_kwh: float, days: float = 30.0) -> float:
    return monthly_kwh / days


def battery_capacity(daily_kwh: float, fraction: float, scale: float, base: PerUnitBase) -> float:
    """Battery size in p.u. energy (p.u. power x hours).

    ``daily_kwh`` is one household's consumption. ``scale`` divides the
    resulting energy the same way power scale factors divide source watts;
    a household figure is already node-sized, so callers normally pass 1.
    """
    if daily_kwh < 0 or fraction < 0 or scale <= 0:
        raise ValueError("battery_capacity arguments must be non-negative (scale positive)")
    return daily_kwh * 1000.0 * fraction / scale / base.s_base
