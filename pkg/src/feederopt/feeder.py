"""Single-branch radial feeder: per-unit bases, segment impedances, PV placement.

Node 0 is the substation. Segment ``j`` (0-based) joins node ``j`` to node
``j + 1``, so a feeder with ``n`` load nodes has exactly ``n`` segments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np


class FeederError(ValueError):
    """Invalid feeder construction arguments."""


class PlacementError(ValueError):
    """PV placement that selects no nodes or falls outside the feeder."""


@dataclass(frozen=True)
class PerUnitBase:
    """Line-to-neutral voltage base [V] and apparent power base [VA]."""

    v_base: float = 7200.0
    s_base: float = 1.0e6

    def __post_init__(self) -> None:
        if not (self.v_base > 0 and self.s_base > 0):
            raise FeederError(f"bases must be positive, got v={self.v_base}, s={self.s_base}")

    @property
    def z_base(self) -> float:
        return self.v_base**2 / self.s_base

    def ohm_to_pu(self, z_ohm: float) -> float:
        return z_ohm / self.z_base

    def pu_to_ohm(self, z_pu: float) -> float:
        return z_pu * self.z_base


@dataclass(frozen=True)
class Segment:
    length: float  # meters
    r: float  # p.u.
    x: float  # p.u.


@dataclass(frozen=True)
class FeederTopology:
    """Chain of ``n`` segments hanging off the substation."""

    segments: tuple[Segment, ...]

    def __post_init__(self) -> None:
        if len(self.segments) == 0:
            raise FeederError("feeder needs at least one segment")
        for j, seg in enumerate(self.segments):
            if not seg.length > 0:
                raise FeederError(f"segment {j}: length must be positive, got {seg.length}")
            if seg.r < 0 or seg.x < 0:
                raise FeederError(f"segment {j}: negative impedance r={seg.r}, x={seg.x}")

    @property
    def n(self) -> int:
        return len(self.segments)

    @property
    def r(self) -> np.ndarray:
        return np.array([s.r for s in self.segments])

    @property
    def x(self) -> np.ndarray:
        return np.array([s.x for s in self.segments])

    @property
    def lengths(self) -> np.ndarray:
        return np.array([s.length for s in self.segments])


class PlacementKind(str, Enum):
    FRONT = "front"
    REAR = "rear"


@dataclass(frozen=True)
class PvPlacement:
    """Contiguous block of PV+battery nodes (1-based node numbers)."""

    pv_nodes: tuple[int, ...]
    kind: PlacementKind
    penetration: float

    def __len__(self) -> int:
        return len(self.pv_nodes)


def build_feeder(
    n: int,
    lengths,
    r_ohm_per_km: float,
    x_ohm_per_km: float,
    base: PerUnitBase,
) -> FeederTopology:
    """Convert per-km line data and segment lengths [m] to a per-unit feeder."""
    if n <= 0:
        raise FeederError(f"n must be positive, got {n}")
    lengths = [float(v) for v in lengths]
    if len(lengths) != n:
        raise FeederError(f"expected {n} lengths, got {len(lengths)}")
    if r_ohm_per_km < 0 or x_ohm_per_km < 0:
        raise FeederError("per-km impedance must be non-negative")
    segs = []
    for j, length in enumerate(lengths):
        if not length > 0:
            raise FeederError(f"segment {j}: length must be positive, got {length}")
        km = length / 1000.0
        segs.append(
            Segment(
                length=length,
                r=base.ohm_to_pu(r_ohm_per_km * km),
                x=base.ohm_to_pu(x_ohm_per_km * km),
            )
        )
    return FeederTopology(tuple(segs))


def sample_lengths(n: int, min_m: float, max_m: float, seed: int) -> list[float]:
    """Draw ``n`` segment lengths uniformly from [min_m, max_m] with a seeded PCG64."""
    if not 0 < min_m:
        raise ValueError(f"min_m must be positive, got {min_m}")
    if min_m > max_m:
        raise ValueError(f"min_m ({min_m}) exceeds max_m ({max_m})")
    if min_m == max_m:
        return [float(min_m)] * n
    rng = np.random.default_rng(seed)
    return rng.uniform(min_m, max_m, size=n).tolist()


def pv_count(n: int, a: float) -> int:
    # round half up; floor(a*n + 0.5) also absorbs float noise like 0.2*30
    return int(math.floor(a * n + 0.5))


def place_pv(n: int, a: float, kind: PlacementKind | str) -> PvPlacement:
    """Select ``round(a*n)`` contiguous nodes at the front (1..k) or rear (n-k+1..n)."""
    kind = PlacementKind(kind)
    if not 0 < a <= 1:
        raise PlacementError(f"penetration must lie in (0, 1], got {a}")
    k = pv_count(n, a)
    if k < 1:
        raise PlacementError(f"round({a}*{n}) = 0 selects no PV nodes")
    if kind is PlacementKind.FRONT:
        nodes = tuple(range(1, k + 1))
    else:
        nodes = tuple(range(n - k + 1, n + 1))
    return PvPlacement(nodes, kind, a)
