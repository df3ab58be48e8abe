"""Study configuration (YAML) and the objects derived from it."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import yaml

from .controllers import ControlOptions, ControllerKind
from .distflow import BetaIndex
from .feeder import FeederTopology, PerUnitBase, PlacementKind, build_feeder, place_pv, sample_lengths
from .profiles import (
    DayProfile,
    NodeProfiles,
    TimeGrid,
    battery_capacity,
    build_node_profiles,
    daily_consumption_kwh,
    default_profile,
    read_profile_csv,
)

DEFAULT_S_MAX_GRID = (1.0, 1.1, 1.2, 1.3, 1.4, 1.5)
DEFAULT_PENETRATIONS = (0.2, 0.5, 0.8)
DEFAULT_PLACEMENTS = ("front", "rear")
DEFAULT_CONTROLLERS = ("global", "local", "no_control")


@dataclass
class StudyConfig:
    # feeder
    nodes: int = 30
    length_min_m: float = 200.0
    length_max_m: float = 300.0
    lengths: list[float] | None = None  # explicit lengths override sampling
    seed: int = 2013
    r_ohm_per_km: float = 0.33
    x_ohm_per_km: float = 0.38
    v_base_kv: float = 7.2
    s_base_kva: float = 1000.0
    # profiles
    profile: str | None = None  # CSV path; built-in synthetic day when unset
    demand_scale: float = 40e6
    solar_scale: float = 1e6
    demand_pf: float | None = None
    slots_per_hour: int = 3
    s_max: float = 1.1
    # storage
    monthly_kwh: float = 940.0
    b_max_fraction: float = 0.05
    battery_scale: float = 1.0
    b_max_pu: float | None = None  # explicit p.u.-hour capacity overrides the derivation
    # control
    epsilon: float = 0.05
    beta_index: str = "colocated"
    terminal_soc: str = "free"
    voltage_penalty: float | None = None
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    max_iter: int = 50_000
    # sweep
    s_max_grid: list[float] = field(default_factory=lambda: list(DEFAULT_S_MAX_GRID))
    penetration_grid: list[float] = field(default_factory=lambda: list(DEFAULT_PENETRATIONS))
    placements: list[str] = field(default_factory=lambda: list(DEFAULT_PLACEMENTS))
    controllers: list[str] = field(default_factory=lambda: list(DEFAULT_CONTROLLERS))
    workers: int = 1

    def __post_init__(self) -> None:
        BetaIndex(self.beta_index)
        for p in self.placements:
            PlacementKind(p)
        for c in self.controllers:
            ControllerKind(c)

    @classmethod
    def from_dict(cls, data: dict) -> "StudyConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "StudyConfig":
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        cfg = cls.from_dict(data)
        if cfg.profile is not None and not Path(cfg.profile).is_absolute():
            cfg.profile = str(Path(path).parent / cfg.profile)
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "StudyConfig":
        return dataclasses.replace(self, **changes)

    @property
    def base(self) -> PerUnitBase:
        return PerUnitBase(self.v_base_kv * 1e3, self.s_base_kva * 1e3)

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.slots_per_hour)

    @property
    def control_options(self) -> ControlOptions:
        return ControlOptions(
            epsilon=self.epsilon,
            beta_index=BetaIndex(self.beta_index),
            terminal_soc=self.terminal_soc,
            voltage_penalty=self.voltage_penalty,
            eps_abs=self.eps_abs,
            eps_rel=self.eps_rel,
            max_iter=self.max_iter,
        )


class Study:
    """Feeder, day profile and battery size shared by every scenario of a sweep."""

    def __init__(self, config: StudyConfig):
        self.config = config

    @cached_property
    def topology(self) -> FeederTopology:
        c = self.config
        lengths = c.lengths
        if lengths is None:
            lengths = sample_lengths(c.nodes, c.length_min_m, c.length_max_m, c.seed)
        return build_feeder(c.nodes, lengths, c.r_ohm_per_km, c.x_ohm_per_km, c.base)

    @cached_property
    def day(self) -> DayProfile:
        return read_profile_csv(self.config.profile) if self.config.profile else default_profile()

    @cached_property
    def b_max(self) -> float:
        c = self.config
        if c.b_max_pu is not None:
            return float(c.b_max_pu)
        return battery_capacity(daily_consumption_kwh(c.monthly_kwh), c.b_max_fraction, c.battery_scale, c.base)

    def node_profiles(self, a: float, placement: str, s_max: float | None = None) -> NodeProfiles:
        c = self.config
        pl = place_pv(c.nodes, a, placement)
        return build_node_profiles(
            self.day.demand_w,
            self.day.solar_w,
            c.demand_scale,
            c.solar_scale,
            c.base,
            pl,
            c.s_max if s_max is None else s_max,
            c.grid,
            n=c.nodes,
            demand_pf=c.demand_pf,
        )
