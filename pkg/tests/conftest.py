import numpy as np
import pytest

from feederopt.feeder import FeederTopology, PerUnitBase, Segment
from feederopt.profiles import NodeProfiles, TimeGrid


def make_topology(r, x, length=250.0):
    return FeederTopology(tuple(Segment(length, float(ri), float(xi)) for ri, xi in zip(r, x)))


def make_profiles(p_c, q_c, p_g=None, s=None, pv_nodes=(), slots_per_hour=3):
    """NodeProfiles from explicit (n+1, T) arrays; VAR headroom derived from ``s``."""
    p_c = np.asarray(p_c, dtype=float)
    q_c = np.asarray(q_c, dtype=float)
    n1, T = p_c.shape
    p_g = np.zeros((n1, T)) if p_g is None else np.asarray(p_g, dtype=float)
    s = np.zeros(n1) if s is None else np.asarray(s, dtype=float)
    q_g_max = np.sqrt(np.maximum(0.0, s[:, None] ** 2 - p_g**2))
    grid = TimeGrid(slots_per_hour, slots=T)
    return NodeProfiles(grid, p_c, q_c, p_g, s, q_g_max, tuple(pv_nodes))


def instance_objects(inst):
    """Package objects for an oracle instance dict (see oracles.random_lattice_instance)."""
    topo = make_topology(inst["r"], inst["x"])
    prof = make_profiles(inst["p_c"], inst["q_c"], inst["p_g"], inst["s"], inst["pv"],
                         slots_per_hour=round(1 / inst["dt"]))
    return topo, prof


@pytest.fixture
def base_7200():
    return PerUnitBase(7200.0, 1.0e6)
