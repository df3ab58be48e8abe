import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_profiles, make_topology
from oracles import linear_loss, linear_recursion, single_segment_p0
from feederopt.distflow import (
    BetaIndex,
    ControlSchedule,
    LossModel,
    NetworkState,
    SweepDivergence,
    battery_trajectory,
    distflow_residual,
    linear_flow,
    nonlinear_sweep,
    total_loss,
    write_schedule_csv,
    write_state_csv,
)


def two_node_case():
    topo = make_topology([0.01, 0.01], [0.01, 0.01])
    p_c = np.array([[0.0], [0.1], [0.1]])
    prof = make_profiles(p_c, np.zeros((3, 1)))
    return topo, prof, ControlSchedule.zeros(2, 1)


def test_empty_feeder():
    topo = make_topology([0.01] * 4, [0.02] * 4)
    prof = make_profiles(np.zeros((5, 6)), np.zeros((5, 6)))
    st_ = linear_flow(topo, prof, ControlSchedule.zeros(4, 6))
    assert np.all(st_.P == 0) and np.all(st_.Q == 0) and np.all(st_.V == 1)


def test_two_node_hand_recursion():
    topo, prof, ctl = two_node_case()
    s = linear_flow(topo, prof, ctl)
    assert s.P[:, 0] == pytest.approx([0.2, 0.1, 0.0])
    assert s.V[:, 0] == pytest.approx([1.0, 0.998, 0.997])
    assert np.all(s.Q == 0)


def test_two_node_loss():
    topo, prof, ctl = two_node_case()
    s = linear_flow(topo, prof, ctl)
    # 0.01 * (0.2^2 + 0.1^2)
    assert total_loss(s, topo) == pytest.approx(5e-4, rel=1e-12)


def test_generation_cancels_load():
    rng = np.random.default_rng(3)
    p = rng.uniform(0, 1, (6, 4))
    q = rng.uniform(0, 1, (6, 4))
    p[0] = q[0] = 0
    topo = make_topology(rng.uniform(0, 0.02, 5), rng.uniform(0, 0.02, 5))
    prof = make_profiles(p, q, p_g=p, s=np.full(6, 10.0), pv_nodes=range(1, 6))
    s = linear_flow(topo, prof, ControlSchedule(np.zeros_like(p), q.copy()))
    np.testing.assert_allclose(s.P, 0, atol=1e-15)
    np.testing.assert_allclose(s.V, 1, atol=1e-15)


def test_loss_zero_and_single_segment():
    topo = make_topology([0.01], [0.0])
    zero = NetworkState(np.zeros((2, 1)), np.zeros((2, 1)), np.ones((2, 1)), np.zeros((2, 2)))
    assert total_loss(zero, topo) == 0
    one = NetworkState(np.array([[1.0], [0.0]]), np.zeros((2, 1)), np.ones((2, 1)), np.zeros((2, 2)))
    assert total_loss(one, topo) == pytest.approx(0.01)
    assert total_loss(one, topo, LossModel.NONLINEAR) == pytest.approx(0.01)


def test_nonlinear_loss_uses_sending_voltage():
    topo = make_topology([0.01, 0.01], [0.0, 0.0])
    st_ = NetworkState(np.array([[1.0], [1.0], [0.0]]), np.zeros((3, 1)), np.array([[1.0], [0.5], [0.4]]), np.zeros((3, 2)))
    assert total_loss(st_, topo, "nonlinear") == pytest.approx(0.01 + 0.01 / 0.25)
    assert total_loss(st_, topo, "linear") == pytest.approx(0.02)


@given(
    seed=st.integers(0, 2**32 - 1),
    n=st.integers(1, 8),
    T=st.integers(1, 4),
    literal=st.booleans(),
)
def test_linear_matches_forward_recursion(seed, n, T, literal):
    rng = np.random.default_rng(seed)
    r, x = rng.uniform(0, 0.05, n), rng.uniform(0, 0.05, n)
    p_c, q_c = rng.uniform(-1, 1, (2, n + 1, T))
    p_g = rng.uniform(0, 1, (n + 1, T))
    beta, q_g = rng.uniform(-1, 1, (2, n + 1, T))
    for arr in (p_c, q_c, p_g, beta, q_g):
        arr[0] = 0
    prof = make_profiles(p_c, q_c, p_g, s=np.full(n + 1, 10.0), pv_nodes=range(1, n + 1))
    conv = BetaIndex.UPSTREAM if literal else BetaIndex.COLOCATED
    s = linear_flow(make_topology(r, x), prof, ControlSchedule(beta, q_g), beta_index=conv)
    if literal:
        # battery at node k is drawn across segment k: shift it one node downstream
        beta_eff = np.zeros_like(beta)
        beta_eff[1:] = beta[:-1]
    else:
        beta_eff = beta
    P, Q, V = linear_recursion(r, x, p_c, q_c, p_g, beta_eff, q_g)
    np.testing.assert_allclose(s.P, P, atol=1e-12)
    np.testing.assert_allclose(s.Q, Q, atol=1e-12)
    np.testing.assert_allclose(s.V, V, atol=1e-12)
    assert total_loss(s, make_topology(r, x)) == pytest.approx(float(linear_loss(r, P, Q)), rel=1e-12, abs=1e-15)
    # power balance: substation inflow = net consumption + battery charging
    net = (p_c - p_g)[1:].sum(axis=0) + beta_eff[1:].sum(axis=0)
    np.testing.assert_allclose(s.P[0], net, atol=1e-12)
    assert np.all(s.V[0] == 1) and np.all(s.P[n] == 0) and np.all(s.Q[n] == 0)


def test_beta_conventions_differ_by_one_segment():
    topo = make_topology([0.01, 0.01], [0.0, 0.0])
    prof = make_profiles(np.zeros((3, 1)), np.zeros((3, 1)), pv_nodes=(1,))
    beta = np.zeros((3, 1))
    beta[1] = 0.3
    ctl = ControlSchedule(beta, np.zeros((3, 1)))
    colo = linear_flow(topo, prof, ctl)
    lit = linear_flow(topo, prof, ctl, beta_index="paper_literal")
    assert colo.P[:, 0] == pytest.approx([0.3, 0.0, 0.0])
    assert lit.P[:, 0] == pytest.approx([0.3, 0.3, 0.0])


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 10))
def test_voltage_monotone_under_pure_load(seed, n):
    rng = np.random.default_rng(seed)
    p, q = rng.uniform(0, 1, (2, n + 1, 3))
    p[0] = q[0] = 0
    topo = make_topology(rng.uniform(0, 0.05, n), rng.uniform(0, 0.05, n))
    s = linear_flow(topo, make_profiles(p, q), ControlSchedule.zeros(n, 3))
    assert np.all(np.diff(s.V, axis=0) <= 1e-15)


def test_sweep_zero_injection_one_iteration():
    topo = make_topology([0.01] * 3, [0.01] * 3)
    prof = make_profiles(np.zeros((4, 2)), np.zeros((4, 2)))
    s = nonlinear_sweep(topo, prof, ControlSchedule.zeros(3, 2))
    assert s.iterations == 1
    assert np.all(s.P == 0) and np.all(s.Q == 0) and np.all(s.V == 1)


def test_sweep_single_segment_fixed_point():
    topo = make_topology([0.01], [0.0])
    prof = make_profiles(np.array([[0.0], [0.1]]), np.zeros((2, 1)))
    s = nonlinear_sweep(topo, prof, ControlSchedule.zeros(1, 1), tol=1e-13)
    p0 = single_segment_p0(0.1, 0.01)
    assert s.P[0, 0] == pytest.approx(p0, abs=1e-12)
    # closed form of 0.01 P^2 - P + 0.1 = 0, smaller root
    assert p0 == pytest.approx((1 - np.sqrt(1 - 4 * 0.01 * 0.1)) / 0.02, abs=1e-13)


@settings(max_examples=30)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 4))
def test_sweep_close_to_linear_when_lightly_loaded(seed, n):
    # every line flow stays within 0.1 p.u. and loads have power factor >= 0.7
    rng = np.random.default_rng(seed)
    p_c = rng.uniform(0.01, 0.1, (n + 1, 2)) / n
    q_c = rng.uniform(-1, 1, (n + 1, 2)) * p_c
    p_c[0] = q_c[0] = 0
    topo = make_topology(rng.uniform(0, 0.01, n), rng.uniform(0, 0.01, n))
    prof = make_profiles(p_c, q_c)
    lin = linear_flow(topo, prof, ControlSchedule.zeros(n, 2))
    non = nonlinear_sweep(topo, prof, ControlSchedule.zeros(n, 2))
    assert np.max(np.abs(non.P[0] - lin.P[0]) / np.abs(lin.P[0])) < 0.01


@settings(max_examples=30)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 12))
def test_sweep_residual(seed, n):
    rng = np.random.default_rng(seed)
    p_c, q_c = rng.uniform(0, 0.2, (2, n + 1, 3))
    p_c[0] = q_c[0] = 0
    beta = np.zeros((n + 1, 3))
    beta[n] = rng.uniform(-0.1, 0.1, 3)
    topo = make_topology(rng.uniform(0, 0.02, n), rng.uniform(0, 0.02, n))
    prof = make_profiles(p_c, q_c, pv_nodes=(n,))
    ctl = ControlSchedule(beta, np.zeros((n + 1, 3)))
    tol = 1e-10
    s = nonlinear_sweep(topo, prof, ctl, tol=tol)
    assert distflow_residual(topo, prof, ctl, s) <= 10 * tol


def test_sweep_diverges_when_overloaded():
    topo = make_topology([0.5] * 3, [0.5] * 3)
    prof = make_profiles(np.array([[0.0], [2.0], [2.0], [2.0]]), np.zeros((4, 1)))
    with pytest.raises(SweepDivergence) as err:
        nonlinear_sweep(topo, prof, ControlSchedule.zeros(3, 1))
    assert err.value.iterations >= 1


def test_sweep_rejects_bad_tol():
    topo, prof, ctl = two_node_case()
    with pytest.raises(ValueError):
        nonlinear_sweep(topo, prof, ctl, tol=0)


def test_battery_idle():
    traj = battery_trajectory(np.zeros(5), 1.0, 1 / 3)
    assert np.all(traj.b == 0) and traj.ok


def test_battery_round_trip():
    k, c = 4, 0.2
    traj = battery_trajectory([c] * k + [-c] * k, 1.0, 0.5)
    assert traj.b[2 * k] == pytest.approx(0.0, abs=1e-15)
    assert traj.b[k] == pytest.approx(k * c * 0.5)
    assert traj.ok


def test_battery_overcharge_flagged():
    B, dt = 0.01, 1 / 3
    traj = battery_trajectory([B / dt + 1e-3, 0.0, 0.0], B, dt)
    assert traj.violations[0] == 2
    assert not traj.ok
    # discharging the excess right away leaves only the first violation
    traj = battery_trajectory([B / dt + 1e-3, -1e-3, 0.0], B, dt)
    assert traj.violations == [2]


def test_battery_negative_flagged():
    traj = battery_trajectory([-0.1, 0.2], 1.0, 1.0)
    assert traj.violations == [2]


def test_schedule_validate():
    prof = make_profiles(np.zeros((3, 2)), np.zeros((3, 2)), p_g=np.zeros((3, 2)), s=np.array([0, 0, 0.5]), pv_nodes=(2,))
    ok = ControlSchedule(np.zeros((3, 2)), np.array([[0, 0], [0, 0], [0.5, -0.5]]))
    ok.validate(prof)
    with pytest.raises(ValueError, match="capability"):
        ControlSchedule(np.zeros((3, 2)), np.array([[0, 0], [0, 0], [0.6, 0]])).validate(prof)
    bad_beta = np.zeros((3, 2))
    bad_beta[1, 0] = 0.1
    with pytest.raises(ValueError, match="storage"):
        ControlSchedule(bad_beta, np.zeros((3, 2))).validate(prof)


def test_csv_outputs(tmp_path):
    topo, prof, ctl = two_node_case()
    s = linear_flow(topo, prof, ctl)
    write_state_csv(s, tmp_path / "state.csv")
    write_schedule_csv(ctl, tmp_path / "sched.csv")
    lines = (tmp_path / "state.csv").read_text().splitlines()
    assert lines[0] == "node,slot,P_pu,Q_pu,V_pu,b_pu"
    assert len(lines) == 1 + 3
    assert lines[1].split(",")[:3] == ["0", "1", "0.2"]
    assert (tmp_path / "sched.csv").read_text().splitlines()[0] == "node,slot,beta_pu,q_g_pu"
