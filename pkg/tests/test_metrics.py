import numpy as np
import pytest
from hypothesis import given, strategies as st

from feederopt.distflow import NetworkState
from feederopt.metrics import UndefinedSavingsError, energy_savings, voltage_variation

volts = st.lists(st.lists(st.floats(0.8, 1.2), min_size=3, max_size=3), min_size=1, max_size=6)


def test_flat_voltage():
    assert voltage_variation(np.ones((4, 5))) == 0.0


def test_one_slot():
    assert voltage_variation(np.array([[1.0], [0.98], [0.95]])) == pytest.approx(0.05)


def test_max_over_slots():
    V = np.array([[1.0, 1.0], [0.99, 1.03]])
    assert voltage_variation(V) == pytest.approx(0.03)


def test_accepts_state():
    V = np.array([[1.0], [0.97]])
    st_ = NetworkState(np.zeros((2, 1)), np.zeros((2, 1)), V, np.zeros((2, 2)))
    assert voltage_variation(st_) == pytest.approx(0.03)


@given(volts, st.randoms(use_true_random=False))
def test_variation_invariant_to_slot_order_and_flat_slots(cols, rnd):
    V = np.array(cols).T
    perm = list(range(V.shape[1]))
    rnd.shuffle(perm)
    base = voltage_variation(V)
    assert base >= 0
    assert voltage_variation(V[:, perm]) == base
    assert voltage_variation(np.hstack([V, np.ones((3, 1))])) == base


@pytest.mark.parametrize("base, method, expected", [(5.0, 5.0, 0.0), (100.0, 91.0, 0.09), (1.0, 1.5, -0.5), (2.0, 0.0, 1.0)])
def test_savings_examples(base, method, expected):
    assert energy_savings(base, method) == pytest.approx(expected)


@pytest.mark.parametrize("base", [0.0, -1.0, float("nan")])
def test_savings_undefined(base):
    with pytest.raises(UndefinedSavingsError):
        energy_savings(base, 1.0)


@given(st.floats(1e-6, 1e6), st.floats(0, 1e6), st.floats(0, 1e6))
def test_savings_properties(base, a, b):
    assert energy_savings(base, base) == 0
    assert energy_savings(base, a) <= 1
    if b - a > 1e-9 * base:
        assert energy_savings(base, a) > energy_savings(base, b)
