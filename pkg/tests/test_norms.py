import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mnflow.fields import FieldState, TrajectoryRecord, gaussian_state
from mnflow.grid import DomainSpec
from mnflow.norms import (energy_ET, initial_norm, state_norm_series, tilde_energy, time_weight,
                          weighted_series_norm, weighted_time_norm)
from mnflow.params import ModelParams

BOX = DomainSpec(n=8, L=2 * math.pi)


def test_exponential_series_matches_closed_form():
    t = np.linspace(0, 2, 4001)
    got = weighted_series_norm(t, np.exp(-t), 2.0, 0.0)
    assert got == pytest.approx(math.sqrt((1 - math.exp(-4)) / 2), rel=1e-6)
    assert weighted_series_norm(t, np.exp(-t), math.inf, 0.0) == 1.0


def test_constant_on_unit_interval():
    t = np.linspace(0, 1, 11)
    for p in (1.0, 2.0, 1.1, math.inf):
        assert weighted_series_norm(t, np.ones_like(t), p, 0.0) == pytest.approx(1.0, rel=1e-14)


def test_weight_values():
    assert time_weight(0.0, 0.7) == 1.0
    assert time_weight(1.0, 2.0) == pytest.approx(2.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(1.0, 4.0), st.floats(0.0, 1.0), st.integers(0, 1000))
def test_homogeneous_and_monotone_in_T(c, p, b, seed):
    t = np.linspace(0, 3, 31)
    v = np.random.default_rng(seed).uniform(0, 1, t.size)
    base = weighted_series_norm(t, v, p, b)
    assert weighted_series_norm(t, c * v, p, b) == pytest.approx(c * base, rel=1e-12)
    assert weighted_series_norm(t[:20], v[:20], p, b) <= base * (1 + 1e-14)


def test_bad_inputs():
    with pytest.raises(ValueError):
        weighted_series_norm([], [], 2.0, 0.0)
    with pytest.raises(ValueError):
        weighted_series_norm([0.0, 1.0], [1.0, 1.0], 0.5, 0.0)
    assert weighted_series_norm([0.0], [3.0], 2.0, 0.0) == 0.0


def _decaying(state, times):
    states = [state.scaled(math.exp(-t)) for t in times]
    return TrajectoryRecord(times, states, [s.scaled(-1.0) for s in states])


def test_zero_trajectory_has_zero_functionals():
    traj = TrajectoryRecord.constant(FieldState.zeros(BOX), np.linspace(0, 1, 5))
    p = ModelParams()
    assert energy_ET(traj, p, BOX).total == 0.0
    assert tilde_energy(traj, p, BOX) == 0.0
    assert initial_norm(FieldState.zeros(BOX), p, BOX).total == 0.0


def test_energy_is_homogeneous():
    s = gaussian_state(BOX, 0.1, 1.0, vel_amplitude=0.1)
    traj = _decaying(s, np.linspace(0, 1, 6))
    p = ModelParams()
    e1 = energy_ET(traj, p, BOX)
    e2 = energy_ET(traj.scaled(3.0), p, BOX)
    assert e2.total == pytest.approx(3.0 * e1.total, rel=1e-12)
    assert e1.verdict in ("small", "not-small")
    assert set(e1.components) >= {"dt_grad_L2", "dt_grad_L6", "state_H12_6"}
    assert tilde_energy(traj.scaled(3.0), p, BOX) == pytest.approx(3.0 * tilde_energy(traj, p, BOX), rel=1e-12)


def test_weighted_time_norm_uses_derivatives():
    s = gaussian_state(BOX, 0.1, 1.0, vel_amplitude=0.1)
    traj = _decaying(s, np.linspace(0, 1, 6))
    f = lambda st: float(np.abs(st.theta).max())
    assert weighted_time_norm(traj, f, 2.0, 0.0, derivative=True) == pytest.approx(
        weighted_time_norm(traj, f, 2.0, 0.0), rel=1e-14)


def test_series_keys_and_interpolation_constants():
    s = gaussian_state(BOX, 0.1, 1.0, vel_amplitude=0.1)
    traj = _decaying(s, np.linspace(0, 1, 3))
    ser = state_norm_series(traj, BOX, 0.1)
    assert ser["L2"].shape == (3,) and np.all(ser["L2"] > 0)
    rep = energy_ET(traj, ModelParams(), BOX, series=ser)
    assert 0 < rep.interpolation_constants["state"] <= 1.0


def test_initial_norm():
    p = ModelParams()
    s = gaussian_state(BOX, 0.1, 1.0, vel_amplitude=0.1)
    n1 = initial_norm(s, p, BOX)
    n2 = initial_norm(s.scaled(2.0), p, BOX)
    assert n2.total == pytest.approx(2.0 * n1.total, rel=1e-12)
    assert set(n1.theta_H1) == {"r", "2", "2.1", "6"}
    with pytest.raises(ValueError):
        initial_norm(FieldState(s.theta, s.vel, time=1.0), p, BOX)
