import math

import numpy as np
import pytest

from mnflow.fields import EULER, FieldState, TrajectoryRecord, AdmissibilityError
from mnflow.grid import DomainSpec
from mnflow.lagrangian import (DisplacementField, SingularMapError, accumulate_displacement,
                               check_injectivity, dv0, identity_field, inverse3, matmul,
                               norm_change_constant, pullback_to_euler, pushforward_to_lagrange,
                               v0_of)

BOX = DomainSpec(n=16, L=2 * math.pi)


def random_k(rng, m, bound=0.9):
    """m random 3x3 matrices with Frobenius norm below ``bound``, shaped (3, 3, m)."""
    k = rng.standard_normal((3, 3, m))
    nrm = np.sqrt((k ** 2).sum(axis=(0, 1)))
    return k / nrm * bound * rng.uniform(0, 1, m)


def test_v0_inverts_on_random_small_matrices():
    k = random_k(np.random.default_rng(0), 1000)
    eye = identity_field((1000,))
    prod = matmul(eye + k, eye + v0_of(k))
    assert np.abs(prod - eye).max() < 1e-12
    prod = matmul(eye + v0_of(k), eye + k)
    assert np.abs(prod - eye).max() < 1e-12


def test_v0_diagonal_closed_form():
    a = np.array([0.1, -0.3, 0.5])
    k = np.zeros((3, 3, 1))
    k[[0, 1, 2], [0, 1, 2], 0] = a
    v = v0_of(k)[..., 0]
    assert np.allclose(v, np.diag(1 / (1 + a) - 1), atol=1e-15)


def test_inverse3_matches_numpy():
    m = np.random.default_rng(1).standard_normal((3, 3, 50)) + 3 * identity_field((50,))
    ref = np.moveaxis(np.linalg.inv(np.moveaxis(m, 2, 0)), 0, 2)
    assert np.allclose(inverse3(m), ref, atol=1e-12)


def test_dv0_matches_finite_difference():
    rng = np.random.default_rng(2)
    k = random_k(rng, 20, 0.6)
    e = rng.standard_normal((3, 3, 20))
    h = 1e-6
    fd = (v0_of(k + h * e) - v0_of(k - h * e)) / (2 * h)
    assert np.abs(fd - dv0(k, e)).max() < 1e-8


def test_large_k_is_rejected():
    k = np.zeros((3, 3) + BOX.shape)
    k[0, 0] = 1.2
    with pytest.raises(SingularMapError):
        DisplacementField.from_k(k)


def _traj(u, times):
    s = FieldState(np.zeros(BOX.shape), u)
    return TrajectoryRecord.constant(s, times)


def shear(a):
    y = BOX.coords()
    return np.stack([a * np.sin(y[1]), np.zeros(BOX.shape), np.zeros(BOX.shape)])


def test_displacement_of_steady_field():
    u = shear(0.2)
    d = accumulate_displacement(_traj(u, np.linspace(0, 1, 5)), BOX)
    assert np.allclose(d.disp, u, atol=1e-13)
    # k[1, 0] = int d_1 u_0 = 0.2 cos(y_1)
    y = BOX.coords()
    assert np.allclose(d.k[1, 0], 0.2 * np.cos(y[1]), atol=1e-12)
    assert d.grad_integral == pytest.approx(0.2, rel=1e-12)
    assert d.det_bounds_hold(0.25)


def test_admissibility_threshold():
    traj = _traj(shear(0.5), np.linspace(0, 1, 5))
    with pytest.raises(AdmissibilityError):
        accumulate_displacement(traj, BOX, delta=0.3)


@pytest.mark.parametrize("u,expect_exact", [
    (np.zeros((3,) + BOX.shape), True),
    (np.ones((3,) + BOX.shape) * np.array([0.3, -0.1, 0.2])[:, None, None, None], True),
    (shear(0.05), False),
])
def test_injectivity_cases(u, expect_exact):
    d = accumulate_displacement(_traj(u, np.linspace(0, 1, 3)), BOX)
    rep = check_injectivity(d, BOX, samples=2000, seed=3)
    assert rep["ok"]
    if expect_exact:
        assert rep["worst_ratio"] == pytest.approx(1.0, abs=1e-12)
    else:
        assert rep["worst_ratio"] >= 0.95


def test_pushforward_pullback_roundtrip():
    d = accumulate_displacement(_traj(shear(0.1), np.linspace(0, 0.5, 3)), BOX)
    y = BOX.coords()
    theta = np.cos(y[0]) + 0.5 * np.sin(y[1] + y[2])
    vel = np.stack([np.sin(y[2]), np.cos(y[0] - y[1]), 0.1 * np.ones(BOX.shape)])
    e = FieldState(theta, vel, EULER)
    back = pullback_to_euler(pushforward_to_lagrange(e, d, BOX), d, BOX)
    assert np.abs(back.theta - theta).max() < 5e-3
    assert np.abs(back.vel - vel).max() < 5e-3


def test_constants_survive_both_directions():
    d = accumulate_displacement(_traj(shear(0.1), np.linspace(0, 0.5, 3)), BOX)
    e = FieldState(np.full(BOX.shape, 0.7), np.full((3,) + BOX.shape, -0.2), EULER)
    lag = pushforward_to_lagrange(e, d, BOX)
    assert np.allclose(lag.theta, 0.7, atol=1e-13) and np.allclose(lag.vel, -0.2, atol=1e-13)
    eul = pullback_to_euler(lag, d, BOX)
    assert np.allclose(eul.theta, 0.7, atol=1e-13)


def test_frame_checks():
    d = DisplacementField.zero(BOX)
    with pytest.raises(ValueError):
        pushforward_to_lagrange(FieldState.zeros(BOX), d, BOX)
    with pytest.raises(ValueError):
        pullback_to_euler(FieldState.zeros(BOX, EULER), d, BOX)


def test_norm_change_constant():
    assert norm_change_constant(0.5, math.inf) == 1.0
    assert norm_change_constant(0.5, 3.0) == pytest.approx(2.0)
