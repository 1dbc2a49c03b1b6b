import numpy as np
import pytest
from hypothesis import given

from bpp.rotmath import (
    axis_angle_to_rotmat,
    check_unit,
    chordal_sq,
    geodesic_angle,
    is_rotation,
    quat_to_rotmat,
    random_unit_quat,
    rotmat_to_quat,
)

from conftest import unit_quats

HALF_TURN_Z = np.diag([-1.0, -1.0, 1.0])


def test_identity_quaternion():
    assert np.array_equal(quat_to_rotmat([1.0, 0, 0, 0]), np.eye(3))


def test_half_turn_about_z():
    assert np.allclose(quat_to_rotmat([0, 0, 0, 1.0]), HALF_TURN_Z, atol=1e-15)


def test_quarter_turn_matches_rodrigues():
    h = np.sqrt(0.5)
    R = quat_to_rotmat([h, 0, 0, h])
    assert np.allclose(R, axis_angle_to_rotmat([0, 0, 1], np.pi / 2), atol=1e-12)
    assert np.allclose(R[:, 0], [0.0, 1.0, 0.0], atol=1e-12)


def test_non_unit_rejected():
    with pytest.raises(ValueError):
        quat_to_rotmat([1.0, 1.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        check_unit([1.0 + 2e-6, 0, 0, 0])
    check_unit([1.0 + 5e-7, 0, 0, 0])


def test_chordal_examples():
    assert chordal_sq(np.eye(3), np.eye(3)) == 0.0
    assert np.isclose(chordal_sq(np.eye(3), HALF_TURN_Z), 8.0)


def test_geodesic_examples():
    assert geodesic_angle(np.eye(3), np.eye(3)) == 0.0
    assert np.isclose(geodesic_angle(np.eye(3), HALF_TURN_Z), np.pi)


def test_chordal_symmetric_and_trig_identity(rng):
    Ra = quat_to_rotmat(random_unit_quat(rng, 100))
    Rb = quat_to_rotmat(random_unit_quat(rng, 100))
    assert np.array_equal(chordal_sq(Ra, Rb), chordal_sq(Rb, Ra))
    theta = geodesic_angle(Ra, Rb)
    assert np.allclose(chordal_sq(Ra, Rb), 8.0 * np.sin(theta / 2) ** 2, atol=1e-9)


def test_batched_conversion_matches_single(rng):
    q = random_unit_quat(rng, 7)
    R = quat_to_rotmat(q)
    for k in range(7):
        assert np.array_equal(R[k], quat_to_rotmat(q[k]))


@given(unit_quats())
def test_antipodal_identical(q):
    assert np.array_equal(quat_to_rotmat(q), quat_to_rotmat(-q))


@given(unit_quats())
def test_proper_rotation(q):
    assert is_rotation(quat_to_rotmat(q))


@given(unit_quats())
def test_round_trip(q):
    R = quat_to_rotmat(q)
    q2 = rotmat_to_quat(R)
    assert abs(np.linalg.norm(q2) - 1.0) < 1e-9
    assert np.allclose(quat_to_rotmat(q2), R, atol=1e-9)
    assert min(np.abs(q2 - q).max(), np.abs(q2 + q).max()) < 1e-7


@given(unit_quats(), unit_quats())
def test_chordal_range(qa, qb):
    d = chordal_sq(quat_to_rotmat(qa), quat_to_rotmat(qb))
    assert 0.0 <= d <= 8.0
