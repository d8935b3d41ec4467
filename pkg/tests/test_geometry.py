from __future__ import annotations

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from satcm.exceptions import RejectedLineError
from satcm.geometry import (AxisAngle, Intrinsics, Line2D, Line3D, PixelLine, Pose, axis_angle_matrix,
                            matrix_to_quaternion, normalize_pixel_line, project_line, quaternion_to_matrix,
                            rotate, rotation_error, rotation_residual, translation_residual)

from conftest import random_rotation, random_unit

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_normalize_degenerate_rejected():
    with pytest.raises(RejectedLineError):
        normalize_pixel_line(PixelLine(np.array([0.0, 0.0, 5.0]), np.zeros((2, 2)), 0),
                             Intrinsics(np.eye(3), (640, 480)))


def test_normalize_identity_intrinsics():
    line = PixelLine(np.array([1.0, 0.0, 0.0]), np.array([[0.0, 0.0], [0.0, 10.0]]), 3)
    out = normalize_pixel_line(line, Intrinsics(np.eye(3), (640, 480)))
    np.testing.assert_allclose(out.normal, [1.0, 0.0, 0.0])
    assert out.label == 3
    np.testing.assert_array_equal(out.endpoints, line.endpoints)


def test_normalize_against_symbolic_product():
    K = np.array([[600.0, 0.0, 320.0], [0.0, 600.0, 240.0], [0.0, 0.0, 1.0]])
    line = PixelLine(np.array([1.0, 0.0, -320.0]), np.array([[320.0, 0.0], [320.0, 100.0]]), 0)
    out = normalize_pixel_line(line, Intrinsics(K, (640, 480)))
    row = mpmath.matrix([[1, 0, -320]]) * mpmath.matrix(K.tolist())
    norm = mpmath.sqrt(sum(x ** 2 for x in row))
    expect = np.array([float(x / norm) for x in row])
    np.testing.assert_allclose(out.normal, expect, atol=1e-15)
    # the vertical line through the principal point maps to the normal (1, 0, 0)
    np.testing.assert_allclose(out.normal, [1.0, 0.0, 0.0], atol=1e-15)


@given(st.tuples(finite, finite, finite), st.floats(0.1, 100) | st.floats(-100, -0.1))
@settings(max_examples=200, deadline=None)
def test_normalize_scale_invariant(abc, lam):
    A, B, C = abc
    if math.hypot(A, B) < 1e-3:
        return
    K = np.array([[500.0, 0.0, 300.0], [0.0, 520.0, 200.0], [0.0, 0.0, 1.0]])
    intr = Intrinsics(K, (640, 480))
    # pick on-line endpoints so the pixel line validates
    g = np.array([A, B])
    base = -C * g / (g @ g)
    tang = np.array([-B, A]) / math.hypot(A, B)
    ends = np.array([base, base + 10 * tang])
    n1 = normalize_pixel_line(PixelLine(np.array([A, B, C]), ends, 0), intr).normal
    n2 = normalize_pixel_line(PixelLine(lam * np.array([A, B, C]), ends, 0), intr).normal
    np.testing.assert_allclose(n1, n2, atol=1e-12)
    # components below 1e-12 of the largest count as zero
    first = n1[np.flatnonzero(np.abs(n1) > 1e-12 * np.abs(n1).max())[0]]
    assert first > 0


def test_rotate_trivial_cases():
    np.testing.assert_allclose(rotate(AxisAngle(0.7, 1.1, 0.0), [1, 2, 3]), [1, 2, 3])
    np.testing.assert_allclose(rotate(AxisAngle(0.0, 0.0, math.pi / 2), [1, 0, 0]), [0, 1, 0], atol=1e-15)


def test_rotate_against_quaternion_oracle(rng):
    for _ in range(500):
        u = random_unit(rng)
        theta = rng.uniform(0, math.pi)
        x = rng.normal(size=3)
        a = AxisAngle.from_axis(u, theta)
        expect = Rotation.from_rotvec(u * theta).apply(x)
        np.testing.assert_allclose(rotate(a, x), expect, atol=1e-12)
        np.testing.assert_allclose(a.matrix() @ x, expect, atol=1e-12)
        assert abs(np.linalg.norm(rotate(a, x)) - np.linalg.norm(x)) < 1e-12


def test_axis_angle_ranges_and_roundtrip(rng):
    for _ in range(200):
        R = random_rotation(rng)
        a = AxisAngle.from_matrix(R)
        assert 0 <= a.alpha <= math.pi and 0 <= a.phi <= 2 * math.pi and 0 <= a.theta <= math.pi
        np.testing.assert_allclose(a.matrix(), R, atol=1e-12)
    with pytest.raises(ValueError):
        AxisAngle(0.0, 0.0, 4.0)
    # amplitudes beyond pi flip the axis
    a = AxisAngle.from_axis([0, 0, 1], 1.5 * math.pi)
    assert a.theta == pytest.approx(0.5 * math.pi)
    np.testing.assert_allclose(a.axis, [0, 0, -1], atol=1e-15)


def test_quaternion_roundtrip(rng):
    for _ in range(200):
        R = random_rotation(rng)
        q = matrix_to_quaternion(R)
        assert q[0] >= 0
        np.testing.assert_allclose(quaternion_to_matrix(q), R, atol=1e-12)
        ref = Rotation.from_matrix(R).as_quat()  # xyzw
        ref = np.r_[ref[3], ref[:3]]
        ref = ref if ref[0] >= 0 else -ref
        np.testing.assert_allclose(q, ref, atol=1e-12)


def test_rotation_residual_cases():
    I = np.eye(3)
    assert rotation_residual(I, [1, 0, 0], [0, 1, 0]) == 0
    assert rotation_residual(I, [1, 0, 0], [1, 0, 0]) == 1
    Rz = axis_angle_matrix([0, 0, 1], math.pi / 2)
    assert rotation_residual(Rz, [1, 0, 0], [0, 1, 0]) == pytest.approx(1.0)


def test_rotation_residual_sign_invariance(rng):
    for _ in range(100):
        R, n, v = random_rotation(rng), random_unit(rng), random_unit(rng)
        r = rotation_residual(R, n, v)
        assert 0 <= r <= 1
        assert rotation_residual(R, -n, v) == pytest.approx(r, abs=1e-15)
        assert rotation_residual(R, n, -v) == pytest.approx(r, abs=1e-15)


def test_translation_residual_cases(rng):
    p = np.array([0.3, -1.0, 2.0])
    assert translation_residual([0, 0, 1], p, p) == 0
    assert translation_residual([1, 0, 0], [2, 0, 0], [0, 0, 0]) == 2
    mpmath.mp.dps = 40
    for _ in range(100):
        n, p, t = random_unit(rng), rng.normal(size=3), rng.normal(size=3)
        expect = abs(sum(mpmath.mpf(n[i]) * (mpmath.mpf(p[i]) - mpmath.mpf(t[i])) for i in range(3)))
        assert translation_residual(n, p, t) == pytest.approx(float(expect), abs=1e-12)


def test_rotation_error(rng):
    R = random_rotation(rng)
    assert rotation_error(R, R) == pytest.approx(0.0, abs=1e-6)
    dR = axis_angle_matrix(random_unit(rng), math.radians(10))
    assert rotation_error(R, R @ dR) == pytest.approx(10.0, abs=1e-9)
    for _ in range(200):
        R1, R2 = random_rotation(rng), random_rotation(rng)
        expect = math.degrees(Rotation.from_matrix(R1.T @ R2).magnitude())
        assert rotation_error(R1, R2) == pytest.approx(expect, abs=1e-9)
        assert 0 <= rotation_error(R1, R2) <= 180


def test_projection_consistency(rng):
    intr = Intrinsics.from_params(500, 500, 320, 240, 640, 480)
    for _ in range(100):
        pose = Pose(random_rotation(rng), rng.normal(size=3))
        p = pose.translation + pose.rotation @ np.array([0.2, -0.1, 3.0])
        line = Line3D(p, random_unit(rng), 1)
        n = project_line(pose, line)
        n_w = pose.rotation @ n
        assert rotation_residual(pose.rotation, n, line.direction) < 1e-10
        assert translation_residual(n_w, line.point, pose.translation) < 1e-10
        _, coeffs, _ = project_line(pose, line, intr)
        np.testing.assert_allclose(np.abs(coeffs @ intr.K / np.linalg.norm(coeffs @ intr.K)), np.abs(n),
                                   atol=1e-12)


def test_type_invariants():
    with pytest.raises(ValueError):
        Line2D(np.array([1.0, 1.0, 0.0]), 0)
    with pytest.raises(ValueError):
        Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(ValueError):
        Intrinsics(np.diag([0.0, 1.0, 1.0]), (10, 10))
    with pytest.raises(ValueError):
        PixelLine(np.array([1.0, 0.0, 0.0]), np.array([[5.0, 0.0], [0.0, 0.0]]), 0)
    with pytest.raises(ValueError):
        Line3D(np.zeros(3), np.array([1.0, 0, 0]), 0, np.array([[0, 0, 0], [0, 1.0, 0]]))
    ln = Line3D.from_endpoints([0, 0, 0], [0, 0, 2], 4)
    assert np.linalg.norm(ln.direction) == pytest.approx(1.0, abs=1e-12)
    assert ln.with_label(7).label == 7
