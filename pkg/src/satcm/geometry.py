"""Line parameterizations, axis-angle rotations and projection residuals.

Conventions
-----------
* An image line is stored as the unit normal ``n_c`` of its back-projection
  plane in the normalized camera frame.  The sign is fixed so that the first
  nonzero component is positive.
* A map line is stored as an anchor point, a unit direction and its two
  endpoints, all in the world frame (meters).
* ``Pose.rotation`` maps camera-frame vectors into the world frame.  A 2D line
  ``n_c`` is the projection of a 3D line ``(p, v)`` iff
  ``(R n_c) . v == 0`` and ``(R n_c) . (p - t) == 0``.
* Rotations are parameterized by a polar axis ``(alpha, phi)`` and an amplitude
  ``theta`` in ``[0, pi]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import RejectedLineError

_DEGENERATE = 1e-12


def _frozen(a, shape=None) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if shape is not None and arr.shape != shape:
        raise ValueError(f"expected shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


def skew(u) -> np.ndarray:
    """Cross-product matrix ``[u]x`` such that ``[u]x @ x == u x x``."""
    x, y, z = u
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def fix_sign(n: np.ndarray) -> np.ndarray:
    """Flip ``n`` so that its first non-negligible component is positive."""
    n = np.asarray(n, dtype=float)
    scale = np.max(np.abs(n))
    for c in n:
        if abs(c) > _DEGENERATE * scale:
            return n if c > 0 else -n
    return n


def polar_to_unit(alpha, phi) -> np.ndarray:
    """Unit vector(s) ``(sin a cos p, sin a sin p, cos a)``; broadcasts."""
    alpha, phi = np.broadcast_arrays(np.asarray(alpha, dtype=float), np.asarray(phi, dtype=float))
    sa = np.sin(alpha)
    return np.stack([sa * np.cos(phi), sa * np.sin(phi), np.cos(alpha)], axis=-1)


def unit_to_polar(u) -> tuple[np.ndarray, np.ndarray]:
    """Polar coordinates ``alpha in [0, pi]``, ``phi in [0, 2 pi)`` of unit vectors."""
    u = np.asarray(u, dtype=float)
    alpha = np.arccos(np.clip(u[..., 2], -1.0, 1.0))
    phi = np.mod(np.arctan2(u[..., 1], u[..., 0]), 2.0 * np.pi)
    return alpha, phi


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera matrix and image size ``(width, height)`` in pixels."""

    K: np.ndarray
    image_size: tuple[int, int]

    def __post_init__(self):
        K = _frozen(self.K, (3, 3))
        if abs(np.linalg.det(K)) < 1e-12 or K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ValueError("intrinsics must be invertible with positive focal lengths")
        if np.any(np.abs(np.tril(K, -1)) > 0):
            raise ValueError("intrinsics must be upper triangular")
        object.__setattr__(self, "K", K)
        w, h = self.image_size
        object.__setattr__(self, "image_size", (int(w), int(h)))

    @classmethod
    def from_params(cls, fx, fy, cx, cy, width, height) -> "Intrinsics":
        return cls(np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]]), (width, height))

    @property
    def K_inv(self) -> np.ndarray:
        return np.linalg.inv(self.K)


@dataclass(frozen=True)
class PixelLine:
    """An image line ``A u + B v + C = 0`` with its two pixel endpoints."""

    coeffs: np.ndarray
    endpoints: np.ndarray
    label: int

    def __post_init__(self):
        coeffs = _frozen(self.coeffs, (3,))
        endpoints = _frozen(self.endpoints, (2, 2))
        g = math.hypot(coeffs[0], coeffs[1])
        if g < _DEGENERATE:
            raise RejectedLineError("pixel line has zero gradient (A = B = 0)")
        dist = np.abs(endpoints @ coeffs[:2] + coeffs[2]) / g
        if np.any(dist > 0.5):
            raise ValueError(f"endpoints are {dist.max():.3f} px off the line")
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "endpoints", endpoints)
        object.__setattr__(self, "label", int(self.label))

    @classmethod
    def from_endpoints(cls, p1, p2, label: int) -> "PixelLine":
        (u1, v1), (u2, v2) = p1, p2
        coeffs = np.array([v1 - v2, u2 - u1, u1 * v2 - u2 * v1], dtype=float)
        return cls(coeffs, np.array([p1, p2], dtype=float), label)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.endpoints[1] - self.endpoints[0]))


@dataclass(frozen=True)
class Line2D:
    """Image line as a unit normal in the normalized camera frame."""

    normal: np.ndarray
    label: int
    endpoints: np.ndarray | None = None

    def __post_init__(self):
        n = _frozen(self.normal, (3,))
        if abs(np.linalg.norm(n) - 1.0) > 1e-12:
            raise ValueError("Line2D normal must be unit length")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "label", int(self.label))
        if self.endpoints is not None:
            object.__setattr__(self, "endpoints", _frozen(self.endpoints, (2, 2)))


@dataclass(frozen=True)
class Line3D:
    """Map line: anchor point, unit direction, label and two endpoints (meters)."""

    point: np.ndarray
    direction: np.ndarray
    label: int
    endpoints: np.ndarray = field(default=None)

    def __post_init__(self):
        p = _frozen(self.point, (3,))
        v = np.asarray(self.direction, dtype=float)
        nv = np.linalg.norm(v)
        if nv < _DEGENERATE:
            raise ValueError("Line3D direction must be nonzero")
        if abs(nv - 1.0) > 1e-12:
            v = v / nv
        v = _frozen(v, (3,))
        if self.endpoints is None:
            ends = _frozen(np.stack([p, p + v]))
        else:
            ends = _frozen(self.endpoints, (2, 3))
            off = ends - p
            perp = off - np.outer(off @ v, v)
            if np.any(np.linalg.norm(perp, axis=1) > 1e-6):
                raise ValueError("Line3D endpoints are not on the line")
        object.__setattr__(self, "point", p)
        object.__setattr__(self, "direction", v)
        object.__setattr__(self, "endpoints", ends)
        object.__setattr__(self, "label", int(self.label))

    @classmethod
    def from_endpoints(cls, e1, e2, label: int) -> "Line3D":
        e1 = np.asarray(e1, dtype=float)
        e2 = np.asarray(e2, dtype=float)
        d = e2 - e1
        n = np.linalg.norm(d)
        if n < _DEGENERATE:
            raise ValueError("Line3D endpoints coincide")
        return cls(0.5 * (e1 + e2), d / n, label, np.stack([e1, e2]))

    def with_label(self, label: int) -> "Line3D":
        return Line3D(self.point, self.direction, label, self.endpoints)


@dataclass(frozen=True)
class AxisAngle:
    """Rotation by ``theta`` about the polar axis ``(alpha, phi)``."""

    alpha: float
    phi: float
    theta: float

    def __post_init__(self):
        a, p, t = float(self.alpha), float(self.phi), float(self.theta)
        tol = 1e-12
        if not (-tol <= a <= math.pi + tol and -tol <= p <= 2 * math.pi + tol
                and -tol <= t <= math.pi + tol):
            raise ValueError(f"axis-angle out of range: alpha={a}, phi={p}, theta={t}")
        object.__setattr__(self, "alpha", min(max(a, 0.0), math.pi))
        object.__setattr__(self, "phi", min(max(p, 0.0), 2 * math.pi))
        object.__setattr__(self, "theta", min(max(t, 0.0), math.pi))

    @property
    def axis(self) -> np.ndarray:
        return polar_to_unit(self.alpha, self.phi)

    @classmethod
    def from_axis(cls, axis, theta: float) -> "AxisAngle":
        """Build from any nonzero axis and any real amplitude."""
        u = np.asarray(axis, dtype=float)
        u = u / np.linalg.norm(u)
        theta = math.remainder(float(theta), 2 * math.pi)
        if theta < 0:
            u, theta = -u, -theta
        alpha, phi = unit_to_polar(u)
        return cls(float(alpha), float(phi), theta)

    @classmethod
    def from_matrix(cls, R) -> "AxisAngle":
        R = np.asarray(R, dtype=float)
        q = matrix_to_quaternion(R)
        w, xyz = q[0], q[1:]
        s = np.linalg.norm(xyz)
        if s < 1e-15:
            return cls(0.0, 0.0, 0.0)
        theta = 2.0 * math.atan2(s, w)
        return cls.from_axis(xyz / s, theta)

    def matrix(self) -> np.ndarray:
        return axis_angle_matrix(self.axis, self.theta)


def axis_angle_matrix(u, theta: float) -> np.ndarray:
    """Rodrigues matrix ``I + sin(t)[u]x + (1 - cos(t))[u]x^2``."""
    U = skew(u)
    return np.eye(3) + math.sin(theta) * U + (1.0 - math.cos(theta)) * (U @ U)


def rotate(a: AxisAngle, x) -> np.ndarray:
    """Apply the rotation ``a`` to the vector ``x``."""
    u = a.axis
    x = np.asarray(x, dtype=float)
    s, c = math.sin(a.theta), math.cos(a.theta)
    ux = np.cross(u, x)
    return x + s * ux + (1.0 - c) * np.cross(u, ux)


def matrix_to_quaternion(R) -> np.ndarray:
    """Unit quaternion ``(w, x, y, z)`` with ``w >= 0``."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def quaternion_to_matrix(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


@dataclass(frozen=True)
class Pose:
    """Camera-to-world rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = _frozen(self.rotation, (3, 3))
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("Pose rotation must be orthonormal with det 1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", _frozen(self.translation, (3,)))

    def world_to_camera(self, X) -> np.ndarray:
        """Map world points (``(..., 3)``) into the camera frame."""
        X = np.asarray(X, dtype=float)
        return (X - self.translation) @ self.rotation


def normalize_pixel_line(line: PixelLine, intrinsics: Intrinsics) -> Line2D:
    """Normalized-camera normal ``(A, B, C) K / |(A, B, C) K|`` of a pixel line."""
    Kc = np.asarray(line.coeffs, dtype=float) @ intrinsics.K
    norm = np.linalg.norm(Kc)
    if norm < _DEGENERATE:
        raise RejectedLineError("normalized line coefficients vanish")
    return Line2D(fix_sign(Kc / norm), line.label, line.endpoints)


def rotation_residual(R, n_c, v) -> float:
    """``|(R n_c) . v|``: zero when the rotated plane normal is orthogonal to ``v``."""
    return float(abs(np.dot(np.asarray(R) @ np.asarray(n_c), v)))


def translation_residual(n_w, p, t) -> float:
    """Distance in meters of ``p`` from the plane through ``t`` with normal ``n_w``."""
    return float(abs(np.dot(n_w, np.asarray(p, dtype=float) - np.asarray(t, dtype=float))))


def rotation_error(R1, R2) -> float:
    """Geodesic angle between two rotations, in degrees."""
    D = np.asarray(R1).T @ np.asarray(R2)
    w = np.array([D[2, 1] - D[1, 2], D[0, 2] - D[2, 0], D[1, 0] - D[0, 1]])
    return math.degrees(math.atan2(0.5 * np.linalg.norm(w), 0.5 * (np.trace(D) - 1.0)))


def project_line(pose: Pose, line: Line3D, intrinsics: Intrinsics | None = None):
    """Exact image of a map line under ``pose``.

    Returns the camera normal ``n_c`` and, when intrinsics are given, the pixel
    coefficients and projected endpoints (``None`` if an endpoint is behind
    the camera).
    """
    pc = pose.world_to_camera(line.point)
    vc = pose.rotation.T @ line.direction
    n = np.cross(pc, vc)
    norm = np.linalg.norm(n)
    if norm < _DEGENERATE:
        raise RejectedLineError("line passes through the camera center")
    n = fix_sign(n / norm)
    if intrinsics is None:
        return n
    coeffs = n @ intrinsics.K_inv
    ends_c = pose.world_to_camera(line.endpoints)
    if np.any(ends_c[:, 2] <= 1e-9):
        return n, coeffs, None
    uv = ends_c @ intrinsics.K.T
    return n, coeffs, uv[:, :2] / uv[:, 2:3]
