"""Pinhole camera, gravity-aligned rotation and pose error metrics.

Poses map world points into the camera frame, ``x_c = R @ p + t``.  The
world-from-camera rotation is ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``; the
solver-facing ``R`` is its transpose.  With pitch and roll fixed by the
gravity prior, ``R`` is an affine function of ``(cos yaw, sin yaw)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

DEPTH_EPS = 1e-9


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def wrap_angle(a):
    """Map angles onto [-pi, pi)."""
    return (np.asarray(a) + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("intrinsics must be finite")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def mean_focal(self) -> float:
        return 0.5 * (self.fx + self.fy)


@dataclass(frozen=True)
class GravityPrior:
    """Pitch and roll (radians) of the camera as observed by an IMU."""

    pitch: float
    roll: float

    def __post_init__(self):
        if not (math.isfinite(self.pitch) and math.isfinite(self.roll)):
            raise ValueError("gravity prior must be finite")


@dataclass(frozen=True, eq=False)
class YawRotationBasis:
    """``R(yaw) = cos_part*cos(yaw) + sin_part*sin(yaw) + const_part``."""

    cos_part: np.ndarray
    sin_part: np.ndarray
    const_part: np.ndarray

    @classmethod
    def from_prior(cls, prior: GravityPrior) -> "YawRotationBasis":
        m = rot_y(prior.pitch) @ rot_x(prior.roll)
        pc = np.diag([1.0, 1.0, 0.0])
        ps = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        pz = np.diag([0.0, 0.0, 1.0])
        # R = (Rz M)^T = M^T Rz^T
        return cls(m.T @ pc.T, m.T @ ps.T, m.T @ pz.T)

    def at(self, alpha: float) -> np.ndarray:
        return self.cos_part * math.cos(alpha) + self.sin_part * math.sin(alpha) + self.const_part

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Coefficients ``(cos, sin, const)`` of ``R(yaw) @ v``, each of shape ``v.shape``.

        ``v`` may be a single 3-vector or an ``(n, 3)`` stack.
        """
        v = np.asarray(v, dtype=float)
        return v @ self.cos_part.T, v @ self.sin_part.T, v @ self.const_part.T


def build_rotation(prior: GravityPrior, alpha: float) -> np.ndarray:
    """Camera-from-world rotation for the given yaw under the gravity prior."""
    return (rot_z(alpha) @ rot_y(prior.pitch) @ rot_x(prior.roll)).T


def yaw_pitch_roll(R: np.ndarray) -> tuple[float, float, float]:
    """Inverse of :func:`build_rotation`: ``(yaw, pitch, roll)`` of ``R``."""
    r = np.asarray(R).T
    yaw = math.atan2(r[1, 0], r[0, 0])
    pitch = math.atan2(-r[2, 0], math.hypot(r[2, 1], r[2, 2]))
    roll = math.atan2(r[2, 1], r[2, 2])
    return yaw, pitch, roll


@dataclass(frozen=True, eq=False)
class Pose:
    R: np.ndarray
    t: np.ndarray

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def transform(self, p: np.ndarray) -> np.ndarray:
        return np.asarray(p, dtype=float) @ self.R.T + self.t

    @cached_property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    def is_valid(self, tol: float = 1e-9) -> bool:
        R = np.asarray(self.R)
        return bool(
            np.abs(R.T @ R - np.eye(3)).max() < tol and abs(np.linalg.det(R) - 1.0) < tol
        )


def backproject(u, K: CameraIntrinsics) -> np.ndarray:
    """Pixel(s) ``(..., 2)`` to un-normalized bearings ``(..., 3)`` with z = 1."""
    u = np.asarray(u, dtype=float)
    out = np.empty(u.shape[:-1] + (3,))
    out[..., 0] = (u[..., 0] - K.cx) / K.fx
    out[..., 1] = (u[..., 1] - K.cy) / K.fy
    out[..., 2] = 1.0
    return out


def project_points(P, pose: Pose, K: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection; returns pixels ``(n, 2)`` and camera depths ``(n,)``.

    Pixels of points with depth <= ``DEPTH_EPS`` are NaN.
    """
    X = pose.transform(np.atleast_2d(P))
    z = X[:, 2]
    uv = np.full((len(X), 2), np.nan)
    ok = z > DEPTH_EPS
    uv[ok, 0] = K.fx * X[ok, 0] / z[ok] + K.cx
    uv[ok, 1] = K.fy * X[ok, 1] / z[ok] + K.cy
    return uv, z


def project(p, pose: Pose, K: CameraIntrinsics) -> Optional[np.ndarray]:
    """Project one world point; ``None`` when it is behind the camera."""
    uv, _ = project_points(np.asarray(p, dtype=float)[None, :], pose, K)
    if np.isnan(uv[0, 0]):
        return None
    return uv[0]


def rotation_angle(R: np.ndarray) -> float:
    """Angle (radians, in [0, pi]) of a rotation matrix."""
    R = np.asarray(R)
    skew = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return math.atan2(0.5 * np.linalg.norm(skew), 0.5 * (np.trace(R) - 1.0))


def pose_error(estimate: Pose, truth: Pose) -> tuple[float, float]:
    """Translation error in meters and rotation error in degrees."""
    dT = float(np.linalg.norm(np.asarray(estimate.t) - np.asarray(truth.t)))
    dR = math.degrees(rotation_angle(np.asarray(estimate.R) @ np.asarray(truth.R).T))
    return dT, dR
