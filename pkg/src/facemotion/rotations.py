"""Rotation helpers.

Two conventions live side by side in this package:

* the rig poses vertices with column-vector rotations, ``v' = R @ v``;
* keypoint transforms use row vectors, ``x' = x @ R``.

A row-convention matrix is the transpose of the column-convention matrix for
the same physical rotation.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from facemotion.errors import DomainError


def axis_angle_to_matrix(rotvec) -> np.ndarray:
    """Rodrigues formula; returns the column-convention matrix.

    A zero vector maps to the identity exactly.
    """
    rotvec = np.asarray(rotvec, dtype=float)
    if rotvec.shape != (3,):
        raise DomainError(f"axis-angle vector must have shape (3,), got {rotvec.shape}")
    if not np.all(np.isfinite(rotvec)):
        raise DomainError("axis-angle vector is not finite")
    angle = float(np.linalg.norm(rotvec))
    if angle == 0.0:
        return np.eye(3)
    k = rotvec / angle
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle) * kx + (1.0 - np.cos(angle)) * (kx @ kx)


def matrix_to_axis_angle(matrix) -> np.ndarray:
    """Inverse of :func:`axis_angle_to_matrix` (column convention)."""
    matrix = np.asarray(matrix, dtype=float)
    if np.array_equal(matrix, np.eye(3)):
        return np.zeros(3)
    return Rotation.from_matrix(matrix).as_rotvec()


def _rx(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _ry(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rz(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def row_rx(degrees: float) -> np.ndarray:
    """Row-convention rotation about x: ``x @ row_rx(a)`` turns x by ``a``."""
    return _rx(np.deg2rad(degrees)).T


def row_ry(degrees: float) -> np.ndarray:
    return _ry(np.deg2rad(degrees)).T


def row_rz(degrees: float) -> np.ndarray:
    return _rz(np.deg2rad(degrees)).T


def rotation_from_euler(pitch: float, yaw: float, roll: float) -> np.ndarray:
    """Head-pose matrix in row convention, ``Rz(roll) @ Ry(yaw) @ Rx(pitch)``.

    Angles are in degrees; each elementary factor is itself a row-convention
    matrix, so ``x @ R`` applies roll first, then yaw, then pitch.
    """
    angles = np.array([pitch, yaw, roll], dtype=float)
    if not np.all(np.isfinite(angles)):
        raise DomainError("Euler angles must be finite")
    return row_rz(roll) @ row_ry(yaw) @ row_rx(pitch)


def euler_from_rotation(matrix) -> tuple[float, float, float]:
    """Recover ``(pitch, yaw, roll)`` in degrees from a row-convention matrix."""
    col = np.asarray(matrix, dtype=float).T
    # col = Rx(pitch) @ Ry(yaw) @ Rz(roll), i.e. intrinsic x-y-z
    pitch, yaw, roll = Rotation.from_matrix(col).as_euler("XYZ", degrees=True)
    return float(pitch), float(yaw), float(roll)


def head_rotvec_from_euler(pitch: float, yaw: float, roll: float) -> np.ndarray:
    """Axis-angle (column convention) for a head pose given as Euler degrees."""
    return matrix_to_axis_angle(rotation_from_euler(pitch, yaw, roll).T)


def is_rotation(matrix, tol: float = 1e-9) -> bool:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape != (3, 3) or not np.all(np.isfinite(matrix)):
        return False
    return bool(
        np.allclose(matrix @ matrix.T, np.eye(3), atol=tol)
        and abs(np.linalg.det(matrix) - 1.0) < tol
    )
