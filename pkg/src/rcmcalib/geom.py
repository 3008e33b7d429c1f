"""SE(3) and 3D-line geometry kernel.

Conventions used throughout the package:
  - Rotations are stored as unit quaternions (w, x, y, z), renormalized after
    every constructor and composition to keep drift out of long optimization
    chains.
  - Transforms act on column points: p' = R @ p + t.
  - compose(a, b) is the matrix product T_a @ T_b (b applied first).
  - Twists are (rotational, translational) tangent vectors; exp/log follow
    the standard SE(3) Rodrigues + V-matrix construction.
  - Lengths in millimetres, angles in radians.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryDomainError

_QUAT_TOL = 1e-9


def _as_readonly(a, shape) -> np.ndarray:
    out = np.array(a, dtype=float).reshape(shape)
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# Quaternion helpers (w, x, y, z)
# ---------------------------------------------------------------------------

def quat_mul(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Shepperd's method; stable for all rotation angles."""
    R = np.asarray(R, dtype=float)
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        if i == 0:
            s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
            q = np.array(
                [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
            )
        elif i == 1:
            s = np.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2]) * 2.0
            q = np.array(
                [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
            )
        else:
            s = np.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2]) * 2.0
            q = np.array(
                [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
            )
    return q / np.linalg.norm(q)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0.0:
        raise GeometryDomainError("rotation axis must be nonzero")
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis / n])


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(omega: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(omega))
    W = skew(omega)
    if theta < 1e-8:
        return np.eye(3) + W + 0.5 * (W @ W)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * W + b * (W @ W)


def _so3_v(omega: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(omega))
    W = skew(omega)
    if theta < 1e-8:
        return np.eye(3) + 0.5 * W + (W @ W) / 6.0
    t2 = theta * theta
    return (
        np.eye(3)
        + (1.0 - np.cos(theta)) / t2 * W
        + (theta - np.sin(theta)) / (t2 * theta) * (W @ W)
    )


def _so3_v_inv(omega: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(omega))
    W = skew(omega)
    if theta < 1e-8:
        return np.eye(3) - 0.5 * W + (W @ W) / 12.0
    t2 = theta * theta
    coeff = (1.0 - theta * np.sin(theta) / (2.0 * (1.0 - np.cos(theta)))) / t2
    return np.eye(3) - 0.5 * W + coeff * (W @ W)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RigidTransform:
    """SE(3) element: unit quaternion (w, x, y, z) + translation in mm."""

    quat: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    trans: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.array(self.quat, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if n < 1e-12:
            raise GeometryDomainError("quaternion norm too small to normalize")
        q /= n
        q.setflags(write=False)
        object.__setattr__(self, "quat", q)
        object.__setattr__(self, "trans", _as_readonly(self.trans, (3,)))

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform()

    @staticmethod
    def from_matrix(M) -> "RigidTransform":
        M = np.asarray(M, dtype=float)
        return RigidTransform(matrix_to_quat(M[:3, :3]), M[:3, 3])

    @staticmethod
    def from_rotation(R, trans=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return RigidTransform(matrix_to_quat(np.asarray(R, dtype=float)), trans)

    @staticmethod
    def from_axis_angle(axis, angle: float, trans=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return RigidTransform(quat_from_axis_angle(axis, angle), trans)

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.quat)

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation_matrix()
        M[:3, 3] = self.trans
        return M

    def apply(self, points) -> np.ndarray:
        """Transform one point (3,) or a stack of points (N, 3)."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation_matrix().T + self.trans

    def inverse(self) -> "RigidTransform":
        qc = quat_conj(self.quat)
        return RigidTransform(qc, -(quat_to_matrix(qc) @ self.trans))

    def rotation_angle(self) -> float:
        return 2.0 * np.arctan2(np.linalg.norm(self.quat[1:]), abs(self.quat[0]))

    def allclose(self, other: "RigidTransform", tol: float = 1e-9) -> bool:
        return bool(np.allclose(self.matrix(), other.matrix(), atol=tol))


@dataclass(frozen=True)
class Twist:
    """SE(3) tangent vector: rotational part (rad), translational part (mm)."""

    rot: np.ndarray
    trans: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rot", _as_readonly(self.rot, (3,)))
        object.__setattr__(self, "trans", _as_readonly(self.trans, (3,)))

    @staticmethod
    def from_vector(v) -> "Twist":
        v = np.asarray(v, dtype=float).reshape(6)
        return Twist(v[:3], v[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.rot, self.trans])


@dataclass(frozen=True)
class Line3:
    """Oriented 3D line: origin (mm) + unit direction."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        d = np.array(self.direction, dtype=float).reshape(3)
        n = np.linalg.norm(d)
        if n < 1e-12:
            raise GeometryDomainError("line direction must be nonzero")
        d /= n
        d.setflags(write=False)
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "origin", _as_readonly(self.origin, (3,)))

    def point_at(self, gamma: float) -> np.ndarray:
        return self.origin + gamma * self.direction


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """T_a @ T_b: apply b to points first, then a."""
    return RigidTransform(quat_mul(a.quat, b.quat), a.apply(b.trans))


def invert(t: RigidTransform) -> RigidTransform:
    return t.inverse()


def exp_map(xi: Twist) -> RigidTransform:
    """Exact SE(3) exponential: Rodrigues rotation + V-matrix translation."""
    R = so3_exp(xi.rot)
    return RigidTransform(matrix_to_quat(R), _so3_v(xi.rot) @ xi.trans)


def log_map(t: RigidTransform) -> Twist:
    """Inverse of exp_map; defined for rotation angles below pi - 1e-6."""
    angle = t.rotation_angle()
    if angle >= np.pi - 1e-6:
        raise GeometryDomainError(
            f"log_map undefined near angle pi (angle={angle:.9f} rad)"
        )
    if angle < 1e-12:
        omega = 2.0 * t.quat[1:] * np.sign(t.quat[0] if t.quat[0] != 0 else 1.0)
    else:
        axis = t.quat[1:] / np.linalg.norm(t.quat[1:])
        if t.quat[0] < 0:
            axis = -axis
        omega = axis * angle
    return Twist(omega, _so3_v_inv(omega) @ t.trans)


def point_line_distance_vector(p, line: Line3) -> np.ndarray:
    """Orthogonal residual (I - x x^T)(p - o); its norm is the distance."""
    p = np.asarray(p, dtype=float)
    d = line.direction
    diff = p - line.origin
    return diff - d * (d @ diff)
