"""Pinhole projection, stereo triangulation, and pixel/metric conversion.

No lens distortion model; the left camera is the rig reference frame and all
triangulated points are expressed in it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError, ConfigError, DegenerateGeometryError, GeometryDomainError
from .geom import RigidTransform

_MIN_DEPTH = 1e-6


@dataclass(frozen=True)
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int = 640
    height: int = 512

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ConfigError("principal point must lie inside the image")

    def intrinsic_matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def contains(self, uv) -> bool:
        u, v = uv
        return 0.0 <= u < self.width and 0.0 <= v < self.height

    def to_json_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
        }

    @staticmethod
    def from_json_dict(d: dict) -> "PinholeCamera":
        try:
            return PinholeCamera(d["fx"], d["fy"], d["cx"], d["cy"], d["width"], d["height"])
        except KeyError as e:
            raise ConfigError(f"camera document missing field {e}") from e


@dataclass(frozen=True)
class StereoRig:
    """Left camera is the reference; right_from_left maps left-frame points
    into the right camera frame (p_r = R p_l + t)."""

    left: PinholeCamera
    right: PinholeCamera
    right_from_left: RigidTransform

    def __post_init__(self):
        if np.linalg.norm(self.right_from_left.trans) <= 0:
            raise ConfigError("stereo baseline must be positive")

    @property
    def baseline(self) -> float:
        return float(np.linalg.norm(self.right_from_left.trans))

    def projection_matrices(self):
        """P_l = K_l [I | 0], P_r = K_r [R | t]."""
        p_l = self.left.intrinsic_matrix() @ np.hstack([np.eye(3), np.zeros((3, 1))])
        rt = np.hstack(
            [self.right_from_left.rotation_matrix(), self.right_from_left.trans[:, None]]
        )
        return p_l, self.right.intrinsic_matrix() @ rt

    def to_json_dict(self) -> dict:
        return {
            "left": self.left.to_json_dict(),
            "right": self.right.to_json_dict(),
            "right_from_left": {
                "quat": list(map(float, self.right_from_left.quat)),
                "trans": list(map(float, self.right_from_left.trans)),
            },
        }

    @staticmethod
    def from_json_dict(d: dict) -> "StereoRig":
        try:
            rfl = d["right_from_left"]
            return StereoRig(
                PinholeCamera.from_json_dict(d["left"]),
                PinholeCamera.from_json_dict(d["right"]),
                RigidTransform(rfl["quat"], rfl["trans"]),
            )
        except KeyError as e:
            raise ConfigError(f"rig document missing field {e}") from e


def project(cam: PinholeCamera, p) -> np.ndarray:
    """Perspective projection of a camera-frame point (mm) to pixels."""
    p = np.asarray(p, dtype=float)
    if p[2] <= _MIN_DEPTH:
        raise BehindCameraError(f"point depth {p[2]:.6g} mm is not in front of the camera")
    return np.array([cam.fx * p[0] / p[2] + cam.cx, cam.fy * p[1] / p[2] + cam.cy])


def project_many(cam: PinholeCamera, pts: np.ndarray) -> np.ndarray:
    """Vectorized projection; caller is responsible for positive depths."""
    pts = np.asarray(pts, dtype=float)
    z = pts[:, 2]
    return np.stack(
        [cam.fx * pts[:, 0] / z + cam.cx, cam.fy * pts[:, 1] / z + cam.cy], axis=1
    )


def triangulate(rig: StereoRig, x_l, x_r) -> np.ndarray:
    """Two-view least-squares triangulation in the left camera frame.

    Homogeneous DLT seed followed by Gauss-Newton refinement of the
    reprojection objective (at most 10 iterations, stop when the step norm
    drops below 1e-10).
    """
    x_l = np.asarray(x_l, dtype=float)
    x_r = np.asarray(x_r, dtype=float)
    if not (np.all(np.isfinite(x_l)) and np.all(np.isfinite(x_r))):
        raise GeometryDomainError("pixel observations must be finite")
    p_l, p_r = rig.projection_matrices()

    a = np.empty((4, 4))
    a[0] = x_l[0] * p_l[2] - p_l[0]
    a[1] = x_l[1] * p_l[2] - p_l[1]
    a[2] = x_r[0] * p_r[2] - p_r[0]
    a[3] = x_r[1] * p_r[2] - p_r[1]
    _, s, vt = np.linalg.svd(a)
    if (s[2] - s[3]) <= 1e-12 * s[0]:
        raise DegenerateGeometryError(
            "triangulation system is rank deficient (observation on the baseline)"
        )
    xh = vt[-1]
    if abs(xh[3]) < 1e-12 * np.linalg.norm(xh[:3]):
        raise DegenerateGeometryError("triangulated point at infinity")
    x = xh[:3] / xh[3]

    # Gauss-Newton on the stereo reprojection residual.
    t_rl = rig.right_from_left
    for _ in range(10):
        r = np.empty(4)
        jac = np.empty((4, 3))
        for k, (cam, pt, obs, rot) in enumerate(
            (
                (rig.left, x, x_l, np.eye(3)),
                (rig.right, t_rl.apply(x), x_r, t_rl.rotation_matrix()),
            )
        ):
            z = pt[2]
            if z <= _MIN_DEPTH:
                return x  # refinement left the frustum; keep the DLT answer
            r[2 * k] = cam.fx * pt[0] / z + cam.cx - obs[0]
            r[2 * k + 1] = cam.fy * pt[1] / z + cam.cy - obs[1]
            dproj = np.array(
                [
                    [cam.fx / z, 0.0, -cam.fx * pt[0] / (z * z)],
                    [0.0, cam.fy / z, -cam.fy * pt[1] / (z * z)],
                ]
            )
            jac[2 * k : 2 * k + 2] = dproj @ rot
        jtj = jac.T @ jac
        step = np.linalg.solve(jtj + 1e-12 * np.trace(jtj) * np.eye(3), -jac.T @ r)
        x = x + step
        if np.linalg.norm(step) < 1e-10:
            break
    return x


def px_to_mm_scale(cam: PinholeCamera, depth: float) -> float:
    """Metric size of one pixel at the given depth: s = Z / fx."""
    if depth <= 0:
        raise GeometryDomainError(f"depth must be positive, got {depth}")
    return depth / cam.fx
