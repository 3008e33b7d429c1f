"""Forward kinematics of a wristed, RCM-pivoting instrument.

Frame conventions (fixed here; the simulator and every estimator share them):

  shaft frame F_s   x-axis along the shaft toward the tip; origin on the
                    centerline. The shaft centerline is the x-axis of F_s.
  wrist frame F_w   F_s translated by wrist_offset along x, then pitched by
                    alpha about y:       sT_w = Trans(d,0,0) @ Ry(alpha)
  jaw frames F_l/F_r  wrist frame yawed about z by the jaw angles:
                    wT_l = Rz(theta_l),  wT_r = Rz(theta_r)
  end effector F_ee  shares the jaw frames' origin and z-axis; its x-axis
                    bisects the jaw opening:  lT_ee = Rz((theta_r-theta_l)/2)

  RCM chain         cT_s = rcm_frame @ Rz(q1) @ Ry(q2) @ Trans(q3,0,0) @ Rx(q4)
                    so the shaft line always passes through the rcm_frame
                    origin (insertion q3 slides along the shaft x-axis, roll
                    q4 spins about it). Yaw and pitch together steer the
                    shaft over a 2-DOF cone of directions.

Joint tuple: yaw q1, pitch q2 (rad), insertion q3 (mm), roll q4, wrist pitch
alpha, jaw angles theta_l >= theta_r (rad).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .geom import Line3, RigidTransform, compose, quat_from_axis_angle

_EX = np.array([1.0, 0.0, 0.0])
_EY = np.array([0.0, 1.0, 0.0])
_EZ = np.array([0.0, 0.0, 1.0])

PART_CODES = {"s": 0, "w": 1, "l": 2, "r": 3}


def _rot(axis, angle: float, trans=(0.0, 0.0, 0.0)) -> RigidTransform:
    return RigidTransform(quat_from_axis_angle(axis, angle), trans)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JointState:
    """Raw articulation readings for one time step."""

    yaw: float = 0.0
    pitch: float = 0.0
    insertion: float = 0.0
    roll: float = 0.0
    wrist_pitch: float = 0.0
    jaw_left: float = 0.0
    jaw_right: float = 0.0

    def __post_init__(self):
        if self.jaw_left < self.jaw_right:
            raise ConfigError(
                f"jaw_left ({self.jaw_left}) must be >= jaw_right ({self.jaw_right})"
            )
        if self.insertion < 0:
            raise ConfigError(f"insertion must be >= 0, got {self.insertion}")

    def as_dict(self) -> dict:
        return {
            "q1": self.yaw,
            "q2": self.pitch,
            "q3": self.insertion,
            "q4": self.roll,
            "alpha": self.wrist_pitch,
            "theta_l": self.jaw_left,
            "theta_r": self.jaw_right,
        }

    @staticmethod
    def from_dict(d: dict) -> "JointState":
        return JointState(
            yaw=d["q1"], pitch=d["q2"], insertion=d["q3"], roll=d["q4"],
            wrist_pitch=d["alpha"], jaw_left=d["theta_l"], jaw_right=d["theta_r"],
        )


@dataclass(frozen=True)
class Keypoint:
    part: str
    label: str
    xyz: np.ndarray

    def __post_init__(self):
        if self.part not in PART_CODES:
            raise ConfigError(f"unknown part {self.part!r}; expected one of s,w,l,r")
        xyz = np.array(self.xyz, dtype=float).reshape(3)
        xyz.setflags(write=False)
        object.__setattr__(self, "xyz", xyz)


@dataclass(frozen=True)
class InstrumentModel:
    """Two-link wrist geometry plus the tracked keypoint set.

    wrist_offset: shaft-frame origin to wrist joint, along the shaft x-axis.
    gripper_length: wrist joint to tool tip.
    """

    wrist_offset: float = 9.1
    gripper_length: float = 9.6
    keypoints: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.wrist_offset <= 0 or self.gripper_length <= 0:
            raise ConfigError("link lengths must be positive")
        kps = tuple(self.keypoints) if self.keypoints else default_keypoints(
            self.wrist_offset, self.gripper_length
        )
        labels = [k.label for k in kps]
        if len(set(labels)) != len(labels):
            raise ConfigError("keypoint labels must be unique")
        object.__setattr__(self, "keypoints", kps)

    @property
    def labels(self) -> list:
        return [k.label for k in self.keypoints]

    def keypoint_arrays(self):
        """(part codes int32 (K,), local coordinates float64 (K,3))."""
        codes = np.array([PART_CODES[k.part] for k in self.keypoints], dtype=np.int32)
        pts = np.array([k.xyz for k in self.keypoints], dtype=float)
        return codes, pts

    def to_json_dict(self) -> dict:
        return {
            "wrist_offset_mm": self.wrist_offset,
            "gripper_length_mm": self.gripper_length,
            "keypoints": [
                {"part": k.part, "label": k.label, "xyz_mm": list(map(float, k.xyz))}
                for k in self.keypoints
            ],
        }

    @staticmethod
    def from_json_dict(d: dict) -> "InstrumentModel":
        try:
            kps = tuple(
                Keypoint(k["part"], k["label"], k["xyz_mm"]) for k in d["keypoints"]
            )
            return InstrumentModel(d["wrist_offset_mm"], d["gripper_length_mm"], kps)
        except KeyError as e:
            raise ConfigError(f"instrument model document missing field {e}") from e

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)

    @staticmethod
    def from_json(text: str) -> "InstrumentModel":
        return InstrumentModel.from_json_dict(json.loads(text))


def default_keypoints(wrist_offset: float, gripper_length: float,
                      shaft_span: float = 20.0) -> tuple:
    """Five-point set: two shaft centerline points, wrist center, both tips."""
    return (
        Keypoint("s", "shaft_proximal", (-shaft_span, 0.0, 0.0)),
        Keypoint("s", "shaft_distal", (0.0, 0.0, 0.0)),
        Keypoint("w", "wrist", (0.0, 0.0, 0.0)),
        Keypoint("l", "tip_left", (gripper_length, 0.0, 0.0)),
        Keypoint("r", "tip_right", (gripper_length, 0.0, 0.0)),
    )


@dataclass(frozen=True)
class InstrumentPose:
    """Articulated state in the camera frame: {theta_l, theta_r, alpha, cT_s}."""

    shaft_pose: RigidTransform
    wrist_pitch: float = 0.0
    jaw_left: float = 0.0
    jaw_right: float = 0.0

    def articulation(self) -> np.ndarray:
        return np.array([self.wrist_pitch, self.jaw_left, self.jaw_right])


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def part_transforms(pose: InstrumentPose, model: InstrumentModel) -> dict:
    """Camera-frame transform of each rigid part: keys 's', 'w', 'l', 'r'."""
    ct_s = pose.shaft_pose
    st_w = _rot(_EY, pose.wrist_pitch, trans=(model.wrist_offset, 0.0, 0.0))
    ct_w = compose(ct_s, st_w)
    return {
        "s": ct_s,
        "w": ct_w,
        "l": compose(ct_w, _rot(_EZ, pose.jaw_left)),
        "r": compose(ct_w, _rot(_EZ, pose.jaw_right)),
    }


def jaw_bisector(jaw_left: float, jaw_right: float) -> float:
    """Angle of the end-effector x-axis between the jaws."""
    return 0.5 * (jaw_left + jaw_right)


def end_effector_pose(pose: InstrumentPose, model: InstrumentModel) -> RigidTransform:
    """cT_ee = cT_s sT_w wT_l lT_ee; x-axis bisects the jaws."""
    parts = part_transforms(pose, model)
    beta = jaw_bisector(pose.jaw_left, pose.jaw_right)
    return compose(parts["l"], _rot(_EZ, beta - pose.jaw_left))


def shaft_line(pose: InstrumentPose) -> Line3:
    """Centerline: shaft-frame origin along the shaft-frame x-axis."""
    R = pose.shaft_pose.rotation_matrix()
    return Line3(pose.shaft_pose.trans, R[:, 0])


def rcm_forward(joints: JointState, rcm_frame: RigidTransform,
                model: InstrumentModel) -> InstrumentPose:
    """Pose of an instrument pivoting about the rcm_frame origin."""
    ct_s = compose(
        rcm_frame,
        compose(
            _rot(_EZ, joints.yaw),
            compose(
                _rot(_EY, joints.pitch),
                _rot(_EX, joints.roll, trans=(joints.insertion, 0.0, 0.0)),
            ),
        ),
    )
    return InstrumentPose(ct_s, joints.wrist_pitch, joints.jaw_left, joints.jaw_right)


def keypoints_3d(pose: InstrumentPose, model: InstrumentModel) -> list:
    """Camera-frame positions of every model keypoint: [(label, (3,)), ...]."""
    parts = part_transforms(pose, model)
    return [(k.label, parts[k.part].apply(k.xyz)) for k in model.keypoints]


def keypoints_in_shaft_frame(model: InstrumentModel, wrist_pitch: float,
                             jaw_left: float, jaw_right: float) -> list:
    """Articulated keypoints expressed in F_s (EPnP object points)."""
    pose = InstrumentPose(RigidTransform.identity(), wrist_pitch, jaw_left, jaw_right)
    return keypoints_3d(pose, model)


def tip_in_ee_frame(model: InstrumentModel) -> np.ndarray:
    """Evaluation tool tip: gripper_length along the end-effector x-axis."""
    return np.array([model.gripper_length, 0.0, 0.0])
