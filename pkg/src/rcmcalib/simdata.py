"""Synthetic ground-truth generator.

Simulates an instrument pivoting about a known RCM point in front of a known
camera, with a proprioception channel corrupted the way tendon-driven
hardware is: constant per-joint bias, a direction-dependent backlash band on
revolute joints, and a fixed base-frame offset folded into the reported
end-effector poses. Detections are the true keypoint projections plus iid
Gaussian pixel noise with optional dropout.

Everything is driven by one seeded RNG in a fixed draw order, so a given
ScenarioConfig reproduces byte-identical sequences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import PinholeCamera, StereoRig, project
from .errors import ConfigError, FrustumViolationError
from .geom import RigidTransform, compose, invert, quat_from_axis_angle
from .kinematics import (
    InstrumentModel,
    InstrumentPose,
    JointState,
    end_effector_pose,
    keypoints_3d,
    rcm_forward,
    tip_in_ee_frame,
)
from .optim import FrameObservation

JOINT_KEYS = ("q1", "q2", "q3", "q4", "alpha", "theta_l", "theta_r")
REVOLUTE_KEYS = ("q1", "q2", "q4", "alpha", "theta_l", "theta_r")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseModel:
    """Error processes applied between the true state and the reported one."""

    joint_bias: dict = field(default_factory=dict)
    backlash_width: dict = field(default_factory=dict)
    keypoint_noise_sigma: float = 0.0
    detection_dropout: float = 0.0
    base_offset: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        if self.keypoint_noise_sigma < 0:
            raise ConfigError("keypoint noise sigma must be >= 0")
        if not (0.0 <= self.detection_dropout < 1.0):
            raise ConfigError("detection dropout must be in [0, 1)")
        for k, v in self.backlash_width.items():
            if k not in REVOLUTE_KEYS:
                raise ConfigError(f"backlash applies to revolute joints only, got {k!r}")
            if v < 0:
                raise ConfigError("backlash width must be >= 0")
        for k in self.joint_bias:
            if k not in JOINT_KEYS:
                raise ConfigError(f"unknown joint {k!r} in joint_bias")

    @staticmethod
    def noiseless() -> "NoiseModel":
        return NoiseModel()

    @staticmethod
    def uniform(bias_rad: float = 0.0, backlash_rad: float = 0.0,
                sigma_px: float = 0.0, dropout: float = 0.0,
                base_offset: RigidTransform | None = None) -> "NoiseModel":
        """Same bias/backlash on every revolute joint."""
        return NoiseModel(
            joint_bias={k: bias_rad for k in REVOLUTE_KEYS},
            backlash_width={k: backlash_rad for k in REVOLUTE_KEYS},
            keypoint_noise_sigma=sigma_px,
            detection_dropout=dropout,
            base_offset=base_offset or RigidTransform.identity(),
        )

    def to_json_dict(self) -> dict:
        return {
            "joint_bias": dict(self.joint_bias),
            "backlash_width": dict(self.backlash_width),
            "keypoint_noise_sigma": self.keypoint_noise_sigma,
            "detection_dropout": self.detection_dropout,
            "base_offset": {
                "quat": list(map(float, self.base_offset.quat)),
                "trans": list(map(float, self.base_offset.trans)),
            },
        }

    @staticmethod
    def from_json_dict(d: dict) -> "NoiseModel":
        off = d.get("base_offset")
        return NoiseModel(
            joint_bias=dict(d.get("joint_bias", {})),
            backlash_width=dict(d.get("backlash_width", {})),
            keypoint_noise_sigma=d.get("keypoint_noise_sigma", 0.0),
            detection_dropout=d.get("detection_dropout", 0.0),
            base_offset=RigidTransform(off["quat"], off["trans"]) if off
            else RigidTransform.identity(),
        )


# Per-joint (center, amplitude, step sigma) of the default bounded walk.
# Amplitudes keep every keypoint inside the default 640x512 frustum and the
# insertion within [40, 120] mm; sigmas are sized so the walk actually covers
# its amplitude range (hand-eye recovery needs the end-effector cloud spread
# well above the per-frame depth noise).
DEFAULT_WALK = {
    "q1": (0.0, 0.085, 0.030),
    "q2": (0.0, 0.085, 0.030),
    "q3": (87.0, 28.0, 9.0),
    "q4": (0.0, 0.40, 0.120),
    "alpha": (0.35, 0.25, 0.080),
    "theta_l": (0.35, 0.20, 0.060),
    "theta_r": (-0.35, 0.20, 0.060),
}
_WALK_REVERSION = 0.15


@dataclass(frozen=True)
class ScenarioConfig:
    """Full description of one synthetic experiment."""

    n_frames: int = 50
    seed: int = 0
    camera: PinholeCamera = field(
        default_factory=lambda: PinholeCamera(800.0, 800.0, 320.0, 256.0, 640, 512)
    )
    rig: StereoRig | None = None
    model: InstrumentModel = field(default_factory=InstrumentModel)
    hand_eye: RigidTransform = field(default_factory=RigidTransform.identity)
    rcm_frame: RigidTransform = field(default_factory=RigidTransform.identity)
    trajectory: dict = field(default_factory=lambda: {"type": "random_walk"})
    noise: NoiseModel = field(default_factory=NoiseModel)

    def __post_init__(self):
        if self.n_frames < 3:
            raise ConfigError("a scenario needs at least 3 frames")
        kind = self.trajectory.get("type")
        if kind not in ("random_walk", "waypoints"):
            raise ConfigError(f"unknown trajectory type {kind!r}")
        if kind == "waypoints" and len(self.trajectory.get("waypoints", [])) < 2:
            raise ConfigError("waypoint trajectory needs at least 2 waypoints")

    @property
    def rcm_point(self) -> np.ndarray:
        return self.rcm_frame.trans

    def to_json_dict(self) -> dict:
        d = {
            "schema_version": 1,
            "n_frames": self.n_frames,
            "seed": self.seed,
            "camera": self.camera.to_json_dict(),
            "model": self.model.to_json_dict(),
            "hand_eye": {
                "quat": list(map(float, self.hand_eye.quat)),
                "trans": list(map(float, self.hand_eye.trans)),
            },
            "rcm_frame": {
                "quat": list(map(float, self.rcm_frame.quat)),
                "trans": list(map(float, self.rcm_frame.trans)),
            },
            "trajectory": self.trajectory,
            "noise": self.noise.to_json_dict(),
        }
        if self.rig is not None:
            d["rig"] = self.rig.to_json_dict()
        return d

    @staticmethod
    def from_json_dict(d: dict) -> "ScenarioConfig":
        try:
            return ScenarioConfig(
                n_frames=d["n_frames"],
                seed=d.get("seed", 0),
                camera=PinholeCamera.from_json_dict(d["camera"]),
                rig=StereoRig.from_json_dict(d["rig"]) if "rig" in d else None,
                model=InstrumentModel.from_json_dict(d["model"]),
                hand_eye=RigidTransform(d["hand_eye"]["quat"], d["hand_eye"]["trans"]),
                rcm_frame=RigidTransform(d["rcm_frame"]["quat"], d["rcm_frame"]["trans"]),
                trajectory=d.get("trajectory", {"type": "random_walk"}),
                noise=NoiseModel.from_json_dict(d.get("noise", {})),
            )
        except KeyError as e:
            raise ConfigError(f"scenario document missing field {e}") from e


def default_rig(camera: PinholeCamera, baseline_mm: float = 5.0) -> StereoRig:
    """Canonical lateral rig: right camera shifted along -x of the left."""
    return StereoRig(camera, camera, RigidTransform(trans=(-baseline_mm, 0.0, 0.0)))


def oblique_rcm_frame(rcm_point=(-70.0, -38.0, 170.0),
                      aim_point=(0.0, 0.0, 100.0)) -> RigidTransform:
    """RCM frame for a trocar-style approach: the shaft (frame x-axis) runs
    from the pivot diagonally across the view toward aim_point, so the
    keypoints spread widely in the image instead of stacking up."""
    rcm_point = np.asarray(rcm_point, dtype=float)
    x = np.asarray(aim_point, dtype=float) - rcm_point
    x /= np.linalg.norm(x)
    y = np.cross((0.0, 0.0, 1.0), x)
    y /= np.linalg.norm(y)
    from .geom import matrix_to_quat

    return RigidTransform(
        matrix_to_quat(np.stack([x, y, np.cross(x, y)], axis=1)), rcm_point
    )


def default_config(n_frames: int = 50, seed: int = 0,
                   noise: NoiseModel | None = None) -> ScenarioConfig:
    """Scenario with the instrument entering obliquely from the upper left,
    pivot ~106 mm from the workspace center at 100 mm depth."""
    camera = PinholeCamera(800.0, 800.0, 320.0, 256.0, 640, 512)
    return ScenarioConfig(
        n_frames=n_frames,
        seed=seed,
        camera=camera,
        rig=default_rig(camera),
        model=InstrumentModel(),
        hand_eye=RigidTransform(
            quat_from_axis_angle((0.3, -0.5, 0.8), 2.2), (-120.0, 80.0, 310.0)
        ),
        rcm_frame=oblique_rcm_frame(),
        trajectory={"type": "random_walk"},
        noise=noise or NoiseModel(),
    )


def biased_noise_model() -> NoiseModel:
    """Noise model of the kinematic-bias scenario: 0.01 rad joint bias,
    0.02 rad backlash band, 1 px detection noise, plus a base-frame offset
    large enough to dominate the uncorrected tip error."""
    return NoiseModel.uniform(
        bias_rad=0.01,
        backlash_rad=0.02,
        sigma_px=1.0,
        base_offset=RigidTransform(
            quat_from_axis_angle((0.2, 1.0, 0.1), np.radians(1.0)), (8.0, -6.0, 7.0)
        ),
    )


# ---------------------------------------------------------------------------
# Trajectory sampling
# ---------------------------------------------------------------------------

def _walk_trajectory(cfg: ScenarioConfig, rng: np.random.Generator) -> list:
    params = dict(DEFAULT_WALK)
    params.update(cfg.trajectory.get("per_joint", {}))
    state = {k: float(params[k][0]) for k in JOINT_KEYS}
    out = []
    for _ in range(cfg.n_frames):
        out.append(dict(state))
        for k in JOINT_KEYS:
            center, amp, sigma = params[k]
            x = state[k]
            x += _WALK_REVERSION * (center - x) + sigma * rng.standard_normal()
            state[k] = float(np.clip(x, center - amp, center + amp))
    return out


def _waypoint_trajectory(cfg: ScenarioConfig) -> list:
    wps = cfg.trajectory["waypoints"]
    n = cfg.n_frames
    out = []
    for i in range(n):
        s = (i / (n - 1)) * (len(wps) - 1) if n > 1 else 0.0
        j = min(int(s), len(wps) - 2)
        f = s - j
        out.append(
            {k: (1 - f) * wps[j][k] + f * wps[j + 1][k] for k in JOINT_KEYS}
        )
    return out


def sample_trajectory(cfg: ScenarioConfig, rng: np.random.Generator) -> list:
    """True joint values per frame, as dicts keyed by JOINT_KEYS."""
    if cfg.trajectory["type"] == "waypoints":
        return _waypoint_trajectory(cfg)
    return _walk_trajectory(cfg, rng)


# ---------------------------------------------------------------------------
# Sequence generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticFrame:
    index: int
    true_pose: InstrumentPose
    true_ct_ee: RigidTransform
    observation: FrameObservation
    reported_joints: JointState
    reported_rbt_ee: RigidTransform
    true_joints: JointState
    true_tip: np.ndarray
    tip_uv_left: np.ndarray
    tip_uv_right: np.ndarray | None
    keypoint_noise: dict
    dropped_labels: tuple


def _joints_from_dict(d: dict) -> JointState:
    return JointState(
        yaw=d["q1"], pitch=d["q2"], insertion=d["q3"], roll=d["q4"],
        wrist_pitch=d["alpha"], jaw_left=d["theta_l"], jaw_right=d["theta_r"],
    )


def _report_joints(true_j: dict, prev_j: dict | None, noise: NoiseModel) -> dict:
    rep = {}
    for k in JOINT_KEYS:
        v = true_j[k] + noise.joint_bias.get(k, 0.0)
        if prev_j is not None and k in noise.backlash_width:
            direction = np.sign(true_j[k] - prev_j[k])
            v += 0.5 * noise.backlash_width[k] * direction
        rep[k] = v
    rep["q3"] = max(rep["q3"], 0.0)
    rep["theta_r"] = min(rep["theta_r"], rep["theta_l"])
    return rep


def generate_sequence(cfg: ScenarioConfig) -> list:
    """Simulate the scenario; returns one SyntheticFrame per time step.

    RNG draw order per run: the full joint trajectory first, then per frame
    the pixel noise for every model keypoint followed by the dropout
    uniforms, so visibility changes never shift the stream.
    """
    rng = np.random.default_rng(cfg.seed)
    trajectory = sample_trajectory(cfg, rng)
    labels = cfg.model.labels
    rb_from_ct = compose(invert(cfg.hand_eye), cfg.noise.base_offset)
    tip_local = tip_in_ee_frame(cfg.model)

    frames = []
    prev = None
    for idx, true_j in enumerate(trajectory):
        joints = _joints_from_dict(true_j)
        pose = rcm_forward(joints, cfg.rcm_frame, cfg.model)
        ct_ee = end_effector_pose(pose, cfg.model)
        reported = _joints_from_dict(_report_joints(true_j, prev, cfg.noise))
        reported_rbt_ee = compose(rb_from_ct, ct_ee)

        pts = keypoints_3d(pose, cfg.model)
        noise_uv = rng.normal(0.0, cfg.noise.keypoint_noise_sigma, size=(len(labels), 2)) \
            if cfg.noise.keypoint_noise_sigma > 0 else np.zeros((len(labels), 2))
        drop_draws = rng.uniform(size=len(labels))

        detections = []
        noise_rec = {}
        dropped = []
        n_visible = 0
        for k, (label, p) in enumerate(pts):
            if p[2] <= 1e-6:
                continue
            uv = project(cfg.camera, p)
            if not cfg.camera.contains(uv):
                continue
            n_visible += 1
            if drop_draws[k] < cfg.noise.detection_dropout:
                dropped.append(label)
                continue
            noisy = uv + noise_uv[k]
            noise_rec[label] = (float(noise_uv[k][0]), float(noise_uv[k][1]))
            detections.append((label, noisy))
        if n_visible == 0:
            raise FrustumViolationError(f"frame {idx}: every keypoint left the image")

        true_tip = ct_ee.apply(tip_local)
        tip_uv_left = project(cfg.camera, true_tip)
        tip_uv_right = None
        if cfg.rig is not None:
            tip_uv_right = project(cfg.rig.right, cfg.rig.right_from_left.apply(true_tip))

        frames.append(
            SyntheticFrame(
                index=idx,
                true_pose=pose,
                true_ct_ee=ct_ee,
                observation=FrameObservation(tuple(detections), cfg.camera),
                reported_joints=reported,
                reported_rbt_ee=reported_rbt_ee,
                true_joints=joints,
                true_tip=true_tip,
                tip_uv_left=tip_uv_left,
                tip_uv_right=tip_uv_right,
                keypoint_noise=noise_rec,
                dropped_labels=tuple(dropped),
            )
        )
        prev = true_j
    return frames


@dataclass(frozen=True)
class GroundTruthBundle:
    hand_eye: RigidTransform
    rcm_point: np.ndarray
    tips: np.ndarray
    ct_ee: tuple


def ground_truth_bundle(cfg: ScenarioConfig, frames) -> GroundTruthBundle:
    """Hidden truths for the evaluator; never fed to the calibration path."""
    return GroundTruthBundle(
        hand_eye=cfg.hand_eye,
        rcm_point=np.array(cfg.rcm_point),
        tips=np.array([f.true_tip for f in frames]),
        ct_ee=tuple(f.true_ct_ee for f in frames),
    )
