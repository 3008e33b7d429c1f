"""JSON/CSV document formats.

All documents carry schema_version = 1. Units: lengths mm, angles rad,
image coordinates px. Quaternions are (w, x, y, z).

Sequence document: header (units, camera, optional rig, model) + frames
  {t, keypoints_2d: [{label, u, v}], joints: {q1..q4, alpha, theta_l,
  theta_r}, reported_rbT_ee: {quat, trans}, optional gt block}, plus an
  optional top-level gt block {hand_eye, rcm_point}.

Metrics CSV: columns frame, err2d_px, err2d_mm, err3d_mm, included_flag;
UTF-8, LF line endings, '.' decimal separator, 9 significant digits;
two summary rows (frame = "avg" / "median") are appended, their
included_flag column holding the included-frame count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .camera import PinholeCamera, StereoRig
from .errors import ConfigError
from .geom import RigidTransform
from .kinematics import InstrumentModel, JointState
from .optim import FrameObservation

SCHEMA_VERSION = 1


def transform_to_dict(t: RigidTransform) -> dict:
    return {"quat": [float(x) for x in t.quat], "trans": [float(x) for x in t.trans]}


def transform_from_dict(d: dict) -> RigidTransform:
    return RigidTransform(d["quat"], d["trans"])


# ---------------------------------------------------------------------------
# Sequence documents
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FrameGroundTruth:
    ct_s: RigidTransform
    ct_ee: RigidTransform
    joints: JointState
    tip_xyz: np.ndarray
    tip_uv: np.ndarray
    tip_uv_right: np.ndarray | None = None


@dataclass(frozen=True)
class SequenceFrame:
    """One observation + reported-kinematics record."""

    index: int
    observation: FrameObservation
    joints: JointState
    rbt_ee: RigidTransform
    gt: FrameGroundTruth | None = None


@dataclass(frozen=True)
class Sequence:
    camera: PinholeCamera
    model: InstrumentModel
    frames: tuple
    rig: StereoRig | None = None
    gt_hand_eye: RigidTransform | None = None
    gt_rcm_point: np.ndarray | None = None


def sequence_to_dict(seq: Sequence) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "units": {"length": "mm", "angle": "rad", "image": "px"},
        "camera": seq.camera.to_json_dict(),
        "model": seq.model.to_json_dict(),
    }
    if seq.rig is not None:
        doc["rig"] = seq.rig.to_json_dict()
    frames = []
    for f in seq.frames:
        fd = {
            "t": f.index,
            "keypoints_2d": [
                {"label": l, "u": float(uv[0]), "v": float(uv[1])}
                for l, uv in f.observation.keypoints
            ],
            "joints": {k: float(v) for k, v in f.joints.as_dict().items()},
            "reported_rbT_ee": transform_to_dict(f.rbt_ee),
        }
        if f.gt is not None:
            g = {
                "ct_s": transform_to_dict(f.gt.ct_s),
                "ct_ee": transform_to_dict(f.gt.ct_ee),
                "joints": {k: float(v) for k, v in f.gt.joints.as_dict().items()},
                "tip_xyz": [float(x) for x in f.gt.tip_xyz],
                "tip_uv": [float(x) for x in f.gt.tip_uv],
            }
            if f.gt.tip_uv_right is not None:
                g["tip_uv_right"] = [float(x) for x in f.gt.tip_uv_right]
            fd["gt"] = g
        frames.append(fd)
    doc["frames"] = frames
    if seq.gt_hand_eye is not None:
        doc["gt"] = {
            "hand_eye": transform_to_dict(seq.gt_hand_eye),
            "rcm_point": [float(x) for x in seq.gt_rcm_point],
        }
    return doc


def sequence_from_dict(doc: dict) -> Sequence:
    try:
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(
                f"unsupported sequence schema_version {doc.get('schema_version')!r}"
            )
        camera = PinholeCamera.from_json_dict(doc["camera"])
        model = InstrumentModel.from_json_dict(doc["model"])
        rig = StereoRig.from_json_dict(doc["rig"]) if "rig" in doc else None
        frames = []
        for fd in doc["frames"]:
            obs = FrameObservation(
                tuple((k["label"], (k["u"], k["v"])) for k in fd["keypoints_2d"]),
                camera,
            )
            gt = None
            if "gt" in fd:
                g = fd["gt"]
                gt = FrameGroundTruth(
                    ct_s=transform_from_dict(g["ct_s"]),
                    ct_ee=transform_from_dict(g["ct_ee"]),
                    joints=JointState.from_dict(g["joints"]),
                    tip_xyz=np.array(g["tip_xyz"], dtype=float),
                    tip_uv=np.array(g["tip_uv"], dtype=float),
                    tip_uv_right=np.array(g["tip_uv_right"], dtype=float)
                    if "tip_uv_right" in g else None,
                )
            frames.append(
                SequenceFrame(
                    index=fd["t"],
                    observation=obs,
                    joints=JointState.from_dict(fd["joints"]),
                    rbt_ee=transform_from_dict(fd["reported_rbT_ee"]),
                    gt=gt,
                )
            )
        gt_he = None
        gt_rcm = None
        if "gt" in doc:
            gt_he = transform_from_dict(doc["gt"]["hand_eye"])
            gt_rcm = np.array(doc["gt"]["rcm_point"], dtype=float)
        return Sequence(camera, model, tuple(frames), rig, gt_he, gt_rcm)
    except KeyError as e:
        raise ConfigError(f"sequence document missing field {e}") from e


def sequence_from_synthetic(cfg, synthetic_frames) -> Sequence:
    """Package simulator output (with its truths) as a sequence document."""
    frames = []
    for f in synthetic_frames:
        frames.append(
            SequenceFrame(
                index=f.index,
                observation=f.observation,
                joints=f.reported_joints,
                rbt_ee=f.reported_rbt_ee,
                gt=FrameGroundTruth(
                    ct_s=f.true_pose.shaft_pose,
                    ct_ee=f.true_ct_ee,
                    joints=f.true_joints,
                    tip_xyz=np.asarray(f.true_tip),
                    tip_uv=np.asarray(f.tip_uv_left),
                    tip_uv_right=None if f.tip_uv_right is None else np.asarray(f.tip_uv_right),
                ),
            )
        )
    return Sequence(
        camera=cfg.camera,
        model=cfg.model,
        frames=tuple(frames),
        rig=cfg.rig,
        gt_hand_eye=cfg.hand_eye,
        gt_rcm_point=np.array(cfg.rcm_point),
    )


# ---------------------------------------------------------------------------
# File helpers
# ---------------------------------------------------------------------------

def write_json(path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def read_json(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as e:
        raise ConfigError(f"input file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in {path}: {e}") from e


def fmt9(x: float) -> str:
    """9-significant-digit decimal rendering used by the metrics CSV."""
    return "nan" if not np.isfinite(x) else f"{x:.9g}"
