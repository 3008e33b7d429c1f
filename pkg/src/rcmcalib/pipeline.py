"""End-to-end calibration and evaluation.

calibrate():  per-frame EPnP initialization from reported joints, robust RCM
estimate, two-phase refinement, outlier-pose exclusion, then a rigid
alignment between refined camera-frame end-effector origins and reported
base-frame origins recovers the hand-eye transform.

evaluate():  corrected poses are compared against ground-truth tool tips
(synthetic truth or stereo-triangulated), in pixels, millimetres (via the
per-frame depth/focal scale), and 3D Euclidean distance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import PinholeCamera, StereoRig, project, px_to_mm_scale, triangulate
from .errors import CalibrationError, ConfigError, TooFewInliersError
from .geom import RigidTransform, compose, point_line_distance_vector
from .estimators import (
    Correspondence2D3D,
    alignment_rmsd,
    estimate_rcm_robust,
    kabsch_umeyama,
    solve_epnp,
)
from .kinematics import (
    InstrumentModel,
    InstrumentPose,
    end_effector_pose,
    keypoints_in_shaft_frame,
    shaft_line,
    tip_in_ee_frame,
)
from .optim import (
    LossWeights,
    keypoint_rms,
    optimize_phase1,
    optimize_phase2,
)
from .io import SequenceFrame, fmt9


@dataclass(frozen=True)
class CalibConfig:
    """Tuning knobs of the calibration pipeline."""

    weights: LossWeights = field(default_factory=LossWeights)
    epochs: int = 5
    steps_per_epoch: int = 8
    patience: int = 10
    max_iters: int = 200
    rcm_threshold: float = 3.0
    rcm_rounds: int = 5
    labeled_loss: bool = False
    workers: int = 1
    min_frames: int = 3
    exclusion_iqr_factor: float = 1.5
    articulation_margin: float | None = 0.03
    phase1_articulation_margin: float | None = 0.0

    @staticmethod
    def from_json_dict(d: dict) -> "CalibConfig":
        w = d.get("weights", {})
        return CalibConfig(
            weights=LossWeights(
                kpt=w.get("kpt", 1.0), rcm=w.get("rcm", 10.0),
                silh=w.get("silh", 0.0), px=w.get("px", 0.0),
            ),
            epochs=d.get("epochs", 5),
            steps_per_epoch=d.get("steps_per_epoch", 8),
            patience=d.get("patience", 10),
            max_iters=d.get("max_iters", 200),
            rcm_threshold=d.get("rcm_threshold", 3.0),
            rcm_rounds=d.get("rcm_rounds", 5),
            labeled_loss=d.get("labeled_loss", False),
            workers=d.get("workers", 1),
            min_frames=d.get("min_frames", 3),
            exclusion_iqr_factor=d.get("exclusion_iqr_factor", 1.5),
            articulation_margin=d.get("articulation_margin", 0.03),
            phase1_articulation_margin=d.get("phase1_articulation_margin", 0.0),
        )


@dataclass
class CalibrationResult:
    """Recovered hand-eye transform plus per-frame refinement state."""

    hand_eye: RigidTransform
    p_rcm: np.ndarray
    poses: list                 # refined InstrumentPose or None, per frame
    ct_ee: list                 # refined cT_ee or None, per frame
    inlier: list                # bool per frame
    alignment_rmsd: float
    frames_used: int
    diagnostics: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        from .io import transform_to_dict

        frames = []
        for i in range(len(self.poses)):
            fd = {"t": i, "inlier": bool(self.inlier[i])}
            if self.poses[i] is not None:
                fd["ct_s"] = transform_to_dict(self.poses[i].shaft_pose)
                fd["ct_ee"] = transform_to_dict(self.ct_ee[i])
                fd["articulation"] = {
                    "alpha": float(self.poses[i].wrist_pitch),
                    "theta_l": float(self.poses[i].jaw_left),
                    "theta_r": float(self.poses[i].jaw_right),
                }
            frames.append(fd)
        return {
            "schema_version": 1,
            "hand_eye": transform_to_dict(self.hand_eye),
            "p_rcm": [float(x) for x in self.p_rcm],
            "alignment_rmsd_mm": float(self.alignment_rmsd),
            "frames_used": int(self.frames_used),
            "frames": frames,
            "diagnostics": self.diagnostics,
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "CalibrationResult":
        from .io import transform_from_dict

        poses = []
        ct_ee = []
        inlier = []
        for fd in doc["frames"]:
            inlier.append(bool(fd["inlier"]))
            if "ct_s" in fd:
                art = fd["articulation"]
                poses.append(
                    InstrumentPose(
                        transform_from_dict(fd["ct_s"]),
                        art["alpha"], art["theta_l"], art["theta_r"],
                    )
                )
                ct_ee.append(transform_from_dict(fd["ct_ee"]))
            else:
                poses.append(None)
                ct_ee.append(None)
        return CalibrationResult(
            hand_eye=transform_from_dict(doc["hand_eye"]),
            p_rcm=np.array(doc["p_rcm"], dtype=float),
            poses=poses,
            ct_ee=ct_ee,
            inlier=inlier,
            alignment_rmsd=doc["alignment_rmsd_mm"],
            frames_used=doc["frames_used"],
            diagnostics=doc.get("diagnostics", {}),
        )


@dataclass
class MetricsReport:
    """Per-frame tip errors plus their averages and medians."""

    frame_indices: list
    err2d_px: list
    err2d_mm: list
    err3d_mm: list
    included: list
    n_skipped: int = 0

    def _included_values(self, values):
        return [v for v, inc in zip(values, self.included) if inc]

    def summary(self) -> dict:
        out = {}
        for name, values in (
            ("err2d_px", self.err2d_px),
            ("err2d_mm", self.err2d_mm),
            ("err3d_mm", self.err3d_mm),
        ):
            vals = self._included_values(values)
            out[f"avg_{name}"] = float(np.mean(vals)) if vals else float("nan")
            out[f"median_{name}"] = float(np.median(vals)) if vals else float("nan")
        out["n_included"] = sum(self.included)
        out["n_skipped"] = self.n_skipped
        return out

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "frames": [
                {
                    "frame": int(i),
                    "err2d_px": float(a),
                    "err2d_mm": float(b),
                    "err3d_mm": float(c),
                    "included": bool(inc),
                }
                for i, a, b, c, inc in zip(
                    self.frame_indices, self.err2d_px, self.err2d_mm,
                    self.err3d_mm, self.included,
                )
            ],
            "summary": self.summary(),
        }

    def to_csv(self) -> str:
        lines = ["frame,err2d_px,err2d_mm,err3d_mm,included_flag"]
        for i, a, b, c, inc in zip(
            self.frame_indices, self.err2d_px, self.err2d_mm, self.err3d_mm, self.included
        ):
            lines.append(f"{i},{fmt9(a)},{fmt9(b)},{fmt9(c)},{1 if inc else 0}")
        s = self.summary()
        lines.append(
            "avg,{},{},{},{}".format(
                fmt9(s["avg_err2d_px"]), fmt9(s["avg_err2d_mm"]),
                fmt9(s["avg_err3d_mm"]), s["n_included"],
            )
        )
        lines.append(
            "median,{},{},{},{}".format(
                fmt9(s["median_err2d_px"]), fmt9(s["median_err2d_mm"]),
                fmt9(s["median_err3d_mm"]), s["n_included"],
            )
        )
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------

def _init_pose(frame: SequenceFrame, model: InstrumentModel,
               camera: PinholeCamera) -> InstrumentPose:
    """EPnP on labeled 2D-3D pairs; object points from the reported joints."""
    j = frame.joints
    obj = dict(keypoints_in_shaft_frame(model, j.wrist_pitch, j.jaw_left, j.jaw_right))
    corrs = [
        Correspondence2D3D(label, uv, obj[label])
        for label, uv in frame.observation.keypoints
        if label in obj
    ]
    ct_s = solve_epnp(corrs, camera)
    return InstrumentPose(ct_s, j.wrist_pitch, j.jaw_left, j.jaw_right)


def _exclusion_mask(kpt_rms: np.ndarray, rcm_dist: np.ndarray,
                    cfg: CalibConfig) -> np.ndarray:
    """Outlier poses: keypoint RMS above Q75 + k*IQR, or pivot miss above
    the robust threshold. The absolute floor keeps machine-noise spread in
    near-exact fits from flagging healthy frames."""
    q25, q75 = np.percentile(kpt_rms, [25.0, 75.0])
    rms_cut = max(q75 + cfg.exclusion_iqr_factor * (q75 - q25), 1e-6)
    return (kpt_rms <= rms_cut) & (rcm_dist <= cfg.rcm_threshold)


def calibrate(frames, model: InstrumentModel, camera: PinholeCamera,
              config: CalibConfig | None = None) -> CalibrationResult:
    """Full pipeline: init, robust RCM, two-phase refinement, hand-eye solve."""
    cfg = config or CalibConfig()
    n = len(frames)

    eligible = []
    init_poses = []
    failures = {}
    for idx, frame in enumerate(frames):
        if not frame.observation.eligible:
            failures[idx] = "fewer than 4 detected keypoints"
            continue
        try:
            init_poses.append(_init_pose(frame, model, camera))
            eligible.append(idx)
        except CalibrationError as e:
            failures[idx] = f"initialization failed: {e}"
    if len(eligible) < cfg.min_frames:
        raise TooFewInliersError(
            f"only {len(eligible)} of {n} frames are usable; need {cfg.min_frames}"
        )

    observations = [frames[i].observation for i in eligible]
    init_lines = [shaft_line(p) for p in init_poses]
    rcm_init = estimate_rcm_robust(init_lines, cfg.rcm_threshold, cfg.rcm_rounds)

    poses1, rcm_est, report1 = optimize_phase1(
        observations, init_poses, model, cfg.weights,
        epochs=cfg.epochs, steps_per_epoch=cfg.steps_per_epoch,
        rcm_threshold=cfg.rcm_threshold, rcm_rounds=cfg.rcm_rounds,
        labeled=cfg.labeled_loss, articulation_margin=cfg.phase1_articulation_margin,
    )
    dist_phase1 = [
        float(np.linalg.norm(point_line_distance_vector(rcm_est.point, shaft_line(p))))
        for p in poses1
    ]

    poses2, report2 = optimize_phase2(
        observations, poses1, rcm_est.point, model, cfg.weights,
        patience=cfg.patience, max_iters=cfg.max_iters, workers=cfg.workers,
        labeled=cfg.labeled_loss, articulation_margin=cfg.articulation_margin,
        articulation_anchor=init_poses,
    )
    dist_phase2 = [
        float(np.linalg.norm(point_line_distance_vector(rcm_est.point, shaft_line(p))))
        for p in poses2
    ]
    rms_final = np.array(
        [keypoint_rms(p, model, o) for p, o in zip(poses2, observations)]
    )

    keep = _exclusion_mask(rms_final, np.array(dist_phase2), cfg)
    if keep.sum() < cfg.min_frames:
        raise TooFewInliersError(
            f"only {int(keep.sum())} frames survived outlier exclusion; "
            f"need {cfg.min_frames}"
        )

    p_cam = []
    p_base = []
    for k, idx in enumerate(eligible):
        if keep[k]:
            p_cam.append(end_effector_pose(poses2[k], model).trans)
            p_base.append(frames[idx].rbt_ee.trans)
    p_cam = np.array(p_cam)
    p_base = np.array(p_base)
    hand_eye = kabsch_umeyama(p_base, p_cam)
    rmsd = alignment_rmsd(hand_eye, p_base, p_cam)

    # Rotational agreement is diagnostic only; the solve uses translations.
    rot_residuals = []
    for k, idx in enumerate(eligible):
        if keep[k]:
            predicted = compose(hand_eye, frames[idx].rbt_ee)
            refined = end_effector_pose(poses2[k], model)
            rot_residuals.append(compose(refined.inverse(), predicted).rotation_angle())

    poses_out = [None] * n
    ct_ee_out = [None] * n
    inlier = [False] * n
    for k, idx in enumerate(eligible):
        poses_out[idx] = poses2[k]
        ct_ee_out[idx] = end_effector_pose(poses2[k], model)
        inlier[idx] = bool(keep[k])

    diagnostics = {
        "rcm_init": [float(x) for x in rcm_init.point],
        "rcm_frozen": [float(x) for x in rcm_est.point],
        "rcm_distance_phase1_mean_mm": float(np.mean(dist_phase1)),
        "rcm_distance_phase2_mean_mm": float(np.mean(dist_phase2)),
        "keypoint_rms_px": [float(x) for x in rms_final],
        "rcm_distance_phase2_mm": [float(x) for x in dist_phase2],
        "rotation_agreement_rad_mean": float(np.mean(rot_residuals)),
        "excluded_frames": sorted(
            [int(idx) for idx, _ in failures.items()]
            + [int(eligible[k]) for k in range(len(eligible)) if not keep[k]]
        ),
        "failure_reasons": {str(k): v for k, v in sorted(failures.items())},
        "phase1": report1.to_json_dict(),
        "phase2": report2.to_json_dict(),
        "rcm_low_confidence": bool(rcm_est.low_confidence),
    }
    return CalibrationResult(
        hand_eye=hand_eye,
        p_rcm=np.array(rcm_est.point),
        poses=poses_out,
        ct_ee=ct_ee_out,
        inlier=inlier,
        alignment_rmsd=rmsd,
        frames_used=int(keep.sum()),
        diagnostics=diagnostics,
    )


def apply_calibration(result: CalibrationResult, rbt_ee: RigidTransform) -> RigidTransform:
    """Corrected camera-frame pose of a reported base-frame pose."""
    return compose(result.hand_eye, rbt_ee)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _gt_tip(frame: SequenceFrame, rig: StereoRig | None, gt_source: str):
    """Ground-truth 3D tip and 2D tip for one frame, or None."""
    g = frame.gt
    if g is None:
        return None
    has_stereo = rig is not None and g.tip_uv_right is not None
    if gt_source == "stereo" or (gt_source == "auto" and has_stereo):
        if not has_stereo:
            return None
        x = triangulate(rig, g.tip_uv, g.tip_uv_right)
        return x, g.tip_uv
    if g.tip_xyz is None:
        return None
    return np.asarray(g.tip_xyz, dtype=float), g.tip_uv


def evaluate_with_transform(hand_eye: RigidTransform, frames,
                            model: InstrumentModel, camera: PinholeCamera,
                            rig: StereoRig | None = None,
                            gt_source: str = "auto") -> MetricsReport:
    """Tip errors of hand_eye-corrected reported poses against ground truth.

    gt_source: "true" uses the stored synthetic tips, "stereo" triangulates
    the stored stereo tip observations, "auto" prefers stereo when present.
    """
    if gt_source not in ("auto", "true", "stereo"):
        raise ConfigError(f"unknown gt_source {gt_source!r}")
    tip_local = tip_in_ee_frame(model)
    idx, e2px, e2mm, e3mm, included = [], [], [], [], []
    skipped = 0
    for frame in frames:
        gt = _gt_tip(frame, rig, gt_source)
        if gt is None:
            skipped += 1
            continue
        x_gt, uv_gt = gt
        corrected = compose(hand_eye, frame.rbt_ee)
        x_hat = corrected.apply(tip_local)
        idx.append(frame.index)
        if x_hat[2] <= 1e-6:
            e2px.append(float("inf"))
            e2mm.append(float("inf"))
            e3mm.append(float(np.linalg.norm(x_gt - x_hat)))
            included.append(False)
            continue
        err_px = float(np.linalg.norm(project(camera, x_hat) - uv_gt))
        scale = px_to_mm_scale(camera, float(x_gt[2]))
        e2px.append(err_px)
        e2mm.append(err_px * scale)
        e3mm.append(float(np.linalg.norm(x_gt - x_hat)))
        included.append(True)
    return MetricsReport(idx, e2px, e2mm, e3mm, included, skipped)


def evaluate(result: CalibrationResult, frames, model: InstrumentModel,
             camera: PinholeCamera, rig: StereoRig | None = None,
             gt_source: str = "auto") -> MetricsReport:
    return evaluate_with_transform(
        result.hand_eye, frames, model, camera, rig, gt_source
    )
