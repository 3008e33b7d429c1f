"""Two-phase RCM-aware pose refinement.

Phase 1 runs a fixed number of epochs: per-frame keypoint-loss descent, then
a robust re-estimate of the pivot point from the updated shaft centerlines.
Phase 2 freezes the pivot and refines each frame independently against
keypoint + RCM losses, stopping early after K consecutive non-improving
iterations.

Per-frame minimization is a damped Gauss-Newton descent on the product
manifold (local twist of cT_s) x (alpha, theta_l, theta_r) with Armijo
backtracking (c = 1e-4, shrink 0.5), so every accepted step strictly
decreases the phase objective and the whole procedure is deterministic.
Residuals and Jacobians come from the kernels backend.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .camera import PinholeCamera, project_many
from .errors import BehindCameraError, ConfigError
from .estimators import RcmEstimate, estimate_rcm_robust
from .geom import RigidTransform, Twist, compose, exp_map
from .kinematics import InstrumentModel, InstrumentPose, part_transforms, shaft_line

_MIN_DEPTH = 1e-6
_ARMIJO_C = 1e-4
_SHRINK = 0.5
_MIN_STEP = 1e-12

_EMPTY_UV = np.empty((0, 2))
_EMPTY_CODES = np.empty(0, dtype=np.int32)
_EMPTY_PTS = np.empty((0, 3))


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LossWeights:
    """Objective weights. The silhouette and photometric weights exist only
    as configuration and must stay 0: no renderer is attached."""

    kpt: float = 1.0
    rcm: float = 10.0
    silh: float = 0.0
    px: float = 0.0

    def __post_init__(self):
        if self.kpt <= 0:
            raise ConfigError("keypoint weight must be positive")
        if self.rcm < 0:
            raise ConfigError("weights must be nonnegative")
        if self.silh != 0.0 or self.px != 0.0:
            raise ConfigError("silhouette/photometric weights are fixed to 0")


@dataclass(frozen=True)
class FrameObservation:
    """Detected 2D keypoints of one frame: ((label, (u, v)), ...)."""

    keypoints: tuple
    camera: PinholeCamera

    def __post_init__(self):
        kps = tuple((str(l), np.array(uv, dtype=float).reshape(2)) for l, uv in self.keypoints)
        object.__setattr__(self, "keypoints", kps)

    @property
    def eligible(self) -> bool:
        return len(self.keypoints) >= 4

    def labels(self) -> list:
        return [l for l, _ in self.keypoints]

    def uv_array(self) -> np.ndarray:
        if not self.keypoints:
            return _EMPTY_UV
        return np.array([uv for _, uv in self.keypoints])


@dataclass
class OptimizationReport:
    """Diagnostics of one optimization phase."""

    phase: str
    final_losses: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    loss_history: list = field(default_factory=list)
    rcm_per_epoch: list = field(default_factory=list)
    inlier_masks_per_epoch: list = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "phase": self.phase,
            "final_losses": [float(x) for x in self.final_losses],
            "iterations": [int(x) for x in self.iterations],
            "loss_history": [[float(x) for x in h] for h in self.loss_history],
            "rcm_per_epoch": [[float(x) for x in p] for p in self.rcm_per_epoch],
            "inlier_masks_per_epoch": [
                [bool(b) for b in m] for m in self.inlier_masks_per_epoch
            ],
        }


# ---------------------------------------------------------------------------
# Loss terms
# ---------------------------------------------------------------------------

def _match_indices(obs: FrameObservation, model: InstrumentModel) -> np.ndarray:
    labels = model.labels
    try:
        return np.array([labels.index(l) for l in obs.labels()], dtype=np.int32)
    except ValueError as e:
        raise ConfigError(f"detection label not in the instrument model: {e}") from e


def _kernel_args(pose: InstrumentPose, model: InstrumentModel, cam: PinholeCamera,
                 det_uv, match_idx, p_rcm, lam_kpt, lam_rcm):
    codes, pts = model.keypoint_arrays()
    return (
        pose.shaft_pose.quat, pose.shaft_pose.trans,
        pose.wrist_pitch, pose.jaw_left, pose.jaw_right,
        codes, pts, model.wrist_offset,
        cam.fx, cam.fy, cam.cx, cam.cy,
        det_uv, match_idx, p_rcm, lam_kpt, lam_rcm,
    )


def keypoint_loss(pose: InstrumentPose, model: InstrumentModel,
                  obs: FrameObservation, labeled: bool = False):
    """Symmetric Chamfer distance (px^2) between projected model keypoints
    and detections, with its gradient.

    Returns (loss, gradient) where the gradient is the 9-vector
    [twist of cT_s (3 rot + 3 trans), alpha, theta_l, theta_r].
    """
    match_idx = _match_indices(obs, model) if labeled else None
    loss, grad, min_depth = kernels.loss_and_grad(
        *_kernel_args(pose, model, obs.camera, obs.uv_array(), match_idx, None, 1.0, 0.0)
    )
    if min_depth <= _MIN_DEPTH:
        raise BehindCameraError(
            f"model keypoint at depth {min_depth:.6g} mm is not in front of the camera"
        )
    return loss, grad


def rcm_loss(poses, p_rcm):
    """Mean squared orthogonal distance of the pivot to the shaft lines.

    Returns (loss, gradients) with one 6-vector twist gradient per pose.
    """
    if len(poses) < 1:
        raise ConfigError("rcm_loss needs at least one pose")
    p_rcm = np.asarray(p_rcm, dtype=float)
    n = len(poses)
    grads = np.empty((n, 6))
    total = 0.0
    for i, pose in enumerate(poses):
        resid, jac, _ = kernels.frame_residuals(
            pose.shaft_pose.quat, pose.shaft_pose.trans,
            pose.wrist_pitch, pose.jaw_left, pose.jaw_right,
            _EMPTY_CODES, _EMPTY_PTS, 0.0,
            1.0, 1.0, 0.0, 0.0,
            _EMPTY_UV, None, p_rcm, 0.0, 1.0, True,
        )
        total += float(resid @ resid)
        grads[i] = 2.0 * (jac[:, :6].T @ resid) / n
    return total / n, grads


def keypoint_rms(pose: InstrumentPose, model: InstrumentModel,
                 obs: FrameObservation) -> float:
    """Forward RMS (px): model keypoints to their nearest detections."""
    parts = part_transforms(pose, model)
    pts = np.array([parts[k.part].apply(k.xyz) for k in model.keypoints])
    if np.any(pts[:, 2] <= _MIN_DEPTH):
        return np.inf
    proj = project_many(obs.camera, pts)
    det = obs.uv_array()
    d2 = ((proj[:, None, :] - det[None, :, :]) ** 2).sum(axis=2)
    return float(np.sqrt(d2.min(axis=1).mean()))


# ---------------------------------------------------------------------------
# Per-frame minimization
# ---------------------------------------------------------------------------

def _articulation_bounds(poses, margin):
    """Per-pose (lo, hi) articulation boxes, or None entries if unbounded."""
    if margin is None:
        return [None] * len(poses)
    out = []
    for p in poses:
        a = p.articulation()
        out.append((a - margin, a + margin))
    return out


def _slide_offsets(model: InstrumentModel):
    """Signed shaft-axis restart offsets: the gaps between keypoint stations.

    The dominant Chamfer failure mode is the instrument sliding along its
    own axis by one keypoint spacing; restarting from these offsets lets the
    minimizer compare basins deterministically.
    """
    stations = sorted({round(float(k.xyz[0]), 6) for k in model.keypoints if k.part == "s"}
                      | {round(model.wrist_offset, 6)})
    gaps = {round(b - a, 6) for a in stations for b in stations if b > a}
    out = []
    for g in sorted(gaps):
        out.extend([g, -g])
    return out


def _retract(pose: InstrumentPose, step: np.ndarray,
             art_lo=None, art_hi=None) -> InstrumentPose:
    delta = exp_map(Twist(step[:3], step[3:6]))
    ang = np.clip(pose.articulation() + step[6:9], -np.pi / 2, np.pi / 2)
    if art_lo is not None:
        ang = np.clip(ang, art_lo, art_hi)
    return InstrumentPose(compose(delta, pose.shaft_pose), ang[0], ang[1], ang[2])


def _minimize_frame(pose: InstrumentPose, model: InstrumentModel,
                    obs: FrameObservation, det_uv, match_idx, p_rcm,
                    lam_kpt: float, lam_rcm: float,
                    max_iters: int, patience: int,
                    full_state: bool = True,
                    art_bounds=None):
    """Damped Gauss-Newton with Armijo backtracking on one frame.

    full_state=False freezes the articulation angles and refines only the
    shaft twist (6 parameters); otherwise all 9 parameters move, the angles
    within art_bounds = (lo, hi) when given (encoder articulation errors
    are small; an unbounded jaw opening can silently absorb depth error).
    Returns (pose, accepted-loss history, iterations used).
    """
    cam = obs.camera
    n_par = 9 if full_state else 6
    art_lo = art_hi = None
    if full_state and art_bounds is not None:
        art_lo, art_hi = art_bounds

    def args(p):
        return _kernel_args(p, model, cam, det_uv, match_idx, p_rcm, lam_kpt, lam_rcm)

    f, min_depth = kernels.loss_only(*args(pose))
    if min_depth <= _MIN_DEPTH:
        raise BehindCameraError("initial pose leaves keypoints behind the camera")
    history = [f]
    stall = 0
    iters = 0
    for _ in range(max_iters):
        iters += 1
        resid, jac, _ = kernels.frame_residuals(*args(pose), True)
        jac = jac[:, :n_par].copy()
        grad = 2.0 * (jac.T @ resid)
        # active-set handling of the articulation box: freeze angle columns
        # whose Gauss-Newton step pushes against a bound, else the clipped
        # step stops being a descent direction and the frame stalls there
        direction = np.zeros(9)
        for _round in range(3):
            jtj = jac.T @ jac
            damp = 1e-10 * np.trace(jtj) / n_par + 1e-14
            try:
                direction[:n_par] = np.linalg.solve(
                    jtj + damp * np.eye(n_par), -jac.T @ resid
                )
            except np.linalg.LinAlgError:
                direction[:n_par] = -grad
            if art_lo is None or n_par < 9:
                break
            ang = pose.articulation()
            active = ((ang <= art_lo + 1e-12) & (direction[6:9] < 0)) | (
                (ang >= art_hi - 1e-12) & (direction[6:9] > 0)
            )
            if not active.any() or np.all(jac[:, 6:9][:, active] == 0.0):
                break
            jac[:, 6:9][:, active] = 0.0
        gd = float(grad @ direction[:n_par])
        accepted = False
        # treat sub-noise-floor slopes as converged rather than cycling on
        # 1e-30-scale "improvements"
        if np.isfinite(gd) and gd < -1e-18 * max(1.0, f):
            step = 1.0
            while step >= _MIN_STEP:
                trial = _retract(pose, step * direction, art_lo, art_hi)
                ft, depth = kernels.loss_only(*args(trial))
                if depth > _MIN_DEPTH and ft < f and ft <= f + _ARMIJO_C * step * gd:
                    pose = trial
                    f = ft
                    accepted = True
                    break
                step *= _SHRINK
        if accepted:
            history.append(f)
            stall = 0
            if f <= 1e-24:
                break
        else:
            stall += 1
            if stall >= patience:
                break
    return pose, history, iters


# ---------------------------------------------------------------------------
# Phases
# ---------------------------------------------------------------------------

def optimize_phase1(frames, init, model: InstrumentModel, weights: LossWeights,
                    epochs: int = 5, steps_per_epoch: int = 8,
                    rcm_threshold: float = 3.0, rcm_rounds: int = 5,
                    labeled: bool = False,
                    articulation_margin: float | None = 0.05,
                    slide_rescue_px: float | None = 6.0):
    """Epoch-wise keypoint refinement with per-epoch robust RCM re-estimation.

    The RCM loss is left out of the objective here; the pivot estimate is
    refreshed after every epoch from the updated shaft centerlines. The
    articulation angles stay within articulation_margin of their initial
    values across all epochs: encoder articulation errors are small, and an
    unconstrained Chamfer fit will bend the jaws to excuse shaft-sliding
    mismatches. Frames whose Chamfer residual stays above slide_rescue_px
    after an epoch are re-minimized from shaft-axis restart offsets and keep
    whichever basin fits best. Returns (poses, RcmEstimate,
    OptimizationReport).
    """
    if len(frames) != len(init):
        raise ConfigError("frames and initial poses must have equal length")
    if epochs < 1:
        raise ConfigError("phase 1 needs at least one epoch")
    poses = list(init)
    bounds = _articulation_bounds(init, articulation_margin)
    offsets = _slide_offsets(model) if slide_rescue_px is not None else []
    rescue_loss = None if slide_rescue_px is None \
        else 2.0 * weights.kpt * slide_rescue_px ** 2
    report = OptimizationReport(phase="phase1")
    histories = [[] for _ in poses]
    iters = [0] * len(poses)
    rcm_est = None
    for _ in range(epochs):
        for i, (obs, pose) in enumerate(zip(frames, poses)):
            det_uv = obs.uv_array()
            match_idx = _match_indices(obs, model) if labeled else None

            def minimize(p):
                return _minimize_frame(
                    p, model, obs, det_uv, match_idx, None, weights.kpt, 0.0,
                    max_iters=steps_per_epoch, patience=1, art_bounds=bounds[i],
                )

            best, hist, it = minimize(pose)
            if rescue_loss is not None and hist[-1] > rescue_loss:
                axis = shaft_line(best).direction
                for delta in offsets:
                    shifted = InstrumentPose(
                        RigidTransform(best.shaft_pose.quat,
                                       best.shaft_pose.trans + delta * axis),
                        best.wrist_pitch, best.jaw_left, best.jaw_right,
                    )
                    try:
                        cand, cand_hist, cand_it = minimize(shifted)
                    except BehindCameraError:
                        continue
                    it += cand_it
                    if cand_hist[-1] < hist[-1]:
                        best, hist = cand, cand_hist
            poses[i] = best
            histories[i].extend(hist if not histories[i] else hist[1:])
            iters[i] += it
        rcm_est = estimate_rcm_robust(
            [shaft_line(p) for p in poses], rcm_threshold, rcm_rounds
        )
        report.rcm_per_epoch.append(list(rcm_est.point))
        report.inlier_masks_per_epoch.append(list(rcm_est.inlier_mask))
    report.final_losses = [h[-1] for h in histories]
    report.iterations = iters
    report.loss_history = histories
    return poses, rcm_est, report


def optimize_phase2(frames, poses, p_rcm, model: InstrumentModel,
                    weights: LossWeights, patience: int = 10,
                    max_iters: int = 200, workers: int = 1,
                    labeled: bool = False,
                    articulation_margin: float | None = 0.05,
                    articulation_anchor=None):
    """Independent per-frame refinement against the frozen pivot.

    Objective per frame: kpt_weight * chamfer + rcm_weight * squared
    orthogonal pivot distance, over the full articulated state. Angles stay
    within articulation_margin of articulation_anchor (per-frame
    InstrumentPose list; defaults to the incoming poses). Early stop after
    `patience` consecutive non-improving iterations.
    Returns (poses, OptimizationReport).
    """
    if patience < 1:
        raise ConfigError("patience must be >= 1")
    p_rcm = np.asarray(p_rcm, dtype=float)
    anchors = articulation_anchor if articulation_anchor is not None else poses
    bounds = _articulation_bounds(anchors, articulation_margin)

    def run(args):
        i, obs, pose = args
        det_uv = obs.uv_array()
        match_idx = _match_indices(obs, model) if labeled else None
        return _minimize_frame(
            pose, model, obs, det_uv, match_idx, p_rcm, weights.kpt, weights.rcm,
            max_iters=max_iters, patience=patience, art_bounds=bounds[i],
        )

    jobs = [(i, o, p) for i, (o, p) in enumerate(zip(frames, poses))]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    report = OptimizationReport(phase="phase2")
    out_poses = []
    for pose, hist, it in results:
        out_poses.append(pose)
        report.final_losses.append(hist[-1])
        report.iterations.append(it)
        report.loss_history.append(hist)
    return out_poses, report
