import json

import numpy as np
import pytest

from rcmcalib.camera import PinholeCamera, project
from rcmcalib.errors import TooFewInliersError
from rcmcalib.geom import RigidTransform, compose, invert
from rcmcalib.io import (
    FrameGroundTruth,
    SequenceFrame,
    sequence_from_dict,
    sequence_from_synthetic,
    sequence_to_dict,
)
from rcmcalib.kinematics import InstrumentModel, JointState
from rcmcalib.optim import FrameObservation
from rcmcalib.pipeline import (
    CalibConfig,
    CalibrationResult,
    apply_calibration,
    calibrate,
    evaluate,
    evaluate_with_transform,
)
from rcmcalib.simdata import biased_noise_model, default_config, generate_sequence

from conftest import random_transform, rotation_error


def make_sequence(n=12, seed=0, noise=None):
    cfg = default_config(n_frames=n, seed=seed, noise=noise)
    return cfg, sequence_from_synthetic(cfg, generate_sequence(cfg))


def test_calibrate_noiseless_recovers_hand_eye():
    cfg, seq = make_sequence(n=12, seed=0)
    result = calibrate(seq.frames, seq.model, seq.camera, CalibConfig())
    assert rotation_error(cfg.hand_eye, result.hand_eye) < 1e-3
    assert np.linalg.norm(result.hand_eye.trans - cfg.hand_eye.trans) < 1e-2
    assert result.frames_used == 12
    assert np.linalg.norm(result.p_rcm - cfg.rcm_point) < 0.5
    assert result.alignment_rmsd < 1e-6


def test_calibrate_too_few_frames():
    cfg, seq = make_sequence(n=3, seed=1)
    with pytest.raises(TooFewInliersError):
        calibrate(seq.frames[:2], seq.model, seq.camera, CalibConfig())


def test_calibrate_biased_improves_over_uncorrected():
    cfg, seq = make_sequence(n=40, seed=2, noise=biased_noise_model())
    pre = evaluate_with_transform(
        cfg.hand_eye, seq.frames, seq.model, seq.camera, seq.rig, "true"
    ).summary()["median_err3d_mm"]
    result = calibrate(seq.frames, seq.model, seq.camera, CalibConfig())
    post = evaluate(result, seq.frames, seq.model, seq.camera, seq.rig, "true")
    assert post.summary()["median_err3d_mm"] < pre
    d = result.diagnostics
    assert d["rcm_distance_phase2_mean_mm"] < d["rcm_distance_phase1_mean_mm"]


def test_calibrate_skips_underobserved_frames():
    cfg, seq = make_sequence(n=12, seed=3)
    frames = list(seq.frames)
    # strip one frame down to 3 detections
    f = frames[4]
    frames[4] = SequenceFrame(
        f.index, FrameObservation(f.observation.keypoints[:3], seq.camera),
        f.joints, f.rbt_ee, f.gt,
    )
    result = calibrate(frames, seq.model, seq.camera, CalibConfig())
    assert result.inlier[4] is False
    assert result.poses[4] is None
    assert result.frames_used == 11
    assert 4 in result.diagnostics["excluded_frames"]


def test_apply_calibration_identity():
    rng = np.random.default_rng(80)
    t = random_transform(rng)
    result = _dummy_result(RigidTransform.identity())
    assert apply_calibration(result, t).allclose(t)


def test_apply_calibration_round_trip():
    rng = np.random.default_rng(81)
    hand_eye = random_transform(rng)
    result = _dummy_result(hand_eye)
    for _ in range(20):
        ct = random_transform(rng)
        back = apply_calibration(result, compose(invert(hand_eye), ct))
        assert np.allclose(back.matrix(), ct.matrix(), atol=1e-9)


def _dummy_result(hand_eye):
    return CalibrationResult(
        hand_eye=hand_eye, p_rcm=np.zeros(3), poses=[], ct_ee=[],
        inlier=[], alignment_rmsd=0.0, frames_used=0,
    )


def test_evaluate_perfect_on_noiseless():
    cfg, seq = make_sequence(n=10, seed=4)
    result = calibrate(seq.frames, seq.model, seq.camera, CalibConfig())
    for source in ("true", "stereo"):
        m = evaluate(result, seq.frames, seq.model, seq.camera, seq.rig, source)
        s = m.summary()
        assert s["avg_err3d_mm"] < 1e-6
        assert s["avg_err2d_px"] < 1e-6
        assert s["n_skipped"] == 0


def test_evaluate_injected_lateral_offset():
    # 5 mm lateral tip offset at Z=100 with fx=1000: 50 px and 5 mm exactly
    cam = PinholeCamera(1000.0, 1000.0, 320.0, 256.0, 640, 512)
    model = InstrumentModel()
    g = model.gripper_length
    joints = JointState(insertion=50.0)
    rbt_ee = RigidTransform(trans=(5.0 - g, 0.0, 100.0))
    gt = FrameGroundTruth(
        ct_s=RigidTransform.identity(), ct_ee=RigidTransform.identity(),
        joints=joints, tip_xyz=np.array([0.0, 0.0, 100.0]),
        tip_uv=project(cam, (0.0, 0.0, 100.0)),
    )
    frame = SequenceFrame(0, FrameObservation((), cam), joints, rbt_ee, gt)
    m = evaluate_with_transform(RigidTransform.identity(), [frame], model, cam, None, "true")
    assert m.err2d_px[0] == pytest.approx(50.0)
    assert m.err2d_mm[0] == pytest.approx(5.0)
    assert m.err3d_mm[0] == pytest.approx(5.0)


def test_evaluate_skips_frames_without_ground_truth():
    cfg, seq = make_sequence(n=8, seed=5)
    frames = [
        SequenceFrame(f.index, f.observation, f.joints, f.rbt_ee,
                      None if f.index % 2 else f.gt)
        for f in seq.frames
    ]
    result = calibrate(seq.frames, seq.model, seq.camera, CalibConfig())
    m = evaluate(result, frames, seq.model, seq.camera, seq.rig)
    assert m.n_skipped == 4
    assert len(m.err3d_mm) == 4


def test_metrics_mm_equals_px_times_scale():
    cfg, seq = make_sequence(n=10, seed=6, noise=biased_noise_model())
    result = calibrate(seq.frames, seq.model, seq.camera, CalibConfig())
    m = evaluate(result, seq.frames, seq.model, seq.camera, seq.rig, "true")
    for i, frame_idx in enumerate(m.frame_indices):
        z = seq.frames[frame_idx].gt.tip_xyz[2]
        assert m.err2d_mm[i] == pytest.approx(m.err2d_px[i] * z / seq.camera.fx)


def test_metrics_csv_format():
    cfg, seq = make_sequence(n=8, seed=7, noise=biased_noise_model())
    result = calibrate(seq.frames, seq.model, seq.camera, CalibConfig())
    m = evaluate(result, seq.frames, seq.model, seq.camera, seq.rig, "true")
    csv = m.to_csv()
    lines = csv.split("\n")
    assert lines[0] == "frame,err2d_px,err2d_mm,err3d_mm,included_flag"
    assert lines[-1] == ""  # trailing newline
    assert lines[-3].startswith("avg,")
    assert lines[-2].startswith("median,")
    assert "\r" not in csv
    body = lines[1:-3]
    assert len(body) == len(m.frame_indices)
    for row in body:
        cells = row.split(",")
        assert len(cells) == 5
        float(cells[1]), float(cells[2]), float(cells[3])
        assert cells[4] in ("0", "1")
    # 9 significant digits
    val = float(lines[1].split(",")[1])
    assert lines[1].split(",")[1] == f"{val:.9g}"


def test_result_json_round_trip():
    cfg, seq = make_sequence(n=10, seed=8)
    result = calibrate(seq.frames, seq.model, seq.camera, CalibConfig())
    doc = json.loads(json.dumps(result.to_json_dict()))
    back = CalibrationResult.from_json_dict(doc)
    assert back.hand_eye.allclose(result.hand_eye)
    assert back.inlier == result.inlier
    assert back.frames_used == result.frames_used
    assert np.allclose(back.p_rcm, result.p_rcm)
    for a, b in zip(back.ct_ee, result.ct_ee):
        assert a.allclose(b)


def test_sequence_json_round_trip():
    cfg, seq = make_sequence(n=6, seed=9, noise=biased_noise_model())
    doc = json.loads(json.dumps(sequence_to_dict(seq)))
    back = sequence_from_dict(doc)
    assert back.camera == seq.camera
    assert back.gt_hand_eye.allclose(seq.gt_hand_eye)
    assert np.allclose(back.gt_rcm_point, seq.gt_rcm_point)
    for a, b in zip(back.frames, seq.frames):
        assert a.index == b.index
        assert a.joints == b.joints
        assert a.rbt_ee.allclose(b.rbt_ee)
        assert a.observation.labels() == b.observation.labels()
        assert np.allclose(a.observation.uv_array(), b.observation.uv_array())
        assert np.allclose(a.gt.tip_xyz, b.gt.tip_xyz)


def test_rotation_agreement_diagnostic_present():
    cfg, seq = make_sequence(n=10, seed=10)
    result = calibrate(seq.frames, seq.model, seq.camera, CalibConfig())
    assert result.diagnostics["rotation_agreement_rad_mean"] < 1e-4
