"""Markerless hand-eye calibration for RCM-constrained instruments.

Pipeline: keypoint-based EPnP pose initialization, robust least-squares
pivot (RCM) estimation, two-phase RCM-constrained pose refinement, and a
Kabsch-Umeyama hand-eye solve, verified end to end against a synthetic
generator with known ground truth.
"""

from .geom import (
    Line3,
    RigidTransform,
    Twist,
    compose,
    exp_map,
    invert,
    log_map,
    point_line_distance_vector,
)
from .kinematics import (
    InstrumentModel,
    InstrumentPose,
    JointState,
    end_effector_pose,
    keypoints_3d,
    part_transforms,
    rcm_forward,
    shaft_line,
)
from .camera import PinholeCamera, StereoRig, project, px_to_mm_scale, triangulate
from .estimators import (
    Correspondence2D3D,
    RcmEstimate,
    estimate_rcm,
    estimate_rcm_robust,
    kabsch_umeyama,
    solve_epnp,
)
from .optim import (
    FrameObservation,
    LossWeights,
    OptimizationReport,
    keypoint_loss,
    optimize_phase1,
    optimize_phase2,
    rcm_loss,
)
from .simdata import (
    NoiseModel,
    ScenarioConfig,
    SyntheticFrame,
    default_config,
    generate_sequence,
    ground_truth_bundle,
)
from .pipeline import (
    CalibConfig,
    CalibrationResult,
    MetricsReport,
    apply_calibration,
    calibrate,
    evaluate,
    evaluate_with_transform,
)
from . import errors, kernels

__version__ = "0.1.0"
