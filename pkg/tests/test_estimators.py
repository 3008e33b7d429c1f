import numpy as np
import pytest

from rcmcalib.camera import PinholeCamera, project
from rcmcalib.errors import (
    CollinearPointsError,
    DegenerateConfigurationError,
    InsufficientPointsError,
    NearParallelBundleError,
    NoConsensusError,
)
from rcmcalib.estimators import (
    Correspondence2D3D,
    alignment_rmsd,
    estimate_rcm,
    estimate_rcm_robust,
    kabsch_umeyama,
    solve_epnp,
)
from rcmcalib.geom import Line3, RigidTransform, point_line_distance_vector

from conftest import random_transform, rotation_error

CAM = PinholeCamera(800.0, 800.0, 320.0, 256.0, 640, 512)


def camera_facing_transform(rng, max_angle=np.pi):
    """Pose keeping a ~40 mm object cloud in front of the camera."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    t = np.array([rng.uniform(-20, 20), rng.uniform(-15, 15), rng.uniform(80, 200)])
    return RigidTransform.from_axis_angle(axis, rng.uniform(-max_angle, max_angle), t)


def make_corrs(rng, pose, n=6, noise_px=0.0):
    obj = rng.uniform(-20, 20, size=(n, 3))
    corrs = []
    for i, p in enumerate(obj):
        uv = project(CAM, pose.apply(p))
        if noise_px > 0:
            uv = uv + rng.normal(0, noise_px, 2)
        corrs.append(Correspondence2D3D(f"p{i}", uv, p))
    return corrs


# ---------------------------------------------------------------------------
# EPnP
# ---------------------------------------------------------------------------

def test_epnp_noiseless_round_trip():
    rng = np.random.default_rng(30)
    for _ in range(100):
        pose = camera_facing_transform(rng)
        est = solve_epnp(make_corrs(rng, pose, n=6), CAM)
        assert rotation_error(pose, est) < 1e-4
        assert np.linalg.norm(est.trans - pose.trans) < 1e-3


def test_epnp_identity_pose_axis_plane():
    rng = np.random.default_rng(31)
    obj = np.array(
        [[0, 0, 100], [10, 0, 110], [-10, 5, 95], [0, -8, 120], [6, 7, 105], [-4, -6, 90]],
        dtype=float,
    )
    corrs = [
        Correspondence2D3D(f"p{i}", project(CAM, p), p) for i, p in enumerate(obj)
    ]
    est = solve_epnp(corrs, CAM)
    assert est.rotation_angle() < 1e-5
    assert np.linalg.norm(est.trans) < 1e-3


def test_epnp_noise_monte_carlo():
    rng = np.random.default_rng(32)
    rot_errs, trans_errs = [], []
    for _ in range(100):
        pose = camera_facing_transform(rng)
        pose = RigidTransform(pose.quat, [pose.trans[0], pose.trans[1], rng.uniform(90, 110)])
        est = solve_epnp(make_corrs(rng, pose, n=6, noise_px=1.0), CAM)
        rot_errs.append(rotation_error(pose, est))
        trans_errs.append(np.linalg.norm(est.trans - pose.trans))
    assert np.median(rot_errs) < np.radians(2.0)
    assert np.median(trans_errs) < 3.0


def test_epnp_planar_points():
    rng = np.random.default_rng(33)
    for _ in range(20):
        pose = camera_facing_transform(rng, max_angle=1.0)
        obj = rng.uniform(-20, 20, size=(6, 3))
        obj[:, 2] = 0.0  # coplanar object
        corrs = [
            Correspondence2D3D(f"p{i}", project(CAM, pose.apply(p)), p)
            for i, p in enumerate(obj)
        ]
        est = solve_epnp(corrs, CAM)
        assert rotation_error(pose, est) < 1e-3
        assert np.linalg.norm(est.trans - pose.trans) < 1e-2


def test_epnp_instrument_shaped_cloud():
    # three collinear shaft points plus two articulated tips
    rng = np.random.default_rng(34)
    obj = np.array(
        [[-20, 0, 0], [0, 0, 0], [9.1, 0, 0],
         [9.1 + 8.0, 3.1, -3.5], [9.1 + 8.0, -3.4, -3.3]]
    )
    for _ in range(50):
        pose = camera_facing_transform(rng)
        corrs = [
            Correspondence2D3D(f"p{i}", project(CAM, pose.apply(p)), p)
            for i, p in enumerate(obj)
        ]
        est = solve_epnp(corrs, CAM)
        assert rotation_error(pose, est) < 1e-4
        assert np.linalg.norm(est.trans - pose.trans) < 1e-3


def test_epnp_insufficient_points():
    rng = np.random.default_rng(35)
    pose = camera_facing_transform(rng)
    with pytest.raises(InsufficientPointsError):
        solve_epnp(make_corrs(rng, pose, n=3), CAM)


def test_epnp_collinear_points():
    pose = RigidTransform(trans=(0, 0, 100))
    obj = np.array([[t, 0.0, 0.0] for t in (-10, -5, 0, 5, 10)])
    corrs = [
        Correspondence2D3D(f"p{i}", project(CAM, pose.apply(p)), p)
        for i, p in enumerate(obj)
    ]
    with pytest.raises(CollinearPointsError):
        solve_epnp(corrs, CAM)


def test_epnp_permutation_invariant():
    rng = np.random.default_rng(36)
    pose = camera_facing_transform(rng)
    corrs = make_corrs(rng, pose, n=7)
    est = solve_epnp(corrs, CAM)
    for _ in range(5):
        perm = rng.permutation(len(corrs))
        est_p = solve_epnp([corrs[i] for i in perm], CAM)
        assert np.allclose(est_p.matrix(), est.matrix(), atol=1e-9)


# ---------------------------------------------------------------------------
# RCM estimation
# ---------------------------------------------------------------------------

def test_estimate_rcm_exact_intersection():
    p = np.array([1.0, 2.0, 3.0])
    lines = [
        Line3(p - 5.0 * np.asarray(d, dtype=float), d)
        for d in ([1, 0, 0], [0, 1, 0], [1, 1, 1])
    ]
    assert np.linalg.norm(estimate_rcm(lines) - p) < 1e-9


def test_estimate_rcm_two_skew_lines_midpoint_oracle():
    rng = np.random.default_rng(40)
    for _ in range(20):
        d1 = rng.normal(size=3)
        d1 /= np.linalg.norm(d1)
        tmp = rng.normal(size=3)
        d2 = np.cross(d1, tmp)
        d2 /= np.linalg.norm(d2)
        n = np.cross(d1, d2)
        n /= np.linalg.norm(n)
        p1 = rng.normal(scale=10, size=3)
        h = rng.uniform(0.5, 5.0)
        a, b = rng.normal(scale=20, size=2)
        p2 = p1 + h * n + a * d2 + b * d1
        expected_mid = p1 + b * d1 + 0.5 * h * n
        est = estimate_rcm([Line3(p1, d1), Line3(p2, d2)])
        assert np.linalg.norm(est - expected_mid) < 1e-9


def test_estimate_rcm_parallel_bundle_error():
    lines = [Line3((0, float(k), 0), (1, 0, 0)) for k in range(5)]
    with pytest.raises(NearParallelBundleError):
        estimate_rcm(lines)


def test_estimate_rcm_needs_two_lines():
    with pytest.raises(InsufficientPointsError):
        estimate_rcm([Line3((0, 0, 0), (1, 0, 0))])


def test_estimate_rcm_local_optimality():
    rng = np.random.default_rng(41)
    offsets = np.array(
        [
            [i, j, k]
            for i in (-1, 0, 1)
            for j in (-1, 0, 1)
            for k in (-1, 0, 1)
            if (i, j, k) != (0, 0, 0)
        ],
        dtype=float,
    )

    def cost(p, lines):
        return sum(
            float(np.sum(point_line_distance_vector(p, l) ** 2)) for l in lines
        )

    for _ in range(10):
        lines = [
            Line3(rng.normal(scale=20, size=3), rng.normal(size=3)) for _ in range(8)
        ]
        p = estimate_rcm(lines)
        c0 = cost(p, lines)
        for d in offsets:
            assert cost(p + 1e-4 * d, lines) >= c0 - 1e-12


def test_estimate_rcm_robust_construction_oracle():
    rng = np.random.default_rng(42)
    p = np.array([5.0, -3.0, 120.0])
    lines = []
    for _ in range(10):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        lines.append(Line3(p - rng.uniform(10, 50) * d, d))
    for _ in range(2):  # outliers offset 20 mm perpendicular to their direction
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        perp = np.cross(d, rng.normal(size=3))
        perp /= np.linalg.norm(perp)
        lines.append(Line3(p + 20.0 * perp - 30.0 * d, d))
    est = estimate_rcm_robust(lines, residual_threshold=5.0)
    assert np.linalg.norm(est.point - p) < 1e-9
    assert est.inlier_mask[:10].all()
    assert not est.inlier_mask[10:].any()
    assert est.rms_residual < 1e-9


def test_estimate_rcm_robust_all_consistent_single_round():
    rng = np.random.default_rng(43)
    p = np.array([0.0, 1.0, 2.0])
    lines = []
    for _ in range(6):
        d = rng.normal(size=3)
        lines.append(Line3(p - 3.0 * d / np.linalg.norm(d), d))
    est = estimate_rcm_robust(lines, residual_threshold=1.0)
    assert est.inlier_mask.all()
    assert np.linalg.norm(est.point - p) < 1e-9
    assert not est.low_confidence


def test_estimate_rcm_robust_zero_threshold_no_consensus():
    rng = np.random.default_rng(44)
    p = np.array([0.0, 0.0, 50.0])
    lines = []
    for _ in range(6):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        origin = p - 20.0 * d + rng.normal(scale=0.5, size=3)  # noisy lines
        lines.append(Line3(origin, d))
    with pytest.raises(NoConsensusError):
        estimate_rcm_robust(lines, residual_threshold=0.0)


def test_estimate_rcm_robust_infinite_threshold_equals_plain():
    rng = np.random.default_rng(45)
    lines = [
        Line3(rng.normal(scale=30, size=3), rng.normal(size=3)) for _ in range(9)
    ]
    est = estimate_rcm_robust(lines, residual_threshold=np.inf)
    assert np.array_equal(est.point, estimate_rcm(lines))
    assert est.inlier_mask.all()


# ---------------------------------------------------------------------------
# Kabsch-Umeyama
# ---------------------------------------------------------------------------

def test_kabsch_identity_on_identical_clouds():
    rng = np.random.default_rng(50)
    pts = rng.normal(scale=30, size=(12, 3))
    t = kabsch_umeyama(pts, pts)
    assert t.allclose(RigidTransform.identity(), tol=1e-9)


def test_kabsch_recovers_known_transform():
    rng = np.random.default_rng(51)
    for _ in range(50):
        src = rng.normal(scale=40, size=(10, 3))
        truth = random_transform(rng)
        est = kabsch_umeyama(src, truth.apply(src))
        assert np.allclose(est.matrix(), truth.matrix(), atol=1e-9)


def test_kabsch_weighted_recovery():
    rng = np.random.default_rng(52)
    src = rng.normal(scale=40, size=(10, 3))
    truth = random_transform(rng)
    w = rng.uniform(0.1, 2.0, size=10)
    est = kabsch_umeyama(src, truth.apply(src), weights=w)
    assert np.allclose(est.matrix(), truth.matrix(), atol=1e-9)


def test_kabsch_reflection_yields_proper_rotation():
    rng = np.random.default_rng(53)
    src = rng.normal(scale=10, size=(8, 3))
    dst = src * np.array([-1.0, 1.0, 1.0])
    est = kabsch_umeyama(src, dst)
    assert abs(np.linalg.det(est.rotation_matrix()) - 1.0) < 1e-9
    assert alignment_rmsd(est, src, dst) > 0.1


def test_kabsch_collinear_sources_degenerate():
    src = np.array([[float(i), 0.0, 0.0] for i in range(5)])
    dst = src + 1.0
    with pytest.raises(DegenerateConfigurationError):
        kabsch_umeyama(src, dst)


def test_kabsch_requires_three_pairs():
    with pytest.raises(InsufficientPointsError):
        kabsch_umeyama(np.zeros((2, 3)), np.zeros((2, 3)))


def test_kabsch_weight_validation():
    rng = np.random.default_rng(54)
    src = rng.normal(size=(5, 3))
    with pytest.raises(DegenerateConfigurationError):
        kabsch_umeyama(src, src, weights=np.zeros(5))
    with pytest.raises(DegenerateConfigurationError):
        kabsch_umeyama(src, src, weights=-np.ones(5))


def test_kabsch_beats_random_transforms():
    rng = np.random.default_rng(55)
    src = rng.normal(scale=25, size=(15, 3))
    dst = random_transform(rng).apply(src) + rng.normal(scale=2.0, size=(15, 3))
    est = kabsch_umeyama(src, dst)
    best = alignment_rmsd(est, src, dst)
    for _ in range(1000):
        trial = random_transform(rng)
        assert alignment_rmsd(trial, src, dst) >= best - 1e-12
