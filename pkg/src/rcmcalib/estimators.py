"""Closed-form and robust estimators.

solve_epnp        EPnP pose initialization (PCA control points, 12x12 null
                  space, beta cases 1-3 with Gauss-Newton beta refinement)
                  followed by a short Gauss-Newton polish on reprojection.
estimate_rcm      closed-form least-squares intersection of a line bundle.
estimate_rcm_robust  iterative outlier-rejection wrapper around it.
kabsch_umeyama    weighted SVD rigid alignment with determinant correction
                  (rotation only, no scale).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import PinholeCamera
from .errors import (
    AllBehindCameraError,
    CollinearPointsError,
    DegenerateConfigurationError,
    InsufficientPointsError,
    NearParallelBundleError,
    NoConsensusError,
)
from .geom import (
    RigidTransform,
    matrix_to_quat,
    point_line_distance_vector,
    skew,
    so3_exp,
)

_MIN_DEPTH = 1e-6


@dataclass(frozen=True)
class Correspondence2D3D:
    label: str
    image_point: np.ndarray
    object_point: np.ndarray

    def __post_init__(self):
        ip = np.array(self.image_point, dtype=float).reshape(2)
        op = np.array(self.object_point, dtype=float).reshape(3)
        ip.setflags(write=False)
        op.setflags(write=False)
        object.__setattr__(self, "image_point", ip)
        object.__setattr__(self, "object_point", op)


@dataclass(frozen=True)
class RcmEstimate:
    point: np.ndarray
    inlier_mask: np.ndarray
    rms_residual: float

    def __post_init__(self):
        pt = np.array(self.point, dtype=float).reshape(3)
        pt.setflags(write=False)
        object.__setattr__(self, "point", pt)
        mask = np.array(self.inlier_mask, dtype=bool)
        mask.setflags(write=False)
        object.__setattr__(self, "inlier_mask", mask)

    @property
    def n_inliers(self) -> int:
        return int(self.inlier_mask.sum())

    @property
    def low_confidence(self) -> bool:
        return self.n_inliers < 3


# ---------------------------------------------------------------------------
# Gauss-Newton reprojection polish (shared by EPnP)
# ---------------------------------------------------------------------------

def _reproj_rms(rot, trans, obj, uv, cam) -> float:
    pts = obj @ rot.T + trans
    z = pts[:, 2]
    if np.any(z <= _MIN_DEPTH):
        return np.inf
    du = cam.fx * pts[:, 0] / z + cam.cx - uv[:, 0]
    dv = cam.fy * pts[:, 1] / z + cam.cy - uv[:, 1]
    return float(np.sqrt(np.mean(du * du + dv * dv)))


def _gauss_newton_pose(rot, trans, obj, uv, cam, iters=10):
    """Refine (R, t) on the reprojection objective via local-twist steps."""
    for _ in range(iters):
        pts = obj @ rot.T + trans
        z = pts[:, 2]
        if np.any(z <= _MIN_DEPTH):
            break
        r = np.stack(
            [
                cam.fx * pts[:, 0] / z + cam.cx - uv[:, 0],
                cam.fy * pts[:, 1] / z + cam.cy - uv[:, 1],
            ],
            axis=1,
        ).ravel()
        n = obj.shape[0]
        jac = np.empty((2 * n, 6))
        for i in range(n):
            x, y, zz = pts[i]
            dproj = np.array(
                [[cam.fx / zz, 0.0, -cam.fx * x / (zz * zz)],
                 [0.0, cam.fy / zz, -cam.fy * y / (zz * zz)]]
            )
            dx = np.hstack([-skew(pts[i]), np.eye(3)])
            jac[2 * i : 2 * i + 2] = dproj @ dx
        jtj = jac.T @ jac
        # keep damping far below the smallest useful curvature: near-collinear
        # clouds push cond(JtJ) toward ~1e9 and heavier damping stalls the
        # weak directions within the 10-iteration budget
        step = np.linalg.solve(jtj + 1e-13 * np.trace(jtj) * np.eye(6), -jac.T @ r)
        d_rot = so3_exp(step[:3])
        rot = d_rot @ rot
        trans = d_rot @ trans + step[3:]
        if np.linalg.norm(step) < 1e-12:
            break
    return rot, trans


# ---------------------------------------------------------------------------
# EPnP
# ---------------------------------------------------------------------------

def _barycentric(obj, ctrl):
    """Coefficients a with sum(a)=1 and sum(a_j c_j) = p for each point."""
    m = ctrl.shape[0]
    c = np.vstack([ctrl.T, np.ones(m)])  # 4 x m
    rhs = np.vstack([obj.T, np.ones(obj.shape[0])])  # 4 x n
    alphas, *_ = np.linalg.lstsq(c, rhs, rcond=None)
    return alphas.T  # n x m


def _beta_from_pairs(kernel, ctrl_w, case):
    """Initial betas from the inter-control-point distance constraints."""
    m = ctrl_w.shape[0]
    pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]
    dv = [
        [kernel[:, k].reshape(m, 3)[i] - kernel[:, k].reshape(m, 3)[j] for (i, j) in pairs]
        for k in range(kernel.shape[1])
    ]
    dist2 = np.array([np.sum((ctrl_w[i] - ctrl_w[j]) ** 2) for (i, j) in pairs])

    if case == 1:
        num = sum(np.sqrt(dist2[p]) * np.linalg.norm(dv[0][p]) for p in range(len(pairs)))
        den = sum(np.dot(dv[0][p], dv[0][p]) for p in range(len(pairs)))
        return np.array([num / den])

    if case == 2:
        lhs = np.array(
            [
                [dv[0][p] @ dv[0][p], 2.0 * (dv[0][p] @ dv[1][p]), dv[1][p] @ dv[1][p]]
                for p in range(len(pairs))
            ]
        )
        b = np.linalg.lstsq(lhs, dist2, rcond=None)[0]  # [b11, b12, b22]
        beta1 = np.sqrt(abs(b[0]))
        beta2 = np.sqrt(abs(b[2])) * (1.0 if b[0] >= 0 else 0.0)
        if b[1] < 0:
            beta1 = -beta1
        return np.array([beta1, beta2])

    # case 3: solve for [b11, b12, b22, b13, b23]
    lhs = np.array(
        [
            [
                dv[0][p] @ dv[0][p],
                2.0 * (dv[0][p] @ dv[1][p]),
                dv[1][p] @ dv[1][p],
                2.0 * (dv[0][p] @ dv[2][p]),
                2.0 * (dv[1][p] @ dv[2][p]),
            ]
            for p in range(len(pairs))
        ]
    )
    b = np.linalg.lstsq(lhs, dist2, rcond=None)[0]
    beta1 = np.sqrt(abs(b[0]))
    beta2 = np.sqrt(abs(b[2])) * (1.0 if b[0] >= 0 else 0.0)
    if b[1] < 0:
        beta1 = -beta1
    beta3 = b[3] / beta1 if beta1 != 0 else 0.0
    return np.array([beta1, beta2, beta3])


def _gauss_newton_betas(kernel, betas, ctrl_w, iters=8):
    """Refine betas on the control-point distance-preservation residuals."""
    m = ctrl_w.shape[0]
    nk = betas.shape[0]
    pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]
    vk = [kernel[:, k].reshape(m, 3) for k in range(nk)]
    dist2 = np.array([np.sum((ctrl_w[i] - ctrl_w[j]) ** 2) for (i, j) in pairs])
    for _ in range(iters):
        cc = sum(betas[k] * vk[k] for k in range(nk))
        r = np.empty(len(pairs))
        jac = np.empty((len(pairs), nk))
        for p, (i, j) in enumerate(pairs):
            diff = cc[i] - cc[j]
            r[p] = diff @ diff - dist2[p]
            for k in range(nk):
                jac[p, k] = 2.0 * diff @ (vk[k][i] - vk[k][j])
        jtj = jac.T @ jac
        try:
            step = np.linalg.solve(jtj + 1e-10 * np.eye(nk), -jac.T @ r)
        except np.linalg.LinAlgError:
            break
        betas = betas + step
        if np.linalg.norm(step) < 1e-12:
            break
    return betas


def solve_epnp(corrs, cam: PinholeCamera) -> RigidTransform:
    """Camera-from-object pose from >= 4 2D-3D correspondences.

    Control points come from a PCA of the object points (3 control points in
    the near-planar case), the null space of the 12x12 (or 9x9) normal
    matrix supplies the candidate combinations, and the beta cases 1-3 are
    each refined by Gauss-Newton before the best candidate by reprojection
    RMS is polished on the reprojection objective itself.
    """
    n = len(corrs)
    if n < 4:
        raise InsufficientPointsError(f"EPnP needs at least 4 correspondences, got {n}")
    obj = np.array([c.object_point for c in corrs], dtype=float)
    uv = np.array([c.image_point for c in corrs], dtype=float)

    centroid = obj.mean(axis=0)
    centered = obj - centroid
    cov = centered.T @ centered / n
    evals, evecs = np.linalg.eigh(cov)
    evals = evals[::-1]
    evecs = evecs[:, ::-1]
    if evals[1] < 1e-8 * evals[0]:
        raise CollinearPointsError("object points are collinear")
    planar = evals[2] < 1e-8 * evals[0]

    if planar:
        ctrl_w = np.vstack(
            [centroid,
             centroid + np.sqrt(evals[0]) * evecs[:, 0],
             centroid + np.sqrt(evals[1]) * evecs[:, 1]]
        )
        cases = (1, 2)
    else:
        ctrl_w = np.vstack(
            [centroid,
             centroid + np.sqrt(evals[0]) * evecs[:, 0],
             centroid + np.sqrt(evals[1]) * evecs[:, 1],
             centroid + np.sqrt(evals[2]) * evecs[:, 2]]
        )
        cases = (1, 2, 3)
    m = ctrl_w.shape[0]

    alphas = _barycentric(obj, ctrl_w)

    mat = np.zeros((2 * n, 3 * m))
    for i in range(n):
        for j in range(m):
            a = alphas[i, j]
            mat[2 * i, 3 * j] = a * cam.fx
            mat[2 * i, 3 * j + 2] = a * (cam.cx - uv[i, 0])
            mat[2 * i + 1, 3 * j + 1] = a * cam.fy
            mat[2 * i + 1, 3 * j + 2] = a * (cam.cy - uv[i, 1])

    _, kvecs = np.linalg.eigh(mat.T @ mat)
    kernel = kvecs[:, :4] if not planar else kvecs[:, :3]

    best = None
    best_rms = np.inf
    for case in cases:
        betas = _beta_from_pairs(kernel[:, :case], ctrl_w, case)
        betas = _gauss_newton_betas(kernel[:, :case], betas, ctrl_w)
        cc = (kernel[:, :case] @ betas).reshape(m, 3)
        pts_cam = alphas @ cc
        if np.mean(pts_cam[:, 2] < 0) > 0.5:
            cc = -cc
            pts_cam = -pts_cam
        if np.any(pts_cam[:, 2] <= _MIN_DEPTH):
            continue
        rot, trans = _align_clouds(obj, pts_cam)
        rms = _reproj_rms(rot, trans, obj, uv, cam)
        if rms < best_rms:
            best_rms = rms
            best = (rot, trans)

    if best is None:
        raise AllBehindCameraError("every EPnP candidate leaves points behind the camera")

    rot, trans = _gauss_newton_pose(best[0], best[1], obj, uv, cam)
    if _reproj_rms(rot, trans, obj, uv, cam) > best_rms:
        rot, trans = best
    return RigidTransform(matrix_to_quat(rot), trans)


def _align_clouds(src, dst):
    """Unweighted rigid alignment (internal EPnP step; no degeneracy check)."""
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    h = (src - cs).T @ (dst - cd)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return rot, cd - rot @ cs


# ---------------------------------------------------------------------------
# RCM estimation
# ---------------------------------------------------------------------------

def estimate_rcm(lines) -> np.ndarray:
    """Point minimizing the sum of squared perpendicular distances.

    Solves the normal equations sum(I - x x^T) p = sum(I - x x^T) o in
    closed form.
    """
    if len(lines) < 2:
        raise InsufficientPointsError("RCM estimation needs at least 2 lines")
    dirs = np.array([l.direction for l in lines])
    origins = np.array([l.origin for l in lines])
    projs = np.eye(3)[None] - dirs[:, :, None] * dirs[:, None, :]
    normal = projs.sum(axis=0)
    if np.linalg.cond(normal) > 1e8:
        raise NearParallelBundleError("line bundle is too close to parallel")
    rhs = np.einsum("nij,nj->i", projs, origins)
    return np.linalg.solve(normal, rhs)


def rcm_distances(point, lines) -> np.ndarray:
    return np.array(
        [np.linalg.norm(point_line_distance_vector(point, l)) for l in lines]
    )


def estimate_rcm_robust(lines, residual_threshold: float = 3.0,
                        max_rounds: int = 5) -> RcmEstimate:
    """Alternate least-squares fit and inlier re-classification.

    All lines start as inliers; a line stays an inlier iff its perpendicular
    distance to the current estimate is within residual_threshold. Stops when
    the inlier set is stable or max_rounds is reached.
    """
    n = len(lines)
    if n < 2:
        raise InsufficientPointsError("robust RCM estimation needs at least 2 lines")
    mask = np.ones(n, dtype=bool)
    point = None
    for _ in range(max_rounds):
        point = estimate_rcm([l for l, keep in zip(lines, mask) if keep])
        dist = rcm_distances(point, lines)
        new_mask = dist <= residual_threshold
        if new_mask.sum() < 2:
            raise NoConsensusError(
                f"inliers dropped below 2 (threshold {residual_threshold} mm)"
            )
        if np.array_equal(new_mask, mask):
            break
        mask = new_mask
    dist = rcm_distances(point, lines)
    rms = float(np.sqrt(np.mean(dist[mask] ** 2)))
    return RcmEstimate(point, mask, rms)


# ---------------------------------------------------------------------------
# Kabsch-Umeyama
# ---------------------------------------------------------------------------

def kabsch_umeyama(points_src, points_dst, weights=None) -> RigidTransform:
    """Weighted least-squares rigid alignment mapping src onto dst.

    Returns [R*|t*] minimizing sum w_n ||dst_n - (R src_n + t)||^2 with the
    SVD determinant-sign correction, so the result is always a proper
    rotation (scale fixed to 1).
    """
    src = np.asarray(points_src, dtype=float)
    dst = np.asarray(points_dst, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise InsufficientPointsError("point clouds must both be (N, 3)")
    n = src.shape[0]
    if n < 3:
        raise InsufficientPointsError(f"rigid alignment needs >= 3 pairs, got {n}")
    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (n,) or np.any(w < 0) or w.sum() <= 0:
            raise DegenerateConfigurationError(
                "weights must be nonnegative with a positive sum"
            )
        w = w / w.sum()

    cs = w @ src
    cd = w @ dst
    src_c = src - cs
    dst_c = dst - cd
    scatter = (w[:, None] * src_c).T @ src_c
    ev = np.linalg.eigvalsh(scatter)
    if ev[1] <= 1e-10 * max(ev[2], 1e-300):
        raise DegenerateConfigurationError("source points are collinear")

    h = (w[:, None] * src_c).T @ dst_c
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(matrix_to_quat(rot), cd - rot @ cs)


def alignment_rmsd(transform: RigidTransform, points_src, points_dst,
                   weights=None) -> float:
    """Weighted RMSD of dst vs transformed src (the aligned objective value)."""
    src = np.asarray(points_src, dtype=float)
    dst = np.asarray(points_dst, dtype=float)
    n = src.shape[0]
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights) / np.sum(weights)
    err = dst - transform.apply(src)
    return float(np.sqrt(np.sum(w * np.sum(err * err, axis=1))))
