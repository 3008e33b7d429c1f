"""Pure-numpy implementation of the per-frame residual kernel.

Mirrors kernels._core exactly; both backends must agree to machine
precision. See kernels.__init__ for the selection logic and the parameter
layout shared with the optimizer:

  columns 0-2  rotational twist of cT_s (left perturbation, rad)
  columns 3-5  translational twist of cT_s (mm)
  column  6    wrist pitch alpha
  column  7    jaw angle theta_l
  column  8    jaw angle theta_r
"""

from __future__ import annotations

import numpy as np

_EX = np.array([1.0, 0.0, 0.0])
_EY = np.array([0.0, 1.0, 0.0])
_EZ = np.array([0.0, 0.0, 1.0])


def _quat_to_matrix(q):
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _skew(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def frame_residuals(quat, trans, alpha, theta_l, theta_r,
                    part_codes, local_pts, wrist_offset,
                    fx, fy, cx, cy,
                    det_uv, match_idx,
                    p_rcm, lam_kpt, lam_rcm,
                    want_jac):
    """Residual vector (and Jacobian) of one frame's keypoint + RCM objective.

    Keypoint term: symmetric Chamfer between projected model keypoints and
    detections (squared px, averaged per direction), or a labeled L2 term
    when match_idx is given. RCM term: orthogonal distance of the frozen
    pivot to the shaft centerline, weighted by sqrt(lam_rcm).

    Returns (resid (R,), jac (R,9) or None, min_depth).
    """
    quat = np.asarray(quat, dtype=float)
    trans = np.asarray(trans, dtype=float)
    local_pts = np.asarray(local_pts, dtype=float)
    det_uv = np.asarray(det_uv, dtype=float)
    part_codes = np.asarray(part_codes)
    n_kp = local_pts.shape[0]
    n_det = det_uv.shape[0]
    if n_det == 0 and lam_kpt > 0.0:
        raise ValueError("keypoint term requires at least one detection")

    rot = _quat_to_matrix(quat)
    ca, sa = np.cos(alpha), np.sin(alpha)
    ry = np.array([[ca, 0.0, sa], [0.0, 1.0, 0.0], [-sa, 0.0, ca]])
    cl, sl = np.cos(theta_l), np.sin(theta_l)
    rz_l = np.array([[cl, -sl, 0.0], [sl, cl, 0.0], [0.0, 0.0, 1.0]])
    cr, sr = np.cos(theta_r), np.sin(theta_r)
    rz_r = np.array([[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]])
    d_ex = wrist_offset * _EX

    # Shaft-frame position v of every keypoint, plus angle partials of v.
    v = np.empty((n_kp, 3))
    dv_alpha = np.zeros((n_kp, 3))
    dv_tl = np.zeros((n_kp, 3))
    dv_tr = np.zeros((n_kp, 3))
    for i in range(n_kp):
        p = local_pts[i]
        code = int(part_codes[i])
        if code == 0:
            v[i] = p
            continue
        if code == 1:
            u = p
        elif code == 2:
            u = rz_l @ p
            dv_tl[i] = ry @ np.cross(_EZ, u)
        else:
            u = rz_r @ p
            dv_tr[i] = ry @ np.cross(_EZ, u)
        v[i] = d_ex + ry @ u
        dv_alpha[i] = np.cross(_EY, v[i] - d_ex)

    pts_cam = v @ rot.T + trans
    z = pts_cam[:, 2]
    min_depth = float(z.min()) if n_kp else np.inf
    z_safe = np.where(np.abs(z) < 1e-12, 1e-12, z)
    proj = np.stack(
        [fx * pts_cam[:, 0] / z_safe + cx, fy * pts_cam[:, 1] / z_safe + cy], axis=1
    )

    jac_uv = None
    if want_jac:
        dx_param = np.zeros((n_kp, 3, 9))
        for i in range(n_kp):
            dx_param[i, :, 0:3] = -_skew(pts_cam[i])
            dx_param[i, :, 3:6] = np.eye(3)
            dx_param[i, :, 6] = rot @ dv_alpha[i]
            dx_param[i, :, 7] = rot @ dv_tl[i]
            dx_param[i, :, 8] = rot @ dv_tr[i]
        dproj = np.zeros((n_kp, 2, 3))
        dproj[:, 0, 0] = fx / z_safe
        dproj[:, 0, 2] = -fx * pts_cam[:, 0] / (z_safe * z_safe)
        dproj[:, 1, 1] = fy / z_safe
        dproj[:, 1, 2] = -fy * pts_cam[:, 1] / (z_safe * z_safe)
        jac_uv = np.einsum("kij,kjp->kip", dproj, dx_param)

    rows = []
    jrows = []
    if lam_kpt > 0.0:
        if match_idx is not None:
            w = np.sqrt(lam_kpt / n_det)
            for j in range(n_det):
                k = int(match_idx[j])
                rows.append(w * (proj[k] - det_uv[j]))
                if want_jac:
                    jrows.append(w * jac_uv[k])
        else:
            d2 = ((proj[:, None, :] - det_uv[None, :, :]) ** 2).sum(axis=2)
            fwd = np.argmin(d2, axis=1)
            back = np.argmin(d2, axis=0)
            w_f = np.sqrt(lam_kpt / n_kp)
            for k in range(n_kp):
                rows.append(w_f * (proj[k] - det_uv[fwd[k]]))
                if want_jac:
                    jrows.append(w_f * jac_uv[k])
            w_b = np.sqrt(lam_kpt / n_det)
            for j in range(n_det):
                k = int(back[j])
                rows.append(w_b * (proj[k] - det_uv[j]))
                if want_jac:
                    jrows.append(w_b * jac_uv[k])

    n_rcm = 3 if (p_rcm is not None and lam_rcm > 0.0) else 0
    n_res = 2 * len(rows) + n_rcm
    resid = np.empty(n_res)
    jac = np.empty((n_res, 9)) if want_jac else None
    for k, r in enumerate(rows):
        resid[2 * k : 2 * k + 2] = r
        if want_jac:
            jac[2 * k : 2 * k + 2] = jrows[k]

    if n_rcm:
        p_rcm = np.asarray(p_rcm, dtype=float)
        w = np.sqrt(lam_rcm)
        origin = trans
        x_dir = rot[:, 0]
        u_vec = p_rcm - origin
        along = x_dir @ u_vec
        r3 = u_vec - x_dir * along
        resid[-3:] = w * r3
        if want_jac:
            proj_mat = np.eye(3) - np.outer(x_dir, x_dir)
            for j in range(3):
                e = np.zeros(3)
                e[j] = 1.0
                dx = np.cross(e, x_dir)
                do = np.cross(e, origin)
                jac[-3:, j] = w * (-dx * along - x_dir * (dx @ u_vec) - proj_mat @ do)
            jac[-3:, 3:6] = -w * proj_mat
            jac[-3:, 6:9] = 0.0

    return resid, jac, min_depth
