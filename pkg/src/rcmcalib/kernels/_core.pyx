# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twin of kernels.purepy.frame_residuals.

Semantics (including nearest-neighbour tie breaking: first minimal index)
must stay bit-compatible with the numpy fallback; the parity tests compare
the two backends on random inputs.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, cos, sin, fabs

cnp.import_array()


cdef inline void _quat_to_matrix(const double[:] q, double R[3][3]) noexcept:
    cdef double w = q[0], x = q[1], y = q[2], z = q[3]
    R[0][0] = 1 - 2 * (y * y + z * z); R[0][1] = 2 * (x * y - w * z); R[0][2] = 2 * (x * z + w * y)
    R[1][0] = 2 * (x * y + w * z); R[1][1] = 1 - 2 * (x * x + z * z); R[1][2] = 2 * (y * z - w * x)
    R[2][0] = 2 * (x * z - w * y); R[2][1] = 2 * (y * z + w * x); R[2][2] = 1 - 2 * (x * x + y * y)


cdef inline void _matvec(double M[3][3], double* v, double* out) noexcept:
    out[0] = M[0][0] * v[0] + M[0][1] * v[1] + M[0][2] * v[2]
    out[1] = M[1][0] * v[0] + M[1][1] * v[1] + M[1][2] * v[2]
    out[2] = M[2][0] * v[0] + M[2][1] * v[1] + M[2][2] * v[2]


def frame_residuals(quat, trans, double alpha, double theta_l, double theta_r,
                    part_codes, local_pts, double wrist_offset,
                    double fx, double fy, double cx, double cy,
                    det_uv, match_idx,
                    p_rcm, double lam_kpt, double lam_rcm,
                    bint want_jac):
    """See kernels.purepy.frame_residuals for the contract."""
    cdef const double[:] q = np.ascontiguousarray(quat, dtype=np.float64)
    cdef const double[:] t = np.ascontiguousarray(trans, dtype=np.float64)
    cdef const int[:] codes = np.ascontiguousarray(part_codes, dtype=np.int32)
    cdef const double[:, :] pts = np.ascontiguousarray(local_pts, dtype=np.float64)
    cdef const double[:, :] det = np.ascontiguousarray(det_uv, dtype=np.float64)
    cdef Py_ssize_t n_kp = pts.shape[0]
    cdef Py_ssize_t n_det = det.shape[0]
    if n_det == 0 and lam_kpt > 0.0:
        raise ValueError("keypoint term requires at least one detection")

    cdef bint labeled = match_idx is not None
    cdef const int[:] match
    if labeled:
        match = np.ascontiguousarray(match_idx, dtype=np.int32)

    cdef bint has_rcm = p_rcm is not None and lam_rcm > 0.0
    cdef const double[:] rcm
    if has_rcm:
        rcm = np.ascontiguousarray(p_rcm, dtype=np.float64)

    cdef double R[3][3]
    cdef double ry[3][3]
    cdef double rz_l[3][3]
    cdef double rz_r[3][3]
    _quat_to_matrix(q, R)
    cdef double ca = cos(alpha), sa = sin(alpha)
    ry[0][0] = ca; ry[0][1] = 0; ry[0][2] = sa
    ry[1][0] = 0; ry[1][1] = 1; ry[1][2] = 0
    ry[2][0] = -sa; ry[2][1] = 0; ry[2][2] = ca
    cdef double cl = cos(theta_l), sl = sin(theta_l)
    rz_l[0][0] = cl; rz_l[0][1] = -sl; rz_l[0][2] = 0
    rz_l[1][0] = sl; rz_l[1][1] = cl; rz_l[1][2] = 0
    rz_l[2][0] = 0; rz_l[2][1] = 0; rz_l[2][2] = 1
    cdef double cr = cos(theta_r), sr = sin(theta_r)
    rz_r[0][0] = cr; rz_r[0][1] = -sr; rz_r[0][2] = 0
    rz_r[1][0] = sr; rz_r[1][1] = cr; rz_r[1][2] = 0
    rz_r[2][0] = 0; rz_r[2][1] = 0; rz_r[2][2] = 1

    cdef cnp.ndarray cam_arr = np.empty((n_kp, 3), dtype=np.float64)
    cdef cnp.ndarray proj_arr = np.empty((n_kp, 2), dtype=np.float64)
    cdef double[:, :] cam = cam_arr
    cdef double[:, :] proj = proj_arr
    cdef cnp.ndarray juv_arr
    cdef double[:, :, :] juv
    if want_jac:
        juv_arr = np.empty((n_kp, 2, 9), dtype=np.float64)
        juv = juv_arr

    cdef double p[3]
    cdef double u[3]
    cdef double v[3]
    cdef double tmp[3]
    cdef double dva[3]
    cdef double dvl[3]
    cdef double dvr[3]
    cdef double col[3]
    cdef double dxp[3][9]
    cdef double zi, zs, xi, yi, invz, min_depth
    cdef Py_ssize_t i, j, k, c, pp
    cdef int code

    min_depth = INFINITY
    for i in range(n_kp):
        p[0] = pts[i, 0]; p[1] = pts[i, 1]; p[2] = pts[i, 2]
        dva[0] = dva[1] = dva[2] = 0
        dvl[0] = dvl[1] = dvl[2] = 0
        dvr[0] = dvr[1] = dvr[2] = 0
        code = codes[i]
        if code == 0:
            v[0] = p[0]; v[1] = p[1]; v[2] = p[2]
        else:
            if code == 1:
                u[0] = p[0]; u[1] = p[1]; u[2] = p[2]
            elif code == 2:
                _matvec(rz_l, p, u)
            else:
                _matvec(rz_r, p, u)
            _matvec(ry, u, tmp)
            v[0] = wrist_offset + tmp[0]; v[1] = tmp[1]; v[2] = tmp[2]
            # d/d(alpha) of Ry(alpha) u = e_y x (Ry u)
            dva[0] = tmp[2]; dva[1] = 0; dva[2] = -tmp[0]
            if code == 2 or code == 3:
                # d/d(theta) of Rz(theta) p = e_z x (Rz p), then through Ry
                col[0] = -u[1]; col[1] = u[0]; col[2] = 0
                _matvec(ry, col, tmp)
                if code == 2:
                    dvl[0] = tmp[0]; dvl[1] = tmp[1]; dvl[2] = tmp[2]
                else:
                    dvr[0] = tmp[0]; dvr[1] = tmp[1]; dvr[2] = tmp[2]

        _matvec(R, v, tmp)
        xi = tmp[0] + t[0]; yi = tmp[1] + t[1]; zi = tmp[2] + t[2]
        cam[i, 0] = xi; cam[i, 1] = yi; cam[i, 2] = zi
        if zi < min_depth:
            min_depth = zi
        zs = zi
        if fabs(zs) < 1e-12:
            zs = 1e-12
        invz = 1.0 / zs
        proj[i, 0] = fx * xi * invz + cx
        proj[i, 1] = fy * yi * invz + cy

        if want_jac:
            # dX/d(omega_j) = e_j x X; dX/d(rho) = I; angle columns via R.
            for c in range(3):
                for pp in range(9):
                    dxp[c][pp] = 0
            dxp[0][1] = zi; dxp[0][2] = -yi
            dxp[1][0] = -zi; dxp[1][2] = xi
            dxp[2][0] = yi; dxp[2][1] = -xi
            dxp[0][3] = 1; dxp[1][4] = 1; dxp[2][5] = 1
            _matvec(R, dva, tmp)
            dxp[0][6] = tmp[0]; dxp[1][6] = tmp[1]; dxp[2][6] = tmp[2]
            _matvec(R, dvl, tmp)
            dxp[0][7] = tmp[0]; dxp[1][7] = tmp[1]; dxp[2][7] = tmp[2]
            _matvec(R, dvr, tmp)
            dxp[0][8] = tmp[0]; dxp[1][8] = tmp[1]; dxp[2][8] = tmp[2]
            for pp in range(9):
                juv[i, 0, pp] = fx * invz * dxp[0][pp] - fx * xi * invz * invz * dxp[2][pp]
                juv[i, 1, pp] = fy * invz * dxp[1][pp] - fy * yi * invz * invz * dxp[2][pp]

    cdef Py_ssize_t n_rows = 0
    if lam_kpt > 0.0:
        n_rows = n_det if labeled else n_kp + n_det
    cdef Py_ssize_t n_rcm = 3 if has_rcm else 0
    cdef Py_ssize_t n_res = 2 * n_rows + n_rcm
    cdef cnp.ndarray resid_arr = np.empty(n_res, dtype=np.float64)
    cdef double[:] resid = resid_arr
    cdef cnp.ndarray jac_arr = None
    cdef double[:, :] jac
    if want_jac:
        jac_arr = np.empty((n_res, 9), dtype=np.float64)
        jac = jac_arr

    cdef double w, best, d2, du, dv_
    cdef Py_ssize_t row = 0, nn
    if lam_kpt > 0.0:
        if labeled:
            w = (lam_kpt / n_det) ** 0.5
            for j in range(n_det):
                k = match[j]
                resid[2 * row] = w * (proj[k, 0] - det[j, 0])
                resid[2 * row + 1] = w * (proj[k, 1] - det[j, 1])
                if want_jac:
                    for pp in range(9):
                        jac[2 * row, pp] = w * juv[k, 0, pp]
                        jac[2 * row + 1, pp] = w * juv[k, 1, pp]
                row += 1
        else:
            w = (lam_kpt / n_kp) ** 0.5
            for k in range(n_kp):
                best = INFINITY
                nn = 0
                for j in range(n_det):
                    du = proj[k, 0] - det[j, 0]
                    dv_ = proj[k, 1] - det[j, 1]
                    d2 = du * du + dv_ * dv_
                    if d2 < best:
                        best = d2
                        nn = j
                resid[2 * row] = w * (proj[k, 0] - det[nn, 0])
                resid[2 * row + 1] = w * (proj[k, 1] - det[nn, 1])
                if want_jac:
                    for pp in range(9):
                        jac[2 * row, pp] = w * juv[k, 0, pp]
                        jac[2 * row + 1, pp] = w * juv[k, 1, pp]
                row += 1
            w = (lam_kpt / n_det) ** 0.5
            for j in range(n_det):
                best = INFINITY
                nn = 0
                for k in range(n_kp):
                    du = proj[k, 0] - det[j, 0]
                    dv_ = proj[k, 1] - det[j, 1]
                    d2 = du * du + dv_ * dv_
                    if d2 < best:
                        best = d2
                        nn = k
                resid[2 * row] = w * (proj[nn, 0] - det[j, 0])
                resid[2 * row + 1] = w * (proj[nn, 1] - det[j, 1])
                if want_jac:
                    for pp in range(9):
                        jac[2 * row, pp] = w * juv[nn, 0, pp]
                        jac[2 * row + 1, pp] = w * juv[nn, 1, pp]
                row += 1

    cdef double xd[3]
    cdef double uvec[3]
    cdef double r3[3]
    cdef double along, dot_
    cdef double dxj[3]
    cdef double doj[3]
    cdef double pm[3][3]
    cdef Py_ssize_t base
    if has_rcm:
        w = lam_rcm ** 0.5
        xd[0] = R[0][0]; xd[1] = R[1][0]; xd[2] = R[2][0]
        uvec[0] = rcm[0] - t[0]; uvec[1] = rcm[1] - t[1]; uvec[2] = rcm[2] - t[2]
        along = xd[0] * uvec[0] + xd[1] * uvec[1] + xd[2] * uvec[2]
        r3[0] = uvec[0] - xd[0] * along
        r3[1] = uvec[1] - xd[1] * along
        r3[2] = uvec[2] - xd[2] * along
        base = n_res - 3
        resid[base] = w * r3[0]; resid[base + 1] = w * r3[1]; resid[base + 2] = w * r3[2]
        if want_jac:
            for c in range(3):
                for j in range(3):
                    pm[c][j] = (1.0 if c == j else 0.0) - xd[c] * xd[j]
            for j in range(3):
                dxj[0] = dxj[1] = dxj[2] = 0
                doj[0] = doj[1] = doj[2] = 0
                if j == 0:
                    dxj[1] = -xd[2]; dxj[2] = xd[1]
                    doj[1] = -t[2]; doj[2] = t[1]
                elif j == 1:
                    dxj[0] = xd[2]; dxj[2] = -xd[0]
                    doj[0] = t[2]; doj[2] = -t[0]
                else:
                    dxj[0] = -xd[1]; dxj[1] = xd[0]
                    doj[0] = -t[1]; doj[1] = t[0]
                dot_ = dxj[0] * uvec[0] + dxj[1] * uvec[1] + dxj[2] * uvec[2]
                _matvec(pm, doj, tmp)
                for c in range(3):
                    jac[base + c, j] = w * (-dxj[c] * along - xd[c] * dot_ - tmp[c])
            for c in range(3):
                for j in range(3):
                    jac[base + c, 3 + j] = -w * pm[c][j]
                for j in range(6, 9):
                    jac[base + c, j] = 0.0

    return resid_arr, jac_arr, min_depth
