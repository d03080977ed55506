"""Compiled versions of the kernels in ``_kernels_py``; same signatures."""

import numpy as np

from libc.math cimport exp, INFINITY


def discounted_cumsum(x, double factor):
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], t
    out = np.empty(n)
    cdef double[::1] o = out
    cdef double acc = 0.0
    for t in range(n - 1, -1, -1):
        acc = xv[t] + factor * acc
        o[t] = acc
    return out


def mki_interp(zt, zc, L, yc, bint normalize):
    cdef const double[:, ::1] ycv = np.ascontiguousarray(yc, dtype=np.float64)
    # u_ij = (zt_i - zc_j) L = pt_i - pc_j
    cdef const double[:, ::1] pt = np.ascontiguousarray(np.asarray(zt, dtype=np.float64) @ L)
    cdef const double[:, ::1] pc = np.ascontiguousarray(np.asarray(zc, dtype=np.float64) @ L)
    cdef Py_ssize_t n = pt.shape[0], m = pc.shape[0], dz = pt.shape[1], dy = ycv.shape[1]
    cdef Py_ssize_t i, j, k, d
    w_arr = np.empty((n, m))
    pred_arr = np.zeros((n, dy))
    cdef double[:, ::1] w = w_arr
    cdef double[:, ::1] pred = pred_arr
    cdef double s, u, smax, total
    for i in range(n):
        smax = -INFINITY
        for j in range(m):
            s = 0.0
            for k in range(dz):
                u = pt[i, k] - pc[j, k]
                s = s + u * u
            w[i, j] = -s
            if -s > smax:
                smax = -s
        if normalize:
            total = 0.0
            for j in range(m):
                w[i, j] = exp(w[i, j] - smax)
                total = total + w[i, j]
            for j in range(m):
                w[i, j] = w[i, j] / total
        else:
            for j in range(m):
                w[i, j] = exp(w[i, j])
        for j in range(m):
            for d in range(dy):
                pred[i, d] = pred[i, d] + w[i, j] * ycv[j, d]
    return pred_arr, w_arr


def mki_interp_grad(zt, zc, L, yc, w, pred, dpred, bint normalize):
    zt = np.ascontiguousarray(zt, dtype=np.float64)
    zc = np.ascontiguousarray(zc, dtype=np.float64)
    L = np.ascontiguousarray(L, dtype=np.float64)
    cdef const double[:, ::1] ztv = zt
    cdef const double[:, ::1] zcv = zc
    cdef const double[:, ::1] pt = np.ascontiguousarray(zt @ L)
    cdef const double[:, ::1] pc = np.ascontiguousarray(zc @ L)
    cdef const double[:, ::1] ycv = np.ascontiguousarray(yc, dtype=np.float64)
    cdef const double[:, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef const double[:, ::1] pv = np.ascontiguousarray(pred, dtype=np.float64)
    cdef const double[:, ::1] gv = np.ascontiguousarray(dpred, dtype=np.float64)
    cdef Py_ssize_t n = pt.shape[0], m = pc.shape[0], dz = pt.shape[1], dy = ycv.shape[1]
    cdef Py_ssize_t i, j, a, k, d
    # accumulate sum_j ds_ij u_ij per target and sum_i ds_ij u_ij per context
    # point, then map both through L once
    vt_arr = np.zeros((n, dz))
    vc_arr = np.zeros((m, dz))
    dL_arr = np.zeros((dz, dz))
    cdef double[:, ::1] vt = vt_arr
    cdef double[:, ::1] vc = vc_arr
    cdef double[:, ::1] dL = dL_arr
    cdef double ds, base, acc, u
    for i in range(n):
        base = 0.0
        if normalize:
            for d in range(dy):
                base = base + gv[i, d] * pv[i, d]
        for j in range(m):
            acc = 0.0
            for d in range(dy):
                acc = acc + gv[i, d] * ycv[j, d]
            ds = wv[i, j] * (acc - base)
            if ds == 0.0:
                continue
            for k in range(dz):
                u = ds * (pt[i, k] - pc[j, k])
                vt[i, k] = vt[i, k] + u
                vc[j, k] = vc[j, k] + u
                for a in range(dz):
                    dL[a, k] = dL[a, k] - 2.0 * (ztv[i, a] - zcv[j, a]) * u
    d_zt = -2.0 * (vt_arr @ L.T)
    d_zc = 2.0 * (vc_arr @ L.T)
    return d_zt, d_zc, dL_arr
