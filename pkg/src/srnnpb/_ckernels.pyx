# cython: language_level=3
"""Compiled closed-loop rollout and BPTT.

Same contract and array layout as ``srnnpb._kernels_py``; see that module
for the shapes.  Batch rows are processed one after another and weight
gradients are accumulated in ascending row order.
"""

import numpy as np

from libc.math cimport exp, tanh
from libc.string cimport memset


cdef inline double _sigmoid(double a) noexcept nogil:
    return 1.0 / (1.0 + exp(-a))


cdef inline double _dot(const double* a, const double* b, Py_ssize_t n) noexcept nogil:
    # four partial sums break the add latency chain; order is fixed, so deterministic
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef Py_ssize_t k = 0
    while k + 4 <= n:
        s0 += a[k] * b[k]
        s1 += a[k + 1] * b[k + 1]
        s2 += a[k + 2] * b[k + 2]
        s3 += a[k + 3] * b[k + 3]
        k += 4
    while k < n:
        s0 += a[k] * b[k]
        k += 1
    return (s0 + s1) + (s2 + s3)


cdef inline void _axpy(double alpha, const double* x, double* y, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t k
    for k in range(n):
        y[k] += alpha * x[k]


def forward(double[:, ::1] w_x, double[:, ::1] w_h, double[::1] b,
            double[:, ::1] w_out, double[::1] b_out, double[:, ::1] pb,
            Py_ssize_t T):
    cdef Py_ssize_t B = pb.shape[0]
    cdef Py_ssize_t P = pb.shape[1]
    cdef Py_ssize_t D = b_out.shape[0]
    cdef Py_ssize_t H = w_h.shape[1]
    cdef Py_ssize_t Z = P + D
    cdef Py_ssize_t G = 4 * H
    if w_x.shape[0] != G or w_x.shape[1] != Z or w_h.shape[0] != G \
            or b.shape[0] != G or w_out.shape[0] != D or w_out.shape[1] != H:
        raise ValueError("inconsistent weight shapes")

    z_arr = np.zeros((B, T, Z))
    gates_arr = np.empty((B, T, G))
    c_arr = np.empty((B, T, H))
    h_arr = np.empty((B, T, H))
    x_arr = np.empty((B, T, D))
    if B == 0 or T == 0:
        return z_arr, gates_arr, c_arr, h_arr, x_arr
    cdef double[:, :, ::1] zv = z_arr
    cdef double[:, :, ::1] gv = gates_arr
    cdef double[:, :, ::1] cv = c_arr
    cdef double[:, :, ::1] hv = h_arr
    cdef double[:, :, ::1] xv = x_arr

    # transposed copies so gate pre-activations accumulate as contiguous axpys
    cdef double[:, ::1] wxt_v = np.ascontiguousarray(np.asarray(w_x).T)
    cdef double[:, ::1] wht_v = np.ascontiguousarray(np.asarray(w_h).T)
    cdef double[:, ::1] wot_v = np.ascontiguousarray(np.asarray(w_out).T)
    cdef const double* wxt = &wxt_v[0, 0]
    cdef const double* wht = &wht_v[0, 0]
    cdef const double* wot = &wot_v[0, 0]
    cdef double *zt
    cdef double *gt
    cdef double *ct
    cdef double *ht
    cdef double *xt
    cdef double *cp
    cdef double *hp
    cdef double *xp
    cdef Py_ssize_t bi, t, j, k
    cdef double a_i, a_f, a_g, a_o, cval
    with nogil:
        for bi in range(B):
            for t in range(T):
                zt = &zv[bi, t, 0]
                gt = &gv[bi, t, 0]
                ct = &cv[bi, t, 0]
                ht = &hv[bi, t, 0]
                xt = &xv[bi, t, 0]
                for k in range(P):
                    zt[k] = pb[bi, k]
                if t > 0:
                    xp = &xv[bi, t - 1, 0]
                    hp = &hv[bi, t - 1, 0]
                    cp = &cv[bi, t - 1, 0]
                    for k in range(D):
                        zt[P + k] = xp[k]
                for j in range(G):
                    gt[j] = b[j]
                for k in range(Z):
                    _axpy(zt[k], wxt + k * G, gt, G)
                if t > 0:
                    for k in range(H):
                        _axpy(hp[k], wht + k * G, gt, G)
                for j in range(H):
                    a_i = _sigmoid(gt[j])
                    a_f = _sigmoid(gt[H + j])
                    a_g = tanh(gt[2 * H + j])
                    a_o = _sigmoid(gt[3 * H + j])
                    gt[j] = a_i
                    gt[H + j] = a_f
                    gt[2 * H + j] = a_g
                    gt[3 * H + j] = a_o
                    cval = a_i * a_g
                    if t > 0:
                        cval = cval + a_f * cp[j]
                    ct[j] = cval
                    ht[j] = a_o * tanh(cval)
                for j in range(D):
                    xt[j] = b_out[j]
                for k in range(H):
                    _axpy(ht[k], wot + k * D, xt, D)
    return z_arr, gates_arr, c_arr, h_arr, x_arr


def backward(double[:, ::1] w_x, double[:, ::1] w_h, double[:, ::1] w_out,
             Py_ssize_t P, double[:, :, ::1] z, double[:, :, ::1] gates,
             double[:, :, ::1] c, double[:, :, ::1] h, double[:, :, ::1] d_x,
             bint weights=True):
    cdef Py_ssize_t B = d_x.shape[0]
    cdef Py_ssize_t T = d_x.shape[1]
    cdef Py_ssize_t D = d_x.shape[2]
    cdef Py_ssize_t H = w_h.shape[1]
    cdef Py_ssize_t Z = P + D
    cdef Py_ssize_t G = 4 * H
    if z.shape[0] != B or z.shape[1] != T or z.shape[2] != Z \
            or gates.shape[2] != G or h.shape[2] != H or c.shape[2] != H \
            or w_x.shape[0] != G or w_x.shape[1] != Z or w_out.shape[0] != D:
        raise ValueError("cache shapes do not match the weights")

    dw_xt_arr = np.zeros((Z, G))
    dw_ht_arr = np.zeros((H, G))
    db_arr = np.zeros(G)
    dw_out_arr = np.zeros((D, H))
    db_out_arr = np.zeros(D)
    d_pb_arr = np.zeros((B, P))
    if B == 0 or T == 0:
        return dw_xt_arr.T.copy(), dw_ht_arr.T.copy(), db_arr, dw_out_arr, db_out_arr, d_pb_arr
    cdef double[:, ::1] dw_x_v = dw_xt_arr
    cdef double[:, ::1] dw_h_v = dw_ht_arr
    cdef double[::1] db_v = db_arr
    cdef double[:, ::1] dw_out_v = dw_out_arr
    cdef double[::1] db_out_v = db_out_arr
    cdef double[:, ::1] d_pb = d_pb_arr
    cdef double* dwx = &dw_x_v[0, 0]
    cdef double* dwh = &dw_h_v[0, 0]
    cdef double* db = &db_v[0]
    cdef double* dwo = &dw_out_v[0, 0]
    cdef double* dbo = &db_out_v[0]

    cdef double[::1] dx_v = np.empty(D)
    cdef double[::1] dxc_v = np.empty(D)
    cdef double[::1] dh_v = np.empty(H)
    cdef double[::1] dhn_v = np.empty(H)
    cdef double[::1] dcn_v = np.empty(H)
    cdef double[::1] da_v = np.empty(G)
    cdef double[::1] dz_v = np.empty(Z)
    cdef double* dx = &dx_v[0]
    cdef double* dx_carry = &dxc_v[0]
    cdef double* dh = &dh_v[0]
    cdef double* dh_next = &dhn_v[0]
    cdef double* dc_next = &dcn_v[0]
    cdef double* da = &da_v[0]
    cdef double* dz = &dz_v[0]

    cdef double[:, ::1] wxt_v = np.ascontiguousarray(np.asarray(w_x).T)
    cdef const double* wxt = &wxt_v[0, 0]
    cdef const double* wh = &w_h[0, 0]
    cdef const double* wo = &w_out[0, 0]
    cdef const double *zt
    cdef const double *gt
    cdef const double *ct
    cdef const double *cp
    cdef const double *ht
    cdef const double *hp
    cdef const double *dxt

    cdef Py_ssize_t bi, t, j, k
    cdef double ig, fg, gg, og, tc, dc, c_prev, daj
    with nogil:
        for bi in range(B):
            memset(dx_carry, 0, D * sizeof(double))
            memset(dh_next, 0, H * sizeof(double))
            memset(dc_next, 0, H * sizeof(double))
            for t in range(T - 1, -1, -1):
                zt = &z[bi, t, 0]
                gt = &gates[bi, t, 0]
                ct = &c[bi, t, 0]
                ht = &h[bi, t, 0]
                dxt = &d_x[bi, t, 0]
                if t > 0:
                    cp = &c[bi, t - 1, 0]
                    hp = &h[bi, t - 1, 0]
                for j in range(D):
                    dx[j] = dxt[j] + dx_carry[j]
                for k in range(H):
                    dh[k] = dh_next[k]
                for j in range(D):
                    _axpy(dx[j], wo + j * H, dh, H)
                    if weights:
                        dbo[j] += dx[j]
                        _axpy(dx[j], ht, dwo + j * H, H)
                for j in range(H):
                    ig = gt[j]
                    fg = gt[H + j]
                    gg = gt[2 * H + j]
                    og = gt[3 * H + j]
                    tc = tanh(ct[j])
                    c_prev = cp[j] if t > 0 else 0.0
                    dc = dh[j] * og * (1.0 - tc * tc) + dc_next[j]
                    da[j] = dc * gg * ig * (1.0 - ig)
                    da[H + j] = dc * c_prev * fg * (1.0 - fg)
                    da[2 * H + j] = dc * ig * (1.0 - gg * gg)
                    da[3 * H + j] = dh[j] * tc * og * (1.0 - og)
                    dc_next[j] = dc * fg
                for k in range(Z):
                    dz[k] = _dot(wxt + k * G, da, G)
                memset(dh_next, 0, H * sizeof(double))
                for j in range(G):
                    _axpy(da[j], wh + j * H, dh_next, H)
                if weights:
                    for j in range(G):
                        db[j] += da[j]
                    for k in range(Z):
                        _axpy(zt[k], da, dwx + k * G, G)
                    if t > 0:
                        for k in range(H):
                            _axpy(hp[k], da, dwh + k * G, G)
                for k in range(P):
                    d_pb[bi, k] += dz[k]
                for k in range(D):
                    dx_carry[k] = dz[P + k]
    return dw_xt_arr.T.copy(), dw_ht_arr.T.copy(), db_arr, dw_out_arr, db_out_arr, d_pb_arr
