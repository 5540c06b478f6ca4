"""Pure numpy closed-loop rollout and BPTT, batched over sequences.

Reference implementation of the kernels in ``_ckernels.pyx``; used when the
compiled extension is unavailable or ``SRNNPB_PURE_PYTHON`` is set.

Layout shared with the compiled kernels:

* ``w_x``  (4H, P + D) input weights, gate blocks ordered input, forget,
  candidate, output
* ``w_h``  (4H, H) recurrent weights
* ``b``    (4H,)
* ``w_out`` (D, H), ``b_out`` (D,)
* ``pb``   (B, P), one parametric-bias vector per batch row

Cache arrays are (B, T, .) with ``gates`` holding post-activation values.
"""

import numpy as np


def _sigmoid(a):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-a))


def forward(w_x, w_h, b, w_out, b_out, pb, T):
    B, P = pb.shape
    D = b_out.shape[0]
    H = w_h.shape[1]
    z = np.empty((B, T, P + D))
    gates = np.empty((B, T, 4 * H))
    c = np.empty((B, T, H))
    h = np.empty((B, T, H))
    x = np.empty((B, T, D))
    h_prev = np.zeros((B, H))
    c_prev = np.zeros((B, H))
    x_prev = np.zeros((B, D))
    for t in range(T):
        z[:, t, :P] = pb
        z[:, t, P:] = x_prev
        a = z[:, t] @ w_x.T + h_prev @ w_h.T + b
        ig = _sigmoid(a[:, :H])
        fg = _sigmoid(a[:, H : 2 * H])
        gg = np.tanh(a[:, 2 * H : 3 * H])
        og = _sigmoid(a[:, 3 * H :])
        c_t = fg * c_prev + ig * gg
        h_t = og * np.tanh(c_t)
        x_t = h_t @ w_out.T + b_out
        gates[:, t, :H] = ig
        gates[:, t, H : 2 * H] = fg
        gates[:, t, 2 * H : 3 * H] = gg
        gates[:, t, 3 * H :] = og
        c[:, t] = c_t
        h[:, t] = h_t
        x[:, t] = x_t
        h_prev, c_prev, x_prev = h_t, c_t, x_t
    return z, gates, c, h, x


def backward(w_x, w_h, w_out, P, z, gates, c, h, d_x, weights=True):
    B, T, D = d_x.shape
    H = w_h.shape[1]
    dw_x = np.zeros_like(w_x)
    dw_h = np.zeros_like(w_h)
    db = np.zeros(4 * H)
    dw_out = np.zeros_like(w_out)
    db_out = np.zeros(D)
    d_pb = np.zeros((B, P))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    dx_carry = np.zeros((B, D))
    zero_state = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        dx = d_x[:, t] + dx_carry
        h_t = h[:, t]
        h_prev = h[:, t - 1] if t > 0 else zero_state
        c_prev = c[:, t - 1] if t > 0 else zero_state
        if weights:
            dw_out += dx.T @ h_t
            db_out += dx.sum(axis=0)
        dh = dx @ w_out + dh_next
        ig = gates[:, t, :H]
        fg = gates[:, t, H : 2 * H]
        gg = gates[:, t, 2 * H : 3 * H]
        og = gates[:, t, 3 * H :]
        tc = np.tanh(c[:, t])
        dc = dh * og * (1.0 - tc * tc) + dc_next
        da = np.empty((B, 4 * H))
        da[:, :H] = dc * gg * ig * (1.0 - ig)
        da[:, H : 2 * H] = dc * c_prev * fg * (1.0 - fg)
        da[:, 2 * H : 3 * H] = dc * ig * (1.0 - gg * gg)
        da[:, 3 * H :] = dh * tc * og * (1.0 - og)
        dc_next = dc * fg
        if weights:
            dw_x += da.T @ z[:, t]
            dw_h += da.T @ h_prev
            db += da.sum(axis=0)
        dz = da @ w_x
        dh_next = da @ w_h
        d_pb += dz[:, :P]
        dx_carry = dz[:, P:]
    return dw_x, dw_h, db, dw_out, db_out, d_pb
