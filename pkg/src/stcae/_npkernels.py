"""Pure-numpy fallback for the compiled kernels in ``_ckernels``.

Same signatures and layouts. Convolutions are computed tap by tap: for every
kernel offset the strided input slice is multiplied by the (Ci, Co) weight
matrix of that offset. ``nthreads`` is accepted and ignored.
"""

import numpy as np


def _padded(x, pad_lo, ksize, stride, out_shape):
    # zero-pad so every tap slice of length out*stride fits
    pads = [(0, 0)]
    crop = [slice(None)]
    for ax in range(3):
        n = x.shape[ax + 1]
        need = (out_shape[ax] - 1) * stride[ax] + ksize[ax]
        hi = need - n - pad_lo[ax]
        pads.append((pad_lo[ax], max(hi, 0)))
        crop.append(slice(0, need))
    pads.append((0, 0))
    crop.append(slice(None))
    return np.pad(x, pads)[tuple(crop)]


def _tap(xp, s, p, q, stride, out_shape):
    st, sh, sw = stride
    To, Ho, Wo = out_shape
    return xp[:, s:s + st * (To - 1) + 1:st, p:p + sh * (Ho - 1) + 1:sh, q:q + sw * (Wo - 1) + 1:sw]


def conv3d_fwd(x, w, stride, pad_lo, out_shape, nthreads=1):
    x = np.asarray(x, dtype=np.float32)
    Co, Ci, S, P, Q = w.shape
    B = x.shape[0]
    xp = _padded(x, pad_lo, (S, P, Q), stride, out_shape)
    wt = np.transpose(w, (2, 3, 4, 1, 0)).astype(np.float32)
    y = np.zeros((B,) + tuple(out_shape) + (Co,), dtype=np.float32)
    for s in range(S):
        for p in range(P):
            for q in range(Q):
                y += _tap(xp, s, p, q, stride, out_shape) @ wt[s, p, q]
    return y


def conv3d_bwd_input(gy, w, stride, pad_lo, in_shape, nthreads=1):
    gy = np.asarray(gy, dtype=np.float32)
    Co, Ci, S, P, Q = w.shape
    B = gy.shape[0]
    out_shape = gy.shape[1:4]
    shell = np.zeros((B,) + tuple(in_shape) + (Ci,), dtype=np.float32)
    gxp = _padded(shell, pad_lo, (S, P, Q), stride, out_shape)
    wt = np.transpose(w, (2, 3, 4, 0, 1)).astype(np.float32)
    for s in range(S):
        for p in range(P):
            for q in range(Q):
                _tap(gxp, s, p, q, stride, out_shape)[...] += gy @ wt[s, p, q]
    T, H, W = in_shape
    pt, ph, pw = pad_lo
    # taps falling on the high-side pad are discarded by the crop
    full = np.zeros((B, T, H, W, Ci), dtype=np.float32)
    avail = [min(gxp.shape[ax + 1] - pad_lo[ax], in_shape[ax]) for ax in range(3)]
    full[:, :avail[0], :avail[1], :avail[2]] = gxp[:, pt:pt + avail[0], ph:ph + avail[1], pw:pw + avail[2]]
    return full


def conv3d_bwd_weight(x, gy, ksize, stride, pad_lo, nthreads=1):
    x = np.asarray(x, dtype=np.float32)
    gy = np.asarray(gy, dtype=np.float32)
    S, P, Q = ksize
    Ci = x.shape[4]
    Co = gy.shape[4]
    out_shape = gy.shape[1:4]
    xp = _padded(x, pad_lo, ksize, stride, out_shape)
    g2 = gy.reshape(-1, Co).astype(np.float64)
    gw = np.zeros((Co, Ci, S, P, Q), dtype=np.float64)
    for s in range(S):
        for p in range(P):
            for q in range(Q):
                xs = _tap(xp, s, p, q, stride, out_shape).reshape(-1, Ci)
                gw[:, :, s, p, q] = (xs.T.astype(np.float64) @ g2).T
    return gw.astype(np.float32)


def maxpool3d_fwd(x, window, out_shape):
    x = np.asarray(x, dtype=np.float32)
    B, T, H, W, C = x.shape
    kt, kh, kw = window
    To, Ho, Wo = out_shape
    xp = np.full((B, To * kt, Ho * kh, Wo * kw, C), -np.inf, dtype=np.float32)
    xp[:, :T, :H, :W] = x
    blocks = xp.reshape(B, To, kt, Ho, kh, Wo, kw, C).transpose(0, 1, 3, 5, 7, 2, 4, 6)
    blocks = blocks.reshape(B, To, Ho, Wo, C, kt * kh * kw)
    local = np.argmax(blocks, axis=-1)
    y = np.take_along_axis(blocks, local[..., None], axis=-1)[..., 0]
    a, d, e = np.unravel_index(local, (kt, kh, kw))
    ti = np.arange(To)[None, :, None, None, None] * kt + a
    hi = np.arange(Ho)[None, None, :, None, None] * kh + d
    wi = np.arange(Wo)[None, None, None, :, None] * kw + e
    c = np.arange(C)[None, None, None, None, :]
    idx = ((ti.astype(np.int64) * H + hi) * W + wi) * C + c
    return y.astype(np.float32), idx


def maxpool3d_bwd(gy, idx, in_shape):
    B = gy.shape[0]
    gx = np.zeros((B, int(np.prod(in_shape))), dtype=np.float32)
    np.put_along_axis(gx, idx.reshape(B, -1), np.asarray(gy, dtype=np.float32).reshape(B, -1), axis=1)
    return gx.reshape((B,) + tuple(in_shape))
