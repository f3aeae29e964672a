# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for channels-last 3D convolution and max-pooling.

All arrays are C-contiguous float32 with layout (batch, T, H, W, channels).
Convolutions are lowered per output time-slice: the slice's receptive
fields are gathered into a column buffer and multiplied against the
(taps * Ci, Co) weight matrix with BLAS sgemm. Work is split over the batch
axis; weight-gradient partials are kept per sample and reduced serially, so
outputs do not depend on the thread count.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.stdlib cimport free, malloc
from scipy.linalg.cython_blas cimport sgemm

cnp.import_array()

ctypedef cnp.int64_t i64


cdef inline void _mm(bint ta, bint tb, int M, int N, int K, float* A, float* B,
                     float* C, float beta) noexcept nogil:
    # row-major C(M, N) = op(A)(M, K) @ op(B)(K, N) + beta * C
    cdef char ca = b'T' if ta else b'N'
    cdef char cb = b'T' if tb else b'N'
    cdef int lda = M if ta else K
    cdef int ldb = K if tb else N
    cdef float one = 1.0
    sgemm(&cb, &ca, &N, &M, &K, &one, B, &ldb, A, &lda, &beta, C, &N)


cdef void _im2col(const float* x, float* cols, int to,
                  int T, int H, int W, int Ci, int Ho, int Wo,
                  int S, int P, int Q, int st, int sh, int sw,
                  int pt, int ph, int pw) noexcept nogil:
    # cols row (ho, wo), column (s, p, q, ci); out-of-range taps are zero
    cdef int ho, wo, s, p, q, ti, hi, wi, ci
    cdef Py_ssize_t K = <Py_ssize_t>S * P * Q * Ci
    cdef float* row
    cdef const float* src
    for ho in range(Ho):
        for wo in range(Wo):
            row = cols + (<Py_ssize_t>ho * Wo + wo) * K
            for s in range(S):
                ti = to * st - pt + s
                for p in range(P):
                    hi = ho * sh - ph + p
                    for q in range(Q):
                        wi = wo * sw - pw + q
                        if ti < 0 or ti >= T or hi < 0 or hi >= H or wi < 0 or wi >= W:
                            for ci in range(Ci):
                                row[ci] = 0.0
                        else:
                            src = x + ((<Py_ssize_t>ti * H + hi) * W + wi) * Ci
                            for ci in range(Ci):
                                row[ci] = src[ci]
                        row += Ci


cdef void _col2im(const float* cols, float* gx, int to,
                  int T, int H, int W, int Ci, int Ho, int Wo,
                  int S, int P, int Q, int st, int sh, int sw,
                  int pt, int ph, int pw) noexcept nogil:
    cdef int ho, wo, s, p, q, ti, hi, wi, ci
    cdef Py_ssize_t K = <Py_ssize_t>S * P * Q * Ci
    cdef const float* row
    cdef float* dst
    for ho in range(Ho):
        for wo in range(Wo):
            row = cols + (<Py_ssize_t>ho * Wo + wo) * K
            for s in range(S):
                ti = to * st - pt + s
                for p in range(P):
                    hi = ho * sh - ph + p
                    for q in range(Q):
                        wi = wo * sw - pw + q
                        if not (ti < 0 or ti >= T or hi < 0 or hi >= H or wi < 0 or wi >= W):
                            dst = gx + ((<Py_ssize_t>ti * H + hi) * W + wi) * Ci
                            for ci in range(Ci):
                                dst[ci] += row[ci]
                        row += Ci


cdef class _Geom:
    cdef public int T, H, W, Ci, To, Ho, Wo, Co, S, P, Q, st, sh, sw, pt, ph, pw
    cdef public bint in_side


cdef void _scatter_taps(const float* z, float* y, _Geom g) noexcept nogil:
    # y[out, co] += z[in, (tap, co)] for every (out, tap) with a valid input position
    cdef int to, ho, wo, s, p, q, ti, hi, wi, co, tap
    cdef int nt = g.S * g.P * g.Q
    cdef const float* zr
    cdef float* yr
    for to in range(g.To):
        for ho in range(g.Ho):
            for wo in range(g.Wo):
                yr = y + ((<Py_ssize_t>to * g.Ho + ho) * g.Wo + wo) * g.Co
                tap = 0
                for s in range(g.S):
                    ti = to * g.st - g.pt + s
                    for p in range(g.P):
                        hi = ho * g.sh - g.ph + p
                        for q in range(g.Q):
                            wi = wo * g.sw - g.pw + q
                            if not (ti < 0 or ti >= g.T or hi < 0 or hi >= g.H or wi < 0 or wi >= g.W):
                                zr = z + (((<Py_ssize_t>ti * g.H + hi) * g.W + wi) * nt + tap) * g.Co
                                for co in range(g.Co):
                                    yr[co] += zr[co]
                            tap += 1


cdef void _gather_taps(const float* gy, float* cols, _Geom g) noexcept nogil:
    # cols[in, (tap, co)] = gy[out, co] where out * stride == in + pad - tap, else 0
    cdef int to, ho, wo, s, p, q, ti, hi, wi, n, co
    cdef int nt = g.S * g.P * g.Q
    cdef float* row
    cdef const float* src
    for ti in range(g.T):
        for hi in range(g.H):
            for wi in range(g.W):
                row = cols + ((<Py_ssize_t>ti * g.H + hi) * g.W + wi) * nt * g.Co
                for s in range(g.S):
                    n = ti + g.pt - s
                    to = n // g.st if n >= 0 and n % g.st == 0 else -1
                    if to >= g.To:
                        to = -1
                    for p in range(g.P):
                        n = hi + g.ph - p
                        ho = n // g.sh if n >= 0 and n % g.sh == 0 else -1
                        if ho >= g.Ho:
                            ho = -1
                        for q in range(g.Q):
                            n = wi + g.pw - q
                            wo = n // g.sw if n >= 0 and n % g.sw == 0 else -1
                            if wo >= g.Wo:
                                wo = -1
                            if to < 0 or ho < 0 or wo < 0:
                                for co in range(g.Co):
                                    row[co] = 0.0
                            else:
                                src = gy + ((<Py_ssize_t>to * g.Ho + ho) * g.Wo + wo) * g.Co
                                for co in range(g.Co):
                                    row[co] = src[co]
                            row += g.Co


# Two lowerings. "in_side": im2col over the input, one (Ho*Wo, taps*Ci) column
# buffer per output time-slice. "out_side": columns of width taps*Co indexed by
# input position; cheaper whenever Co is small relative to Ci.

cdef int _conv_fwd_one(const float* x, float* wm, float* y, _Geom g) noexcept nogil:
    cdef Py_ssize_t M, K
    cdef float* cols
    cdef int to
    if g.in_side:
        M = <Py_ssize_t>g.Ho * g.Wo
        K = <Py_ssize_t>g.S * g.P * g.Q * g.Ci
        cols = <float*>malloc(M * K * sizeof(float))
        if cols == NULL:
            return -1
        for to in range(g.To):
            _im2col(x, cols, to, g.T, g.H, g.W, g.Ci, g.Ho, g.Wo, g.S, g.P, g.Q,
                    g.st, g.sh, g.sw, g.pt, g.ph, g.pw)
            _mm(False, False, <int>M, g.Co, <int>K, cols, wm, y + to * M * g.Co, 0.0)
    else:
        M = <Py_ssize_t>g.T * g.H * g.W
        K = <Py_ssize_t>g.S * g.P * g.Q * g.Co
        cols = <float*>malloc(M * K * sizeof(float))
        if cols == NULL:
            return -1
        _mm(False, False, <int>M, <int>K, g.Ci, <float*>x, wm, cols, 0.0)
        _scatter_taps(cols, y, g)
    free(cols)
    return 0


cdef int _conv_bwd_input_one(float* gy, float* wm, float* gx, _Geom g) noexcept nogil:
    cdef Py_ssize_t M, K
    cdef float* cols
    cdef int to
    if g.in_side:
        M = <Py_ssize_t>g.Ho * g.Wo
        K = <Py_ssize_t>g.S * g.P * g.Q * g.Ci
        cols = <float*>malloc(M * K * sizeof(float))
        if cols == NULL:
            return -1
        for to in range(g.To):
            _mm(False, True, <int>M, <int>K, g.Co, gy + to * M * g.Co, wm, cols, 0.0)
            _col2im(cols, gx, to, g.T, g.H, g.W, g.Ci, g.Ho, g.Wo, g.S, g.P, g.Q,
                    g.st, g.sh, g.sw, g.pt, g.ph, g.pw)
    else:
        M = <Py_ssize_t>g.T * g.H * g.W
        K = <Py_ssize_t>g.S * g.P * g.Q * g.Co
        cols = <float*>malloc(M * K * sizeof(float))
        if cols == NULL:
            return -1
        _gather_taps(gy, cols, g)
        _mm(False, True, <int>M, g.Ci, <int>K, cols, wm, gx, 0.0)
    free(cols)
    return 0


cdef int _conv_bwd_weight_one(const float* x, float* gy, double* gw, _Geom g) noexcept nogil:
    cdef Py_ssize_t M, K
    cdef Py_ssize_t n = <Py_ssize_t>g.S * g.P * g.Q * g.Ci * g.Co, k
    cdef float* cols
    cdef float* part = <float*>malloc(n * sizeof(float))
    cdef int to
    if part == NULL:
        return -1
    if g.in_side:
        M = <Py_ssize_t>g.Ho * g.Wo
        K = <Py_ssize_t>g.S * g.P * g.Q * g.Ci
        cols = <float*>malloc(M * K * sizeof(float))
        if cols == NULL:
            free(part)
            return -1
        for to in range(g.To):
            _im2col(x, cols, to, g.T, g.H, g.W, g.Ci, g.Ho, g.Wo, g.S, g.P, g.Q,
                    g.st, g.sh, g.sw, g.pt, g.ph, g.pw)
            _mm(True, False, <int>K, g.Co, <int>M, cols, gy + to * M * g.Co, part, 0.0)
            for k in range(n):
                gw[k] += part[k]
    else:
        M = <Py_ssize_t>g.T * g.H * g.W
        K = <Py_ssize_t>g.S * g.P * g.Q * g.Co
        cols = <float*>malloc(M * K * sizeof(float))
        if cols == NULL:
            free(part)
            return -1
        _gather_taps(gy, cols, g)
        _mm(True, False, g.Ci, <int>K, <int>M, <float*>x, cols, part, 0.0)
        for k in range(n):
            gw[k] += part[k]
    free(cols)
    free(part)
    return 0


cdef _Geom _geom(in_shape, Ci, out_shape, Co, ksize, stride, pad_lo):
    cdef _Geom g = _Geom()
    g.T, g.H, g.W = in_shape
    g.Ci = Ci
    g.To, g.Ho, g.Wo = out_shape
    g.Co = Co
    g.S, g.P, g.Q = ksize
    g.st, g.sh, g.sw = stride
    g.pt, g.ph, g.pw = pad_lo
    n_in = g.T * g.H * g.W
    n_out = g.To * g.Ho * g.Wo
    g.in_side = n_out * g.Ci <= n_in * g.Co
    return g


def _weight_matrix(w, in_side):
    # in_side: (S*P*Q*Ci, Co) rows (s, p, q, ci); out_side: (Ci, S*P*Q*Co) cols (s, p, q, co)
    Co, Ci = w.shape[:2]
    if in_side:
        wm = np.transpose(w, (2, 3, 4, 1, 0)).reshape(-1, Co)
    else:
        wm = np.transpose(w, (1, 2, 3, 4, 0)).reshape(Ci, -1)
    return np.ascontiguousarray(wm, dtype=np.float32)


def conv3d_fwd(x, w, stride, pad_lo, out_shape, int nthreads=1):
    """y[b, o, co] = sum over taps and ci of x[b, i, ci] * w[co, ci, tap]."""
    cdef float[:, :, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float32)
    cdef int B = xv.shape[0]
    cdef _Geom g = _geom(x.shape[1:4], x.shape[4], out_shape, w.shape[0], w.shape[2:], stride, pad_lo)
    cdef float[:, ::1] wm = _weight_matrix(w, g.in_side)
    y = np.zeros((B, g.To, g.Ho, g.Wo, g.Co), dtype=np.float32)
    cdef float[:, :, :, :, ::1] yv = y
    cdef int b, err = 0
    for b in prange(B, nogil=True, num_threads=nthreads, schedule="static"):
        err += _conv_fwd_one(&xv[b, 0, 0, 0, 0], &wm[0, 0], &yv[b, 0, 0, 0, 0], g)
    if err:
        raise MemoryError("conv3d_fwd: column buffer allocation failed")
    return y


def conv3d_bwd_input(gy, w, stride, pad_lo, in_shape, int nthreads=1):
    """Adjoint of conv3d_fwd with respect to its input."""
    cdef float[:, :, :, :, ::1] gv = np.ascontiguousarray(gy, dtype=np.float32)
    cdef int B = gv.shape[0]
    cdef _Geom g = _geom(in_shape, w.shape[1], gy.shape[1:4], w.shape[0], w.shape[2:], stride, pad_lo)
    cdef float[:, ::1] wm = _weight_matrix(w, g.in_side)
    gx = np.zeros((B, g.T, g.H, g.W, g.Ci), dtype=np.float32)
    cdef float[:, :, :, :, ::1] xv = gx
    cdef int b, err = 0
    for b in prange(B, nogil=True, num_threads=nthreads, schedule="static"):
        err += _conv_bwd_input_one(&gv[b, 0, 0, 0, 0], &wm[0, 0], &xv[b, 0, 0, 0, 0], g)
    if err:
        raise MemoryError("conv3d_bwd_input: column buffer allocation failed")
    return gx


def conv3d_bwd_weight(x, gy, ksize, stride, pad_lo, int nthreads=1):
    """Gradient of conv3d_fwd with respect to w, shape (Co, Ci, S, P, Q)."""
    cdef float[:, :, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float32)
    cdef float[:, :, :, :, ::1] gv = np.ascontiguousarray(gy, dtype=np.float32)
    cdef int B = xv.shape[0]
    cdef _Geom g = _geom(x.shape[1:4], x.shape[4], gy.shape[1:4], gy.shape[4], ksize, stride, pad_lo)
    cdef Py_ssize_t K = <Py_ssize_t>g.S * g.P * g.Q * g.Ci * g.Co
    part = np.zeros((max(B, 1), K), dtype=np.float64)
    cdef double[:, ::1] pv = part
    cdef int b, err = 0
    for b in prange(B, nogil=True, num_threads=nthreads, schedule="static"):
        err += _conv_bwd_weight_one(&xv[b, 0, 0, 0, 0], &gv[b, 0, 0, 0, 0], &pv[b, 0], g)
    if err:
        raise MemoryError("conv3d_bwd_weight: column buffer allocation failed")
    total = np.zeros(K, dtype=np.float64)
    for b in range(B):
        total += part[b]
    if g.in_side:
        gw = total.reshape(g.S, g.P, g.Q, g.Ci, g.Co).transpose(4, 3, 0, 1, 2)
    else:
        gw = total.reshape(g.Ci, g.S, g.P, g.Q, g.Co).transpose(4, 0, 1, 2, 3)
    return np.ascontiguousarray(gw, dtype=np.float32)


def maxpool3d_fwd(x, window, out_shape):
    """Non-overlapping max pool; returns (y, argmax) with argmax a flat per-sample index."""
    cdef float[:, :, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float32)
    cdef int B = xv.shape[0], T = xv.shape[1], H = xv.shape[2], W = xv.shape[3], C = xv.shape[4]
    cdef int kt = window[0], kh = window[1], kw = window[2]
    cdef int To = out_shape[0], Ho = out_shape[1], Wo = out_shape[2]
    y = np.empty((B, To, Ho, Wo, C), dtype=np.float32)
    idx = np.empty((B, To, Ho, Wo, C), dtype=np.int64)
    cdef float[:, :, :, :, ::1] yv = y
    cdef i64[:, :, :, :, ::1] iv = idx
    cdef int b, to, ho, wo, c, a, d, e, ti, hi, wi
    cdef float best, v
    cdef i64 bi
    with nogil:
        for b in range(B):
            for to in range(To):
                for ho in range(Ho):
                    for wo in range(Wo):
                        for c in range(C):
                            bi = -1
                            best = 0.0
                            for a in range(kt):
                                ti = to * kt + a
                                if ti >= T:
                                    break
                                for d in range(kh):
                                    hi = ho * kh + d
                                    if hi >= H:
                                        break
                                    for e in range(kw):
                                        wi = wo * kw + e
                                        if wi >= W:
                                            break
                                        v = xv[b, ti, hi, wi, c]
                                        if bi < 0 or v > best:
                                            best = v
                                            bi = ((<i64>ti * H + hi) * W + wi) * C + c
                            yv[b, to, ho, wo, c] = best
                            iv[b, to, ho, wo, c] = bi
    return y, idx


def maxpool3d_bwd(gy, idx, in_shape):
    """Scatter gy to the cached argmax positions."""
    cdef float[:, :, :, :, ::1] gv = np.ascontiguousarray(gy, dtype=np.float32)
    cdef i64[:, :, :, :, ::1] iv = np.ascontiguousarray(idx, dtype=np.int64)
    cdef int B = gv.shape[0], To = gv.shape[1], Ho = gv.shape[2], Wo = gv.shape[3], C = gv.shape[4]
    gx = np.zeros((B,) + tuple(in_shape), dtype=np.float32)
    cdef float[:, ::1] xv = gx.reshape(B, -1)
    cdef int b, to, ho, wo, c
    with nogil:
        for b in range(B):
            for to in range(To):
                for ho in range(Ho):
                    for wo in range(Wo):
                        for c in range(C):
                            xv[b, iv[b, to, ho, wo, c]] += gv[b, to, ho, wo, c]
    return gx
