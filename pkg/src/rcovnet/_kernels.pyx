# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled numerical kernels.

Same API and semantics as ``rcovnet._kernels_py``.  Convolutions are im2col
plus a direct BLAS ``dgemm`` per batch item, so reductions over the batch run
in a fixed order.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, sqrt, tanh
from libc.stdlib cimport malloc, free
from libc.string cimport memset
from scipy.linalg.cython_blas cimport dgemm

cimport openmp

cnp.import_array()

NAME = "cython"


def set_num_threads(int n):
    if n > 0:
        openmp.omp_set_num_threads(n)


def get_max_threads():
    return openmp.omp_get_max_threads()


cdef inline int _imax(int a, int b) nogil:
    return a if a > b else b


cdef inline int _imin(int a, int b) nogil:
    return a if a < b else b


cdef void _gemm_rm(char ta, char tb, int M, int N, int K, double* A, int lda,
                   double* B, int ldb, double beta, double* C) noexcept nogil:
    # Row-major C[M,N] = op(A) @ op(B) + beta*C, via column-major BLAS on the transposes.
    cdef double one = 1.0
    cdef int ldc = N
    dgemm(&tb, &ta, &N, &M, &K, &one, B, &ldb, A, &lda, &beta, C, &ldc)


cdef void _im2col(const double* x, int C, int H, int W, int KH, int KW, double* col) noexcept nogil:
    # col[(c, u, v), (i, j)] = x[c, i + u - KH//2, j + v - KW//2], zero outside.
    cdef int ph = KH // 2, pw = KW // 2
    cdef int c, u, v, i, j, di, dj, i0, i1, j0, j1
    cdef double* row
    cdef const double* src
    for c in range(C):
        for u in range(KH):
            di = u - ph
            i0 = _imax(0, -di)
            i1 = _imin(H, H - di)
            for v in range(KW):
                dj = v - pw
                j0 = _imax(0, -dj)
                j1 = _imin(W, W - dj)
                row = col + ((c * KH + u) * KW + v) * H * W
                memset(row, 0, H * W * sizeof(double))
                for i in range(i0, i1):
                    src = x + (c * H + i + di) * W + dj
                    for j in range(j0, j1):
                        row[i * W + j] = src[j]


cdef void _col2im_add(const double* col, int C, int H, int W, int KH, int KW, double* x) noexcept nogil:
    cdef int ph = KH // 2, pw = KW // 2
    cdef int c, u, v, i, j, di, dj, i0, i1, j0, j1
    cdef const double* row
    cdef double* dst
    for c in range(C):
        for u in range(KH):
            di = u - ph
            i0 = _imax(0, -di)
            i1 = _imin(H, H - di)
            for v in range(KW):
                dj = v - pw
                j0 = _imax(0, -dj)
                j1 = _imin(W, W - dj)
                row = col + ((c * KH + u) * KW + v) * H * W
                for i in range(i0, i1):
                    dst = x + (c * H + i + di) * W + dj
                    for j in range(j0, j1):
                        dst[j] += row[i * W + j]


def conv2d_forward(const double[:, :, :, ::1] x, const double[:, :, :, ::1] w):
    cdef int B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef int O = w.shape[0], KH = w.shape[2], KW = w.shape[3]
    if w.shape[1] != C:
        raise ValueError("channel mismatch")
    cdef int HW = H * W, CK = C * KH * KW
    out_arr = np.empty((B, O, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef double* wp = <double*>&w[0, 0, 0, 0]
    cdef double* xp = <double*>&x[0, 0, 0, 0]
    cdef double* op = &out[0, 0, 0, 0]
    cdef int b
    cdef double* col
    if KH == 1 and KW == 1:
        for b in range(B):
            _gemm_rm(b'N', b'N', O, HW, C, wp, C, xp + b * C * HW, HW, 0.0, op + b * O * HW)
        return out_arr
    col = <double*>malloc(CK * HW * sizeof(double))
    if col == NULL:
        raise MemoryError()
    try:
        with nogil:
            for b in range(B):
                _im2col(xp + b * C * HW, C, H, W, KH, KW, col)
                _gemm_rm(b'N', b'N', O, HW, CK, wp, CK, col, HW, 0.0, op + b * O * HW)
    finally:
        free(col)
    return out_arr


def conv2d_backward_input(const double[:, :, :, ::1] gy, const double[:, :, :, ::1] w):
    cdef int B = gy.shape[0], O = gy.shape[1], H = gy.shape[2], W = gy.shape[3]
    cdef int C = w.shape[1], KH = w.shape[2], KW = w.shape[3]
    if w.shape[0] != O:
        raise ValueError("channel mismatch")
    cdef int HW = H * W, CK = C * KH * KW
    gx_arr = np.zeros((B, C, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double* wp = <double*>&w[0, 0, 0, 0]
    cdef double* gp = <double*>&gy[0, 0, 0, 0]
    cdef double* xp = &gx[0, 0, 0, 0]
    cdef int b
    cdef double* col
    if KH == 1 and KW == 1:
        for b in range(B):
            _gemm_rm(b'T', b'N', C, HW, O, wp, C, gp + b * O * HW, HW, 0.0, xp + b * C * HW)
        return gx_arr
    col = <double*>malloc(CK * HW * sizeof(double))
    if col == NULL:
        raise MemoryError()
    try:
        with nogil:
            for b in range(B):
                _gemm_rm(b'T', b'N', CK, HW, O, wp, CK, gp + b * O * HW, HW, 0.0, col)
                _col2im_add(col, C, H, W, KH, KW, xp + b * C * HW)
    finally:
        free(col)
    return gx_arr


def conv2d_backward_weight(const double[:, :, :, ::1] x, const double[:, :, :, ::1] gy,
                           int kh, int kw):
    cdef int B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef int O = gy.shape[1]
    if gy.shape[0] != B or gy.shape[2] != H or gy.shape[3] != W:
        raise ValueError("shape mismatch")
    cdef int HW = H * W, CK = C * kh * kw
    gw_arr = np.zeros((O, C, kh, kw), dtype=np.float64)
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef double* xp = <double*>&x[0, 0, 0, 0]
    cdef double* gp = <double*>&gy[0, 0, 0, 0]
    cdef double* wp = &gw[0, 0, 0, 0]
    cdef int b
    cdef double* col
    if kh == 1 and kw == 1:
        for b in range(B):
            _gemm_rm(b'N', b'T', O, C, HW, gp + b * O * HW, HW, xp + b * C * HW, HW, 1.0, wp)
        return gw_arr
    col = <double*>malloc(CK * HW * sizeof(double))
    if col == NULL:
        raise MemoryError()
    try:
        with nogil:
            for b in range(B):
                _im2col(xp + b * C * HW, C, H, W, kh, kw, col)
                _gemm_rm(b'N', b'T', O, CK, HW, gp + b * O * HW, HW, col, HW, 1.0, wp)
    finally:
        free(col)
    return gw_arr


def cholesky(const double[:, ::1] a, double rel_tol):
    cdef Py_ssize_t n = a.shape[0], i, j, k
    L_arr = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] L = L_arr
    cdef double dmax = 0.0, floor, piv, s, ljj
    for i in range(n):
        if a[i, i] > dmax:
            dmax = a[i, i]
    floor = rel_tol * dmax
    for j in range(n):
        piv = a[j, j]
        for k in range(j):
            piv -= L[j, k] * L[j, k]
        if not piv > floor or piv <= 0.0:
            return L_arr, j
        ljj = sqrt(piv)
        L[j, j] = ljj
        for i in range(j + 1, n):
            s = a[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / ljj
    return L_arr, -1


def jacobi_eig(const double[:, ::1] a, double rel_tol, int max_sweeps):
    cdef Py_ssize_t n = a.shape[0], p, q, k
    A_arr = np.array(a, dtype=np.float64, copy=True)
    V_arr = np.eye(n, dtype=np.float64)
    cdef double[:, ::1] A = A_arr
    cdef double[:, ::1] V = V_arr
    cdef double total = 0.0, off, target, apq, app, aqq, theta, t, c, s, xp, xq
    cdef int sweeps = 0
    cdef bint converged = False
    for p in range(n):
        for q in range(n):
            total += A[p, q] * A[p, q]
    target = rel_tol * sqrt(total)
    while True:
        off = 0.0
        for p in range(n):
            for q in range(n):
                if p != q:
                    off += A[p, q] * A[p, q]
        if sqrt(off) <= target:
            converged = True
            break
        if sweeps == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                app = A[p, p]
                aqq = A[q, q]
                theta = (aqq - app) / (2.0 * apq)
                if fabs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = 1.0 / (fabs(theta) + sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    xp = A[k, p]
                    xq = A[k, q]
                    A[k, p] = c * xp - s * xq
                    A[k, q] = s * xp + c * xq
                for k in range(n):
                    A[p, k] = A[k, p]
                    A[q, k] = A[k, q]
                A[p, p] = app - t * apq
                A[q, q] = aqq + t * apq
                A[p, q] = 0.0
                A[q, p] = 0.0
                for k in range(n):
                    xp = V[k, p]
                    xq = V[k, q]
                    V[k, p] = c * xp - s * xq
                    V[k, q] = s * xp + c * xq
        sweeps += 1
    return np.diag(A_arr).copy(), V_arr, sweeps, bool(converged)


def dcaw_filter(const double[:, :, ::1] sigma, const double[:, ::1] cc,
                const double[:, ::1] a, const double[:, ::1] b,
                const double[:, :, ::1] s_init):
    cdef Py_ssize_t T = sigma.shape[0], r = sigma.shape[1]
    cdef Py_ssize_t q = a.shape[0], p = b.shape[0], n0 = s_init.shape[0]
    cdef Py_ssize_t t, i, j, k
    cdef double acc
    S_arr = np.empty((T, r, r), dtype=np.float64)
    cdef double[:, :, ::1] S = S_arr
    for t in range(min(n0, T)):
        for i in range(r):
            for j in range(r):
                S[t, i, j] = s_init[t, i, j]
    for t in range(n0, T):
        for i in range(r):
            for j in range(r):
                acc = cc[i, j]
                for k in range(p):
                    acc = acc + b[k, i] * b[k, j] * S[t - 1 - k, i, j]
                for k in range(q):
                    acc = acc + a[k, i] * a[k, j] * sigma[t - 1 - k, i, j]
                S[t, i, j] = acc
    return S_arr


def lstm_gates_forward(const double[:, :, ::1] z, const double[:, :, ::1] c_prev,
                       const double[:, :, ::1] peep, bint use_peep):
    # Transcendentals go through numpy's vectorised tanh, which beats scalar
    # libm calls; sigmoid(x) = (1 + tanh(x / 2)) / 2.  The loops fuse the rest.
    cdef Py_ssize_t B = c_prev.shape[0], H = c_prev.shape[1], S = c_prev.shape[2]
    cdef Py_ssize_t b, h, s, n
    cdef double i, f, g, c
    t_arr = np.empty((B, 4 * H, S), dtype=np.float64)
    cdef double[:, :, ::1] t = t_arr
    with nogil:
        for b in range(B):
            for n in range(4 * H):
                if 2 * H <= n < 3 * H:
                    for s in range(S):
                        t[b, n, s] = z[b, n, s]
                elif use_peep and n < 2 * H:
                    h = n % H
                    for s in range(S):
                        t[b, n, s] = 0.5 * (z[b, n, s] + peep[n // H, h, s] * c_prev[b, h, s])
                else:
                    for s in range(S):
                        t[b, n, s] = 0.5 * z[b, n, s]
    np.tanh(t_arr[:, :3 * H], out=t_arr[:, :3 * H])
    c_arr = np.empty((B, H, S), dtype=np.float64)
    cdef double[:, :, ::1] cn = c_arr
    with nogil:
        for b in range(B):
            for h in range(H):
                for s in range(S):
                    i = 0.5 + 0.5 * t[b, h, s]
                    f = 0.5 + 0.5 * t[b, H + h, s]
                    g = t[b, 2 * H + h, s]
                    c = f * c_prev[b, h, s] + i * g
                    t[b, h, s] = i
                    t[b, H + h, s] = f
                    cn[b, h, s] = c
                    if use_peep:
                        t[b, 3 * H + h, s] += 0.5 * peep[2, h, s] * c
    o_arr = t_arr[:, 3 * H:]
    np.tanh(o_arr, out=o_arr)
    o_arr *= 0.5
    o_arr += 0.5
    tc_arr = np.tanh(c_arr)
    return t_arr, c_arr, tc_arr, o_arr * tc_arr


def lstm_gates_backward(const double[:, :, ::1] dh, const double[:, :, ::1] dc,
                        const double[:, :, ::1] act, const double[:, :, ::1] c_prev,
                        const double[:, :, ::1] tanh_c, const double[:, :, ::1] peep,
                        double[:, :, ::1] gpeep, bint use_peep):
    cdef Py_ssize_t B = c_prev.shape[0], H = c_prev.shape[1], S = c_prev.shape[2]
    cdef Py_ssize_t b, h, s
    cdef double i, f, g, o, tc, cp, dzo, dct, dzi, dzf
    dz_arr = np.empty((B, 4 * H, S), dtype=np.float64)
    dcp_arr = np.empty((B, H, S), dtype=np.float64)
    cdef double[:, :, ::1] dz = dz_arr, dcp = dcp_arr
    with nogil:
        for b in range(B):
            for h in range(H):
                for s in range(S):
                    i = act[b, h, s]
                    f = act[b, H + h, s]
                    g = act[b, 2 * H + h, s]
                    o = act[b, 3 * H + h, s]
                    tc = tanh_c[b, h, s]
                    cp = c_prev[b, h, s]
                    dzo = dh[b, h, s] * tc * o * (1.0 - o)
                    dct = dc[b, h, s] + dh[b, h, s] * o * (1.0 - tc * tc)
                    if use_peep:
                        dct = dct + dzo * peep[2, h, s]
                        gpeep[2, h, s] += dzo * (f * cp + i * g)
                    dzi = dct * g * i * (1.0 - i)
                    dzf = dct * cp * f * (1.0 - f)
                    dz[b, h, s] = dzi
                    dz[b, H + h, s] = dzf
                    dz[b, 2 * H + h, s] = dct * i * (1.0 - g * g)
                    dz[b, 3 * H + h, s] = dzo
                    dct = dct * f
                    if use_peep:
                        dct = dct + dzi * peep[0, h, s] + dzf * peep[1, h, s]
                        gpeep[0, h, s] += dzi * cp
                        gpeep[1, h, s] += dzf * cp
                    dcp[b, h, s] = dct
    return dz_arr, dcp_arr
