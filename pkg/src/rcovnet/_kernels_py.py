"""Pure numpy implementations of the numerical kernels.

Mirrors the API of the compiled ``_kernels`` extension one-for-one so that
``rcovnet._backend`` can swap them transparently.  Every function takes and
returns C-contiguous float64 arrays.
"""
import numpy as np
from scipy.special import expit
from numpy.lib.stride_tricks import sliding_window_view

NAME = "python"


def set_num_threads(n):
    """No-op; numpy parallelism is governed by the BLAS runtime."""
    return None


def _patches(x, kh, kw):
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    return sliding_window_view(xp, (kh, kw), axis=(2, 3))


def conv2d_forward(x, w):
    """Same-padded cross-correlation.

    x : (B, C, H, W), w : (O, C, kh, kw) -> (B, O, H, W)
    """
    kh, kw = w.shape[2], w.shape[3]
    if kh == 1 and kw == 1:
        out = np.tensordot(w[:, :, 0, 0], x, axes=([1], [1]))
        return np.ascontiguousarray(out.transpose(1, 0, 2, 3))
    p = _patches(x, kh, kw)
    out = np.tensordot(p, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_backward_input(gy, w):
    """Gradient of ``conv2d_forward`` with respect to its input."""
    wt = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return conv2d_forward(gy, wt)


def conv2d_backward_weight(x, gy, kh, kw):
    """Gradient of ``conv2d_forward`` with respect to the kernel."""
    if kh == 1 and kw == 1:
        g = np.tensordot(gy, x, axes=([0, 2, 3], [0, 2, 3]))
        return np.ascontiguousarray(g[:, :, None, None])
    p = _patches(x, kh, kw)
    return np.ascontiguousarray(np.tensordot(gy, p, axes=([0, 2, 3], [0, 2, 3])))


def cholesky(a, rel_tol):
    """Lower Cholesky factor.

    Returns ``(L, bad)`` where ``bad`` is the index of the first pivot that is
    not above ``rel_tol * max(diag(a))``, or -1 on success.
    """
    n = a.shape[0]
    L = np.zeros_like(a)
    floor = rel_tol * max(float(np.max(np.diag(a))), 0.0)
    for j in range(n):
        row = L[j, :j]
        piv = a[j, j] - row @ row
        if not piv > floor or piv <= 0.0:
            return L, j
        ljj = np.sqrt(piv)
        L[j, j] = ljj
        if j + 1 < n:
            L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ row) / ljj
    return L, -1


def jacobi_eig(a, rel_tol, max_sweeps):
    """Cyclic Jacobi eigensolver for a symmetric matrix.

    Returns ``(values, vectors, sweeps, converged)`` with unsorted values.
    """
    A = np.array(a, dtype=np.float64, copy=True)
    n = A.shape[0]
    V = np.eye(n)
    target = rel_tol * np.sqrt(np.sum(A * A))
    sweeps = 0
    for sweeps in range(max_sweeps + 1):
        off_diag = A * A
        off_diag[np.diag_indices(n)] = 0.0
        off = np.sqrt(np.sum(off_diag))
        if off <= target:
            return np.diag(A).copy(), V, sweeps, True
        if sweeps == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                app, aqq = A[p, p], A[q, q]
                theta = (aqq - app) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                colp = A[:, p].copy()
                colq = A[:, q].copy()
                A[:, p] = c * colp - s * colq
                A[:, q] = s * colp + c * colq
                A[p, :] = A[:, p]
                A[q, :] = A[:, q]
                A[p, p] = app - t * apq
                A[q, q] = aqq + t * apq
                A[p, q] = 0.0
                A[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    return np.diag(A).copy(), V, sweeps, False


def dcaw_filter(sigma, cc, a, b, s_init):
    """Diagonal BEKK scale recursion.

    sigma : (T, r, r) observed matrices
    cc : (r, r) intercept C C'
    a : (q, r) diagonals of A_1..A_q
    b : (p, r) diagonals of B_1..B_p
    s_init : (n0, r, r) scales for the first n0 = max(p, q) days

    Returns S with S[t] = cc + sum_i b_i b_i' * S[t-i] + sum_j a_j a_j' * sigma[t-j].
    """
    T, r = sigma.shape[0], sigma.shape[1]
    q, p = a.shape[0], b.shape[0]
    n0 = s_init.shape[0]
    S = np.empty((T, r, r))
    S[:n0] = s_init[:T]
    aa = a[:, :, None] * a[:, None, :]
    bb = b[:, :, None] * b[:, None, :]
    for t in range(n0, T):
        st = cc.copy()
        for i in range(p):
            st += bb[i] * S[t - 1 - i]
        for j in range(q):
            st += aa[j] * sigma[t - 1 - j]
        S[t] = st
    return S


def lstm_gates_forward(z, c_prev, peep, use_peep):
    """ConvLSTM gate nonlinearities on flattened maps.

    z : (B, 4H, S) gate pre-activations in the order i, f, g, o
    c_prev : (B, H, S) previous cell state
    peep : (3, H, S) peephole maps for i, f, o, read only when ``use_peep``

    Returns ``(act, c, tanh_c, h)`` with ``act`` the activated gates.
    """
    H = c_prev.shape[1]
    zi, zf, zg, zo = z[:, :H], z[:, H:2 * H], z[:, 2 * H:3 * H], z[:, 3 * H:]
    if use_peep:
        zi = zi + peep[0] * c_prev
        zf = zf + peep[1] * c_prev
    act = np.empty_like(z)
    i = expit(zi, out=act[:, :H])
    f = expit(zf, out=act[:, H:2 * H])
    g = np.tanh(zg, out=act[:, 2 * H:3 * H])
    c = f * c_prev + i * g
    if use_peep:
        zo = zo + peep[2] * c
    o = expit(zo, out=act[:, 3 * H:])
    tanh_c = np.tanh(c)
    return act, c, tanh_c, o * tanh_c


def lstm_gates_backward(dh, dc, act, c_prev, tanh_c, peep, gpeep, use_peep):
    """Reverse of ``lstm_gates_forward``.

    ``dc`` is the gradient arriving at the new cell state from later steps.
    Returns ``(dz, dc_prev)``; peephole gradients accumulate into ``gpeep``.
    """
    H = c_prev.shape[1]
    i, f, g, o = act[:, :H], act[:, H:2 * H], act[:, 2 * H:3 * H], act[:, 3 * H:]
    dz = np.empty_like(act)
    dzo = np.multiply(dh * tanh_c, o * (1.0 - o), out=dz[:, 3 * H:])
    dct = dc + dh * o * (1.0 - tanh_c * tanh_c)
    if use_peep:
        dct += dzo * peep[2]
        gpeep[2] += (dzo * (f * c_prev + i * g)).sum(axis=0)
    dzi = np.multiply(dct * g, i * (1.0 - i), out=dz[:, :H])
    dzf = np.multiply(dct * c_prev, f * (1.0 - f), out=dz[:, H:2 * H])
    np.multiply(dct * i, 1.0 - g * g, out=dz[:, 2 * H:3 * H])
    dcp = dct * f
    if use_peep:
        dcp += dzi * peep[0] + dzf * peep[1]
        gpeep[0] += (dzi * c_prev).sum(axis=0)
        gpeep[1] += (dzf * c_prev).sum(axis=0)
    return dz, dcp
