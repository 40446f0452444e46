# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled batch kernels for the small dense linear algebra on the hot path.

Every function here has a numpy twin in :mod:`cov2pose._fallback` with the
same signature and semantics. Stacked inputs are ``(B, n, n)`` float64.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, exp, hypot
from scipy.linalg.cython_blas cimport dgemm
from scipy.linalg.cython_lapack cimport dsyevd

cnp.import_array()

# Cyclic Jacobi beats a LAPACK call on tiny matrices only.
JACOBI_MAX_N = 6


cdef void _jacobi(double[:, ::1] a, double[:, ::1] v, double[::1] w, int n) noexcept nogil:
    cdef int i, j, k, p, q, sweep
    cdef double off, scale, apq, app, aqq, theta, t, c, s, tau, g, h
    for i in range(n):
        for j in range(n):
            v[i, j] = 1.0 if i == j else 0.0
    for sweep in range(100):
        off = 0.0
        scale = 0.0
        for p in range(n):
            scale += a[p, p] * a[p, p]
            for q in range(p + 1, n):
                off += a[p, q] * a[p, q]
        if off <= 1e-30 * (scale + off) or off == 0.0:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                theta = (aqq - app) / (2.0 * apq)
                t = 1.0 / (fabs(theta) + hypot(theta, 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                tau = s / (1.0 + c)
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    if k != p and k != q:
                        g = a[k, p]
                        h = a[k, q]
                        a[k, p] = g - s * (h + g * tau)
                        a[k, q] = h + s * (g - h * tau)
                        a[p, k] = a[k, p]
                        a[q, k] = a[k, q]
                for k in range(n):
                    g = v[k, p]
                    h = v[k, q]
                    v[k, p] = g - s * (h + g * tau)
                    v[k, q] = h + s * (g - h * tau)
    for i in range(n):
        w[i] = a[i, i]


def sym_eig_batch(cnp.ndarray a_in):
    """Eigenpairs of a stack of symmetric matrices, eigenvalues descending.

    Returns ``(lam, U)`` with ``lam`` of shape ``(B, n)`` and ``U`` of shape
    ``(B, n, n)`` holding eigenvectors in columns.
    """
    cdef int B = a_in.shape[0]
    cdef int n = a_in.shape[1]
    if n > JACOBI_MAX_N:
        return sym_eig_lapack_batch(a_in)
    cdef double[:, :, ::1] src = np.ascontiguousarray(a_in, dtype=np.float64)
    lam_out = np.empty((B, n), dtype=np.float64)
    u_out = np.empty((B, n, n), dtype=np.float64)
    cdef double[:, ::1] lam_v = lam_out
    cdef double[:, :, ::1] u_v = u_out
    work = np.empty((n, n), dtype=np.float64)
    vec = np.empty((n, n), dtype=np.float64)
    w = np.empty(n, dtype=np.float64)
    order = np.empty(n, dtype=np.intp)
    cdef double[:, ::1] a = work
    cdef double[:, ::1] v = vec
    cdef double[::1] wv = w
    cdef Py_ssize_t[::1] ov = order
    cdef int b, i, j, k, best
    with nogil:
        for b in range(B):
            for i in range(n):
                for j in range(n):
                    a[i, j] = 0.5 * (src[b, i, j] + src[b, j, i])
            _jacobi(a, v, wv, n)
            # selection sort on indices, descending; n is small
            for i in range(n):
                ov[i] = i
            for i in range(n):
                best = i
                for j in range(i + 1, n):
                    if wv[ov[j]] > wv[ov[best]]:
                        best = j
                k = ov[i]
                ov[i] = ov[best]
                ov[best] = k
            for j in range(n):
                lam_v[b, j] = wv[ov[j]]
                for i in range(n):
                    u_v[b, i, j] = v[i, ov[j]]
    return lam_out, u_out


def sym_eig_lapack_batch(cnp.ndarray a_in):
    """Same contract as :func:`sym_eig_batch`, one ``dsyevd`` call per matrix."""
    cdef int B = a_in.shape[0]
    cdef int n = a_in.shape[1]
    sym = 0.5 * (a_in + np.swapaxes(a_in, -1, -2))
    # column-major input for LAPACK: the symmetric matrix is its own transpose
    cdef double[:, :, ::1] u = np.array(sym, dtype=np.float64, order="C", copy=True)
    lam_asc = np.empty((B, n), dtype=np.float64)
    cdef double[:, ::1] w = lam_asc
    cdef int lwork = 1 + 6 * n + 2 * n * n
    cdef int liwork = 3 + 5 * n
    work_arr = np.empty(lwork, dtype=np.float64)
    iwork_arr = np.empty(liwork, dtype=np.int32)
    cdef double[::1] work = work_arr
    cdef int[::1] iwork = iwork_arr
    cdef char jobz = b'V'
    cdef char uplo = b'L'
    cdef int info = 0
    cdef int b
    with nogil:
        for b in range(B):
            dsyevd(&jobz, &uplo, &n, &u[b, 0, 0], &n, &w[b, 0], &work[0], &lwork, &iwork[0], &liwork, &info)
            if info != 0:
                break
    if info != 0:
        raise np.linalg.LinAlgError("dsyevd failed with info=%d" % info)
    # LAPACK wrote eigenvectors as columns of a column-major array, i.e. rows here
    U = np.swapaxes(np.asarray(u), -1, -2)[:, :, ::-1]
    return np.ascontiguousarray(lam_asc[:, ::-1]), np.ascontiguousarray(U)


def cholesky_batch(cnp.ndarray a_in):
    """Lower Cholesky factors of a stack of SPD matrices.

    Returns ``(L, bad)`` where ``bad`` is the index of the first matrix with a
    non-positive pivot, or -1.
    """
    cdef double[:, :, ::1] a = np.ascontiguousarray(a_in, dtype=np.float64)
    cdef int B = a.shape[0]
    cdef int n = a.shape[1]
    out = np.zeros((B, n, n), dtype=np.float64)
    cdef double[:, :, ::1] L = out
    cdef int b, i, j, k
    cdef int bad = -1
    cdef double s
    with nogil:
        for b in range(B):
            for j in range(n):
                s = a[b, j, j]
                for k in range(j):
                    s -= L[b, j, k] * L[b, j, k]
                if not s > 0.0:
                    bad = b
                    break
                L[b, j, j] = sqrt(s)
                for i in range(j + 1, n):
                    s = a[b, i, j]
                    for k in range(j):
                        s -= L[b, i, k] * L[b, j, k]
                    L[b, i, j] = s / L[b, j, j]
            if bad >= 0:
                break
    return out, bad


def qr_reduced(cnp.ndarray a_in):
    """Householder reduced QR with nonnegative diagonal on the R factor.

    Returns ``(Q, R, rmin)`` where ``rmin`` is the smallest ``|R_ii|`` so the
    caller can decide on rank deficiency.
    """
    cdef double[:, ::1] r = np.array(a_in, dtype=np.float64, order="C", copy=True)
    cdef int n = r.shape[0]
    cdef int m = r.shape[1]
    hv = np.zeros((m, n), dtype=np.float64)
    cdef double[:, ::1] h = hv
    betas = np.zeros(m, dtype=np.float64)
    cdef double[::1] beta = betas
    qv = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] q = qv
    cdef int i, j, k
    cdef double norm, alpha, dot, sgn, rmin
    with nogil:
        for k in range(m):
            norm = 0.0
            for i in range(k, n):
                norm += r[i, k] * r[i, k]
            norm = sqrt(norm)
            if norm == 0.0:
                beta[k] = 0.0
                continue
            alpha = -norm if r[k, k] >= 0.0 else norm
            for i in range(k, n):
                h[k, i] = r[i, k]
            h[k, k] -= alpha
            dot = 0.0
            for i in range(k, n):
                dot += h[k, i] * h[k, i]
            beta[k] = 2.0 / dot if dot > 0.0 else 0.0
            for j in range(k, m):
                dot = 0.0
                for i in range(k, n):
                    dot += h[k, i] * r[i, j]
                dot *= beta[k]
                for i in range(k, n):
                    r[i, j] -= dot * h[k, i]
        # accumulate Q = H_0 ... H_{m-1} applied to the first m unit columns
        for j in range(m):
            q[j, j] = 1.0
        for k in range(m - 1, -1, -1):
            if beta[k] == 0.0:
                continue
            for j in range(m):
                dot = 0.0
                for i in range(k, n):
                    dot += h[k, i] * q[i, j]
                dot *= beta[k]
                for i in range(k, n):
                    q[i, j] -= dot * h[k, i]
        rmin = -1.0
        for k in range(m):
            sgn = -1.0 if r[k, k] < 0.0 else 1.0
            if sgn < 0.0:
                for j in range(k, m):
                    r[k, j] = -r[k, j]
                for i in range(n):
                    q[i, k] = -q[i, k]
            if rmin < 0.0 or fabs(r[k, k]) < rmin:
                rmin = fabs(r[k, k])
    R = np.triu(np.asarray(r)[:m, :m])
    return qv, R, rmin


def cov_pool_batch(cnp.ndarray x_in):
    """Spatial covariance of ``(B, C, N)`` features, channels as samples.

    Returns ``(S, Xc)`` where ``Xc`` is the channel-centred input kept for the
    backward pass. Only the upper triangle is accumulated, then mirrored.
    """
    cdef double[:, :, ::1] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef int B = x.shape[0]
    cdef int C = x.shape[1]
    cdef int N = x.shape[2]
    xc_arr = np.empty((B, C, N), dtype=np.float64)
    s_arr = np.zeros((B, N, N), dtype=np.float64)
    cdef double[:, :, ::1] xc = xc_arr
    cdef double[:, :, ::1] s = s_arr
    mu_arr = np.empty(N, dtype=np.float64)
    cdef double[::1] mu = mu_arr
    cdef int b, c, p, q
    cdef double acc, inv = 1.0 / (C - 1)
    with nogil:
        for b in range(B):
            for p in range(N):
                acc = 0.0
                for c in range(C):
                    acc += x[b, c, p]
                mu[p] = acc / C
            for c in range(C):
                for p in range(N):
                    xc[b, c, p] = x[b, c, p] - mu[p]
            for c in range(C):
                for p in range(N):
                    acc = xc[b, c, p]
                    for q in range(p, N):
                        s[b, p, q] += acc * xc[b, c, q]
            for p in range(N):
                for q in range(p, N):
                    s[b, p, q] *= inv
                    s[b, q, p] = s[b, p, q]
    return s_arr, xc_arr


def cov_pool_backward_batch(cnp.ndarray xc_in, cnp.ndarray g_in):
    """Gradient of :func:`cov_pool_batch` w.r.t. its input.

    ``dX = 2/(C-1) * Xc @ sym(G)``. The mean-removal correction vanishes because
    the centred rows sum to zero over channels. The product goes through dgemm:
    a row-major ``(C, N)`` block is a column-major ``(N, C)`` one, and ``sym(G)``
    is its own transpose.
    """
    cdef double[:, :, ::1] xc = np.ascontiguousarray(xc_in, dtype=np.float64)
    cdef double[:, :, ::1] g = np.ascontiguousarray(g_in, dtype=np.float64)
    cdef int B = xc.shape[0]
    cdef int C = xc.shape[1]
    cdef int N = xc.shape[2]
    out = np.empty((B, C, N), dtype=np.float64)
    cdef double[:, :, ::1] dx = out
    gs_arr = np.empty((N, N), dtype=np.float64)
    cdef double[:, ::1] gs = gs_arr
    cdef int b, p, q
    cdef double k = 1.0 / (C - 1)
    cdef double one = 1.0, zero = 0.0
    cdef char trans = b'N'
    if B == 0 or C == 0 or N == 0:
        return out
    with nogil:
        for b in range(B):
            for p in range(N):
                for q in range(N):
                    gs[p, q] = k * (g[b, p, q] + g[b, q, p])
            dgemm(&trans, &trans, &N, &C, &N, &one, &gs[0, 0], &N, &xc[b, 0, 0], &N, &zero, &dx[b, 0, 0], &N)
    return out


def render_points(cnp.ndarray uv_in, cnp.ndarray inten_in, int height, int width, double sigma):
    """Splat projected points as isotropic Gaussians, summed then clipped to [0, 1]."""
    cdef double[:, ::1] uv = np.ascontiguousarray(uv_in, dtype=np.float64)
    cdef double[::1] inten = np.ascontiguousarray(inten_in, dtype=np.float64)
    img_arr = np.zeros((height, width), dtype=np.float64)
    cdef double[:, ::1] img = img_arr
    cdef int P = uv.shape[0]
    cdef int i, r, c
    cdef double inv2s2 = 1.0 / (2.0 * sigma * sigma)
    cdef double du, dv
    with nogil:
        for i in range(P):
            for r in range(height):
                dv = r - uv[i, 1]
                for c in range(width):
                    du = c - uv[i, 0]
                    img[r, c] += inten[i] * exp(-(du * du + dv * dv) * inv2s2)
        for r in range(height):
            for c in range(width):
                if img[r, c] > 1.0:
                    img[r, c] = 1.0
                elif img[r, c] < 0.0:
                    img[r, c] = 0.0
    return img_arr


def nn_min_dist(cnp.ndarray a_in, cnp.ndarray b_in):
    """For each row of ``a``, the Euclidean distance to its nearest row of ``b``."""
    cdef double[:, ::1] a = np.ascontiguousarray(a_in, dtype=np.float64)
    cdef double[:, ::1] b = np.ascontiguousarray(b_in, dtype=np.float64)
    cdef int n = a.shape[0]
    cdef int m = b.shape[0]
    cdef int d = a.shape[1]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef int i, j, k
    cdef double best, acc, diff
    with nogil:
        for i in range(n):
            best = -1.0
            for j in range(m):
                acc = 0.0
                for k in range(d):
                    diff = a[i, k] - b[j, k]
                    acc += diff * diff
                if best < 0.0 or acc < best:
                    best = acc
            o[i] = sqrt(best)
    return out
