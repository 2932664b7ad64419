# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled LSTM recurrence. Same contract as ``_kernels_py``.

Products go through the BLAS exposed by scipy; the gate nonlinearities and
the cell update are fused into one pass per row.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline double _sig(double x) nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef void _mm(int m, int n, int k, double *A, double *B, double *C, double beta) nogil:
    # row-major C(m,n) = A(m,k) @ B(k,n) + beta*C
    cdef char tn = b'N'
    cdef double one = 1.0
    dgemm(&tn, &tn, &n, &m, &k, &one, B, &n, A, &k, &beta, C, &n)


cdef void _mm_tn(int m, int n, int k, double *A, double *B, double *C, double beta) nogil:
    # row-major C(m,n) = A(k,m).T @ B(k,n) + beta*C
    cdef char tn = b'N'
    cdef char tt = b'T'
    cdef double one = 1.0
    dgemm(&tn, &tt, &n, &m, &k, &one, B, &n, A, &m, &beta, C, &n)


cdef void _mm_nt(int m, int n, int k, double *A, double *B, double *C, double beta) nogil:
    # row-major C(m,n) = A(m,k) @ B(n,k).T + beta*C
    cdef char tn = b'N'
    cdef char tt = b'T'
    cdef double one = 1.0
    dgemm(&tt, &tn, &n, &m, &k, &one, B, &k, A, &k, &beta, C, &n)


def lstm_forward(X, mask, W_x, W_h, b):
    cdef double[:, :, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[:, ::1] mk = np.ascontiguousarray(mask, dtype=np.float64)
    cdef double[:, ::1] wx = np.ascontiguousarray(W_x, dtype=np.float64)
    cdef double[:, ::1] wh = np.ascontiguousarray(W_h, dtype=np.float64)
    cdef double[::1] bb = np.ascontiguousarray(b, dtype=np.float64)
    cdef int T = x.shape[0], B = x.shape[1], p = x.shape[2], h = wh.shape[0]
    cdef int G = 4 * h
    H_ = np.zeros((T + 1, B, h))
    C_ = np.zeros((T + 1, B, h))
    A_ = np.zeros((T, B, G))
    TC_ = np.zeros((T, B, h))
    cdef double[:, :, ::1] Hv = H_, Cv = C_, Av = A_, TCv = TC_
    cdef int t, r, j
    cdef double ig, fg, gg, og, c, tc
    if T == 0 or B == 0:
        return H_, C_, A_, TC_
    with nogil:
        # input projections for every step at once
        _mm(T * B, G, p, &x[0, 0, 0], &wx[0, 0], &Av[0, 0, 0], 0.0)
        for t in range(T):
            _mm(B, G, h, &Hv[t, 0, 0], &wh[0, 0], &Av[t, 0, 0], 1.0)
            for r in range(B):
                if mk[t, r] == 0:
                    for j in range(h):
                        Hv[t + 1, r, j] = Hv[t, r, j]
                        Cv[t + 1, r, j] = Cv[t, r, j]
                    for j in range(G):
                        Av[t, r, j] = 0.0
                    continue
                for j in range(h):
                    ig = _sig(Av[t, r, j] + bb[j])
                    fg = _sig(Av[t, r, h + j] + bb[h + j])
                    gg = tanh(Av[t, r, 2 * h + j] + bb[2 * h + j])
                    og = _sig(Av[t, r, 3 * h + j] + bb[3 * h + j])
                    c = fg * Cv[t, r, j] + ig * gg
                    tc = tanh(c)
                    Av[t, r, j] = ig
                    Av[t, r, h + j] = fg
                    Av[t, r, 2 * h + j] = gg
                    Av[t, r, 3 * h + j] = og
                    Cv[t + 1, r, j] = c
                    TCv[t, r, j] = tc
                    Hv[t + 1, r, j] = og * tc
    return H_, C_, A_, TC_


def lstm_backward(X, mask, W_x, W_h, H, C, A, TC, dh_last):
    cdef double[:, :, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[:, ::1] mk = np.ascontiguousarray(mask, dtype=np.float64)
    cdef double[:, ::1] wx = np.ascontiguousarray(W_x, dtype=np.float64)
    cdef double[:, ::1] wh = np.ascontiguousarray(W_h, dtype=np.float64)
    cdef double[:, :, ::1] Hv = np.ascontiguousarray(H, dtype=np.float64)
    cdef double[:, :, ::1] Cv = np.ascontiguousarray(C, dtype=np.float64)
    cdef double[:, :, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef double[:, :, ::1] TCv = np.ascontiguousarray(TC, dtype=np.float64)
    cdef int T = x.shape[0], B = x.shape[1], p = x.shape[2], h = wh.shape[0]
    cdef int G = 4 * h
    D_ = np.zeros((T, B, G))
    dX_ = np.zeros((T, B, p))
    dWx_ = np.zeros((p, G))
    dWh_ = np.zeros((h, G))
    dh_ = np.array(dh_last, dtype=np.float64, order="C", copy=True)
    dc_ = np.zeros((B, h))
    dhp_ = np.zeros((B, h))
    cdef double[:, :, ::1] Dv = D_, dXv = dX_
    cdef double[:, ::1] dh = dh_, dc = dc_, dhp = dhp_, dWx = dWx_, dWh = dWh_
    cdef int t, r, j
    cdef double ig, fg, gg, og, tc, dct
    if T == 0 or B == 0:
        return dX_, dWx_, dWh_, np.zeros(G)
    with nogil:
        for t in range(T - 1, -1, -1):
            for r in range(B):
                if mk[t, r] == 0:
                    continue
                for j in range(h):
                    ig = Av[t, r, j]
                    fg = Av[t, r, h + j]
                    gg = Av[t, r, 2 * h + j]
                    og = Av[t, r, 3 * h + j]
                    tc = TCv[t, r, j]
                    dct = dc[r, j] + dh[r, j] * og * (1.0 - tc * tc)
                    Dv[t, r, j] = dct * gg * ig * (1.0 - ig)
                    Dv[t, r, h + j] = dct * Cv[t, r, j] * fg * (1.0 - fg)
                    Dv[t, r, 2 * h + j] = dct * ig * (1.0 - gg * gg)
                    Dv[t, r, 3 * h + j] = dh[r, j] * tc * og * (1.0 - og)
                    dc[r, j] = dct * fg
            _mm_nt(B, h, G, &Dv[t, 0, 0], &wh[0, 0], &dhp[0, 0], 0.0)
            for r in range(B):
                if mk[t, r] != 0:
                    for j in range(h):
                        dh[r, j] = dhp[r, j]
        _mm_tn(p, G, T * B, &x[0, 0, 0], &Dv[0, 0, 0], &dWx[0, 0], 0.0)
        _mm_tn(h, G, T * B, &Hv[0, 0, 0], &Dv[0, 0, 0], &dWh[0, 0], 0.0)
        _mm_nt(T * B, p, G, &Dv[0, 0, 0], &wx[0, 0], &dXv[0, 0, 0], 0.0)
    return dX_, dWx_, dWh_, D_.reshape(T * B, G).sum(axis=0)
