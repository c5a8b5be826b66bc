# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the 1D convolution hot path.

Mirrors _kernels_py exactly; parity is enforced by tests/test_kernels.py.
The position axis stays innermost and branch-free so the C compiler can
vectorize, and the K=3 / K=1 cases fuse the kernel taps into one pass
because per-tap loop setup dominates at short sequence lengths.
"""
import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "compiled"


def conv1d_forward(cnp.ndarray x_arr, cnp.ndarray w_arr, bias_arr):
    cdef double[:, :, ::1] x = np.ascontiguousarray(x_arr, dtype=np.float64)
    cdef double[:, :, ::1] w = np.ascontiguousarray(w_arr, dtype=np.float64)
    cdef Py_ssize_t B = x.shape[0], Ci = x.shape[1], L = x.shape[2]
    cdef Py_ssize_t Co = w.shape[0], K = w.shape[2], P = K // 2
    out_arr = np.zeros((B, Co, L), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, o, i, l, k, lo, hi, shift
    cdef double w0, w1, w2
    for b in range(B):
        for o in range(Co):
            for i in range(Ci):
                if K == 3:
                    w0 = w[o, i, 0]
                    w1 = w[o, i, 1]
                    w2 = w[o, i, 2]
                    for l in range(1, L - 1):
                        out[b, o, l] += w0 * x[b, i, l - 1] + w1 * x[b, i, l] + w2 * x[b, i, l + 1]
                    if L == 1:
                        out[b, o, 0] += w1 * x[b, i, 0]
                    else:
                        out[b, o, 0] += w1 * x[b, i, 0] + w2 * x[b, i, 1]
                        out[b, o, L - 1] += w1 * x[b, i, L - 1] + w0 * x[b, i, L - 2]
                elif K == 1:
                    w1 = w[o, i, 0]
                    for l in range(L):
                        out[b, o, l] += w1 * x[b, i, l]
                else:
                    for k in range(K):
                        shift = k - P
                        lo = -shift if shift < 0 else 0
                        hi = L - shift if shift > 0 else L
                        w1 = w[o, i, k]
                        for l in range(lo, hi):
                            out[b, o, l] += w1 * x[b, i, l + shift]
    if bias_arr is not None:
        out_arr += np.asarray(bias_arr, dtype=np.float64)[None, :, None]
    return out_arr


def conv1d_grad_input(cnp.ndarray gout_arr, cnp.ndarray w_arr):
    cdef double[:, :, ::1] gout = np.ascontiguousarray(gout_arr, dtype=np.float64)
    cdef double[:, :, ::1] w = np.ascontiguousarray(w_arr, dtype=np.float64)
    cdef Py_ssize_t B = gout.shape[0], Co = gout.shape[1], L = gout.shape[2]
    cdef Py_ssize_t Ci = w.shape[1], K = w.shape[2], P = K // 2
    gx_arr = np.zeros((B, Ci, L), dtype=np.float64)
    cdef double[:, :, ::1] gx = gx_arr
    cdef Py_ssize_t b, o, i, m, k, lo, hi, shift
    cdef double w0, w1, w2
    # x[b,i,m] feeds out[b,o,m+P-k] through w[o,i,k]; for K=3 this is the
    # mirrored stencil gx[m] += w2*g[m-1] + w1*g[m] + w0*g[m+1]
    for b in range(B):
        for i in range(Ci):
            for o in range(Co):
                if K == 3:
                    w0 = w[o, i, 0]
                    w1 = w[o, i, 1]
                    w2 = w[o, i, 2]
                    for m in range(1, L - 1):
                        gx[b, i, m] += w2 * gout[b, o, m - 1] + w1 * gout[b, o, m] + w0 * gout[b, o, m + 1]
                    if L == 1:
                        gx[b, i, 0] += w1 * gout[b, o, 0]
                    else:
                        gx[b, i, 0] += w1 * gout[b, o, 0] + w0 * gout[b, o, 1]
                        gx[b, i, L - 1] += w1 * gout[b, o, L - 1] + w2 * gout[b, o, L - 2]
                elif K == 1:
                    w1 = w[o, i, 0]
                    for m in range(L):
                        gx[b, i, m] += w1 * gout[b, o, m]
                else:
                    for k in range(K):
                        shift = P - k
                        lo = -shift if shift < 0 else 0
                        hi = L - shift if shift > 0 else L
                        w1 = w[o, i, k]
                        for m in range(lo, hi):
                            gx[b, i, m] += w1 * gout[b, o, m + shift]
    return gx_arr


def conv1d_grad_weight(cnp.ndarray gout_arr, cnp.ndarray x_arr, Py_ssize_t K):
    cdef double[:, :, ::1] gout = np.ascontiguousarray(gout_arr, dtype=np.float64)
    cdef double[:, :, ::1] x = np.ascontiguousarray(x_arr, dtype=np.float64)
    cdef Py_ssize_t B = gout.shape[0], Co = gout.shape[1], L = gout.shape[2]
    cdef Py_ssize_t Ci = x.shape[1], P = K // 2
    gw_arr = np.zeros((Co, Ci, K), dtype=np.float64)
    cdef double[:, :, ::1] gw = gw_arr
    cdef Py_ssize_t b, o, i, l, k, lo, hi, shift
    cdef double a0, a1, a2
    for b in range(B):
        for o in range(Co):
            for i in range(Ci):
                if K == 3:
                    a0 = 0.0
                    a1 = 0.0
                    a2 = 0.0
                    for l in range(1, L - 1):
                        a0 += gout[b, o, l] * x[b, i, l - 1]
                        a1 += gout[b, o, l] * x[b, i, l]
                        a2 += gout[b, o, l] * x[b, i, l + 1]
                    if L == 1:
                        a1 += gout[b, o, 0] * x[b, i, 0]
                    else:
                        a1 += gout[b, o, 0] * x[b, i, 0]
                        a1 += gout[b, o, L - 1] * x[b, i, L - 1]
                        a2 += gout[b, o, 0] * x[b, i, 1]
                        a0 += gout[b, o, L - 1] * x[b, i, L - 2]
                    gw[o, i, 0] += a0
                    gw[o, i, 1] += a1
                    gw[o, i, 2] += a2
                elif K == 1:
                    a0 = 0.0
                    for l in range(L):
                        a0 += gout[b, o, l] * x[b, i, l]
                    gw[o, i, 0] += a0
                else:
                    for k in range(K):
                        shift = k - P
                        lo = -shift if shift < 0 else 0
                        hi = L - shift if shift > 0 else L
                        a0 = 0.0
                        for l in range(lo, hi):
                            a0 += gout[b, o, l] * x[b, i, l + shift]
                        gw[o, i, k] += a0
    return gw_arr
