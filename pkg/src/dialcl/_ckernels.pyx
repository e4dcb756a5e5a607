# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled pooling kernels; same contract as ``_pykernels``."""
import numpy as np
cimport cython
from libc.math cimport tanh


def pool_forward(double[:, ::1] E, double[:, ::1] P, long[:, ::1] ids, long[::1] lengths, mask=None):
    cdef Py_ssize_t B = ids.shape[0], L = ids.shape[1], d = E.shape[1]
    cdef Py_ssize_t b, t, k, n, tok
    cdef bint use_mask = mask is not None
    cdef double[:, :, ::1] m
    if use_mask:
        m = mask
    act_arr = np.zeros((B, L, d))
    pooled_arr = np.zeros((B, d))
    cdef double[:, :, ::1] act = act_arr
    cdef double[:, ::1] pooled = pooled_arr
    cdef double x
    for b in range(B):
        n = lengths[b]
        for t in range(n):
            tok = ids[b, t]
            for k in range(d):
                x = E[tok, k] + P[t, k]
                if use_mask:
                    x = x * m[b, t, k]
                x = tanh(x)
                act[b, t, k] = x
                pooled[b, k] += x
        for k in range(d):
            pooled[b, k] = pooled[b, k] / n
    return pooled_arr, act_arr


def pool_backward(double[:, ::1] g_pooled, long[:, ::1] ids, long[::1] lengths, mask,
                  double[:, :, ::1] act, double[:, ::1] gE, double[:, ::1] gP):
    cdef Py_ssize_t B = ids.shape[0], d = gE.shape[1]
    cdef Py_ssize_t b, t, k, n, tok
    cdef bint use_mask = mask is not None
    cdef double[:, :, ::1] m
    if use_mask:
        m = mask
    cdef double g, a
    for b in range(B):
        n = lengths[b]
        for t in range(n):
            tok = ids[b, t]
            for k in range(d):
                a = act[b, t, k]
                g = (g_pooled[b, k] / n) * (1.0 - a * a)
                if use_mask:
                    g = g * m[b, t, k]
                gE[tok, k] += g
                gP[t, k] += g
