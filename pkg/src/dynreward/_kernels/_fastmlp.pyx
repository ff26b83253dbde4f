# cython: boundscheck=False, wraparound=False, cdivision=True
"""Fused stacked-MLP forward pass.

One parallel task per stacked network: each network is evaluated over the
whole input batch with per-thread scratch buffers, avoiding the per-layer
temporaries the numpy path allocates.  Static scheduling keeps results
bit-deterministic run to run.
"""

import numpy as np

cimport cython
from cython.parallel cimport prange
from libc.math cimport tanh as c_tanh
from libc.stdlib cimport free, malloc

DEF MAX_LAYERS = 16


cdef inline void _layer(const double* inp, const double* w, const double* b,
                        double* out, int d_in, int d_out, bint act,
                        bint is_tanh) noexcept nogil:
    cdef int i, j
    cdef double acc
    for j in range(d_out):
        acc = b[j]
        for i in range(d_in):
            acc += inp[i] * w[i * d_out + j]
        if act:
            if is_tanh:
                acc = c_tanh(acc)
            elif acc < 0.0:
                acc = 0.0
        out[j] = acc


def stacked_mlp_forward(x, weights, biases, activation):
    if activation not in ("tanh", "relu"):
        raise ValueError(f"unknown activation {activation!r}")
    cdef bint is_tanh = activation == "tanh"

    x_arr = np.ascontiguousarray(x, dtype=np.float64)
    if x_arr.ndim != 2:
        raise ValueError("x must be (batch, in_dim)")
    cdef int n_layers = len(weights)
    if n_layers > MAX_LAYERS:
        raise ValueError("too many layers for the compiled kernel")

    cdef int B = x_arr.shape[0]
    cdef int T = np.asarray(weights[0]).shape[0]

    cdef const double* w_ptr[MAX_LAYERS]
    cdef const double* b_ptr[MAX_LAYERS]
    cdef int dims[MAX_LAYERS + 1]

    w_views = [np.ascontiguousarray(w, dtype=np.float64) for w in weights]
    b_views = [np.ascontiguousarray(b, dtype=np.float64) for b in biases]

    cdef const double[:, :, ::1] wv
    cdef const double[:, ::1] bv
    cdef int l
    cdef int max_width = x_arr.shape[1]
    for l in range(n_layers):
        wv = w_views[l]
        bv = b_views[l]
        if wv.shape[0] != T or bv.shape[0] != T or wv.shape[2] != bv.shape[1]:
            raise ValueError("stack shapes disagree")
        w_ptr[l] = &wv[0, 0, 0]
        b_ptr[l] = &bv[0, 0]
        dims[l] = wv.shape[1]
        dims[l + 1] = wv.shape[2]
        if dims[l + 1] > max_width:
            max_width = dims[l + 1]
    if dims[0] != x_arr.shape[1]:
        raise ValueError("input width does not match first layer")

    out_arr = np.empty((T, B, dims[n_layers]), dtype=np.float64)
    cdef double[:, :, ::1] out_mv = out_arr
    cdef const double[:, ::1] x_mv = x_arr

    cdef int t, b_idx, k, d_in, d_out
    cdef const double* cur
    cdef double* buf_a
    cdef double* buf_b
    cdef double* nxt
    cdef Py_ssize_t w_stride[MAX_LAYERS]
    cdef Py_ssize_t b_stride[MAX_LAYERS]
    for l in range(n_layers):
        w_stride[l] = <Py_ssize_t> dims[l] * dims[l + 1]
        b_stride[l] = dims[l + 1]

    with nogil:
        for t in prange(T, schedule="static"):
            buf_a = <double*> malloc(max_width * sizeof(double))
            buf_b = <double*> malloc(max_width * sizeof(double))
            if buf_a != NULL and buf_b != NULL:
                for b_idx in range(B):
                    cur = &x_mv[b_idx, 0]
                    for l in range(n_layers):
                        d_in = dims[l]
                        d_out = dims[l + 1]
                        if l == n_layers - 1:
                            nxt = &out_mv[t, b_idx, 0]
                        elif l % 2 == 0:
                            nxt = buf_a
                        else:
                            nxt = buf_b
                        _layer(cur, w_ptr[l] + t * w_stride[l],
                               b_ptr[l] + t * b_stride[l], nxt,
                               d_in, d_out, l != n_layers - 1, is_tanh)
                        cur = nxt
            free(buf_a)
            free(buf_b)
    return out_arr
