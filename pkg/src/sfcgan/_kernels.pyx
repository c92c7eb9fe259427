# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for convolution lowering and hop-count distances."""
import numpy as np
cimport numpy as cnp
from libc.string cimport memcpy, memset
from cython cimport floating

cnp.import_array()


cdef void _im2col(const floating* src, floating* dst, Py_ssize_t nb, Py_ssize_t nc, Py_ssize_t h,
                  Py_ssize_t w, int k, int stride, int pad, int oh, int ow) noexcept nogil:
    cdef Py_ssize_t b, c, ki, kj, i, j, r, j_lo, j_hi
    cdef const floating* plane
    cdef const floating* srow
    cdef floating* drow
    for b in range(nb):
        for c in range(nc):
            plane = src + (b * nc + c) * h * w
            for ki in range(k):
                for kj in range(k):
                    # output columns j whose input column j*stride + kj - pad lies in [0, w)
                    j_lo = 0
                    while j_lo < ow and j_lo * stride + kj - pad < 0:
                        j_lo += 1
                    j_hi = ow
                    while j_hi > j_lo and (j_hi - 1) * stride + kj - pad >= w:
                        j_hi -= 1
                    for i in range(oh):
                        drow = dst + i * ow
                        r = i * stride + ki - pad
                        if r < 0 or r >= h:
                            memset(drow, 0, ow * sizeof(floating))
                            continue
                        srow = plane + r * w + kj - pad
                        for j in range(j_lo):
                            drow[j] = 0
                        if stride == 1:
                            if j_hi > j_lo:
                                memcpy(drow + j_lo, srow + j_lo, (j_hi - j_lo) * sizeof(floating))
                        else:
                            for j in range(j_lo, j_hi):
                                drow[j] = srow[j * stride]
                        for j in range(j_hi, ow):
                            drow[j] = 0
                    dst += oh * ow


cdef void _col2im(const floating* src, floating* dst, Py_ssize_t nb, Py_ssize_t nc, Py_ssize_t h,
                  Py_ssize_t w, int k, int stride, int pad, int oh, int ow) noexcept nogil:
    cdef Py_ssize_t b, c, ki, kj, i, j, r, j_lo, j_hi
    cdef floating* plane
    cdef floating* drow
    cdef const floating* srow
    for b in range(nb):
        for c in range(nc):
            plane = dst + (b * nc + c) * h * w
            for ki in range(k):
                for kj in range(k):
                    j_lo = 0
                    while j_lo < ow and j_lo * stride + kj - pad < 0:
                        j_lo += 1
                    j_hi = ow
                    while j_hi > j_lo and (j_hi - 1) * stride + kj - pad >= w:
                        j_hi -= 1
                    for i in range(oh):
                        r = i * stride + ki - pad
                        if r < 0 or r >= h:
                            continue
                        drow = plane + r * w + kj - pad
                        srow = src + i * ow
                        if stride == 1:
                            for j in range(j_lo, j_hi):
                                drow[j] += srow[j]
                        else:
                            for j in range(j_lo, j_hi):
                                drow[j * stride] += srow[j]
                    src += oh * ow


def im2col(floating[:, :, :, ::1] x, int k, int stride, int pad, int oh, int ow):
    cdef Py_ssize_t nb = x.shape[0], nc = x.shape[1], h = x.shape[2], w = x.shape[3]
    dtype = np.float32 if floating is float else np.float64
    out = np.empty((nb, nc * k * k, oh * ow), dtype=dtype)
    cdef floating[:, :, ::1] cols = out
    if out.size:
        with nogil:
            _im2col(&x[0, 0, 0, 0], &cols[0, 0, 0], nb, nc, h, w, k, stride, pad, oh, ow)
    return out


def col2im(floating[:, :, ::1] cols, int nc, int h, int w, int k, int stride, int pad, int oh, int ow):
    cdef Py_ssize_t nb = cols.shape[0]
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((nb, nc, h, w), dtype=dtype)
    cdef floating[:, :, :, ::1] x = out
    if cols.size:
        with nogil:
            _col2im(&cols[0, 0, 0], &x[0, 0, 0, 0], nb, nc, h, w, k, stride, pad, oh, ow)
    return out


def hop_distances(cnp.uint8_t[:, ::1] adj):
    cdef Py_ssize_t n = adj.shape[0]
    cdef Py_ssize_t s, u, v, head, tail
    out = np.full((n, n), -1, dtype=np.int32)
    cdef int[:, ::1] dist = out
    queue_arr = np.empty(max(n, 1), dtype=np.intp)
    cdef Py_ssize_t[::1] queue = queue_arr
    with nogil:
        for s in range(n):
            dist[s, s] = 0
            queue[0] = s
            head = 0
            tail = 1
            while head < tail:
                u = queue[head]
                head += 1
                for v in range(n):
                    if adj[u, v] and dist[s, v] < 0:
                        dist[s, v] = dist[s, u] + 1
                        queue[tail] = v
                        tail += 1
    return out
