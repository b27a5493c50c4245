# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; same contracts and accumulation order as _pykernels."""

import numpy as np
cimport cython
from libc.math cimport floor

ctypedef fused real:
    float
    double


def im2col(real[:, :, ::1] x, int kh, int kw):
    cdef Py_ssize_t c = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef int ph = kh // 2, pw = kw // 2
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((c * kh * kw, h * w), dtype=dtype)
    cdef real[:, ::1] out = out_arr
    cdef Py_ssize_t ch, i, j, y, xx, row, sy, x0, x1, y0, y1, base
    for ch in range(c):
        for i in range(kh):
            y0 = ph - i if ph - i > 0 else 0
            y1 = h + ph - i if h + ph - i < h else h
            for j in range(kw):
                row = (ch * kh + i) * kw + j
                x0 = pw - j if pw - j > 0 else 0
                x1 = w + pw - j if w + pw - j < w else w
                for y in range(y0, y1):
                    sy = y + i - ph
                    base = y * w
                    for xx in range(x0, x1):
                        out[row, base + xx] = x[ch, sy, xx + j - pw]
    return out_arr


def col2im(real[:, ::1] cols, int c, int h, int w, int kh, int kw):
    cdef int ph = kh // 2, pw = kw // 2
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((c, h, w), dtype=dtype)
    cdef real[:, :, ::1] out = out_arr
    cdef Py_ssize_t ch, i, j, y, xx, row, sy, x0, x1, y0, y1, base
    for ch in range(c):
        for i in range(kh):
            y0 = ph - i if ph - i > 0 else 0
            y1 = h + ph - i if h + ph - i < h else h
            for j in range(kw):
                row = (ch * kh + i) * kw + j
                x0 = pw - j if pw - j > 0 else 0
                x1 = w + pw - j if w + pw - j < w else w
                for y in range(y0, y1):
                    sy = y + i - ph
                    base = y * w
                    for xx in range(x0, x1):
                        out[ch, sy, xx + j - pw] += cols[row, base + xx]
    return out_arr


cdef inline bint _corner(double r, double q, int h, int w,
                         Py_ssize_t* idx, double* wt) nogil:
    cdef Py_ssize_t r0, c0, r1, c1
    cdef double fr, fc
    if not (r >= 0 and r <= h - 1 and q >= 0 and q <= w - 1):
        return False
    r0 = <Py_ssize_t>floor(r)
    c0 = <Py_ssize_t>floor(q)
    fr = r - r0
    fc = q - c0
    r1 = r0 + 1 if r0 + 1 < h - 1 else h - 1
    c1 = c0 + 1 if c0 + 1 < w - 1 else w - 1
    idx[0] = r0 * w + c0
    idx[1] = r0 * w + c1
    idx[2] = r1 * w + c0
    idx[3] = r1 * w + c1
    wt[0] = (1 - fr) * (1 - fc)
    wt[1] = (1 - fr) * fc
    wt[2] = fr * (1 - fc)
    wt[3] = fr * fc
    return True


def grid_sample(real[:, :, ::1] x, double[:, :, ::1] grid):
    cdef Py_ssize_t c = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t hg = grid.shape[0], wg = grid.shape[1]
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((c, hg, wg), dtype=dtype)
    cdef real[:, :, ::1] out = out_arr
    cdef real[:, ::1] flat = np.asarray(x).reshape(c, h * w)
    cdef Py_ssize_t idx[4]
    cdef double wt[4]
    cdef real w0, w1, w2, w3
    cdef Py_ssize_t a, b, ch
    for a in range(hg):
        for b in range(wg):
            if not _corner(grid[a, b, 0], grid[a, b, 1], h, w, idx, wt):
                continue
            w0 = <real>wt[0]
            w1 = <real>wt[1]
            w2 = <real>wt[2]
            w3 = <real>wt[3]
            for ch in range(c):
                out[ch, a, b] = (w0 * flat[ch, idx[0]] + w1 * flat[ch, idx[1]]
                                 + w2 * flat[ch, idx[2]] + w3 * flat[ch, idx[3]])
    return out_arr


def grid_sample_backward(real[:, :, ::1] gout, double[:, :, ::1] grid, int h, int w):
    cdef Py_ssize_t c = gout.shape[0], hg = grid.shape[0], wg = grid.shape[1]
    cdef Py_ssize_t n = hg * wg
    dtype = np.float32 if real is float else np.float64
    gx_arr = np.zeros((c, h * w), dtype=dtype)
    cdef real[:, ::1] gx = gx_arr
    cdef real[:, ::1] g = np.asarray(gout).reshape(c, n)
    idx_arr = np.zeros((n, 4), dtype=np.intp)
    wt_arr = np.zeros((n, 4), dtype=np.float64)
    ok_arr = np.zeros(n, dtype=np.uint8)
    cdef Py_ssize_t[:, ::1] idx = idx_arr
    cdef double[:, ::1] wt = wt_arr
    cdef unsigned char[::1] ok = ok_arr
    cdef Py_ssize_t cell, k, ch
    cdef real wk
    for cell in range(n):
        ok[cell] = _corner(grid[cell // wg, cell % wg, 0], grid[cell // wg, cell % wg, 1],
                           h, w, &idx[cell, 0], &wt[cell, 0])
    for k in range(4):
        for ch in range(c):
            for cell in range(n):
                if ok[cell]:
                    wk = <real>wt[cell, k]
                    gx[ch, idx[cell, k]] += g[ch, cell] * wk
    return gx_arr.reshape(c, h, w)
