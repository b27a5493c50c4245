"""Pure numpy implementations of the hot kernels.

Every routine here has a twin in ``_ckernels.pyx``. Both accumulate in the
same order, so the two backends agree bit for bit.
"""

import numpy as np


def im2col(x, kh, kw):
    """Unfold ``x[C, H, W]`` into columns ``[C*kh*kw, H*W]`` with zero padding."""
    c, h, w = x.shape
    ph, pw = kh // 2, kw // 2
    padded = np.zeros((c, h + 2 * ph, w + 2 * pw), dtype=x.dtype)
    padded[:, ph:ph + h, pw:pw + w] = x
    cols = np.empty((c, kh, kw, h, w), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = padded[:, i:i + h, j:j + w]
    return cols.reshape(c * kh * kw, h * w)


def col2im(cols, c, h, w, kh, kw):
    """Adjoint of :func:`im2col`: fold columns back, summing overlaps."""
    ph, pw = kh // 2, kw // 2
    cols = cols.reshape(c, kh, kw, h, w)
    padded = np.zeros((c, h + 2 * ph, w + 2 * pw), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            padded[:, i:i + h, j:j + w] += cols[:, i, j]
    return np.ascontiguousarray(padded[:, ph:ph + h, pw:pw + w])


def _corners(grid, h, w):
    rows = grid[..., 0].ravel()
    cols = grid[..., 1].ravel()
    inside = (rows >= 0) & (rows <= h - 1) & (cols >= 0) & (cols <= w - 1)
    r = np.where(inside, rows, 0.0)
    q = np.where(inside, cols, 0.0)
    r0 = np.floor(r).astype(np.intp)
    c0 = np.floor(q).astype(np.intp)
    fr = r - r0
    fc = q - c0
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    zero = np.zeros_like(fr)
    w00 = np.where(inside, (1 - fr) * (1 - fc), zero)
    w01 = np.where(inside, (1 - fr) * fc, zero)
    w10 = np.where(inside, fr * (1 - fc), zero)
    w11 = np.where(inside, fr * fc, zero)
    idx = (r0 * w + c0, r0 * w + c1, r1 * w + c0, r1 * w + c1)
    return idx, (w00, w01, w10, w11)


def grid_sample(x, grid):
    """Bilinear sample ``x[C, H, W]`` at ``grid[Hg, Wg, 2]`` (row, col) pixels."""
    c, h, w = x.shape
    hg, wg = grid.shape[:2]
    idx, wts = _corners(grid, h, w)
    flat = x.reshape(c, h * w)
    wts = [wk.astype(x.dtype) for wk in wts]
    out = (wts[0] * flat[:, idx[0]] + wts[1] * flat[:, idx[1]]
           + wts[2] * flat[:, idx[2]] + wts[3] * flat[:, idx[3]])
    return out.reshape(c, hg, wg)


def grid_sample_backward(gout, grid, h, w):
    """Gradient of :func:`grid_sample` with respect to its input values."""
    c = gout.shape[0]
    idx, wts = _corners(grid, h, w)
    g = gout.reshape(c, -1)
    gx = np.zeros((c, h * w), dtype=gout.dtype)
    for k in range(4):
        np.add.at(gx, (slice(None), idx[k]), g * wts[k].astype(gout.dtype))
    return gx.reshape(c, h, w)
