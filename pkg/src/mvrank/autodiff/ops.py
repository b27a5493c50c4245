"""Differentiable operators.

Binary elementwise operators accept two tensors of identical shape or a
tensor and a Python scalar; nothing else broadcasts.
"""

import numbers

import numpy as np

from . import kernels
from .tensor import ShapeError, Tensor, current_tape


def _result(data, parents, backward):
    requires = any(p.requires_grad for p in parents)
    tape = current_tape() if requires else None
    out = Tensor(data, requires_grad=tape is not None, dtype=data.dtype)
    if tape is not None:
        tape.record(out, parents, backward)
    return out


def _check_same(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _is_scalar(x):
    return isinstance(x, numbers.Real) and not isinstance(x, bool)


def constant(data, dtype=None):
    return Tensor(data, dtype=dtype)


def add(a, b):
    if _is_scalar(b):
        return _result(a.data + b, (a,), lambda g: (g,))
    _check_same(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    if _is_scalar(b):
        return _result(a.data - b, (a,), lambda g: (g,))
    _check_same(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    if _is_scalar(b):
        return _result(a.data * b, (a,), lambda g: (g * b,))
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def neg(a):
    return _result(-a.data, (a,), lambda g: (-g,))


def relu(a):
    """max(0, a); the subgradient at 0 is 0."""
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,))


def abs(a):  # noqa: A001 - mirrors numpy naming
    """|a|; the subgradient at 0 is 0."""
    sign = np.sign(a.data)
    return _result(np.abs(a.data), (a,), lambda g: (g * sign,))


def maximum(a, b):
    """Elementwise max; ties route the gradient to ``a``."""
    _check_same(a, b, "maximum")
    pick_a = a.data >= b.data
    return _result(np.where(pick_a, a.data, b.data), (a, b),
                   lambda g: (g * pick_a, g * ~pick_a))


def sum(a):  # noqa: A001
    shape = a.shape
    return _result(np.asarray(a.data.sum(), dtype=a.dtype), (a,),
                   lambda g: (np.full(shape, g, dtype=g.dtype),))


def mean(a):
    shape, n = a.shape, a.size
    return _result(np.asarray(a.data.mean(), dtype=a.dtype), (a,),
                   lambda g: (np.full(shape, g / n, dtype=g.dtype),))


def mse(a, b):
    """Mean of squared differences over all elements."""
    d = sub(a, b)
    return mean(mul(d, d))


def reshape(a, shape):
    old = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: no tensors")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
                s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis):
            raise ShapeError(f"concat: shapes {ref} and {t.shape} disagree off axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                   lambda g: tuple(np.split(g, cuts, axis=axis)))


def maxpool2x2(a):
    """2x2 max pooling with stride 2 over ``[C, H, W]``; H and W must be even.

    Ties send the gradient to the first maximal element in row-major order.
    """
    c, h, w = a.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2: spatial size {(h, w)} must be even")
    blocks = a.data.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(
        c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gb = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        return (gb.reshape(c, h // 2, w // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h, w),)

    return _result(out, (a,), back)


def conv2d(x, weight, bias):
    """Stride-1 'same' convolution of ``x[C_in, H, W]`` (cross-correlation)."""
    if x.data.ndim != 3 or weight.data.ndim != 4 or bias.data.ndim != 1:
        raise ShapeError(
            f"conv2d: expected input [C,H,W], kernel [O,C,kh,kw], bias [O]; got "
            f"{x.shape}, {weight.shape}, {bias.shape}")
    cin, h, w = x.shape
    cout, kin, kh, kw = weight.shape
    if kin != cin:
        raise ShapeError(f"conv2d: kernel expects {kin} input channels, input has {cin}")
    if bias.shape[0] != cout:
        raise ShapeError(f"conv2d: bias has {bias.shape[0]} entries for {cout} output channels")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel size {(kh, kw)} must be odd")
    if x.dtype != weight.dtype:
        raise ShapeError(f"conv2d: dtype mismatch {x.dtype} vs {weight.dtype}")
    if kh == 1 and kw == 1:
        cols = x.data.reshape(cin, h * w)
    else:
        cols = kernels.backend.im2col(x.data, kh, kw)
    w2 = weight.data.reshape(cout, -1)
    out = w2 @ cols
    out += bias.data[:, None]

    def back(g):
        g2 = g.reshape(cout, h * w)
        gw = (g2 @ cols.T).reshape(weight.shape)
        gb = g2.sum(axis=1)
        gcols = w2.T @ g2
        if kh == 1 and kw == 1:
            gx = gcols.reshape(cin, h, w)
        else:
            gx = kernels.backend.col2im(np.ascontiguousarray(gcols), cin, h, w, kh, kw)
        return gx, gw, gb

    return _result(out.reshape(cout, h, w), (x, weight, bias), back)


def bilinear_grid_sample(x, grid):
    """Sample ``x[C, H, W]`` at continuous (row, col) pixel coordinates.

    ``grid`` is a constant ``[Hg, Wg, 2]`` array (or tensor). Locations outside
    ``[0, H-1] x [0, W-1]`` read as zero. Gradients flow to ``x`` only.
    """
    g_arr = grid.data if isinstance(grid, Tensor) else grid
    g_arr = np.ascontiguousarray(g_arr, dtype=np.float64)
    if x.data.ndim != 3 or g_arr.ndim != 3 or g_arr.shape[2] != 2:
        raise ShapeError(f"grid_sample: expected input [C,H,W] and grid [Hg,Wg,2]; got "
                         f"{x.shape} and {g_arr.shape}")
    _, h, w = x.shape
    out = kernels.backend.grid_sample(x.data, g_arr)
    return _result(out, (x,),
                   lambda g: (kernels.backend.grid_sample_backward(
                       np.ascontiguousarray(g), g_arr, h, w),))


def upsample_grid(h, w, factor):
    """Constant sampling grid for bilinear upsampling of an ``h x w`` map."""
    rows = np.clip((np.arange(h * factor) + 0.5) / factor - 0.5, 0, h - 1)
    cols = np.clip((np.arange(w * factor) + 0.5) / factor - 0.5, 0, w - 1)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([rr, cc], axis=-1)
