import numpy as np
import pytest

from mvrank import autodiff as ad
from mvrank.autodiff import AdamState, ShapeError, Tape, Tensor, adam_step, kernels
from mvrank.gradcheck import check


def conv_oracle(x, w, b):
    c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    xp = np.zeros((c, h + 2 * ph, wd + 2 * pw))
    xp[:, ph:ph + h, pw:pw + wd] = x
    out = np.zeros((o, h, wd))
    for oc in range(o):
        for i in range(h):
            for j in range(wd):
                out[oc, i, j] = (xp[:, i:i + kh, j:j + kw] * w[oc]).sum() + b[oc]
    return out


def bilinear_oracle(x, grid):
    c, h, w = x.shape
    out = np.zeros((c,) + grid.shape[:2])
    for a in range(grid.shape[0]):
        for b in range(grid.shape[1]):
            r, q = grid[a, b]
            if not (0 <= r <= h - 1 and 0 <= q <= w - 1):
                continue  # zero-border policy: the whole sample reads 0
            r0, q0 = int(np.floor(r)), int(np.floor(q))
            for dr in (0, 1):
                for dq in (0, 1):
                    rr, qq = r0 + dr, q0 + dq
                    wt = (1 - abs(r - rr)) * (1 - abs(q - qq))
                    if 0 <= rr < h and 0 <= qq < w:
                        out[:, a, b] += wt * x[:, rr, qq]
    return out


def grads_of(fn, *arrays):
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = fn(*leaves)
    g = tape.backward(out)
    return [g[t] for t in leaves]


class TestTensor:
    def test_float_dtypes_kept_ints_promoted(self):
        assert Tensor(np.zeros(2, np.float32)).dtype == np.float32
        assert Tensor([1, 2]).dtype == np.float64

    def test_item_rejects_non_scalar(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros(3)).item()

    def test_no_recording_outside_tape(self):
        a = Tensor(np.ones(3), requires_grad=True)
        out = ad.mul(a, a)
        assert not out.requires_grad
        assert out.node_id is None

    def test_operators(self):
        a, b = Tensor([1.0, 2.0]), Tensor([3.0, 5.0])
        np.testing.assert_array_equal((a + b).data, [4, 7])
        np.testing.assert_array_equal((a - b).data, [-2, -3])
        np.testing.assert_array_equal((a * 2.0).data, [2, 4])
        np.testing.assert_array_equal((-a).data, [-1, -2])


class TestTape:
    def test_backward_needs_scalar(self):
        a = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            out = ad.mul(a, 2.0)
        with pytest.raises(ShapeError):
            tape.backward(out)

    def test_tape_consumed_once(self):
        a = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            out = ad.sum(a)
        tape.backward(out)
        with pytest.raises(RuntimeError):
            tape.backward(out)

    def test_shared_subexpression_accumulates(self):
        (g,) = grads_of(lambda a: ad.sum(ad.add(ad.mul(a, a), a)), np.array([1.0, -2.0, 3.0]))
        np.testing.assert_allclose(g, 2 * np.array([1.0, -2.0, 3.0]) + 1)

    def test_unreached_leaf_absent_and_zero_filled(self):
        a = Tensor(np.ones(2), requires_grad=True)
        b = Tensor(np.ones(2), requires_grad=True)
        with Tape() as tape:
            out = ad.sum(a)
        g = tape.backward(out)
        assert a in g and b not in g
        with pytest.raises(KeyError):
            g[b]
        full = g.for_params({"a": a, "b": b})
        np.testing.assert_array_equal(full["b"], np.zeros(2))

    def test_root_not_on_tape_gives_empty_gradients(self):
        a = Tensor(np.ones(2))
        with Tape() as tape:
            out = ad.sum(a)
        assert len(tape.backward(out)) == 0


class TestElementwise:
    def test_broadcasting_rejected(self):
        with pytest.raises(ShapeError):
            ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))
        with pytest.raises(ShapeError):
            ad.mul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))

    def test_relu_subgradient_zero_at_zero(self):
        (g,) = grads_of(lambda a: ad.sum(ad.relu(a)), np.array([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(g, [0.0, 0.0, 1.0])

    def test_abs_subgradient_zero_at_zero(self):
        (g,) = grads_of(lambda a: ad.sum(ad.abs(a)), np.array([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(g, [-1.0, 0.0, 1.0])

    def test_maximum_ties_go_to_first(self):
        ga, gb = grads_of(lambda a, b: ad.sum(ad.maximum(a, b)),
                          np.array([1.0, 2.0, 3.0]), np.array([1.0, 5.0, 0.0]))
        np.testing.assert_array_equal(ga, [1.0, 0.0, 1.0])
        np.testing.assert_array_equal(gb, [0.0, 1.0, 0.0])

    def test_mse_value(self):
        a, b = np.array([1.0, 2.0, 4.0]), np.array([0.0, 2.0, 2.0])
        assert ad.mse(Tensor(a), Tensor(b)).item() == pytest.approx(5.0 / 3.0)

    @pytest.mark.parametrize("op", ["add", "sub", "mul", "relu", "abs", "sum", "mean", "mse"])
    def test_gradcheck(self, op):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((3, 4))
        a = np.where(np.abs(a) < 0.05, 0.3, a)
        b = rng.standard_normal((3, 4))
        r = rng.standard_normal((3, 4))
        unary = {"relu": ad.relu, "abs": ad.abs}
        binary = {"add": ad.add, "sub": ad.sub, "mul": ad.mul}
        if op in unary:
            fn = lambda ts: ad.sum(ad.mul(unary[op](ts[0]), Tensor(r)))  # noqa: E731
            assert check(fn, [a]) < 1e-6
        elif op in binary:
            fn = lambda ts: ad.sum(ad.mul(binary[op](ts[0], ts[1]), Tensor(r)))  # noqa: E731
            assert check(fn, [a, b]) < 1e-6
        elif op == "mse":
            assert check(lambda ts: ad.mse(ts[0], ts[1]), [a, b]) < 1e-6
        else:
            assert check(lambda ts: getattr(ad, op)(ad.mul(ts[0], ts[0])), [a]) < 1e-6


class TestStructural:
    def test_concat_and_split_gradient(self):
        a, b = np.ones((1, 2, 2)), 2 * np.ones((2, 2, 2))
        out = ad.concat([Tensor(a), Tensor(b)], axis=0)
        assert out.shape == (3, 2, 2)
        w = np.arange(12.0).reshape(3, 2, 2)
        ga, gb = grads_of(lambda x, y: ad.sum(ad.mul(ad.concat([x, y]), Tensor(w))), a, b)
        np.testing.assert_array_equal(ga, w[:1])
        np.testing.assert_array_equal(gb, w[1:])

    def test_concat_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ad.concat([Tensor(np.ones((1, 2, 2))), Tensor(np.ones((1, 3, 2)))], axis=0)

    def test_maxpool_values_and_ties(self):
        x = np.array([[[1.0, 3.0, 0.0, 0.0],
                       [2.0, 3.0, 0.0, -1.0]]])
        out = ad.maxpool2x2(Tensor(x))
        np.testing.assert_array_equal(out.data, [[[3.0, 0.0]]])
        (g,) = grads_of(lambda t: ad.sum(ad.maxpool2x2(t)), x)
        # first maximum in row-major order wins each window
        np.testing.assert_array_equal(g, [[[0, 1, 1, 0], [0, 0, 0, 0]]])

    def test_maxpool_odd_rejected(self):
        with pytest.raises(ShapeError):
            ad.maxpool2x2(Tensor(np.ones((1, 3, 4))))


class TestConv:
    @pytest.mark.parametrize("k", [1, 3, 5])
    def test_matches_loop_oracle(self, k):
        rng = np.random.default_rng(k)
        x = rng.standard_normal((3, 6, 7))
        w = rng.standard_normal((4, 3, k, k))
        b = rng.standard_normal(4)
        out = ad.conv2d(Tensor(x), Tensor(w), Tensor(b))
        np.testing.assert_allclose(out.data, conv_oracle(x, w, b), rtol=1e-12, atol=1e-12)

    def test_gradients(self):
        rng = np.random.default_rng(0)
        x, w, b = rng.standard_normal((2, 5, 4)), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)
        r = rng.standard_normal((3, 5, 4))
        err = check(lambda ts: ad.sum(ad.mul(ad.conv2d(*ts), Tensor(r))), [x, w, b])
        assert err < 1e-6

    def test_rejects_bad_shapes(self):
        x = Tensor(np.ones((2, 4, 4)))
        with pytest.raises(ShapeError):
            ad.conv2d(x, Tensor(np.ones((3, 1, 3, 3))), Tensor(np.ones(3)))
        with pytest.raises(ShapeError):
            ad.conv2d(x, Tensor(np.ones((3, 2, 2, 2))), Tensor(np.ones(3)))
        with pytest.raises(ShapeError):
            ad.conv2d(x, Tensor(np.ones((3, 2, 3, 3))), Tensor(np.ones(2)))
        with pytest.raises(ShapeError):
            ad.conv2d(x, Tensor(np.ones((3, 2, 3, 3), np.float32)), Tensor(np.ones(3)))


class TestGridSample:
    def test_matches_oracle_with_zero_border(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 4, 5))
        grid = np.stack([rng.uniform(-2, 5, (3, 6)), rng.uniform(-2, 6, (3, 6))], -1)
        out = ad.bilinear_grid_sample(Tensor(x), grid)
        np.testing.assert_allclose(out.data, bilinear_oracle(x, grid), atol=1e-12)

    def test_integer_points_copy_pixels(self):
        x = np.arange(12.0).reshape(1, 3, 4)
        grid = np.array([[[0.0, 0.0], [2.0, 3.0], [1.0, 2.0]]])
        np.testing.assert_array_equal(ad.bilinear_grid_sample(Tensor(x), grid).data, [[[0, 11, 6]]])

    def test_outside_reads_zero(self):
        x = np.ones((1, 3, 3))
        grid = np.array([[[-1.0, 1.0], [1.0, 2.5]], [[-0.01, 0.0], [1.0, -0.5]]])
        np.testing.assert_array_equal(ad.bilinear_grid_sample(Tensor(x), grid).data, 0.0)

    def test_gradient_is_transpose(self):
        # <S x, y> == <x, S^T y> for the linear sampling operator
        rng = np.random.default_rng(4)
        x = rng.standard_normal((2, 4, 4))
        grid = np.stack([rng.uniform(-1, 4, (5, 3)), rng.uniform(-1, 4, (5, 3))], -1)
        y = rng.standard_normal((2, 5, 3))
        (gx,) = grads_of(lambda t: ad.sum(ad.mul(ad.bilinear_grid_sample(t, grid), Tensor(y))), x)
        lhs = (bilinear_oracle(x, grid) * y).sum()
        assert (gx * x).sum() == pytest.approx(lhs, rel=1e-12)


@pytest.mark.skipif(kernels.compiled_backend is None, reason="compiled kernels not built")
class TestBackendsAgree:
    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_bit_identical(self, dtype):
        rng = np.random.default_rng(5)
        py, cy = kernels.python_backend, kernels.compiled_backend
        x = rng.standard_normal((3, 7, 9)).astype(dtype)
        np.testing.assert_array_equal(py.im2col(x, 3, 3), cy.im2col(x, 3, 3))
        cols = rng.standard_normal((3 * 25, 63)).astype(dtype)
        np.testing.assert_array_equal(py.col2im(cols, 3, 7, 9, 5, 5), cy.col2im(cols, 3, 7, 9, 5, 5))
        grid = np.stack([rng.uniform(-2, 8, (6, 5)), rng.uniform(-2, 10, (6, 5))], -1)
        grid[0, 0] = -1.0
        np.testing.assert_array_equal(py.grid_sample(x, grid), cy.grid_sample(x, grid))
        g = rng.standard_normal((3, 6, 5)).astype(dtype)
        np.testing.assert_array_equal(py.grid_sample_backward(g, grid, 7, 9),
                                      cy.grid_sample_backward(g, grid, 7, 9))

    def test_switching(self):
        before = kernels.BACKEND
        try:
            kernels.use("python")
            assert kernels.backend is kernels.python_backend
            kernels.use("cython")
            assert kernels.backend is kernels.compiled_backend
        finally:
            kernels.use(before)
        with pytest.raises(ValueError):
            kernels.use("fortran")


class TestAdam:
    def test_two_steps_match_hand_computation(self):
        p = {"w": Tensor(np.array([1.0, -2.0]))}
        st = AdamState(lr=0.1)
        g1, g2 = np.array([0.5, -1.0]), np.array([0.1, 0.3])
        adam_step(p, {"w": g1}, st)
        # first step moves every coordinate by lr * sign(g) (up to eps)
        np.testing.assert_allclose(p["w"].data, [0.9, -1.9], atol=1e-7)
        adam_step(p, {"w": g2}, st)
        m = 0.9 * 0.1 * g1 + 0.1 * g2
        v = 0.999 * 0.001 * g1 ** 2 + 0.001 * g2 ** 2
        upd = 0.1 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
        np.testing.assert_allclose(p["w"].data, np.array([0.9, -1.9]) - upd, atol=1e-7)
        assert st.step == 2

    def test_zero_gradient_and_zero_lr_leave_params(self):
        p = {"w": Tensor(np.array([1.0, 2.0]))}
        adam_step(p, {"w": np.zeros(2)}, AdamState())
        np.testing.assert_array_equal(p["w"].data, [1.0, 2.0])
        adam_step(p, {"w": np.ones(2)}, AdamState(lr=0.0))
        np.testing.assert_array_equal(p["w"].data, [1.0, 2.0])

    def test_replaces_array(self):
        arr = np.array([1.0])
        p = {"w": Tensor(arr)}
        adam_step(p, {"w": np.ones(1)}, AdamState())
        assert p["w"].data is not arr

    def test_errors(self):
        p = {"w": Tensor(np.ones(2))}
        with pytest.raises(KeyError):
            adam_step(p, {}, AdamState())
        with pytest.raises(ValueError):
            adam_step(p, {"w": np.ones(3)}, AdamState())
