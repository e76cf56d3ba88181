import io

import numpy as np
import pytest

from mccount import tensor as T
from mccount.tensor import GradTape, ShapeError, Tensor

from oracles import conv2d_scalar


def grad_of(f, x, eps=1e-6):
    x.zero_grad()
    with GradTape() as tape:
        tape.backward(f(x))
    analytic = x.grad.copy()
    fd = T.finite_diff_grad(f, x, eps).data
    return T.relative_grad_error(analytic, fd)


class TestMatmul:
    def test_identity(self):
        a = Tensor(np.arange(4.0).reshape(2, 2))
        out = T.matmul(Tensor(np.eye(2)), a)
        assert np.array_equal(out.data, a.data)

    def test_ones_row_times_column(self):
        k = 7
        out = T.matmul(Tensor(np.ones((1, k))), Tensor(np.ones((k, 1))))
        assert out.data.shape == (1, 1)
        assert out.data[0, 0] == k

    def test_gradient_vs_finite_difference(self):
        rng = np.random.default_rng(0)
        a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=(3, 2)))
        s = Tensor(rng.normal(size=(2, 2)))
        err = grad_of(lambda t: T.tsum(T.mul(T.matmul(t, b), s)), a)
        assert err <= 1e-6

    def test_inner_mismatch(self):
        with pytest.raises(ShapeError):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


class TestSoftmax:
    def test_symmetry(self):
        out = T.softmax_axis(Tensor([0.0, 0.0, 0.0]), 0)
        assert np.allclose(out.data, 1 / 3, atol=1e-15)

    def test_shift_invariance(self):
        # shifts small enough that x + c is exactly representable stay under
        # 1e-12; beyond that the discrepancy is input quantization, not softmax
        rng = np.random.default_rng(1)
        x = rng.normal(size=(5,))
        for c in (1.0, -47.0, 100.0, 1e3):
            a = T.softmax_axis(Tensor(x), 0).data
            b = T.softmax_axis(Tensor(x + c), 0).data
            assert np.abs(a - b).max() <= 1e-12

    def test_slices_sum_to_one(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(scale=10, size=(4, 6)))
        for axis in (0, 1):
            sums = T.softmax_axis(x, axis).data.sum(axis=axis)
            assert np.abs(sums - 1).max() <= 1e-12

    def test_gradient(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=(4,)), requires_grad=True)
        s = Tensor(rng.normal(size=(4,)))
        err = grad_of(lambda t: T.tsum(T.mul(T.softmax_axis(t, 0), s)), x)
        assert err <= 1e-6


class TestConv2d:
    def test_identity_kernel(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.normal(size=(1, 5, 5)))
        k = Tensor(np.ones((1, 1, 1, 1)))
        out = T.conv2d(x, k, stride=1, pad=0)
        assert np.array_equal(out.data, x.data)

    def test_box_sum(self):
        x = Tensor(np.ones((1, 5, 5)))
        k = Tensor(np.ones((1, 1, 3, 3)))
        out = T.conv2d(x, k, stride=1, pad=0)
        assert out.data.shape == (1, 3, 3)
        assert np.all(out.data == 9.0)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(5)
        for stride, pad in ((1, 0), (1, 1), (2, 0), (3, 1)):
            h = stride * 3 + 3 - 2 * pad
            x = rng.normal(size=(2, h, h))
            w = rng.normal(size=(3, 2, 3, 3))
            got = T.conv2d(Tensor(x), Tensor(w), stride, pad).data
            want = conv2d_scalar(x, w, stride, pad)
            assert np.abs(got - want).max() <= 1e-12

    def test_gradients_vs_finite_difference(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.normal(size=(2, 6, 6)), requires_grad=True)
        w = Tensor(rng.normal(size=(2, 2, 3, 3)), requires_grad=True)
        s = Tensor(rng.normal(size=(2, 6, 6)))
        err_x = grad_of(lambda t: T.tsum(T.mul(T.conv2d(t, w, 1, 1), s)), x)
        err_w = grad_of(lambda t: T.tsum(T.mul(T.conv2d(x, t, 1, 1), s)), w)
        assert err_x <= 1e-5
        assert err_w <= 1e-5

    def test_even_kernel_rejected(self):
        with pytest.raises(ShapeError):
            T.conv2d(Tensor(np.ones((1, 6, 6))), Tensor(np.ones((1, 1, 2, 2))))

    def test_non_integral_output_rejected(self):
        # (6 + 0 - 3) / 2 is not integral
        with pytest.raises(ShapeError):
            T.conv2d(Tensor(np.ones((1, 6, 6))), Tensor(np.ones((1, 1, 3, 3))),
                     stride=2, pad=0)


class TestUpsample:
    def test_constancy(self):
        for factor in (2, 4):
            out = T.upsample_bilinear(Tensor(np.full((2, 3, 3), 1.7)), factor)
            assert out.data.shape == (2, 3 * factor, 3 * factor)
            assert np.abs(out.data - 1.7).max() <= 1e-12

    def test_single_pixel_copies(self):
        out = T.upsample_bilinear(Tensor(np.full((1, 1, 1), 4.25)), 2)
        assert out.data.shape == (1, 2, 2)
        assert np.all(out.data == 4.25)

    def test_gradient(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(size=(1, 3, 3)), requires_grad=True)
        s = Tensor(rng.normal(size=(1, 6, 6)))
        err = grad_of(lambda t: T.tsum(T.mul(T.upsample_bilinear(t, 2), s)), x)
        assert err <= 1e-5

    def test_bad_factor(self):
        with pytest.raises(ShapeError):
            T.upsample_bilinear(Tensor(np.ones((1, 2, 2))), 3)


class TestSumPool:
    def test_block_of_ones(self):
        out = T.sum_pool2d(Tensor(np.ones((1, 4, 4))), 2)
        assert np.all(out.data == 4.0)
        assert out.data.sum() == 16.0

    def test_factor_one_identity(self):
        rng = np.random.default_rng(8)
        x = Tensor(rng.normal(size=(2, 3, 3)))
        assert np.array_equal(T.sum_pool2d(x, 1).data, x.data)

    def test_mass_preserved(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.normal(size=(1, 8, 8)))
        total = x.data.sum()
        for f in (2, 4, 8):
            pooled = T.sum_pool2d(x, f).data.sum()
            assert abs(pooled - total) <= 1e-12 * max(1.0, abs(total))

    def test_indivisible_rejected(self):
        with pytest.raises(ShapeError):
            T.sum_pool2d(Tensor(np.ones((1, 6, 6))), 4)


class TestConcat:
    def test_single_identity(self):
        x = Tensor(np.arange(6.0).reshape(2, 3))
        assert np.array_equal(T.concat([x], 0).data, x.data)

    def test_channel_concat(self):
        rng = np.random.default_rng(10)
        a = Tensor(rng.normal(size=(3, 4, 4)))
        b = Tensor(rng.normal(size=(1, 4, 4)))
        out = T.concat([a, b], 0)
        assert out.data.shape == (4, 4, 4)
        assert np.array_equal(out.data[:3], a.data)
        assert np.array_equal(out.data[3:], b.data)

    def test_split_round_trip_bit_exact(self):
        rng = np.random.default_rng(11)
        x = Tensor(rng.normal(size=(5, 3, 3)))
        parts = [T.narrow(x, 0, 0, 2), T.narrow(x, 0, 2, 3)]
        back = T.concat(parts, 0)
        assert np.array_equal(back.data, x.data)

    def test_off_axis_mismatch(self):
        with pytest.raises(ShapeError):
            T.concat([Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4)))], 0)


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        with GradTape() as tape:
            tape.backward(T.tsum(x))
        assert np.array_equal(x.grad, np.ones((2, 3)))

    def test_half_sum_of_squares_gives_x(self):
        rng = np.random.default_rng(12)
        x = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        with GradTape() as tape:
            loss = T.mul(T.tsum(T.mul(x, x)), Tensor(0.5))
            tape.backward(loss)
        assert np.abs(x.grad - x.data).max() <= 1e-12

    def test_accumulates_across_uses(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        with GradTape() as tape:
            loss = T.tsum(T.add(T.mul(x, x), x))  # d/dx (x^2 + x) = 2x + 1
            tape.backward(loss)
        assert np.allclose(x.grad, [5.0])

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones((2,)), requires_grad=True)
        with GradTape() as tape:
            y = T.mul(x, x)
            with pytest.raises(ShapeError):
                tape.backward(y)

    def test_disconnected_loss_rejected(self):
        with GradTape() as tape:
            with pytest.raises(ValueError):
                tape.backward(Tensor(1.0))

    def test_finite_outputs_through_composition(self):
        rng = np.random.default_rng(13)
        x = Tensor(rng.normal(scale=50, size=(3, 8, 8)), requires_grad=True)
        w = Tensor(rng.normal(size=(2, 3, 3, 3)), requires_grad=True)
        with GradTape() as tape:
            y = T.softmax_axis(T.silu(T.conv2d(x, w, 1, 1)), 0)
            out = T.tsum(y)
            tape.backward(out)
        assert np.isfinite(y.data).all()
        assert np.isfinite(x.grad).all()
        assert np.isfinite(w.grad).all()


class TestFiniteDiff:
    def test_sum_estimate(self):
        x = Tensor(np.arange(4.0))
        est = T.finite_diff_grad(lambda t: T.tsum(t), x)
        assert np.abs(est.data - 1).max() <= 1e-9

    def test_bilinear_exactness(self):
        # f = x*y at (2, 3): central differences are exact for bilinear maps
        xy = Tensor(np.array([2.0, 3.0]))

        def f(t):
            return T.tsum(T.mul(T.narrow(t, 0, 0, 1), T.narrow(t, 0, 1, 1)))
        est = T.finite_diff_grad(f, xy, eps=1e-6)
        assert np.abs(est.data - np.array([3.0, 2.0])).max() <= 1e-8

    def test_bad_eps(self):
        with pytest.raises(ValueError):
            T.finite_diff_grad(lambda t: T.tsum(t), Tensor([1.0]), eps=0.0)


class TestSerialization:
    def test_round_trip(self):
        rng = np.random.default_rng(14)
        buf = io.BytesIO()
        arrays = [rng.normal(size=(2, 3, 4)), np.asarray(3.5), rng.normal(size=(7,))]
        for a in arrays:
            T.write_array(buf, a)
        buf.seek(0)
        for a in arrays:
            back = T.read_array(buf)
            assert back.shape == a.shape
            assert np.array_equal(back, a)

    def test_header_layout_little_endian(self):
        buf = io.BytesIO()
        T.write_array(buf, np.array([[1.0, 2.0]]))
        raw = buf.getvalue()
        assert np.frombuffer(raw[:8], "<u8")[0] == 2          # rank
        assert tuple(np.frombuffer(raw[8:24], "<u8")) == (1, 2)  # extents
        assert np.array_equal(np.frombuffer(raw[24:], "<f8"), [1.0, 2.0])

    def test_truncated_payload(self):
        buf = io.BytesIO()
        T.write_array(buf, np.ones((4,)))
        raw = buf.getvalue()[:-8]
        with pytest.raises(IOError):
            T.read_array(io.BytesIO(raw))

    def test_file_round_trip(self, tmp_path):
        t = Tensor(np.random.default_rng(15).normal(size=(3, 5)))
        path = tmp_path / "t.t64"
        T.save_tensor(path, t)
        back = T.load_tensor(path)
        assert np.array_equal(back.data, t.data)
