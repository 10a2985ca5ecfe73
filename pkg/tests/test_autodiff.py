import numpy as np
import pytest

from voxelpaint import autodiff as ad


def conv2d_loop(x, w, b):
    """Six-nested-loop reference for zero-padded 'same' cross-correlation."""
    co, ci, k, _ = w.shape
    _, h, wd = x.shape
    r = k // 2
    out = np.zeros((co, h, wd))
    for o in range(co):
        for y in range(h):
            for z in range(wd):
                acc = b[o]
                for i in range(ci):
                    for dy in range(k):
                        for dz in range(k):
                            yy, zz = y + dy - r, z + dz - r
                            if 0 <= yy < h and 0 <= zz < wd:
                                acc += w[o, i, dy, dz] * x[i, yy, zz]
                out[o, y, z] = acc
    return out


class TestConv2d:
    def test_identity_kernel(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 5, 5))
        w = np.zeros((2, 2, 3, 3))
        w[0, 0, 1, 1] = 1.0
        w[1, 1, 1, 1] = 1.0
        out = ad.conv2d(ad.Tensor(x), ad.Tensor(w), ad.Tensor(np.zeros(2)))
        assert np.array_equal(out.data, x)

    def test_zero_padding_count(self):
        x = np.ones((1, 3, 3))
        w = np.ones((1, 1, 3, 3))
        out = ad.conv2d(ad.Tensor(x), ad.Tensor(w), ad.Tensor(np.zeros(1))).data
        assert out[0, 1, 1] == 9.0
        assert out[0, 0, 0] == 4.0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((2, 5, 5))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        out = ad.conv2d(ad.Tensor(x), ad.Tensor(w), ad.Tensor(b)).data
        assert np.max(np.abs(out - conv2d_loop(x, w, b))) < 1e-12

    def test_shape_mismatch_names_axis(self):
        x = ad.Tensor(np.zeros((2, 4, 4)))
        w = ad.Tensor(np.zeros((1, 3, 3, 3)))
        with pytest.raises(ad.ShapeError, match="channel"):
            ad.conv2d(x, w, ad.Tensor(np.zeros(1)))

    def test_even_kernel_rejected(self):
        with pytest.raises(ad.ShapeError, match="odd"):
            ad.conv2d(ad.Tensor(np.zeros((1, 4, 4))),
                      ad.Tensor(np.zeros((1, 1, 2, 2))), None)


class TestConvAxis1d:
    def test_length_one_identity(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 4, 3, 3))
        w = np.zeros((2, 2, 1))
        w[0, 0, 0] = 1.0
        w[1, 1, 0] = 1.0
        out = ad.conv_axis1d(ad.Tensor(x), ad.Tensor(w))
        assert np.array_equal(out.data, x)

    def test_boundary_scaling_of_averaging_kernel(self):
        x = np.ones((1, 5, 2, 2))
        w = np.full((1, 1, 3), 1.0 / 3.0)
        out = ad.conv_axis1d(ad.Tensor(x), ad.Tensor(w)).data
        assert np.allclose(out[0, 1:-1], 1.0)
        assert np.allclose(out[0, 0], 2.0 / 3.0)
        assert np.allclose(out[0, -1], 2.0 / 3.0)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((2, 4, 3, 3))
        w = rng.standard_normal((3, 2, 3))
        out = ad.conv_axis1d(ad.Tensor(x), ad.Tensor(w)).data
        ref = np.zeros((3, 4, 3, 3))
        for o in range(3):
            for d in range(4):
                for i in range(2):
                    for dd in range(3):
                        src = d + dd - 1
                        if 0 <= src < 4:
                            ref[o, d] += w[o, i, dd] * x[i, src]
        assert np.max(np.abs(out - ref)) < 1e-12

    def test_axis_out_of_range(self):
        with pytest.raises(ad.ShapeError, match="axis"):
            ad.conv_axis1d(ad.Tensor(np.zeros((1, 2, 2, 2))),
                           ad.Tensor(np.zeros((1, 1, 3))), axis=4)


class TestConv3d:
    def test_identity_kernel(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((1, 4, 4, 4))
        w = np.zeros((1, 1, 1, 1, 1))
        w[0, 0, 0, 0, 0] = 1.0
        out = ad.conv3d(ad.Tensor(x), ad.Tensor(w), ad.Tensor(np.zeros(1)))
        assert np.array_equal(out.data, x)

    def test_ones_kernel_center(self):
        x = np.ones((1, 5, 5, 5))
        w = np.ones((1, 1, 3, 3, 3))
        out = ad.conv3d(ad.Tensor(x), ad.Tensor(w), ad.Tensor(np.zeros(1))).data
        assert out[0, 2, 2, 2] == 27.0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((2, 3, 3, 3))
        w = rng.standard_normal((2, 2, 3, 3, 3))
        b = rng.standard_normal(2)
        out = ad.conv3d(ad.Tensor(x), ad.Tensor(w), ad.Tensor(b)).data
        ref = np.zeros((2, 3, 3, 3))
        for o in range(2):
            ref[o] += b[o]
            for i in range(2):
                for dz in range(3):
                    for dy in range(3):
                        for dx in range(3):
                            for z in range(3):
                                for y in range(3):
                                    for xx in range(3):
                                        sz, sy, sx = z + dz - 1, y + dy - 1, xx + dx - 1
                                        if 0 <= sz < 3 and 0 <= sy < 3 and 0 <= sx < 3:
                                            ref[o, z, y, xx] += w[o, i, dz, dy, dx] * x[i, sz, sy, sx]
        assert np.max(np.abs(out - ref)) < 1e-12


class TestLinear:
    def test_identity(self):
        x = np.array([1.0, -2.0, 3.0])
        out = ad.linear(ad.Tensor(x), ad.Tensor(np.eye(3)), ad.Tensor(np.zeros(3)))
        assert np.array_equal(out.data, x)

    def test_zero_weight_gives_bias(self):
        v = np.array([4.0, 5.0])
        out = ad.linear(ad.Tensor(np.ones(3)), ad.Tensor(np.zeros((2, 3))), ad.Tensor(v))
        assert np.array_equal(out.data, v)

    def test_dot_product_oracle(self):
        rng = np.random.default_rng(7)
        x, w, b = rng.standard_normal(5), rng.standard_normal((4, 5)), rng.standard_normal(4)
        out = ad.linear(ad.Tensor(x), ad.Tensor(w), ad.Tensor(b)).data
        ref = np.array([sum(w[i, j] * x[j] for j in range(5)) + b[i] for i in range(4)])
        assert np.max(np.abs(out - ref)) < 1e-12


class TestElementwiseAndStructural:
    def test_silu_zero(self):
        assert ad.silu(ad.Tensor(np.array([0.0]))).data[0] == 0.0

    def test_group_norm_constant_channel_gives_beta(self):
        x = np.full((4, 3, 3), 2.5)
        gamma, beta = np.ones(4), np.array([0.1, 0.2, 0.3, 0.4])
        out = ad.group_norm(ad.Tensor(x), 2, ad.Tensor(gamma), ad.Tensor(beta)).data
        for c in range(4):
            assert np.allclose(out[c], beta[c])

    def test_avg_pool_vector(self):
        out = ad.avg_pool(ad.Tensor(np.array([0.0, 1.0, 2.0, 3.0])), 2)
        assert np.array_equal(out.data, [0.5, 2.5])

    def test_avg_pool_divisibility_error(self):
        with pytest.raises(ad.ShapeError, match="divisible"):
            ad.avg_pool(ad.Tensor(np.zeros((1, 3, 4))), 2)

    def test_group_norm_divisibility_error(self):
        with pytest.raises(ad.ShapeError, match="divisible"):
            ad.group_norm(ad.Tensor(np.zeros((3, 2, 2))), 2,
                          ad.Tensor(np.ones(3)), ad.Tensor(np.zeros(3)))

    def test_concat_then_slice_recovers_inputs_bitwise(self):
        rng = np.random.default_rng(8)
        a = rng.standard_normal((2, 3, 3))
        b = rng.standard_normal((3, 3, 3))
        cat = ad.concat_channels([ad.Tensor(a), ad.Tensor(b)])
        assert np.array_equal(ad.slice_channels(cat, 0, 2).data, a)
        assert np.array_equal(ad.slice_channels(cat, 2, 5).data, b)

    def test_pool_then_upsample_preserves_block_means(self):
        rng = np.random.default_rng(9)
        x = ad.Tensor(rng.standard_normal((2, 4, 4)))
        pooled = ad.avg_pool(x, 2)
        up = ad.nearest_upsample(pooled, 2)
        assert np.array_equal(ad.avg_pool(up, 2).data, pooled.data)

    def test_upsample_shape(self):
        x = ad.Tensor(np.arange(8.0).reshape(2, 2, 2))
        assert ad.nearest_upsample(x, 2).shape == (2, 4, 4)

    def test_subsample_inverts_zero_stuffing(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((1, 4, 4, 4))
        out = ad.subsample(ad.Tensor(x), 2)
        assert np.array_equal(out.data, x[:, ::2, ::2, ::2])


class TestMseLoss:
    def test_identical_inputs(self):
        x = np.array([1.0, 2.0])
        assert ad.mse_loss(ad.Tensor(x), ad.Tensor(x.copy())).item() == 0.0

    def test_hand_case(self):
        loss = ad.mse_loss(ad.Tensor(np.zeros(2)), ad.Tensor(np.array([1.0, 3.0])))
        assert loss.item() == 5.0

    def test_summation_oracle(self):
        rng = np.random.default_rng(11)
        a, b = rng.standard_normal(17), rng.standard_normal(17)
        ref = sum((ai - bi) ** 2 for ai, bi in zip(a, b)) / 17
        assert abs(ad.mse_loss(ad.Tensor(a), ad.Tensor(b)).item() - ref) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ad.ShapeError):
            ad.mse_loss(ad.Tensor(np.zeros(2)), ad.Tensor(np.zeros(3)))


class TestBackward:
    def test_sum_grad_is_one(self):
        x = ad.Tensor(np.array(3.0))
        with ad.Tape() as tape:
            loss = ad.sum_all(x)
            tape.backward(loss)
        assert x.grad == 1.0

    def test_square_grad(self):
        x = ad.Tensor(np.array(3.0))
        with ad.Tape() as tape:
            loss = ad.sum_all(ad.mul(x, x))
            tape.backward(loss)
        assert x.grad == 6.0

    def test_double_backward_raises(self):
        x = ad.Tensor(np.array(2.0))
        with ad.Tape() as tape:
            loss = ad.sum_all(ad.mul(x, x))
            tape.backward(loss)
            with pytest.raises(RuntimeError, match="twice"):
                tape.backward(loss)

    def test_clear_frees_record(self):
        x = ad.Tensor(np.ones(3))
        with ad.Tape() as tape:
            ad.sum_all(x)
            assert len(tape.nodes) == 1
            tape.clear()
            assert tape.nodes == []

    def test_parameter_grad_accumulates_until_zeroed(self):
        p = ad.Parameter(np.array([1.0, 2.0]))
        for _ in range(2):
            with ad.Tape() as tape:
                loss = ad.sum_all(ad.mul(p, p))
                tape.backward(loss)
        assert np.array_equal(p.grad, [4.0, 8.0])
        ad.zero_grad([p])
        assert np.array_equal(p.grad, [0.0, 0.0])

    def test_no_tape_records_nothing(self):
        x = ad.Tensor(np.ones(3))
        out = ad.sum_all(x)
        assert out._grad_fn is None and out._parents == ()


class TestAdam:
    def test_zero_grad_leaves_value(self):
        p = ad.Parameter(np.array([1.0]))
        ad.adam_step([p], lr=0.1)
        assert p.data[0] == 1.0

    def test_first_step_magnitude(self):
        p = ad.Parameter(np.array([1.0]))
        p.grad[:] = 1.0
        ad.adam_step([p], lr=0.1)
        assert abs((1.0 - p.data[0]) - 0.1) < 1e-6

    def test_grads_untouched(self):
        p = ad.Parameter(np.array([1.0]))
        p.grad[:] = 0.5
        ad.adam_step([p], lr=0.1)
        assert p.grad[0] == 0.5

    def test_quadratic_bowl_monotone(self):
        p = ad.Parameter(np.array([1.0, -2.0]))
        losses = []
        for _ in range(10):
            ad.zero_grad([p])
            with ad.Tape() as tape:
                loss = ad.sum_all(ad.mul(p, p))
                tape.backward(loss)
            losses.append(loss.item())
            ad.adam_step([p], lr=0.05)
        assert all(b < a for a, b in zip(losses, losses[1:]))


class TestFiniteGuard:
    @pytest.mark.filterwarnings("ignore:overflow")
    def test_overflow_raises(self):
        with pytest.raises(ad.NumericError):
            ad.scale(ad.Tensor(np.array([1e308])), 1e10)

    def test_silu_extreme_inputs_stay_finite(self):
        out = ad.silu(ad.Tensor(np.array([-800.0, 800.0])))
        assert np.all(np.isfinite(out.data))
