import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from retinexfuse import diffcore as dc


def rand_grid(shape, seed=0, lo=-1.0, hi=1.0, away=0.05):
    """Uniform grid with every value at least ``away`` from zero."""
    g = torch.Generator().manual_seed(seed)
    x = torch.rand(*shape, generator=g) * (hi - lo) + lo
    return torch.where(x.abs() < away, torch.sign(x) * away + x, x)


def weights_like(shape, seed=1):
    return torch.rand(*shape, generator=torch.Generator().manual_seed(seed))


def projected(op, w):
    """``x -> sum(w * op(x))`` in the precision of ``x``."""
    return lambda x: (op(x) * w.to(x.dtype)).sum()


class TestConv2d:
    def test_identity_kernel(self):
        x = torch.ones(1, 3, 3)
        k = torch.zeros(1, 1, 3, 3)
        k[0, 0, 1, 1] = 1.0
        out = dc.conv2d(x, k, torch.zeros(1))
        assert out.shape == (1, 1, 1)
        assert out.item() == 1.0

    def test_window_sums(self):
        x = torch.arange(16.0).reshape(1, 4, 4)
        out = dc.conv2d(x, torch.ones(1, 1, 3, 3), torch.zeros(1))
        # hand sums of the four 3x3 windows
        assert out.flatten().tolist() == [45.0, 54.0, 81.0, 90.0]

    def test_cross_correlation_not_flipped(self):
        x = torch.zeros(1, 3, 3)
        x[0, 0, 0] = 1.0
        k = torch.arange(9.0).reshape(1, 1, 3, 3)
        assert dc.conv2d(x, k, torch.zeros(1)).item() == 0.0

    @pytest.mark.parametrize("h, stride, expected", [(8, 1, 6), (8, 2, 3), (9, 2, 4), (3, 2, 1)])
    def test_output_size(self, h, stride, expected):
        out = dc.conv2d(torch.zeros(2, h, h), torch.zeros(5, 2, 3, 3), torch.zeros(5), stride)
        assert out.shape == (5, expected, expected)

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ValueError, match="input channels"):
            dc.conv2d(torch.zeros(2, 4, 4), torch.zeros(1, 3, 3, 3), torch.zeros(1))

    def test_bad_stride_rejected(self):
        with pytest.raises(ValueError):
            dc.conv2d(torch.zeros(1, 4, 4), torch.zeros(1, 1, 3, 3), torch.zeros(1), stride=3)


class TestReflectionPad:
    def test_row_mirror(self):
        a, b, c = 1.0, 2.0, 3.0
        x = torch.tensor([[a, b, c]] * 3)[None]
        out = dc.reflection_pad(x, 1)
        assert out.shape == (1, 5, 5)
        assert out[0, 2].tolist() == [b, a, b, c, b]

    def test_constant_stays_constant(self):
        out = dc.reflection_pad(torch.full((2, 4, 5), 0.3), 2)
        assert out.shape == (2, 8, 9)
        assert torch.all(out == torch.tensor(0.3))

    def test_gradient_scatters_to_mirror_source(self):
        x = rand_grid((1, 5, 5))
        leaf = x.clone().requires_grad_(True)
        dc.reflection_pad(leaf, 1).sum().backward()
        # pixel next to the left border, away from corners: itself + one mirror
        assert leaf.grad[0, 2, 1].item() == 2.0
        assert leaf.grad[0, 2, 2].item() == 1.0
        assert leaf.grad[0, 1, 1].item() == 4.0
        # independent check by central differences
        eps = 1e-3
        f = lambda t: float(dc.reflection_pad(t, 1).sum())
        plus, minus = x.double(), x.double()
        plus[0, 2, 1] += eps
        minus[0, 2, 1] -= eps
        assert (f(plus) - f(minus)) / (2 * eps) == pytest.approx(2.0, rel=1e-6)

    @pytest.mark.parametrize("pad", [0, 3, 4])
    def test_invalid_pad_rejected(self, pad):
        with pytest.raises(ValueError):
            dc.reflection_pad(torch.zeros(1, 3, 6), pad)


class TestBatchNorm:
    def test_constant_channel_to_shift(self):
        out = dc.batch_norm(torch.full((1, 3, 3), 7.0), torch.ones(1), torch.zeros(1))
        assert torch.all(out == 0)

    def test_unit_variance_unchanged(self):
        x = torch.tensor([[[-1.0, 1.0]]])
        out = dc.batch_norm(x, torch.ones(1), torch.zeros(1), eps=0.0)
        assert out.flatten().tolist() == [-1.0, 1.0]

    def test_hand_computed(self):
        x = torch.tensor([[[0.0, 2.0], [4.0, 6.0]]])
        out = dc.batch_norm(x, torch.tensor([2.0]), torch.tensor([1.0]))
        mean, var = 3.0, 5.0  # population variance of {0, 2, 4, 6}
        expected = [(v - mean) / math.sqrt(var + 1e-5) * 2 + 1 for v in (0, 2, 4, 6)]
        np.testing.assert_allclose(out.flatten().numpy(), expected, rtol=1e-6)
        np.testing.assert_allclose(expected, [-1.683, 0.105, 1.894, 3.683], atol=1e-3)

    def test_channels_independent(self):
        x = rand_grid((3, 4, 4))
        out = dc.batch_norm(x, torch.ones(3), torch.zeros(3))
        np.testing.assert_allclose(out.mean(dim=(1, 2)).numpy(), 0, atol=1e-6)
        np.testing.assert_allclose(out.var(dim=(1, 2), unbiased=False).numpy(), 1, atol=1e-3)


class TestActivations:
    def test_leaky_relu_values(self):
        out = dc.leaky_relu(torch.tensor([[[-1.0, 0.0, 2.0]]]), 0.2)
        np.testing.assert_allclose(out.flatten().numpy(), [-0.2, 0.0, 2.0], rtol=1e-7)

    def test_leaky_relu_positive_identity(self):
        x = rand_grid((1, 4, 4), lo=0.1, hi=2.0)
        assert torch.equal(dc.leaky_relu(x), x)

    def test_leaky_relu_slopes(self):
        x = torch.tensor([[[-3.0, 0.0]]], requires_grad=True)
        dc.leaky_relu(x, 0.2).sum().backward()
        np.testing.assert_allclose(x.grad.flatten().numpy(), [0.2, 0.2])
        h = 1e-3
        fd = (float(dc.leaky_relu(torch.tensor(-3.0 + h)[None, None, None], 0.2))
              - float(dc.leaky_relu(torch.tensor(-3.0 - h)[None, None, None], 0.2))) / (2 * h)
        assert fd == pytest.approx(0.2, rel=1e-3)

    def test_leaky_relu_slope_validated(self):
        with pytest.raises(ValueError):
            dc.leaky_relu(torch.zeros(1, 1, 1), 1.5)

    def test_sigmoid_values(self):
        assert dc.sigmoid(torch.zeros(1, 1, 1)).item() == 0.5
        sat = dc.sigmoid(torch.tensor([[[-100.0, 100.0]]])).flatten()
        assert sat[0].item() == pytest.approx(0.0, abs=1e-6)
        assert sat[1].item() == pytest.approx(1.0, abs=1e-6)
        assert torch.isfinite(sat).all()

    def test_sigmoid_derivative_at_zero(self):
        x = torch.zeros(1, 1, 1, requires_grad=True)
        dc.sigmoid(x).sum().backward()
        assert x.grad.item() == pytest.approx(0.25)
        h = 1e-3
        fd = (1 / (1 + math.exp(-h)) - 1 / (1 + math.exp(h))) / (2 * h)
        assert fd == pytest.approx(0.25, rel=1e-6)


class TestResampling:
    def test_bilinear_constant(self):
        out = dc.bilinear_resize(torch.full((1, 3, 5), 0.7), 2)
        assert out.shape == (1, 6, 10)
        np.testing.assert_allclose(out.numpy(), 0.7, rtol=1e-6)

    def test_bilinear_half_pixel_convention(self):
        out = dc.bilinear_resize(torch.tensor([[[0.0, 1.0]]]), 2)
        assert out.shape == (1, 2, 4)
        for row in out[0]:
            np.testing.assert_allclose(row.numpy(), [0.0, 0.25, 0.75, 1.0], atol=1e-7)

    def test_bilinear_factor_one_identity(self):
        x = rand_grid((2, 4, 4))
        assert torch.equal(dc.bilinear_resize(x, 1), x)

    def test_bilinear_non_integer_rejected(self):
        with pytest.raises(ValueError, match="non-integer"):
            dc.bilinear_resize(torch.zeros(1, 3, 3), 1.5)

    def test_area_constant(self):
        out = dc.area_downsample(torch.full((1, 8, 8), 0.4), 4)
        assert out.shape == (1, 2, 2)
        np.testing.assert_allclose(out.numpy(), 0.4, rtol=1e-6)

    def test_area_block_mean(self):
        assert dc.area_downsample(torch.tensor([[[0.0, 1.0], [2.0, 3.0]]]), 2).item() == 1.5

    def test_area_gradient(self):
        x = rand_grid((1, 4, 4)).requires_grad_(True)
        dc.area_downsample(x, 2).sum().backward()
        np.testing.assert_allclose(x.grad.numpy(), 0.25)
        err = dc.grad_check(lambda t: dc.area_downsample(t, 2).sum(), x.detach(), n_samples=16)
        assert err < 1e-6

    def test_area_factor_one_is_same_object(self):
        x = rand_grid((1, 4, 4))
        assert dc.area_downsample(x, 1) is x

    def test_area_indivisible_rejected(self):
        with pytest.raises(ValueError, match="divisible"):
            dc.area_downsample(torch.zeros(1, 6, 5), 2)


class TestLaplacian:
    def test_constant(self):
        assert torch.all(dc.laplacian(torch.full((1, 5, 5), 3.0)) == 0)

    @pytest.mark.parametrize("gy, gx", [(0.0, 1.0), (0.5, 0.0), (0.3, -0.2)])
    def test_affine_interior(self, gy, gx):
        y, x = torch.meshgrid(torch.arange(7.0), torch.arange(9.0), indexing="ij")
        img = (gy * y + gx * x + 0.1)[None]
        out = dc.laplacian(img)
        assert out.shape == img.shape
        np.testing.assert_allclose(out[0, 1:-1, 1:-1].numpy(), 0, atol=1e-5)

    def test_affine_border_mirrors_slope(self):
        # the mirrored neighbour reverses the slope, so borders read +/-2 * slope
        img = torch.arange(6.0).repeat(4, 1)[None] * 0.5
        out = dc.laplacian(img)[0]
        assert torch.allclose(out[:, 0], torch.full((4,), 1.0))
        assert torch.allclose(out[:, -1], torch.full((4,), -1.0))

    def test_spike_readout(self):
        img = torch.zeros(1, 5, 5)
        img[0, 2, 2] = 1.0
        out = dc.laplacian(img)[0]
        assert out[2, 2].item() == -4.0
        for i, j in [(1, 2), (3, 2), (2, 1), (2, 3)]:
            assert out[i, j].item() == 1.0
        assert out.abs().sum().item() == 8.0


class TestElementwise:
    def test_maximum(self):
        a = torch.tensor([[[1.0, 5.0]]])
        b = torch.tensor([[[3.0, 2.0]]])
        assert dc.maximum(a, b).flatten().tolist() == [3.0, 5.0]

    def test_maximum_tie_routes_to_first(self):
        a = torch.tensor([[[2.0]]], requires_grad=True)
        b = torch.tensor([[[2.0]]], requires_grad=True)
        dc.maximum(a, b).sum().backward()
        assert a.grad.item() == 1.0 and b.grad.item() == 0.0

    def test_log_abs(self):
        x = torch.tensor([[[-math.e]]])
        assert dc.log(dc.scalar_add(dc.abs(x), 0.0)).item() == pytest.approx(1.0, rel=1e-6)

    def test_log_rejects_nonpositive(self):
        with pytest.raises(ValueError, match="non-positive"):
            dc.log(torch.tensor([[[1.0, 0.0]]]))

    def test_abs_subgradient_zero(self):
        x = torch.zeros(1, 1, 1, requires_grad=True)
        dc.abs(x).sum().backward()
        assert x.grad.item() == 0.0

    def test_binary_shape_mismatch(self):
        for op in (dc.add, dc.sub, dc.mul, dc.maximum):
            with pytest.raises(ValueError, match="shape mismatch"):
                op(torch.zeros(1, 2, 2), torch.zeros(1, 2, 3))

    def test_scalar_ops(self):
        x = torch.tensor([[[1.0, -2.0]]])
        assert dc.scalar_mul(x, 3).flatten().tolist() == [3.0, -6.0]
        assert dc.scalar_add(x, 0.5).flatten().tolist() == [1.5, -1.5]

    def test_mul_grad(self):
        w = weights_like((1, 4, 4), seed=5)
        err = dc.grad_check(lambda x: dc.mul(x, w.to(x.dtype)).sum(), rand_grid((1, 4, 4)), n_samples=16)
        assert err <= 1e-3


class TestReduceMean:
    def test_values(self):
        assert dc.reduce_mean(torch.tensor([[[1.0, 2.0], [3.0, 4.0]]])).item() == 2.5
        assert dc.reduce_mean(torch.full((2, 3, 3), 0.8)).item() == pytest.approx(0.8)

    def test_gradient(self):
        x = rand_grid((2, 3, 4)).requires_grad_(True)
        dc.backward(dc.reduce_mean(x))
        np.testing.assert_allclose(x.grad.numpy(), 1 / 24, rtol=1e-6)


class TestTape:
    def test_mean_backward(self):
        x = torch.zeros(1, 2, 2, requires_grad=True)
        dc.backward(dc.reduce_mean(x))
        assert torch.all(x.grad == 0.25)

    def test_sigmoid_sum_backward(self):
        x = torch.zeros(1, 3, 3, requires_grad=True)
        dc.backward(dc.sigmoid(x).sum())
        assert torch.all(x.grad == 0.25)

    def test_non_scalar_rejected(self):
        x = torch.zeros(1, 2, 2, requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            dc.backward(x * 2)

    def test_gradients_accumulate(self):
        x = torch.zeros(1, 2, 2, requires_grad=True)
        loss = dc.reduce_mean(dc.sigmoid(x))
        dc.backward(loss, retain_graph=True)
        first = x.grad.clone()
        dc.backward(loss)
        assert torch.equal(x.grad, 2 * first)
        dc.zero_grad([x])
        assert torch.all(x.grad == 0)

    def test_forward_deterministic(self):
        x = rand_grid((3, 8, 8))
        k = torch.randn(4, 3, 3, 3, generator=torch.Generator().manual_seed(3))
        run = lambda: dc.laplacian(dc.conv2d(dc.reflection_pad(x, 1), k, torch.zeros(4)))
        assert torch.equal(run(), run())


class TestGradCheck:
    def test_linear_exact(self):
        assert dc.grad_check(dc.reduce_mean, rand_grid((1, 5, 5))) <= 1e-6

    def test_mean_abs(self):
        err = dc.grad_check(lambda x: dc.reduce_mean(dc.abs(x)), rand_grid((1, 5, 5)))
        assert err <= 1e-3

    def test_detects_wrong_gradient(self):
        class Wrong(torch.autograd.Function):
            @staticmethod
            def forward(ctx, x):
                return x * x

            @staticmethod
            def backward(ctx, g):
                return g  # should be 2x g

        err = dc.grad_check(lambda x: Wrong.apply(x).sum(), rand_grid((1, 3, 3), lo=0.5, hi=1.0))
        assert err > 0.1


OPS = {
    "conv2d": (lambda x: dc.conv2d(x, torch.randn(2, 1, 3, 3, generator=torch.Generator().manual_seed(4)).to(x.dtype), torch.zeros(2, dtype=x.dtype)), (1, 6, 6)),
    "conv2d_stride2": (lambda x: dc.conv2d(x, torch.randn(2, 1, 3, 3, generator=torch.Generator().manual_seed(4)).to(x.dtype), torch.zeros(2, dtype=x.dtype), 2), (1, 7, 7)),
    "reflection_pad": (lambda x: dc.reflection_pad(x, 1), (1, 6, 6)),
    "batch_norm": (lambda x: dc.batch_norm(x, torch.full((1,), 1.5, dtype=x.dtype), torch.full((1,), 0.1, dtype=x.dtype)), (1, 6, 6)),
    "leaky_relu": (dc.leaky_relu, (1, 6, 6)),
    "sigmoid": (dc.sigmoid, (1, 6, 6)),
    "bilinear_resize": (lambda x: dc.bilinear_resize(x, 2), (1, 6, 6)),
    "area_downsample": (lambda x: dc.area_downsample(x, 2), (1, 6, 6)),
    "laplacian": (dc.laplacian, (1, 6, 6)),
    "abs": (dc.abs, (1, 6, 6)),
    "log": (lambda x: dc.log(dc.scalar_add(dc.abs(x), 0.1)), (1, 6, 6)),
    "scalar_mul": (lambda x: dc.scalar_mul(x, -1.7), (1, 6, 6)),
    "scalar_add": (lambda x: dc.scalar_add(x, 0.3), (1, 6, 6)),
    "mul_self": (lambda x: dc.mul(x, dc.sigmoid(x)), (1, 6, 6)),
    "add_self": (lambda x: dc.add(x, dc.sigmoid(x)), (1, 6, 6)),
    "sub_self": (lambda x: dc.sub(x, dc.sigmoid(x)), (1, 6, 6)),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name):
    op, shape = OPS[name]
    x = rand_grid(shape, seed=7)
    out_shape = op(x).shape
    f = projected(op, weights_like(out_shape, seed=8))
    assert dc.grad_check(f, x, step=1e-3, n_samples=36) <= 1e-3


def test_maximum_gradient_away_from_ties():
    a = rand_grid((1, 5, 5), seed=1)
    b = a + torch.where(rand_grid((1, 5, 5), seed=2) > 0, 0.3, -0.3)
    w = weights_like((1, 5, 5))
    err_a = dc.grad_check(lambda x: (dc.maximum(x, b.to(x.dtype)) * w.to(x.dtype)).sum(), a)
    err_b = dc.grad_check(lambda x: (dc.maximum(a.to(x.dtype), x) * w.to(x.dtype)).sum(), b)
    assert max(err_a, err_b) <= 1e-3


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, (1, 4, 4), elements=st.floats(-200, 200, width=32)))
def test_sigmoid_open_interval(values):
    out = dc.sigmoid(torch.from_numpy(values))
    assert torch.all(out > 0) and torch.all(out < 1)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, (1, 4, 4),
              elements=st.floats(-10, 10, width=32, allow_subnormal=False)))
def test_leaky_relu_sign_preserving(values):
    x = torch.from_numpy(values)
    out = dc.leaky_relu(x)
    nz = x != 0
    assert torch.equal(torch.sign(out[nz]), torch.sign(x[nz]))


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.sampled_from([1, 2, 4]))
def test_area_downsample_of_constant(c, factor):
    out = dc.area_downsample(torch.full((1, 8, 8), c), factor)
    np.testing.assert_allclose(out.numpy(), np.float32(c), rtol=1e-6, atol=1e-6)
