import numpy as np
import pytest

from ChannelGating.Tensors import (
    CheckpointFormatError,
    Tensor,
    backward,
    get_dtype,
    load_checkpoint,
    precision,
    save_checkpoint,
)
from ChannelGating.Tensors import Functional as F
from ChannelGating.Tensors import Kernels
from ChannelGating.Tensors.constants import FD_RTOL_64
from ChannelGating.Tensors.Gradcheck import check_gradients
from ChannelGating.Tensors.Module import BatchNorm, Conv2d, Linear


def naive_conv2d(x, w, stride, padding):
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for b in range(n):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[b, :, i * stride : i * stride + k, j * stride : j * stride + k]
                    out[b, o, i, j] = np.sum(patch * w[o])
    return out


class TestKernels:
    @pytest.mark.parametrize("stride,padding,k", [(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 3, 7)])
    def test_conv2d_matches_loops(self, rng, stride, padding, k):
        x = rng.normal(size=(2, 3, 9, 9))
        w = rng.normal(size=(4, 3, k, k))
        np.testing.assert_allclose(Kernels.conv2d(x, w, stride, padding), naive_conv2d(x, w, stride, padding), atol=1e-10)

    @pytest.mark.parametrize("k", [1, 3])
    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_conv2d_small_shape_sweep(self, rng, n, k):
        for c in range(1, 5):
            for h in range(1, 9):
                for w in range(1, 9):
                    x = rng.normal(size=(n, c, h, w))
                    weight = rng.normal(size=(5 - c, c, k, k))
                    np.testing.assert_allclose(
                        Kernels.conv2d(x, weight, 1, k // 2), naive_conv2d(x, weight, 1, k // 2), atol=1e-9, err_msg=f"{x.shape} k={k}"
                    )

    def test_conv2d_rejects_channel_mismatch(self, rng):
        with pytest.raises(ValueError, match="conv2d"):
            Kernels.conv2d(rng.normal(size=(1, 3, 4, 4)), rng.normal(size=(2, 4, 3, 3)), 1, 1)

    def test_conv_output_size(self):
        assert Kernels.conv_output_size(224, 7, 2, 3) == 112
        assert Kernels.conv_output_size(32, 3, 1, 1) == 32
        assert Kernels.conv_output_size(32, 3, 2, 1) == 16

    def test_max_pool_picks_window_maximum(self):
        x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
        out, _ = Kernels.max_pool2d(x, 3, 2, 1)
        np.testing.assert_array_equal(out[0, 0], [[5, 7], [13, 15]])

    def test_undo_sort_inverts_sort(self, rng):
        x = rng.normal(size=(6, 3))
        p = Kernels.stable_argsort(x, axis=0)
        sorted_x = np.take_along_axis(x, p, axis=0)
        np.testing.assert_array_equal(Kernels.undo_sort(sorted_x, p, axis=0), x)

    def test_stable_argsort_keeps_ties_in_order(self):
        p = Kernels.stable_argsort(np.array([1.0, 0.0, 1.0, 0.0]))
        np.testing.assert_array_equal(p, [1, 3, 0, 2])


class TestTape:
    def test_gradients_accumulate_across_backward_calls(self):
        a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        backward((a * 3.0).sum())
        backward((a * 3.0).sum())
        np.testing.assert_allclose(a.grad, [6.0, 6.0])

    def test_backward_needs_scalar_root(self):
        a = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            backward(a * 2.0)

    def test_backward_returns_zeros_for_unreached_inputs(self):
        a = Tensor(np.ones(2), requires_grad=True)
        b = Tensor(np.ones(3), requires_grad=True)
        grads = backward(a.sum(), [a, b])
        np.testing.assert_array_equal(grads[1], np.zeros(3))

    def test_precision_is_scoped(self):
        assert get_dtype() == np.float32
        with precision():
            assert Tensor([1.0]).data.dtype == np.float64
        assert Tensor([1.0]).data.dtype == np.float32

    def test_sort_routes_gradient_to_original_positions(self):
        x = Tensor(np.array([3.0, 1.0, 2.0]), requires_grad=True)
        sorted_x, p = F.sort_with_indices(x)
        np.testing.assert_array_equal(sorted_x.data, [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(p, [1, 2, 0])
        backward((sorted_x * np.array([10.0, 20.0, 30.0])).sum())
        np.testing.assert_array_equal(x.grad, [30.0, 10.0, 20.0])

    def test_straight_through_forwards_hard_and_passes_gradient(self):
        soft = Tensor(np.array([[0.2, 0.7]]), requires_grad=True)
        out = F.straight_through(soft, np.array([[0.0, 1.0]]))
        np.testing.assert_array_equal(out.data, [[0.0, 1.0]])
        backward((out * np.array([[2.0, 3.0]])).sum())
        np.testing.assert_allclose(soft.grad, [[2.0, 3.0]])


class TestGradients:
    """
    Central differences in 64-bit mode.
    """

    def test_conv2d(self, rng):
        with precision():
            x = Tensor(rng.normal(size=(2, 3, 5, 5)), requires_grad=True)
            w = Tensor(rng.normal(size=(4, 3, 3, 3)), requires_grad=True)
            r = rng.normal(size=(2, 4, 3, 3))
            result = check_gradients("conv2d", lambda: (F.conv2d(x, w, 2, 1) * r).sum(), [x, w], FD_RTOL_64)
        assert result.passed, result

    def test_batch_norm_train(self, rng):
        with precision():
            x = Tensor(rng.normal(size=(6, 3, 2, 2)), requires_grad=True)
            scale = Tensor(rng.normal(size=3), requires_grad=True)
            shift = Tensor(rng.normal(size=3), requires_grad=True)
            r = rng.normal(size=x.shape)

            def loss():
                return (F.batch_norm(x, scale, shift, np.zeros(3), np.ones(3), training=True) * r).sum()

            result = check_gradients("batch_norm", loss, [x, scale, shift], FD_RTOL_64)
        assert result.passed, result

    def test_affine_and_cross_entropy(self, rng):
        with precision():
            x = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
            w = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
            b = Tensor(rng.normal(size=3), requires_grad=True)
            labels = np.array([0, 2, 1, 1, 0])
            result = check_gradients("affine+ce", lambda: F.cross_entropy(F.affine(x, w, b), labels), [x, w, b], FD_RTOL_64)
        assert result.passed, result

    def test_channel_mul_and_pool(self, rng):
        with precision():
            x = Tensor(rng.normal(size=(2, 3, 4, 4)), requires_grad=True)
            m = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
            r = rng.normal(size=(2, 3))
            result = check_gradients(
                "channel_mul", lambda: (F.global_avg_pool(F.channel_mul(x, m)) * r).sum(), [x, m], FD_RTOL_64
            )
        assert result.passed, result

    def test_sampled_entries_are_reproducible(self, rng):
        with precision():
            x = Tensor(rng.normal(size=(40,)), requires_grad=True)
            first = check_gradients("sig", lambda: F.sigmoid(x).sum(), [x], FD_RTOL_64, samples=10, seed=5)
            second = check_gradients("sig", lambda: F.sigmoid(x).sum(), [x], FD_RTOL_64, samples=10, seed=5)
        assert first.checked == 10
        assert first.max_rel_error == second.max_rel_error


class TestModules:
    def test_state_dict_round_trip(self, rng):
        conv = Conv2d(3, 4, 3, rng=rng)
        other = Conv2d(3, 4, 3, rng=np.random.default_rng(99))
        other.load_state_dict(conv.state_dict())
        np.testing.assert_array_equal(other.weight.data, conv.weight.data)

    def test_load_state_dict_reports_missing_keys(self, rng):
        with pytest.raises(ValueError, match="missing"):
            Linear(3, 2, rng=rng).load_state_dict({})

    def test_batch_norm_updates_running_statistics_in_train_mode(self, rng):
        bn = BatchNorm(2)
        bn.train()
        x = Tensor(rng.normal(loc=3.0, size=(8, 2, 3, 3)))
        bn(x)
        assert np.all(bn.running_mean > 0)
        before = bn.running_mean.copy()
        bn.eval()
        bn(x)
        np.testing.assert_array_equal(bn.running_mean, before)

    def test_linear_bias_init(self, rng):
        assert np.all(Linear(4, 3, bias_init=2.0, rng=rng).bias.data == 2.0)


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        arrays = {"a.weight": rng.normal(size=(3, 2)).astype(np.float32), "epoch": np.array([4])}
        save_checkpoint(tmp_path / "x.ckpt", arrays)
        loaded = load_checkpoint(tmp_path / "x.ckpt")
        assert list(loaded) == ["a.weight", "epoch"]
        np.testing.assert_array_equal(loaded["a.weight"], arrays["a.weight"])
        assert int(loaded["epoch"][0]) == 4

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.ckpt").write_bytes(b"NOPE" + bytes(12))
        with pytest.raises(CheckpointFormatError, match="offset 0"):
            load_checkpoint(tmp_path / "x.ckpt")

    def test_truncated_payload(self, tmp_path, rng):
        save_checkpoint(tmp_path / "x.ckpt", {"w": rng.normal(size=(10,))})
        data = (tmp_path / "x.ckpt").read_bytes()
        (tmp_path / "x.ckpt").write_bytes(data[:-8])
        with pytest.raises(CheckpointFormatError, match="truncated"):
            load_checkpoint(tmp_path / "x.ckpt")
