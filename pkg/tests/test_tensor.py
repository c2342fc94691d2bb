import json

import numpy as np
import pytest

from zeus.errors import InputError, ShapeError
from zeus.tensor import (Tensor, conv2d, conv_transpose2d, finite_diff_check,
                         layer_norm, load_zt, no_grad, save_zt, softmax)


def brute_matmul(a, b):
    """Triple-loop reference product."""
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for p in range(k):
                out[i, j] += a[i, p] * b[p, j]
    return out


class TestMatmul:
    def test_identity(self, rng):
        a = Tensor(rng.standard_normal((3, 3)))
        assert np.allclose((a @ Tensor(np.eye(3))).data, a.data)

    def test_zeros_annihilator(self):
        z = Tensor(np.zeros((2, 4)))
        b = Tensor(np.ones((4, 5)))
        assert np.array_equal((z @ b).data, np.zeros((2, 5)))

    def test_small_case_against_brute_force(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[5.0, 6.0], [7.0, 8.0]])
        expected = brute_matmul(a, b)
        assert np.array_equal(expected, np.array([[19.0, 22.0], [43.0, 50.0]]))
        assert np.array_equal((Tensor(a) @ Tensor(b)).data, expected)

    def test_random_against_brute_force(self, rng):
        a = rng.standard_normal((4, 6))
        b = rng.standard_normal((6, 3))
        assert np.allclose((Tensor(a) @ Tensor(b)).data, brute_matmul(a, b), atol=1e-12)

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
            Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((4, 5)))


class TestConv2d:
    def test_zero_input(self, rng):
        x = Tensor(np.zeros((1, 2, 5, 5)))
        w = Tensor(rng.standard_normal((3, 2, 3, 3)))
        assert np.array_equal(conv2d(x, w, padding=1).data, np.zeros((1, 3, 5, 5)))

    def test_direct_summation_oracle(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        w = Tensor(np.ones((1, 1, 2, 2)))
        assert conv2d(x, w).data.reshape(-1).tolist() == [10.0]

    def test_shape_preserving_padding(self, rng):
        x = Tensor(rng.standard_normal((1, 1, 64, 64)))
        w = Tensor(rng.standard_normal((4, 1, 3, 3)))
        assert conv2d(x, w, stride=1, padding=1).shape == (1, 4, 64, 64)

    def test_kernel_larger_than_input(self):
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.zeros((1, 1, 3, 3))), Tensor(np.zeros((1, 1, 5, 5))))

    def test_matches_naive_loop(self, rng):
        x = rng.standard_normal((2, 3, 6, 7))
        w = rng.standard_normal((4, 3, 3, 3))
        stride, pad = 2, 1
        out = conv2d(Tensor(x), Tensor(w), stride=stride, padding=pad).data
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        ho = (6 + 2 * pad - 3) // stride + 1
        wo = (7 + 2 * pad - 3) // stride + 1
        ref = np.zeros((2, 4, ho, wo))
        for n in range(2):
            for o in range(4):
                for i in range(ho):
                    for j in range(wo):
                        patch = xp[n, :, i * stride:i * stride + 3, j * stride:j * stride + 3]
                        ref[n, o, i, j] = (patch * w[o]).sum()
        assert np.allclose(out, ref, atol=1e-12)


class TestConvTranspose2d:
    def test_single_pixel_scatter(self):
        x = Tensor(np.full((1, 1, 1, 1), 5.0))
        w = Tensor(np.ones((1, 1, 2, 2)))
        out = conv_transpose2d(x, w, stride=2)
        assert np.array_equal(out.data, np.full((1, 1, 2, 2), 5.0))

    def test_zero_input(self, rng):
        x = Tensor(np.zeros((1, 2, 3, 3)))
        w = Tensor(rng.standard_normal((2, 4, 2, 2)))
        assert np.array_equal(conv_transpose2d(x, w).data, np.zeros((1, 4, 6, 6)))

    def test_two_applications_quadruple_size(self, rng):
        x = Tensor(rng.standard_normal((1, 4, 16, 16)))
        w1 = Tensor(rng.standard_normal((4, 2, 2, 2)))
        w2 = Tensor(rng.standard_normal((2, 1, 2, 2)))
        out = conv_transpose2d(conv_transpose2d(x, w1, stride=2), w2, stride=2)
        assert out.shape == (1, 1, 64, 64)

    def test_scatter_accumulate_oracle(self, rng):
        x = rng.standard_normal((1, 2, 3, 3))
        w = rng.standard_normal((2, 3, 2, 2))
        out = conv_transpose2d(Tensor(x), Tensor(w), stride=2).data
        ref = np.zeros((1, 3, 6, 6))
        for c in range(2):
            for i in range(3):
                for j in range(3):
                    ref[0, :, 2 * i:2 * i + 2, 2 * j:2 * j + 2] += x[0, c, i, j] * w[c]
        assert np.allclose(out, ref, atol=1e-12)

    def test_bad_stride(self):
        with pytest.raises(InputError):
            conv_transpose2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 2, 2))), stride=0)


class TestSoftmax:
    def test_uniform(self):
        out = softmax(Tensor([1.7, 1.7, 1.7, 1.7])).data
        assert np.allclose(out, [0.25, 0.25, 0.25, 0.25])

    def test_shift_invariance(self, rng):
        x = rng.standard_normal((3, 5))
        assert np.allclose(softmax(Tensor(x)).data, softmax(Tensor(x + 123.4)).data, atol=1e-12)

    def test_closed_form(self):
        out = softmax(Tensor([0.0, np.log(3.0)])).data
        assert np.allclose(out, [0.25, 0.75], atol=1e-12)

    def test_rows_sum_to_one(self, rng):
        out = softmax(Tensor(rng.standard_normal((4, 7))), axis=-1).data
        assert np.all(out >= 0)
        assert np.allclose(out.sum(axis=-1), 1.0)

    def test_nan_input_raises(self):
        with pytest.raises(FloatingPointError):
            softmax(Tensor([1.0, np.nan]))


class TestLayerNorm:
    def test_constant_row(self):
        x = Tensor(np.full((4,), 3.3))
        out = layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)))
        assert np.allclose(out.data, 0.0)

    def test_affine_contract(self, rng):
        x = Tensor(rng.standard_normal((16, 32)))
        gamma, beta = 2.5, -1.0
        out = layer_norm(x, Tensor(np.full(32, gamma)), Tensor(np.full(32, beta))).data
        assert np.allclose(out.mean(axis=-1), beta, atol=1e-6)
        assert np.allclose(out.std(axis=-1), abs(gamma), atol=1e-3)

    def test_hand_formula(self):
        # mean 2, population var 2/3 -> (x - 2) / sqrt(2/3)
        x = np.array([1.0, 2.0, 3.0])
        expected = (x - 2.0) / np.sqrt(2.0 / 3.0)
        out = layer_norm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), eps=1e-15).data
        assert np.allclose(out, expected, atol=1e-6)
        assert np.allclose(out, [-1.2247, 0.0, 1.2247], atol=1e-4)

    def test_bad_eps(self):
        with pytest.raises(InputError):
            layer_norm(Tensor([1.0]), Tensor([1.0]), Tensor([0.0]), eps=0.0)


class TestBackward:
    def test_sum_of_squares(self, rng):
        x = Tensor(rng.standard_normal(7), requires_grad=True)
        (x ** 2).sum().backward()
        assert np.allclose(x.grad, 2 * x.data, atol=1e-12)

    def test_untouched_leaf_has_zero_grad(self, rng):
        x = Tensor(rng.standard_normal(3), requires_grad=True)
        t = Tensor(rng.standard_normal(3), requires_grad=True)
        (x * x).sum().backward()
        assert np.array_equal(t.grad, np.zeros(3))

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(InputError):
            Tensor(np.ones(3), requires_grad=True).sum(axis=0, keepdims=True).reshape(1).backward()
            Tensor(np.ones((2, 2)), requires_grad=True).backward()

    def test_accumulation_across_branches(self, rng):
        x = Tensor(rng.standard_normal(4), requires_grad=True)
        y = (x * 2.0).sum() + (x * 3.0).sum()
        y.backward()
        assert np.allclose(x.grad, 5.0)

    def test_composite_graph_fd(self, rng):
        w = Tensor(rng.standard_normal((4, 4)))

        def f(t):
            return ((t @ w).tanh() * t).sum()

        x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        assert finite_diff_check(f, x, rel_tol=1e-4).passed

    def test_backward_linearity(self, rng):
        a, b = 2.7, -1.3

        def grad_of(fn):
            x = Tensor(x0.copy(), requires_grad=True)
            fn(x).backward()
            return x.grad

        x0 = rng.standard_normal((3, 3))
        f = lambda x: (x ** 2).sum()
        g = lambda x: (x.exp()).sum()
        combined = lambda x: f(x) * a + g(x) * b
        lhs = grad_of(combined)
        rhs = a * grad_of(f) + b * grad_of(g)
        assert np.max(np.abs(lhs - rhs)) < 1e-10

    def test_determinism_bitwise(self):
        def run():
            rng = np.random.default_rng(7)
            x = Tensor(rng.standard_normal((5, 5)), requires_grad=True)
            w = Tensor(rng.standard_normal((5, 5)))
            loss = (softmax(x @ w, axis=-1) ** 2).sum()
            loss.backward()
            return loss.item(), x.grad.copy()

        l1, g1 = run()
        l2, g2 = run()
        assert l1 == l2
        assert np.array_equal(g1, g2)

    def test_no_grad_disables_recording(self, rng):
        x = Tensor(rng.standard_normal(3), requires_grad=True)
        with no_grad():
            y = (x * 2.0).sum()
        assert y._backward is None and not y.requires_grad


class TestFiniteDiffCheck:
    def test_sum_squares_tight_tolerance(self, rng):
        x = Tensor(rng.standard_normal(6), requires_grad=True)
        report = finite_diff_check(lambda t: (t ** 2).sum(), x, rel_tol=1e-6)
        assert report.passed

    def test_matmul_sum(self, rng):
        w = Tensor(rng.standard_normal((4, 4)))
        x = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
        assert finite_diff_check(lambda t: (t @ w).sum(), x, rel_tol=1e-4).passed

    def test_corrupted_gradient_fails(self, rng):
        def scaled_square_sum(t):
            # deliberately wrong backward: gradient scaled by 1.01
            out_data = (t.data ** 2).sum()

            def bw(g):
                t._accumulate(g * 2.0 * t.data * 1.01)

            return Tensor._from_op(np.asarray(out_data), (t,), bw)

        x = Tensor(rng.standard_normal(5) + 2.0, requires_grad=True)
        report = finite_diff_check(scaled_square_sum, x, rel_tol=1e-4)
        assert not report.passed
        assert report.max_rel_error > 5e-3

    def test_sampled_subset(self, rng):
        x = Tensor(rng.standard_normal(100), requires_grad=True)
        report = finite_diff_check(lambda t: (t ** 2).sum(), x, max_checks=10,
                                   rng=np.random.default_rng(0))
        assert report.passed and report.n_checked == 10


class TestSerialization:
    def test_roundtrip_float64(self, tmp_path, rng):
        t = Tensor(rng.standard_normal((3, 4, 2)))
        path = tmp_path / "t.zt"
        save_zt(t, path)
        back = load_zt(path)
        assert np.array_equal(back.data, t.data)
        assert back.data.dtype == np.float64

    def test_header_is_json_line(self, tmp_path):
        path = tmp_path / "h.zt"
        save_zt(Tensor(np.zeros((2, 3), dtype=np.float32)), path)
        with open(path, "rb") as fh:
            header = json.loads(fh.readline())
            payload = fh.read()
        assert header == {"dtype": "float32", "shape": [2, 3]}
        assert len(payload) == 2 * 3 * 4

    def test_uint8_roundtrip(self, tmp_path):
        mask = (np.arange(16).reshape(4, 4) % 3 == 0)
        path = tmp_path / "m.zt"
        save_zt(mask, path)
        assert np.array_equal(load_zt(path).data, mask.astype(np.uint8))
