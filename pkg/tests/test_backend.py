import math

import pytest
import torch

from pginflect import backend
from pginflect.backend import (
    AttentionProjections,
    OptimizerState,
    adam_step,
    gradients,
    matmul,
    multi_head_attention,
    softmax,
    warmup_inv_sqrt_lr,
)
from pginflect.errors import ConfigError, NumericError

torch.manual_seed(0)


class TestMatmul:
    def test_identity(self):
        a = torch.randn(4, 4)
        assert torch.equal(matmul(a, torch.eye(4)), a)

    def test_zero(self):
        a = torch.randn(3, 5)
        assert torch.equal(matmul(a, torch.zeros(5, 2)), torch.zeros(3, 2))

    def test_against_triple_loop(self):
        a, b = torch.randn(5, 4, dtype=torch.float64), torch.randn(4, 3, dtype=torch.float64)
        expected = torch.zeros(5, 3, dtype=torch.float64)
        for i in range(5):
            for j in range(3):
                for k in range(4):
                    expected[i, j] += a[i, k] * b[k, j]
        assert torch.allclose(matmul(a, b), expected, atol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(NumericError, match="3, 4"):
            matmul(torch.zeros(3, 4), torch.zeros(5, 2))


class TestSoftmax:
    def test_uniform_logits(self):
        out = softmax(torch.zeros(4))
        assert torch.allclose(out, torch.full((4,), 0.25))

    def test_analytic(self):
        out = softmax(torch.tensor([math.log(2.0), 0.0, 0.0]))
        assert torch.allclose(out, torch.tensor([0.5, 0.25, 0.25]), atol=1e-6)

    def test_against_float64_oracle(self):
        x = torch.randn(7, 11)
        expected = (
            torch.exp(x.double()) / torch.exp(x.double()).sum(-1, keepdim=True)
        ).float()
        assert torch.allclose(softmax(x, axis=-1), expected, atol=1e-6)

    def test_sums_to_one_any_shape(self):
        for shape, axis in [((5,), 0), ((3, 4), 1), ((2, 3, 4), 0), ((2, 3, 4), 2)]:
            x = torch.randn(*shape) * 10
            sums = softmax(x, axis=axis).sum(dim=axis)
            assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)

    def test_large_values_stable(self):
        out = softmax(torch.tensor([1000.0, 1000.0]))
        assert torch.allclose(out, torch.tensor([0.5, 0.5]))


class TestMultiHeadAttention:
    def test_single_position_identity(self):
        q = torch.randn(1, 1, 4)
        v = torch.randn(1, 1, 4)
        out, weights = multi_head_attention(q, q, v, None, heads=1)
        assert torch.allclose(out, v)
        assert torch.allclose(weights, torch.ones(1, 1, 1, 1))

    def test_mask_forces_single_position(self):
        q = torch.randn(1, 2, 4)
        k = torch.randn(1, 5, 4)
        v = torch.randn(1, 5, 4)
        mask = torch.zeros(2, 5, dtype=torch.bool)
        mask[:, 3] = True
        out, weights = multi_head_attention(q, k, v, mask, heads=2)
        assert torch.allclose(weights[..., 3], torch.ones(1, 2, 2))
        assert torch.allclose(out, v[:, 3].unsqueeze(1).expand(1, 2, 4))

    def test_masked_positions_zero_weight(self):
        q, k, v = torch.randn(1, 3, 8), torch.randn(1, 4, 8), torch.randn(1, 4, 8)
        mask = torch.tensor([[True, True, False, True]] * 3)
        _, weights = multi_head_attention(q, k, v, mask, heads=2)
        assert torch.all(weights[..., 2] == 0)
        sums = weights.sum(-1)
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)

    def test_against_formula_oracle(self):
        torch.manual_seed(3)
        heads, d = 2, 8
        q, k, v = (torch.randn(1, 5, d, dtype=torch.float64) for _ in range(3))
        out, weights = multi_head_attention(q, k, v, None, heads=heads)
        d_head = d // heads
        for h in range(heads):
            qs = q[0, :, h * d_head : (h + 1) * d_head]
            ks = k[0, :, h * d_head : (h + 1) * d_head]
            vs = v[0, :, h * d_head : (h + 1) * d_head]
            scores = qs @ ks.T / math.sqrt(d_head)
            expected_w = torch.exp(scores) / torch.exp(scores).sum(-1, keepdim=True)
            assert torch.allclose(weights[0, h], expected_w, atol=1e-5)
            assert torch.allclose(
                out[0, :, h * d_head : (h + 1) * d_head], expected_w @ vs, atol=1e-5
            )

    def test_projected_against_oracle(self):
        torch.manual_seed(4)
        d = 6
        q = torch.randn(1, 3, d, dtype=torch.float64)
        proj = AttentionProjections(
            wq=torch.randn(d, d, dtype=torch.float64),
            wk=torch.randn(d, d, dtype=torch.float64),
            wv=torch.randn(d, d, dtype=torch.float64),
            wo=torch.randn(d, d, dtype=torch.float64),
        )
        out, _ = multi_head_attention(q, q, q, None, heads=1, proj=proj)
        qs, ks, vs = q @ proj.wq, q @ proj.wk, q @ proj.wv
        scores = qs @ ks.transpose(-2, -1) / math.sqrt(d)
        w = torch.exp(scores) / torch.exp(scores).sum(-1, keepdim=True)
        assert torch.allclose(out, (w @ vs) @ proj.wo, atol=1e-5)

    def test_indivisible_heads(self):
        q = torch.randn(1, 2, 6)
        with pytest.raises(ConfigError):
            multi_head_attention(q, q, q, None, heads=4)


def central_difference(f, params, h=1e-5):
    """Finite-difference gradients of scalar f() w.r.t. leaf tensors."""
    grads = []
    with torch.no_grad():
        for p in params:
            g = torch.zeros_like(p)
            flat = p.view(-1)
            gflat = g.view(-1)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + h
                up = f().item()
                flat[i] = original - h
                down = f().item()
                flat[i] = original
                gflat[i] = (up - down) / (2 * h)
            grads.append(g)
    return grads


class TestGradients:
    def test_sum_of_squares(self):
        x = torch.randn(5, requires_grad=True)
        (g,) = gradients((x**2).sum(), [x])
        assert torch.allclose(g, 2 * x)

    def test_independent_parameter(self):
        x = torch.randn(3, requires_grad=True)
        y = torch.randn(3, requires_grad=True)
        _, gy = gradients((x**2).sum(), [x, y])
        assert torch.equal(gy, torch.zeros(3))

    def test_non_scalar_loss(self):
        x = torch.randn(3, requires_grad=True)
        with pytest.raises(NumericError):
            gradients(x * 2, [x])

    def test_two_layer_network_vs_finite_differences(self):
        torch.manual_seed(5)
        w1 = torch.randn(4, 6, dtype=torch.float64, requires_grad=True)
        w2 = torch.randn(6, 2, dtype=torch.float64, requires_grad=True)
        x = torch.randn(3, 4, dtype=torch.float64)

        def loss():
            return (torch.tanh(x @ w1) @ w2).pow(2).sum()

        analytic = gradients(loss(), [w1, w2])
        numeric = central_difference(loss, [w1, w2])
        for a, n in zip(analytic, numeric):
            rel = (a - n).abs() / a.abs().clamp_min(1e-8)
            assert rel.max() < 1e-4


class TestAdam:
    def test_zero_lr(self):
        p = torch.tensor([1.0, 2.0])
        state = OptimizerState.for_params([p])
        adam_step(state, [p], [torch.ones(2)], lr=0.0)
        assert torch.equal(p, torch.tensor([1.0, 2.0]))

    def test_zero_gradient_first_step(self):
        p = torch.tensor([3.0])
        state = OptimizerState.for_params([p])
        adam_step(state, [p], [torch.zeros(1)], lr=0.1)
        assert torch.equal(p, torch.tensor([3.0]))

    def test_hand_computed_first_step(self):
        # m_hat = g, v_hat = g^2 after bias correction, so the update is
        # lr * g / (|g| + eps) ~= lr.
        p = torch.tensor([1.0])
        state = OptimizerState.for_params([p])
        adam_step(state, [p], [torch.ones(1)], lr=0.1)
        assert abs(p.item() - 0.9) < 1e-6

    def test_step_counter(self):
        p = torch.tensor([1.0])
        state = OptimizerState.for_params([p])
        for _ in range(3):
            adam_step(state, [p], [torch.ones(1)], lr=0.01)
        assert state.step == 3

    def test_shape_mismatch(self):
        p = torch.zeros(2)
        state = OptimizerState.for_params([p])
        with pytest.raises(NumericError):
            adam_step(state, [p], [torch.zeros(3)], lr=0.1)

    def test_deterministic(self):
        def run():
            p = torch.tensor([1.0, -2.0])
            state = OptimizerState.for_params([p])
            for t in range(5):
                adam_step(state, [p], [p.clone() * 0.1], lr=0.05)
            return p

        assert torch.equal(run(), run())


class TestSchedule:
    def test_warmup_is_linear(self):
        assert warmup_inv_sqrt_lr(1.0, 100, 50) == pytest.approx(0.5)

    def test_peak_at_warmup(self):
        assert warmup_inv_sqrt_lr(1.0, 100, 100) == pytest.approx(1.0)

    def test_inverse_sqrt_decay(self):
        assert warmup_inv_sqrt_lr(1.0, 100, 400) == pytest.approx(0.5)

    def test_step_starts_at_one(self):
        with pytest.raises(NumericError):
            warmup_inv_sqrt_lr(1.0, 100, 0)
