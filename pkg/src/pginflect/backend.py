"""Differentiable-computation layer.

Tensors, graph recording, and reverse-mode gradients are provided by
torch (CPU only); this module pins down the operation contracts the rest
of the package relies on: shape-checked matmul, numerically stable
softmax, multi-head attention that also returns its per-head weights,
gradient extraction, and a deterministic adaptive-moment optimizer step.

Forward ops are deterministic given their inputs. 64-bit verification
mode is just ``dtype=torch.float64`` throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import torch

from .errors import ConfigError, NumericError

Tensor = torch.Tensor


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product, batched over leading dimensions."""
    if a.shape[-1] != b.shape[-2 if b.dim() > 1 else -1]:
        raise NumericError(f"matmul shape mismatch: {tuple(a.shape)} x {tuple(b.shape)}")
    return torch.matmul(a, b)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` with max-subtraction for stability."""
    shifted = x - x.max(dim=axis, keepdim=True).values
    e = shifted.exp()
    return e / e.sum(dim=axis, keepdim=True)


@dataclass
class AttentionProjections:
    """Input/output projection weights for multi-head attention.

    Each weight is (model_dim, model_dim), applied as x @ W + b. ``None``
    means identity (used in unit tests with hand-built inputs).
    """

    wq: Tensor | None = None
    wk: Tensor | None = None
    wv: Tensor | None = None
    wo: Tensor | None = None
    bq: Tensor | None = None
    bk: Tensor | None = None
    bv: Tensor | None = None
    bo: Tensor | None = None


def _project(x: Tensor, w: Tensor | None, b: Tensor | None) -> Tensor:
    if w is not None:
        x = matmul(x, w)
    if b is not None:
        x = x + b
    return x


def multi_head_attention(
    queries: Tensor,
    keys: Tensor,
    values: Tensor,
    mask: Tensor | None,
    heads: int,
    proj: AttentionProjections | None = None,
    attn_dropout: torch.nn.Dropout | None = None,
) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention over ``heads`` parallel heads.

    Args:
        queries/keys/values: (..., seq_len, model_dim).
        mask: boolean, True where attention is allowed; broadcastable to
            (..., heads, query_len, key_len). None allows everything.
        proj: projection weights; identity when None.

    Returns:
        (output, weights) with output shaped like ``queries`` and weights
        (..., heads, query_len, key_len). Masked positions get weight 0.
    """
    d_model = queries.shape[-1]
    if d_model % heads != 0:
        raise ConfigError(f"model dim {d_model} not divisible by {heads} heads")
    d_head = d_model // heads
    if proj is None:
        proj = AttentionProjections()

    q = _project(queries, proj.wq, proj.bq)
    k = _project(keys, proj.wk, proj.bk)
    v = _project(values, proj.wv, proj.bv)

    def split(x: Tensor) -> Tensor:
        # (..., T, d_model) -> (..., heads, T, d_head)
        return x.reshape(*x.shape[:-1], heads, d_head).transpose(-3, -2)

    q, k, v = split(q), split(k), split(v)
    scores = matmul(q, k.transpose(-2, -1)) / math.sqrt(d_head)
    if mask is not None:
        while mask.dim() < scores.dim():
            mask = mask.unsqueeze(0)
        scores = scores.masked_fill(~mask, float("-inf"))
    weights = softmax(scores, axis=-1)
    if mask is not None:
        # Rows that are fully masked produce NaN from softmax; zero them.
        weights = torch.nan_to_num(weights, nan=0.0)
    applied = weights if attn_dropout is None else attn_dropout(weights)
    out = matmul(applied, v)
    out = out.transpose(-3, -2).reshape(*queries.shape[:-1], d_model)
    out = _project(out, proj.wo, proj.bo)
    return out, weights


def gradients(loss: Tensor, params: Sequence[Tensor]) -> list[Tensor]:
    """Reverse-mode gradients of a scalar loss w.r.t. ``params``.

    Parameters the loss does not depend on get zero gradients.
    """
    if loss.numel() != 1:
        raise NumericError(f"loss must be scalar, got shape {tuple(loss.shape)}")
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return [
        g if g is not None else torch.zeros_like(p) for g, p in zip(grads, params)
    ]


@dataclass
class OptimizerState:
    """Adam accumulators: first/second moments per parameter, step count."""

    m: list[Tensor] = field(default_factory=list)
    v: list[Tensor] = field(default_factory=list)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[Tensor], **kwargs) -> "OptimizerState":
        return cls(
            m=[torch.zeros_like(p) for p in params],
            v=[torch.zeros_like(p) for p in params],
            **kwargs,
        )


def adam_step(
    state: OptimizerState,
    params: Sequence[Tensor],
    grads: Sequence[Tensor],
    lr: float,
) -> OptimizerState:
    """One bias-corrected adaptive-moment update, in place on ``params``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise NumericError("parameter/gradient/state length mismatch")
    state.step += 1
    t = state.step
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state.m, state.v):
            if p.shape != g.shape:
                raise NumericError(
                    f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)}"
                )
            m.mul_(state.beta1).add_(g, alpha=1 - state.beta1)
            v.mul_(state.beta2).addcmul_(g, g, value=1 - state.beta2)
            m_hat = m / (1 - state.beta1**t)
            v_hat = v / (1 - state.beta2**t)
            p.sub_(lr * m_hat / (v_hat.sqrt() + state.eps))
    return state


def warmup_inv_sqrt_lr(base_lr: float, warmup_steps: int, step: int) -> float:
    """Linear warmup to ``base_lr`` then inverse-square-root decay."""
    if step < 1:
        raise NumericError("step counter starts at 1")
    if warmup_steps <= 0:
        return base_lr
    return base_lr * min(step / warmup_steps, math.sqrt(warmup_steps / step))
