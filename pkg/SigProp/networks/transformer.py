import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from ..errors import ZeroRowError
from ..params import Activation, NormPlacement
from ..seeding import WEIGHTS, generator

DTYPE = torch.float64


@dataclass(frozen=True)
class AttentionStats:
    """Row statistics of an attention matrix"""
    ipr: float
    cross_overlap: float
    entropy: float

    @classmethod
    def missing(cls):
        return cls(math.nan, math.nan, math.nan)


def attention_stats(A):
    T = A.shape[-1]
    row_sq = (A * A).sum(dim=-1)
    col = A.sum(dim=-2)
    cross = ((col * col).sum() - row_sq.sum()) / (T * (T - 1))
    entropy = torch.special.entr(A).sum(dim=-1)
    return AttentionStats(row_sq.mean().item(), cross.item(), entropy.mean().item())


class RMSNorm(nn.Module):
    """LayerNorm without mean subtraction or gain: every token is rescaled to norm sqrt(d)"""

    def forward(self, x):
        norms = torch.linalg.vector_norm(x, dim=-1, keepdim=True)
        if bool((norms == 0).any()):
            raise ZeroRowError('cannot layer-normalise a token with zero norm')
        return x * (math.sqrt(x.shape[-1]) / norms)


class SelfAttention(nn.Module):
    """
    Single-head softmax self-attention with Gaussian weights.
    Query/key entries have variance sigma_a / d and value entries sigma_v2 / d,
    so pre-softmax scores have variance sigma_a^2 for layer-normalised tokens.
    """

    def __init__(self, d, sigma_a, sigma_v2=1.0):
        super(SelfAttention, self).__init__()
        self.d = d
        self.sigma_a = sigma_a
        self.sigma_v2 = sigma_v2
        for name in ('wq', 'wk', 'wv'):
            self.register_buffer(name, torch.zeros(d, d, dtype=DTYPE), persistent=False)

    def reset_parameters(self, g):
        qk_std = math.sqrt(self.sigma_a / self.d)
        v_std = math.sqrt(self.sigma_v2 / self.d)
        # buffers are reassigned rather than filled so this also works under inference mode
        self.wq = torch.randn(self.d, self.d, generator=g, dtype=DTYPE) * qk_std
        self.wk = torch.randn(self.d, self.d, generator=g, dtype=DTYPE) * qk_std
        self.wv = torch.randn(self.d, self.d, generator=g, dtype=DTYPE) * v_std

    def scores(self, x):
        return (x @ self.wq.T) @ (x @ self.wk.T).T / math.sqrt(self.d)

    def forward(self, x):
        a = self.scores(x)
        a = a - a.max(dim=-1, keepdim=True).values
        e = torch.exp(a)
        A = e / e.sum(dim=-1, keepdim=True)
        return A @ (x @ self.wv.T), A


class FeedForward(nn.Module):
    """Two-layer MLP W2 phi(W1 x + b1) + b2 with hidden width d"""

    def __init__(self, d, mlp):
        super(FeedForward, self).__init__()
        self.d = d
        self.mlp = mlp
        self.act = nn.ReLU() if mlp.activation == Activation.RELU else nn.Tanh()
        self.register_buffer('w1', torch.zeros(d, d, dtype=DTYPE), persistent=False)
        self.register_buffer('b1', torch.zeros(d, dtype=DTYPE), persistent=False)
        self.register_buffer('w2', torch.zeros(d, d, dtype=DTYPE), persistent=False)
        self.register_buffer('b2', torch.zeros(d, dtype=DTYPE), persistent=False)

    def reset_parameters(self, g):
        w_std = math.sqrt(self.mlp.sigma_w2 / self.d)
        b_std = math.sqrt(self.mlp.sigma_b2)
        self.w1 = torch.randn(self.d, self.d, generator=g, dtype=DTYPE) * w_std
        self.b1 = torch.randn(self.d, generator=g, dtype=DTYPE) * b_std
        self.w2 = torch.randn(self.d, self.d, generator=g, dtype=DTYPE) * w_std
        self.b2 = torch.randn(self.d, generator=g, dtype=DTYPE) * b_std

    def forward(self, x):
        return self.act(x @ self.w1.T + self.b1) @ self.w2.T + self.b2


class TransformerBlock(nn.Module):
    """Post-norm block with weighted residual connections"""

    def __init__(self, d, seq_len, params):
        super(TransformerBlock, self).__init__()
        self.params = params
        self.norm = RMSNorm()
        self.attn = SelfAttention(d, params.attn.beta * math.sqrt(math.log(seq_len)), params.sigma_v2)
        self.mlp = FeedForward(d, params.mlp)

    def reset_parameters(self, g):
        self.attn.reset_parameters(g)
        self.mlp.reset_parameters(g)

    def forward(self, x):
        """Returns the block output and the attention matrix"""
        x = self.norm(x)
        sa, A = self.attn(x)
        h = sa + self.params.alpha_sa * x
        if self.params.norm_placement == NormPlacement.POST_NORM_BOTH:
            h = self.norm(h)
        out = self.mlp(h) + self.params.alpha_mlp * h
        return self.norm(out), A


class RandomTransformer(nn.Module):
    """
    Stack of independently initialised blocks.
    Layer l of seed s draws its weights from the WEIGHTS stream at (s, l).
    """

    def __init__(self, d, seq_len, params, layers):
        super(RandomTransformer, self).__init__()
        self.blocks = nn.ModuleList([TransformerBlock(d, seq_len, params) for _ in range(layers)])

    def reset_parameters(self, base_seed, seed_idx):
        for layer, block in enumerate(self.blocks):
            block.reset_parameters(generator(base_seed, WEIGHTS, seed_idx, layer))

    def forward(self, x):
        for block in self.blocks:
            x, _ = block(x)
        return x
