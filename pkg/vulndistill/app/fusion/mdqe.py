import math
from typing import Tuple

import torch
from torch import nn

from ..errors import ConfigError, ShapeError
from ..numcore import Dense, softmax


def scaled_dot_product_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """softmax(q k^T / sqrt(d)) v over the last two axes; returns (output, weights)."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention shapes do not line up: q={tuple(q.shape)} k={tuple(k.shape)} v={tuple(v.shape)}")
    scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    weights = softmax(scores, axis=-1)
    return weights @ v, weights


class QueryEnhancement(nn.Module):
    """Multi-head attention whose keys and values are shared inside head groups.

    K/V heads are averaged over each group of ``numhead // groups`` heads and
    broadcast back, so heads in one group attend over the same key/value
    distribution while keeping their own queries. ``groups == numhead``
    shares nothing and is plain multi-head attention; that includes the
    default configuration (numhead = groups = 4), so sharing only takes
    effect with ``groups`` set below ``numhead``.
    """

    def __init__(self, channels: int, numhead: int, groups: int):
        super().__init__()
        if channels % numhead:
            raise ConfigError(f"C={channels} is not divisible by numhead={numhead}")
        if channels % groups or numhead % groups:
            raise ConfigError(f"groups={groups} must divide both C={channels} and numhead={numhead}")
        self.channels = channels
        self.numhead = numhead
        self.groups = groups
        self.q = Dense(channels, channels)
        self.k = Dense(channels, channels)
        self.v = Dense(channels, channels)
        self.out = Dense(channels, channels)

    @property
    def head_dim(self) -> int:
        return self.channels // self.numhead

    def _split_heads(self, x: torch.Tensor) -> torch.Tensor:
        b, length, _ = x.shape
        return x.view(b, length, self.numhead, self.head_dim).transpose(1, 2)  # [B, H, L, d]

    def _share_within_groups(self, x: torch.Tensor) -> torch.Tensor:
        b, h, length, d = x.shape
        grouped = x.reshape(b, self.groups, h // self.groups, length, d).mean(dim=2, keepdim=True)
        return grouped.expand(b, self.groups, h // self.groups, length, d).reshape(b, h, length, d)

    def attend(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """(X', per-head attention weights [B, H, L, L])."""
        if x.dim() != 3 or x.shape[-1] != self.channels:
            raise ShapeError(f"query enhancement expects [B, L, {self.channels}], got {tuple(x.shape)}")
        q = self._split_heads(self.q(x))
        k = self._share_within_groups(self._split_heads(self.k(x)))
        v = self._share_within_groups(self._split_heads(self.v(x)))
        heads, weights = scaled_dot_product_attention(q, k, v)
        b, _, length, _ = heads.shape
        merged = heads.transpose(1, 2).reshape(b, length, self.channels)
        return self.out(merged), weights

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.attend(x)[0]
