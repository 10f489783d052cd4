import logging
from typing import NamedTuple, Optional

import torch
from torch import nn

from ..config import FusionConfig
from ..errors import ShapeError
from ..numcore import maxpool1d
from .mdqe import QueryEnhancement
from .memory import ExternalMemory
from .multistage import MultiStageFusion

logger = logging.getLogger(__name__)


class FusionOutput(NamedTuple):
    x_prime: torch.Tensor  # [B, L, C]
    y_prime: torch.Tensor  # [B, L, C]
    z_top: torch.Tensor  # [B, L / 2^stages, C]
    fused: torch.Tensor  # [B, L / 2^stages, 3C]


def fuse(x_prime: torch.Tensor, y_prime: torch.Tensor, z_top: torch.Tensor) -> torch.Tensor:
    """Max-pool X' and Y' down to Z_top's length and concatenate the three on channels."""
    if x_prime.shape != y_prime.shape:
        raise ShapeError(f"X' {tuple(x_prime.shape)} and Y' {tuple(y_prime.shape)} must match")
    if z_top.dim() != 3 or z_top.shape[0] != x_prime.shape[0] or z_top.shape[2] != x_prime.shape[2]:
        raise ShapeError(f"Z_top {tuple(z_top.shape)} does not align with X' {tuple(x_prime.shape)}")
    length, target = x_prime.shape[1], z_top.shape[1]
    if target < 1 or length % target:
        raise ShapeError(f"cannot pool length {length} down to {target}: not an integer factor")
    factor = length // target
    if factor > 1:
        x_prime = maxpool1d(x_prime, factor, factor)
        y_prime = maxpool1d(y_prime, factor, factor)
    return torch.cat([x_prime, y_prime, z_top], dim=-1)


class AdaptiveFusion(nn.Module):
    """Query enhancement -> external memory -> multi-stage fusion -> concat.

    A disabled mechanism becomes a passthrough: X' = X, Y' = X', and
    Z_top = MaxPool(Y') to L / 2^stages, so the output keeps 3C channels.
    """

    def __init__(self, channels: int, config: Optional[FusionConfig] = None):
        super().__init__()
        config = config or FusionConfig()
        config.check_channels(channels)
        self.channels = channels
        self.config = config
        self.mdqe = QueryEnhancement(channels, config.numhead, config.groups) if config.use_query_enhancement else None
        self.memory = ExternalMemory(channels, config.memory_slots, config.memory_dim,
                                     config.persist_memory, config.memory_momentum) if config.use_external_memory else None
        self.multistage = MultiStageFusion(channels, config.stages, config.mb_expansion) if config.use_multistage else None

    @property
    def out_channels(self) -> int:
        return 3 * self.channels

    def output_length(self, length: int) -> int:
        return length // 2 ** self.config.stages

    def branches(self, x: torch.Tensor) -> FusionOutput:
        if x.dim() != 3 or x.shape[-1] != self.channels:
            raise ShapeError(f"fusion expects [B, L, {self.channels}], got {tuple(x.shape)}")
        factor = 2 ** self.config.stages
        if x.shape[1] % factor:
            raise ShapeError(f"sequence length {x.shape[1]} must be divisible by 2^stages={factor}; "
                             f"pad with {(-x.shape[1]) % factor} more positions")
        x_prime = self.mdqe(x) if self.mdqe is not None else x
        y_prime = self.memory(x_prime) if self.memory is not None else x_prime
        if self.multistage is not None:
            z_top = self.multistage(y_prime)
        else:
            z_top = maxpool1d(y_prime, factor, factor)
        return FusionOutput(x_prime, y_prime, z_top, fuse(x_prime, y_prime, z_top))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.branches(x).fused


def expected_param_count(channels: int, config: FusionConfig) -> int:
    """Closed-form parameter count of AdaptiveFusion(channels, config).

    query enhancement:  4 (C^2 + C)                     Q, K, V, W^0
    external memory:    C*Cm + Cm + S*Cm + Cm*C + C     in, slots, out
    multistage:         3C^2 + C                        stem conv
                        + stages * (4C^2 + 3C)          MLP(2C) per stage
                        + MBConv (stage 1)
                        + (stages - 1) * 4 (C^2 + C)    attention stages

    MBConv with hidden width h = eC: expand C*h + h, depthwise 3h + h,
    project h*C + C.
    """
    c, cm, s = channels, config.memory_dim, config.memory_slots
    total = 0
    if config.use_query_enhancement:
        total += 4 * (c * c + c)
    if config.use_external_memory:
        total += c * cm + cm + s * cm + cm * c + c
    if config.use_multistage:
        h = c * config.mb_expansion
        total += 3 * c * c + c
        total += config.stages * (c * 2 * c + 2 * c + 2 * c * c + c)
        total += (c * h + h) + (3 * h + h) + (h * c + c)
        total += (config.stages - 1) * 4 * (c * c + c)
    return total
