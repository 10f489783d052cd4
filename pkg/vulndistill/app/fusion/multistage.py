import torch
from torch import nn

from ..errors import ShapeError
from ..numcore import MLP, Conv1d, Dense, MaxPool1d, relu
from .mdqe import scaled_dot_product_attention


class MBConv(nn.Module):
    """Inverted bottleneck: pointwise expand, depthwise k3, pointwise project, residual."""

    def __init__(self, channels: int, expansion: int = 4):
        super().__init__()
        hidden = channels * expansion
        self.expand = Conv1d(channels, hidden, kernel_size=1)
        self.depthwise = Conv1d(hidden, hidden, kernel_size=3, padding="same", groups=hidden)
        self.project = Conv1d(hidden, channels, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.project(relu(self.depthwise(relu(self.expand(x)))))


class SingleHeadAttention(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.q = Dense(channels, channels)
        self.k = Dense(channels, channels)
        self.v = Dense(channels, channels)
        self.out = Dense(channels, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        attended, _ = scaled_dot_product_attention(self.q(x), self.k(x), self.v(x))
        return self.out(attended)


class FusionStage(nn.Module):
    """block -> MLP(2C) -> MaxPool(2, 2)."""

    def __init__(self, block: nn.Module, channels: int):
        super().__init__()
        self.block = block
        self.mlp = MLP(channels, 2 * channels)
        self.pool = MaxPool1d(2, 2)

    def pre_pool(self, z: torch.Tensor) -> torch.Tensor:
        return self.mlp(self.block(z))

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.pool(self.pre_pool(z))


def required_padding(length: int, stages: int) -> int:
    multiple = 2 ** stages
    return (-length) % multiple


class MultiStageFusion(nn.Module):
    """Conv stem, then MBConv for stage 1 and single-head attention after it.

    Every stage halves the sequence, so the output is [B, L / 2^stages, C].
    """

    def __init__(self, channels: int, stages: int = 2, expansion: int = 4):
        super().__init__()
        self.stem = Conv1d(channels, channels, kernel_size=3)
        blocks = []
        for i in range(stages):
            block = MBConv(channels, expansion) if i == 0 else SingleHeadAttention(channels)
            blocks.append(FusionStage(block, channels))
        self.stages = nn.ModuleList(blocks)

    def check_length(self, length: int) -> None:
        pad = required_padding(length, len(self.stages))
        if pad:
            raise ShapeError(
                f"sequence length {length} is not divisible by 2^{len(self.stages)}={2 ** len(self.stages)}; "
                f"pad the input with {pad} more positions (N*K={length + pad})"
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.check_length(x.shape[1])
        z = self.stem(x)
        for stage in self.stages:
            z = stage(z)
        return z
