from typing import List, Optional, Sequence, Tuple

import torch
from torch import nn

from ..errors import ConfigError
from ..numcore import Conv1d, Dense, relu, softmax

PSA_KERNELS = (3, 5, 7, 9)


def group_kernels(s_groups: int) -> List[int]:
    """{3, 5, 7, 9}, continuing as 2g + 3 for more than four groups."""
    return [PSA_KERNELS[g] if g < len(PSA_KERNELS) else 2 * g + 3 for g in range(s_groups)]


class PyramidSplitAttention(nn.Module):
    """Pyramid split attention over channel groups.

    Channels are split into ``s_groups`` slices, each convolved with its own
    kernel size. A squeeze-excitation bottleneck shared by all groups scores
    every slice; the scores are softmax-normalized across groups and scale
    the slices before they are concatenated back.
    """

    def __init__(self, channels: int, s_groups: int = 4, kernels: Optional[Sequence[int]] = None):
        super().__init__()
        if s_groups < 1 or channels % s_groups:
            raise ConfigError(f"C={channels} is not divisible by s_groups={s_groups}")
        self.channels = channels
        self.s_groups = s_groups
        width = channels // s_groups
        kernels = list(kernels) if kernels is not None else group_kernels(s_groups)
        if len(kernels) != s_groups:
            raise ConfigError(f"expected {s_groups} kernel sizes, got {kernels}")
        self.convs = nn.ModuleList([Conv1d(width, width, kernel_size=k) for k in kernels])
        bottleneck = max(1, width // 4)
        self.se_reduce = Dense(width, bottleneck)
        self.se_expand = Dense(bottleneck, width)

    def squeeze_excite(self, feature: torch.Tensor) -> torch.Tensor:
        """[B, L, w] -> [B, w] sigmoid gate."""
        pooled = feature.mean(dim=1)
        return torch.sigmoid(self.se_expand(relu(self.se_reduce(pooled))))

    def attend(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """(output [B, L, C], cross-group weights [B, s, C/s])."""
        if x.dim() != 3 or x.shape[-1] != self.channels:
            raise ConfigError(f"PSA built for C={self.channels}, got input {tuple(x.shape)}")
        slices = torch.split(x, self.channels // self.s_groups, dim=-1)
        features = torch.stack([conv(s) for conv, s in zip(self.convs, slices)], dim=2)  # [B, L, s, w]
        gates = torch.stack([self.squeeze_excite(features[:, :, g]) for g in range(self.s_groups)], dim=1)
        weights = softmax(gates, axis=1)
        out = features * weights.unsqueeze(1)
        b, length = x.shape[:2]
        return out.reshape(b, length, self.channels), weights

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.attend(x)[0]
