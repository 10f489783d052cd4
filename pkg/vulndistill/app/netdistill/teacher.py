import logging
from typing import List, Optional, Tuple

import torch
from torch import nn

from ..config import FusionConfig, TeacherConfig
from ..errors import ShapeError
from ..fusion import AdaptiveFusion
from ..numcore import BatchNorm, Conv1d, Dense, MaxPool1d, RunningMoments, relu, softmax

logger = logging.getLogger(__name__)

ShapeRow = Tuple[str, Tuple[int, ...]]
NUM_CLASSES = 2


class ConvBlock(nn.Module):
    """conv -> batchnorm -> relu -> maxpool(2, 2)"""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3, bn_momentum: float = 0.1):
        super().__init__()
        self.conv = Conv1d(in_channels, out_channels, kernel_size)
        self.bn = BatchNorm(out_channels, momentum=bn_momentum)
        self.pool = MaxPool1d(2, 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.pool(relu(self.bn(self.conv(x))))


def count_params(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


class TeacherModel(nn.Module):
    """Adaptive fusion followed by three conv blocks and a dense softmax head.

    The output of the third conv block is the activation tap; its batchnorm
    statistics (and those of the blocks before it) are what distillation
    matches. The running per-position moments of the input are recorded as
    well; they shape the noise pseudo-samples start from.
    """

    def __init__(self, input_shape: Tuple[int, int], fusion: Optional[FusionConfig] = None,
                 config: Optional[TeacherConfig] = None):
        super().__init__()
        fusion = fusion or FusionConfig()
        config = config or TeacherConfig()
        length, channels = input_shape
        factor = 2 ** fusion.stages
        if length % factor or length // factor < 8:
            raise ShapeError(
                f"teacher needs N*K divisible by 2^stages={factor} with at least 8 positions left "
                f"for the conv stack, got N*K={length}"
            )
        self.input_shape = (length, channels)
        self.input_moments = RunningMoments((length, channels), config.bn_momentum)
        self.fusion = AdaptiveFusion(channels, fusion)
        widths = (self.fusion.out_channels,) + tuple(config.filters)
        self.blocks = nn.ModuleList([
            ConvBlock(widths[i], widths[i + 1], config.kernel_size, config.bn_momentum)
            for i in range(len(config.filters))
        ])
        self.head = Dense(widths[-1], NUM_CLASSES)

    @property
    def tap(self) -> str:
        return f"blocks/{len(self.blocks) - 1}"

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Activation tap: post-pool output of the last conv block."""
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"teacher built for inputs {self.input_shape}, got {tuple(x.shape[1:])}")
        h = self.fusion(self.input_moments(x))
        for block in self.blocks:
            h = block(h)
        return h

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x).amax(dim=1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return softmax(self.logits(x), axis=-1)

    def batchnorm_taps(self) -> List[Tuple[str, BatchNorm]]:
        return [(f"blocks/{i}/bn", block.bn) for i, block in enumerate(self.blocks)]

    def statistic_taps(self) -> List[Tuple[str, nn.Module]]:
        return [("input", self.input_moments)] + self.batchnorm_taps()

    def shape_table(self, batch: int = 1) -> List[ShapeRow]:
        length, channels = self.input_shape
        rows: List[ShapeRow] = [("input", (batch, length, channels))]
        length = self.fusion.output_length(length)
        rows.append(("fusion", (batch, length, self.fusion.out_channels)))
        for i, block in enumerate(self.blocks):
            length //= 2
            rows.append((f"blocks/{i}", (batch, length, block.bn.channels)))
        rows.append(("head", (batch, NUM_CLASSES)))
        return rows


def build_teacher(input_shape: Tuple[int, int], fusion: Optional[FusionConfig] = None,
                  config: Optional[TeacherConfig] = None, seed: int = 0) -> TeacherModel:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = TeacherModel(input_shape, fusion, config)
    logger.info("🔍 Teacher built for %s with %d parameters", input_shape, count_params(model))
    return model
