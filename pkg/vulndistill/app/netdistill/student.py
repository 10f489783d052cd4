import logging
from typing import List, Optional, Tuple

import torch
from torch import nn

from ..config import StudentConfig
from ..errors import ShapeError
from ..fusion import PyramidSplitAttention
from ..numcore import BatchNorm, Dense, relu, softmax
from .teacher import NUM_CLASSES, ConvBlock, ShapeRow, count_params

logger = logging.getLogger(__name__)


class StudentModel(nn.Module):
    """conv(64) -> PSA -> conv(128) -> global average -> dense/BN/ReLU -> dense."""

    def __init__(self, input_shape: Tuple[int, int], config: Optional[StudentConfig] = None):
        super().__init__()
        config = config or StudentConfig()
        length, channels = input_shape
        if length < 4 or length % 4:
            raise ShapeError(f"student needs N*K divisible by 4 (two 2x pools), got N*K={length}")
        self.input_shape = (length, channels)
        first, second = config.filters
        self.block1 = ConvBlock(channels, first, config.kernel_size, config.bn_momentum)
        self.psa = PyramidSplitAttention(first, config.psa_groups)
        self.block2 = ConvBlock(first, second, config.kernel_size, config.bn_momentum)
        self.fc1 = Dense(second, config.hidden)
        self.bn_fc = BatchNorm(config.hidden, momentum=config.bn_momentum)
        self.fc2 = Dense(config.hidden, NUM_CLASSES)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"student built for inputs {self.input_shape}, got {tuple(x.shape[1:])}")
        return self.block2(self.psa(self.block1(x)))

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        pooled = self.features(x).mean(dim=1)
        return self.fc2(relu(self.bn_fc(self.fc1(pooled))))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return softmax(self.logits(x), axis=-1)

    def batchnorm_taps(self) -> List[Tuple[str, BatchNorm]]:
        return [("block1/bn", self.block1.bn), ("block2/bn", self.block2.bn)]

    def shape_table(self, batch: int = 1) -> List[ShapeRow]:
        length, channels = self.input_shape
        first, second = self.block1.bn.channels, self.block2.bn.channels
        return [
            ("input", (batch, length, channels)),
            ("block1", (batch, length // 2, first)),
            ("psa", (batch, length // 2, first)),
            ("block2", (batch, length // 4, second)),
            ("fc1", (batch, self.bn_fc.channels)),
            ("fc2", (batch, NUM_CLASSES)),
        ]


def build_student(input_shape: Tuple[int, int], config: Optional[StudentConfig] = None, seed: int = 0) -> StudentModel:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = StudentModel(input_shape, config)
    logger.info("🔍 Student built for %s with %d parameters", input_shape, count_params(model))
    return model
