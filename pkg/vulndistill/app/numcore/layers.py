"""Channels-last layer operations and the modules built on them.

Every sequence tensor in the app is laid out ``[batch, length, channels]``.
The functional ops validate shapes, and finiteness of inputs and outputs,
around ``torch.nn.functional``; the module classes own parameters in the layouts the
ops expect (conv weights ``[k, Cin/groups, Cout]``, dense weights
``[Din, Dout]``).
"""
import math
from typing import Literal, Sequence, Tuple, Union

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import ShapeError
from .tensor import check_finite, expect_rank

Padding = Union[Literal["same", "valid"], int]


def _pad_amounts(kernel: int, padding: Padding):
    if padding == "valid":
        return 0, 0
    if padding == "same":
        left = (kernel - 1) // 2
        return left, kernel - 1 - left
    if isinstance(padding, int) and padding >= 0:
        return padding, padding
    raise ShapeError(f"padding must be 'same', 'valid' or a non-negative int, got {padding!r}")


def conv1d_output_length(length: int, kernel: int, pad: int, stride: int) -> int:
    return (length + 2 * pad - kernel) // stride + 1


def pool_output_length(length: int, pool: int, stride: int) -> int:
    return (length - pool) // stride + 1


def conv1d(
    x: torch.Tensor,
    weight: torch.Tensor,
    bias: torch.Tensor,
    padding: Padding = "same",
    stride: int = 1,
    groups: int = 1,
) -> torch.Tensor:
    expect_rank(x, 3, "conv1d input")
    expect_rank(weight, 3, "conv1d weights")
    kernel, cin_per_group, cout = weight.shape
    if stride < 1:
        raise ShapeError(f"stride must be positive, got {stride}")
    if cin_per_group * groups != x.shape[-1]:
        raise ShapeError(
            f"conv1d input has {x.shape[-1]} channels but weights expect {cin_per_group}x{groups} "
            f"(weights {tuple(weight.shape)})"
        )
    if cout % groups:
        raise ShapeError(f"conv1d output channels {cout} not divisible by groups={groups}")
    if tuple(bias.shape) != (cout,):
        raise ShapeError(f"conv1d bias has shape {tuple(bias.shape)}, expected ({cout},)")
    left, right = _pad_amounts(kernel, padding)
    if kernel > x.shape[1] + left + right:
        raise ShapeError(f"kernel {kernel} longer than padded input length {x.shape[1] + left + right}")
    check_finite(x, "conv1d input")

    h = x.transpose(1, 2)
    if left or right:
        h = F.pad(h, (left, right))
    out = F.conv1d(h, weight.permute(2, 1, 0), bias, stride=stride, groups=groups)
    return check_finite(out.transpose(1, 2), "conv1d output")


def maxpool1d(x: torch.Tensor, pool: int, stride: int) -> torch.Tensor:
    expect_rank(x, 3, "maxpool1d input")
    if pool < 1 or stride < 1:
        raise ShapeError(f"pool and stride must be positive, got pool={pool} stride={stride}")
    if pool > x.shape[1]:
        raise ShapeError(f"pool {pool} exceeds sequence length {x.shape[1]}")
    check_finite(x, "maxpool1d input")
    return F.max_pool1d(x.transpose(1, 2), pool, stride).transpose(1, 2)


def dense(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """Affine map over the last axis; leading axes are batch axes."""
    expect_rank(weight, 2, "dense weights")
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"dense input width {x.shape[-1]} does not match weights {tuple(weight.shape)}")
    if tuple(bias.shape) != (weight.shape[1],):
        raise ShapeError(f"dense bias has shape {tuple(bias.shape)}, expected ({weight.shape[1]},)")
    check_finite(x, "dense input")
    return check_finite(x @ weight + bias, "dense output")


def batchnorm(
    x: torch.Tensor,
    gamma: torch.Tensor,
    beta: torch.Tensor,
    running_mean: torch.Tensor,
    running_var: torch.Tensor,
    mode: Literal["train", "infer"],
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> torch.Tensor:
    """Per-channel normalization over every axis but the last.

    Train mode normalizes with the batch statistics and updates the running
    statistics in place: ``r <- (1 - momentum) * r + momentum * batch_stat``,
    using the unbiased variance for ``running_var``. Infer mode uses the
    running statistics.
    """
    channels = x.shape[-1]
    for name, t in (("gamma", gamma), ("beta", beta), ("running_mean", running_mean), ("running_var", running_var)):
        if tuple(t.shape) != (channels,):
            raise ShapeError(f"batchnorm {name} has shape {tuple(t.shape)}, expected ({channels},)")
    if mode == "train" and x.shape[0] < 2:
        raise ShapeError(f"batchnorm in train mode needs a batch of at least 2, got {x.shape[0]}")
    if mode not in ("train", "infer"):
        raise ShapeError(f"unknown batchnorm mode '{mode}'")
    check_finite(x, "batchnorm input")
    flat = x.reshape(-1, channels)
    out = F.batch_norm(
        flat, running_mean, running_var, gamma, beta,
        training=(mode == "train"), momentum=momentum, eps=eps,
    )
    return check_finite(out.reshape(x.shape), "batchnorm output")


def relu(x: torch.Tensor) -> torch.Tensor:
    check_finite(x, "relu input")
    return torch.clamp_min(x, 0.0)


def softmax(x: torch.Tensor, axis: int = -1) -> torch.Tensor:
    if not -x.dim() <= axis < x.dim():
        raise ShapeError(f"softmax axis {axis} invalid for rank {x.dim()}")
    check_finite(x, "softmax input")
    shifted = x - x.amax(dim=axis, keepdim=True).detach()
    exp = shifted.exp()
    return check_finite(exp / exp.sum(dim=axis, keepdim=True), "softmax output")


def he_normal_(weight: torch.Tensor, fan_in: int) -> torch.Tensor:
    with torch.no_grad():
        return weight.normal_(0.0, math.sqrt(2.0 / fan_in))


# ---------------------------
# Modules
# ---------------------------
class Conv1d(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3,
                 padding: Padding = "same", stride: int = 1, groups: int = 1):
        super().__init__()
        if in_channels % groups or out_channels % groups:
            raise ShapeError(f"channels {in_channels}->{out_channels} not divisible by groups={groups}")
        self.padding = padding
        self.stride = stride
        self.groups = groups
        self.weight = nn.Parameter(torch.empty(kernel_size, in_channels // groups, out_channels))
        self.bias = nn.Parameter(torch.zeros(out_channels))
        he_normal_(self.weight, kernel_size * in_channels // groups)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return conv1d(x, self.weight, self.bias, self.padding, self.stride, self.groups)


class Dense(nn.Module):
    def __init__(self, in_features: int, out_features: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(in_features, out_features))
        self.bias = nn.Parameter(torch.zeros(out_features))
        he_normal_(self.weight, in_features)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return dense(x, self.weight, self.bias)


class BatchNorm(nn.Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = nn.Parameter(torch.ones(channels))
        self.beta = nn.Parameter(torch.zeros(channels))
        self.register_buffer("running_mean", torch.zeros(channels))
        self.register_buffer("running_var", torch.ones(channels))
        self.register_buffer("num_batches_tracked", torch.zeros((), dtype=torch.long))

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    def batch_moments(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Per-channel mean and unbiased variance of ``x``, the quantities tracked in the running buffers."""
        flat = x.reshape(-1, x.shape[-1])
        return flat.mean(dim=0), flat.var(dim=0, unbiased=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mode = "train" if self.training else "infer"
        if self.training:
            self.num_batches_tracked += 1
        return batchnorm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                         mode, self.momentum, self.eps)


class MaxPool1d(nn.Module):
    def __init__(self, pool: int = 2, stride: int = 2):
        super().__init__()
        self.pool = pool
        self.stride = stride

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return maxpool1d(x, self.pool, self.stride)


class ReLU(nn.Module):
    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return relu(x)


class MLP(nn.Module):
    """Two dense layers with a ReLU in between."""

    def __init__(self, channels: int, hidden: int):
        super().__init__()
        self.fc1 = Dense(channels, hidden)
        self.fc2 = Dense(hidden, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(relu(self.fc1(x)))


class RunningMoments(nn.Module):
    """Identity layer that tracks the running mean and variance of its input.

    Statistics are kept per element of ``shape`` (every axis but the batch
    axis), with the batchnorm update rule and the unbiased variance. Only
    training-mode batches of two or more samples update them.
    """

    def __init__(self, shape: Sequence[int], momentum: float = 0.1):
        super().__init__()
        self.shape = tuple(shape)
        self.momentum = momentum
        self.register_buffer("running_mean", torch.zeros(self.shape))
        self.register_buffer("running_var", torch.ones(self.shape))
        self.register_buffer("num_batches_tracked", torch.zeros((), dtype=torch.long))

    def batch_moments(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        if tuple(x.shape[1:]) != self.shape:
            raise ShapeError(f"moments tracked for {self.shape}, got input {tuple(x.shape)}")
        return x.mean(dim=0), x.var(dim=0, unbiased=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.training and x.shape[0] >= 2:
            with torch.no_grad():
                mean, var = self.batch_moments(check_finite(x, "moments input"))
                self.running_mean.mul_(1.0 - self.momentum).add_(self.momentum * mean)
                self.running_var.mul_(1.0 - self.momentum).add_(self.momentum * var)
                self.num_batches_tracked += 1
        return x
