import hashlib
import random
from typing import Iterable, Sequence

import numpy as np
import torch

from ..errors import ConfigError, NumericError, ShapeError

DTYPES = {
    "float32": torch.float32,
    "float64": torch.float64,
}


def resolve_dtype(precision: str) -> torch.dtype:
    try:
        return DTYPES[precision]
    except KeyError:
        raise ConfigError(f"unsupported precision '{precision}', expected one of {sorted(DTYPES)}")


def seed_everything(seed: int) -> None:
    """Seed python, numpy and torch and pin torch to deterministic kernels."""
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def make_generator(seed: int) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(seed)
    return generator


def check_finite(tensor: torch.Tensor, where: str) -> torch.Tensor:
    if tensor.is_floating_point() and not bool(torch.isfinite(tensor).all()):
        bad = int((~torch.isfinite(tensor)).sum())
        raise NumericError(f"{where}: {bad} non-finite value(s) in tensor of shape {tuple(tensor.shape)}")
    return tensor


def expect_rank(tensor: torch.Tensor, rank: int, name: str) -> None:
    if tensor.dim() != rank:
        raise ShapeError(f"{name} must have rank {rank}, got shape {tuple(tensor.shape)}")


def expect_shape(tensor: torch.Tensor, shape: Sequence[int], name: str) -> None:
    if tuple(tensor.shape) != tuple(shape):
        raise ShapeError(f"{name} has shape {tuple(tensor.shape)}, expected {tuple(shape)}")


def tensor_checksum(tensors: Iterable[torch.Tensor]) -> str:
    digest = hashlib.sha256()
    for tensor in tensors:
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()
