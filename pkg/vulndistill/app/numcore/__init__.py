from .checkpoint import load_checkpoint, load_tensors, save_checkpoint, save_tensors
from .layers import (
    MLP,
    BatchNorm,
    Conv1d,
    Dense,
    MaxPool1d,
    ReLU,
    RunningMoments,
    batchnorm,
    conv1d,
    conv1d_output_length,
    dense,
    maxpool1d,
    pool_output_length,
    relu,
    softmax,
)
from .store import ParameterStore, backward, optimizer_step
from .tensor import check_finite, make_generator, resolve_dtype, seed_everything, tensor_checksum
