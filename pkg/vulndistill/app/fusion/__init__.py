from .mdqe import QueryEnhancement, scaled_dot_product_attention
from .memory import ExternalMemory, MemoryReadout
from .module import AdaptiveFusion, FusionOutput, expected_param_count, fuse
from .multistage import MBConv, FusionStage, MultiStageFusion, SingleHeadAttention, required_padding
from .psa import PSA_KERNELS, PyramidSplitAttention, group_kernels
