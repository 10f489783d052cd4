import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st
from torch.autograd import gradcheck

from app.config import FusionConfig
from app.errors import ConfigError, ShapeError
from app.fusion import (
    AdaptiveFusion,
    ExternalMemory,
    MultiStageFusion,
    PyramidSplitAttention,
    QueryEnhancement,
    expected_param_count,
    fuse,
    group_kernels,
)
from app.netdistill import count_params


def _identity_(dense_layer):
    with torch.no_grad():
        dense_layer.weight.copy_(torch.eye(dense_layer.weight.shape[0], dtype=dense_layer.weight.dtype))
        dense_layer.bias.zero_()


# ---------------------------
# Query enhancement
# ---------------------------
@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), length=st.integers(1, 6), channels=st.sampled_from([1, 2, 4, 8]))
def test_single_head_identity_projection_matches_reference_attention(seed, length, channels):
    gen = torch.Generator().manual_seed(seed)
    x = torch.randn(2, length, channels, generator=gen, dtype=torch.float64)
    qe = QueryEnhancement(channels, numhead=1, groups=1).double()
    for layer in (qe.q, qe.k, qe.v, qe.out):
        _identity_(layer)
    expected = F.scaled_dot_product_attention(x, x, x)
    torch.testing.assert_close(qe(x), expected, rtol=0, atol=1e-5)


def test_groups_share_key_value_heads():
    qe = QueryEnhancement(8, numhead=4, groups=2)
    x = torch.randn(1, 5, 8)
    k = qe._share_within_groups(qe._split_heads(qe.k(x)))
    torch.testing.assert_close(k[:, 0], k[:, 1])
    torch.testing.assert_close(k[:, 2], k[:, 3])
    assert not torch.allclose(k[:, 1], k[:, 2])


def test_query_enhancement_rejects_bad_heads():
    with pytest.raises(ConfigError):
        QueryEnhancement(10, numhead=4, groups=2)
    with pytest.raises(ConfigError):
        QueryEnhancement(8, numhead=4, groups=3)


# ---------------------------
# Softmax weights sum to one
# ---------------------------
@settings(max_examples=1000, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), length=st.integers(1, 5), scale=st.floats(0.01, 50.0))
def test_attention_weights_are_stochastic(seed, length, scale):
    torch.manual_seed(seed)
    x = scale * torch.randn(2, length, 4, dtype=torch.float64)
    _, qe_weights = QueryEnhancement(4, 2, 2).double().attend(x)
    _, memory_weights = ExternalMemory(4, slots=3, memory_dim=2).double().read(x)[1:]
    _, psa_weights = PyramidSplitAttention(4, s_groups=2).double().attend(x)

    for sums in (qe_weights.sum(-1), memory_weights.sum(-1), psa_weights.sum(1)):
        torch.testing.assert_close(sums, torch.ones_like(sums), rtol=0, atol=1e-6)


# ---------------------------
# External memory
# ---------------------------
def test_two_slot_memory_oracle():
    memory = ExternalMemory(2, slots=2, memory_dim=2).double()
    _identity_(memory.project_in)
    _identity_(memory.project_out)
    with torch.no_grad():
        memory.memory.copy_(torch.eye(2, dtype=torch.float64))
    y = torch.tensor([[[2.0, 0.0]]], dtype=torch.float64)

    readout = memory.read(y)
    e2 = torch.exp(torch.tensor(2.0, dtype=torch.float64))
    expected_weights = torch.stack([e2 / (e2 + 1), 1 / (e2 + 1)])
    torch.testing.assert_close(readout.weights[0, 0], expected_weights)
    torch.testing.assert_close(readout.m_new[0, 0], expected_weights)
    torch.testing.assert_close(readout.y_prime[0, 0], y[0, 0] + expected_weights)


def test_persistent_memory_only_moves_in_training():
    memory = ExternalMemory(4, slots=3, memory_dim=2, persist=True, momentum=0.5)
    x = torch.randn(2, 5, 4)
    memory.eval()
    memory(x)
    assert torch.count_nonzero(memory.persistent) == 0
    memory.train()
    memory(x)
    assert torch.count_nonzero(memory.persistent) > 0
    assert not memory.persistent.requires_grad


# ---------------------------
# Multi-stage fusion / PSA
# ---------------------------
def test_multistage_halves_per_stage_and_explains_padding():
    stage = MultiStageFusion(4, stages=2, expansion=2)
    assert stage(torch.randn(2, 16, 4)).shape == (2, 4, 4)
    with pytest.raises(ShapeError, match="pad the input with 2"):
        stage(torch.randn(2, 14, 4))


def test_psa_single_group_is_plain_conv():
    psa = PyramidSplitAttention(4, s_groups=1)
    x = torch.randn(2, 7, 4)
    torch.testing.assert_close(psa(x), psa.convs[0](x))


def test_psa_kernels_and_validation():
    assert group_kernels(6) == [3, 5, 7, 9, 11, 13]
    with pytest.raises(ConfigError):
        PyramidSplitAttention(6, s_groups=4)


# ---------------------------
# Adaptive fusion
# ---------------------------
def test_fusion_output_shape_and_branches(tiny_fusion):
    fusion = AdaptiveFusion(4, tiny_fusion)
    out = fusion.branches(torch.randn(2, 16, 4))
    assert out.fused.shape == (2, 4, 12)
    assert out.z_top.shape == (2, 4, 4)
    assert fusion.output_length(16) == 4 and fusion.out_channels == 12


@pytest.mark.parametrize("flag", ["use_query_enhancement", "use_external_memory", "use_multistage"])
def test_ablated_branch_is_a_passthrough(tiny_fusion, flag):
    config = tiny_fusion.model_copy(update={flag: False})
    fusion = AdaptiveFusion(4, config)
    x = torch.randn(2, 16, 4)
    out = fusion.branches(x)
    assert out.fused.shape == (2, 4, 12)
    if flag == "use_query_enhancement":
        torch.testing.assert_close(out.x_prime, x)
    elif flag == "use_external_memory":
        torch.testing.assert_close(out.y_prime, out.x_prime)
    else:
        torch.testing.assert_close(out.z_top, F.max_pool1d(out.y_prime.transpose(1, 2), 4).transpose(1, 2))
    assert count_params(fusion) == expected_param_count(4, config)


def test_fuse_rejects_misaligned_branches():
    x = torch.randn(2, 8, 4)
    with pytest.raises(ShapeError):
        fuse(x, x, torch.randn(2, 3, 4))
    with pytest.raises(ShapeError):
        fuse(x, torch.randn(2, 8, 5), torch.randn(2, 2, 4))


def test_fusion_rejects_length_not_divisible(tiny_fusion):
    with pytest.raises(ShapeError, match="divisible"):
        AdaptiveFusion(4, tiny_fusion)(torch.randn(1, 10, 4))


@pytest.mark.parametrize("channels,config", [
    (300, FusionConfig()),
    (8, FusionConfig(numhead=2, groups=1, memory_slots=5, memory_dim=3, stages=3, mb_expansion=2)),
])
def test_parameter_count_matches_closed_form(channels, config):
    assert count_params(AdaptiveFusion(channels, config)) == expected_param_count(channels, config)


# ---------------------------
# Gradients through the fusion mechanisms
# ---------------------------
@pytest.mark.parametrize("build", [
    lambda: QueryEnhancement(8, 4, 2),
    lambda: ExternalMemory(8, slots=4, memory_dim=4),
    lambda: MultiStageFusion(8, stages=2, expansion=2),
    lambda: PyramidSplitAttention(8, s_groups=4),
])
def test_mechanism_gradcheck(build):
    torch.manual_seed(0)
    module = build().double()
    x = torch.randn(2, 8, 8, dtype=torch.float64, requires_grad=True)
    assert gradcheck(module, (x,), eps=1e-6, atol=1e-5)


def _gradcheck_with_parameters(module, x):
    names = [name for name, _ in module.named_parameters()]
    values = tuple(p.detach().clone().requires_grad_(True) for _, p in module.named_parameters())

    def fn(x, *values):
        return torch.func.functional_call(module, dict(zip(names, values)), (x,))

    return gradcheck(fn, (x,) + values, eps=1e-6, atol=1e-5)


@pytest.mark.parametrize("build", [
    lambda: QueryEnhancement(4, 2, 1),
    lambda: ExternalMemory(4, slots=3, memory_dim=2),
    lambda: MultiStageFusion(4, stages=1, expansion=2),
    lambda: PyramidSplitAttention(4, s_groups=2),
])
def test_mechanism_parameter_gradcheck(build):
    torch.manual_seed(0)
    module = build().double()
    x = torch.randn(2, 4, 4, dtype=torch.float64, requires_grad=True)
    assert _gradcheck_with_parameters(module, x)


def test_groups_equal_to_heads_share_nothing():
    qe = QueryEnhancement(8, numhead=4, groups=4)
    heads = qe._split_heads(qe.k(torch.randn(1, 5, 8)))
    torch.testing.assert_close(qe._share_within_groups(heads), heads)
