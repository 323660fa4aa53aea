import pytest
import torch

from drsnet.blocks import (AsymConv, BlockConfig, ConvSpec, DoubleConv, MultiScaleSE, NeckConv,
                           PointwiseConv, SEAttention, asym_conv, double_conv, multiscale_se_block,
                           neck_conv, pointwise_conv, se_attention)
from drsnet.model import AsymmetricSkip, Bottleneck, DecoderStage, SEBasicBlock, SymmetricSkip

from gradcheck import finite_difference_error


def x(c=2, h=8, w=8, batch=2):
    return torch.randn(batch, c, h, w)


def test_convspec_validation():
    with pytest.raises(ValueError):
        ConvSpec(2, 2, kernel_size=4)
    with pytest.raises(ValueError):
        ConvSpec(2, 2, kernel_size=1, factorized=True)
    with pytest.raises(ValueError):
        ConvSpec(0, 2)
    assert ConvSpec(2, 2, 5, dilation=2).padding == 4


@pytest.mark.parametrize("n,d", [(3, 1), (3, 2), (5, 1), (5, 2)])
def test_asym_conv_preserves_size_and_counts_params(n, d):
    m = AsymConv(ConvSpec(4, 6, n, d))
    assert m(x(4, 10, 12)).shape == (2, 6, 10, 12)
    assert sum(p.numel() for p in m.parameters()) == 4 * 6 * n + 6 + 6 * 6 * n + 6


def test_asym_conv_equals_full_conv_with_outer_product_kernel():
    m = AsymConv(ConvSpec(1, 1, 3), bias=False)
    inp = x(1, 9, 9, 1)
    full = torch.nn.functional.conv2d(inp, m.vertical.weight * m.horizontal.weight, padding=1)
    torch.testing.assert_close(m(inp), full)


def test_channel_mismatch_is_rejected():
    with pytest.raises(ValueError, match="channels"):
        AsymConv(ConvSpec(4, 4))(x(3))
    with pytest.raises(ValueError, match="channels"):
        MultiScaleSE(BlockConfig("A", 8, 8))(x(4))
    with pytest.raises(ValueError):
        SEAttention(4)(torch.randn(4, 8))


def test_se_reduction_must_divide():
    with pytest.raises(ValueError, match="reduction"):
        SEAttention(6, 4)
    with pytest.raises(ValueError):
        BlockConfig("A", 8, 6)


def test_se_gate_bounds_and_identity_for_zero_input():
    se = SEAttention(8, 4)
    g = se.gate(x(8))
    assert ((g > 0) & (g < 1)).all()
    assert torch.equal(se(torch.zeros(1, 8, 4, 4)), torch.zeros(1, 8, 4, 4))


@pytest.mark.parametrize("variant", ["A", "B", "C"])
def test_multiscale_se_shapes(variant):
    block = MultiScaleSE(BlockConfig(variant, 24, 48))
    assert block(x(24, 16, 24)).shape == (2, 48, 16, 24)


def test_variant_c_needs_three_way_split():
    with pytest.raises(ValueError, match="three"):
        BlockConfig("C", 8, 12)


def test_double_and_neck_conv_widths():
    d, n = DoubleConv(6, 8), NeckConv(6, 8)
    assert d.mid == 4 and n.mid == 3
    assert d(x(6)).shape == n(x(6)).shape == (2, 8, 8, 8)
    with pytest.raises(ValueError):
        DoubleConv(4, 5)
    with pytest.raises(ValueError):
        NeckConv(5, 4)


def test_pointwise_is_one_by_one():
    p = PointwiseConv(4, 1)
    assert p.kernel_size == (1, 1) and p(x(4)).shape == (2, 1, 8, 8)


def test_functional_forms_match_shapes():
    inp = x(6)
    assert asym_conv(inp, ConvSpec(6, 4)).shape == (2, 4, 8, 8)
    assert se_attention(inp, 3).shape == inp.shape
    assert double_conv(inp, 4).shape == neck_conv(inp, 4).shape == (2, 4, 8, 8)
    assert pointwise_conv(inp, 1).shape == (2, 1, 8, 8)
    assert multiscale_se_block(inp, BlockConfig("C", 6, 12)).shape == (2, 12, 8, 8)


GRADIENT_CASES = {
    "asym_conv": lambda: (AsymConv(ConvSpec(2, 2, 3, 2)), x()),
    "se_attention": lambda: (SEAttention(2, 2), x()),
    "multiscale_se_A": lambda: (MultiScaleSE(BlockConfig("A", 2, 4)), x()),
    "multiscale_se_B": lambda: (MultiScaleSE(BlockConfig("B", 2, 4)), x()),
    # a three-way channel split needs at least three input channels
    "multiscale_se_C": lambda: (MultiScaleSE(BlockConfig("C", 3, 12)), x(3)),
    "double_conv": lambda: (DoubleConv(2, 4), x()),
    "neck_conv": lambda: (NeckConv(2, 2), x()),
    "pointwise": lambda: (PointwiseConv(2, 1), x()),
    "decoder_stage": lambda: (DecoderStage(4, 2, 2), x(4, 4, 4)),
    "asymmetric_skip": lambda: (AsymmetricSkip(4, 2, 2), x(4, 4, 4), x()),
    "symmetric_skip": lambda: (SymmetricSkip(), x(), x()),
    "se_basic_block": lambda: (SEBasicBlock(2, 4, reduction=2), x()),
    "bottleneck": lambda: (Bottleneck(2, 4, expansion=2), x()),
}


@pytest.mark.parametrize("name", sorted(GRADIENT_CASES))
def test_block_gradients_match_finite_differences(name):
    torch.manual_seed(1)
    module, *inputs = GRADIENT_CASES[name]()
    assert finite_difference_error(module, *inputs) <= 1e-3
