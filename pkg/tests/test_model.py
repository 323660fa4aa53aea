import pytest
import torch

from drsnet.model import (ABLATIONS, DEFAULT_DEPTHS, AsymmetricSkip, DRSNet, NetworkConfig, SymmetricSkip,
                          asymmetric_skip, build_ablation, build_drsnet, segment, symmetric_skip)
from drsnet.profiler import count_params

MODELS = {**{f"DRSNet({v})": (lambda v=v: build_drsnet(NetworkConfig(variant=v))) for v in "ABC"},
          **{k: (lambda k=k: build_ablation(k)) for k in ABLATIONS}}


def test_default_config_round_trips():
    cfg = NetworkConfig()
    assert cfg.channel_schedule == (24, 48, 96, 192)
    assert cfg.downsample_factors == (4, 2, 2) and cfg.total_stride == 16
    assert cfg.blocks_per_stage == DEFAULT_DEPTHS["A"]
    assert NetworkConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("kwargs,match", [
    ({"variant": "D"}, "variant"),
    ({"channel_schedule": (24, 48, 90, 192)}, "double"),
    ({"input_size": (100, 100)}, "divisible"),
    ({"skip_mode": "dense"}, "skip_mode"),
    ({"blocks_per_stage": (1, 2)}, "blocks_per_stage"),
])
def test_invalid_configs_are_rejected(kwargs, match):
    with pytest.raises(ValueError, match=match):
        NetworkConfig(**kwargs)


@pytest.mark.parametrize("name", sorted(MODELS))
def test_output_matches_input_size(name):
    model = MODELS[name]().eval()
    with torch.no_grad():
        for w, h in [(192, 128), (384, 256)]:
            assert model(torch.rand(1, 3, h, w)).shape == (1, 1, h, w)
        with pytest.raises(ValueError, match="divisible"):
            model(torch.rand(1, 3, 100, 100))


def test_segment_returns_probabilities():
    out = segment(build_drsnet().eval(), torch.rand(2, 3, 64, 96))
    assert out.probabilities.shape == (2, 1, 64, 96)
    assert ((out.probabilities > 0) & (out.probabilities < 1)).all()
    torch.testing.assert_close(out.probabilities, torch.sigmoid(out.logits))


def test_rejects_non_rgb_batches():
    with pytest.raises(ValueError, match="3"):
        build_drsnet()(torch.rand(1, 1, 64, 64))


def test_projection_order_is_output_equivalent():
    torch.manual_seed(3)
    fast = build_drsnet(NetworkConfig(project_first=True)).double().eval()
    slow = DRSNet(NetworkConfig(project_first=False)).double().eval()
    slow.load_state_dict(fast.state_dict())
    x = torch.rand(2, 3, 128, 192, dtype=torch.float64)
    with torch.no_grad():
        torch.testing.assert_close(fast(x), slow(x), rtol=1e-10, atol=1e-10)


def test_asymmetric_skip_scale_check():
    skip = AsymmetricSkip(8, 4, 2)
    assert skip(torch.rand(1, 8, 4, 6), torch.rand(1, 4, 8, 12)).shape == (1, 4, 8, 12)
    with pytest.raises(ValueError, match="1/2"):
        skip(torch.rand(1, 8, 8, 12), torch.rand(1, 4, 8, 12))
    assert asymmetric_skip(torch.rand(1, 8, 4, 6), torch.rand(1, 4, 8, 12)).shape == (1, 4, 8, 12)


def test_symmetric_skip_is_plain_addition():
    a, b = torch.rand(1, 4, 8, 8), torch.rand(1, 4, 8, 8)
    torch.testing.assert_close(symmetric_skip(a, b), a + b)
    with pytest.raises(ValueError):
        SymmetricSkip()(a, torch.rand(1, 4, 4, 4))


def test_default_network_has_two_skips():
    model = build_drsnet()
    assert sorted(model.skips) == ["1", "2"]
    assert sorted(build_drsnet(NetworkConfig(full_res_skip=True)).skips) == ["0", "1", "2"]


def test_ablation_configs():
    assert build_ablation("symmetric_skip").cfg.skip_mode == "symmetric"
    assert build_ablation("seresnet18_encoder").cfg.encoder_mode == "seresnet18"
    assert build_ablation("resnet18_bottleneck").cfg.channel_schedule == (96, 192, 384, 768)
    with pytest.raises(ValueError, match="unknown ablation"):
        build_ablation("mobilenet")


def test_parameter_count_does_not_depend_on_input_size():
    assert count_params(build_drsnet(NetworkConfig(input_size=(192, 128)))) == \
        count_params(build_drsnet(NetworkConfig(input_size=(768, 512))))


def test_deeper_stages_are_configurable():
    cfg = NetworkConfig(channel_schedule=(24, 48, 96, 192, 384))
    assert cfg.total_stride == 32
    model = build_drsnet(cfg).eval()
    with torch.no_grad():
        assert model(torch.rand(1, 3, 64, 96)).shape == (1, 1, 64, 96)
