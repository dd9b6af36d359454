import pytest
import torch

from _gradcheck import check_module_gradients
from recurseg.blocks import (
    DilatedConvGroup,
    Downsample,
    Encoder,
    NetworkConfig,
    initialize_parameters,
)
from recurseg.data import DataError
from recurseg.network import build_model, expected_encoder_shapes


def rand(shape, seed=0, dtype=torch.float64):
    gen = torch.Generator().manual_seed(seed)
    return torch.randn(shape, generator=gen, dtype=dtype)


class TestNetworkConfig:
    def test_default_level_arithmetic(self):
        cfg = NetworkConfig()
        assert cfg.level_channels() == [16, 32, 64, 128]
        assert cfg.level_sizes() == [128, 64, 32, 16]

    def test_rejects_indivisible_input(self):
        with pytest.raises(DataError):
            NetworkConfig(levels=4, input_size=100)

    def test_rejects_single_level(self):
        with pytest.raises(DataError):
            NetworkConfig(levels=1)


class TestDilatedConvGroup:
    def test_receptive_field_exceeds_single_rate1_conv(self):
        group = DilatedConvGroup(4, 4, rates=(1, 2, 4))
        single = DilatedConvGroup(4, 4, rates=(1,))
        assert group.receptive_field > single.receptive_field == 3

    def test_zero_input_zero_bias_gives_zero(self):
        group = DilatedConvGroup(3, 5)
        initialize_parameters(group, seed=0)
        out = group(torch.zeros(2, 3, 8, 8))
        assert torch.equal(out, torch.zeros_like(out))

    def test_shape_preserving_spatially(self):
        group = DilatedConvGroup(2, 7)
        initialize_parameters(group, seed=1)
        assert group(torch.randn(1, 2, 10, 12)).shape == (1, 7, 10, 12)

    def test_gradients_match_finite_differences(self):
        group = DilatedConvGroup(3, 4).double()
        initialize_parameters(group, seed=2)
        x = rand((1, 3, 8, 8), seed=3).requires_grad_(True)
        proj = rand((1, 4, 8, 8), seed=4)
        err = check_module_gradients(group, lambda: (group(x) * proj).sum(), inputs=[x])
        assert err < 1e-3


class TestDownsample:
    def test_halves_spatial_doubles_channels(self):
        down = Downsample(4, 8)
        initialize_parameters(down, seed=0)
        assert down(torch.randn(1, 4, 16, 16)).shape == (1, 8, 8, 8)

    def test_gradients_match_finite_differences(self):
        down = Downsample(2, 4).double()
        initialize_parameters(down, seed=1)
        x = rand((1, 2, 8, 8), seed=5).requires_grad_(True)
        proj = rand((1, 4, 4, 4), seed=6)
        err = check_module_gradients(down, lambda: (down(x) * proj).sum(), inputs=[x])
        assert err < 1e-3


class TestEncoder:
    def test_default_config_level_shapes(self):
        cfg = NetworkConfig(levels=4, base_channels=16, input_size=128)
        enc = Encoder(cfg)
        initialize_parameters(enc, seed=0)
        with torch.no_grad():
            feats = enc(torch.randn(1, 1, 128, 128))
        got = [tuple(f.shape) for f in feats]
        assert got == [(1, 16, 128, 128), (1, 32, 64, 64), (1, 64, 32, 32), (1, 128, 16, 16)]
        assert got == expected_encoder_shapes(cfg, batch=1)

    def test_shape_contract_on_other_configs(self):
        for cfg in (
            NetworkConfig(levels=2, base_channels=4, input_size=16),
            NetworkConfig(levels=3, base_channels=4, input_size=32),
            NetworkConfig(levels=5, base_channels=2, input_size=64),
        ):
            enc = Encoder(cfg)
            initialize_parameters(enc, seed=1)
            with torch.no_grad():
                feats = enc(torch.randn(2, 1, cfg.input_size, cfg.input_size))
            assert [tuple(f.shape) for f in feats] == expected_encoder_shapes(cfg, batch=2)

    def test_zero_input_gives_zero_features(self, tiny_config):
        enc = Encoder(tiny_config)
        initialize_parameters(enc, seed=2)
        with torch.no_grad():
            feats = enc(torch.zeros(1, 1, 16, 16))
        assert all(torch.equal(f, torch.zeros_like(f)) for f in feats)

    def test_rejects_wrong_input_size(self, tiny_config):
        enc = Encoder(tiny_config)
        with pytest.raises(DataError):
            enc(torch.randn(1, 1, 32, 32))

    def test_gradients_match_finite_differences(self, tiny_config):
        enc = Encoder(tiny_config).double()
        initialize_parameters(enc, seed=3)
        x = rand((1, 1, 16, 16), seed=7).requires_grad_(True)
        projs = [rand(s, seed=20 + i) for i, s in enumerate(expected_encoder_shapes(tiny_config))]

        def objective():
            feats = enc(x)
            return sum((f * p).sum() for f, p in zip(feats, projs))

        err = check_module_gradients(enc, objective, inputs=[x], max_elems_per_tensor=3)
        assert err < 1e-3


class TestInit:
    def test_same_seed_bit_identical(self, tiny_config):
        m1 = build_model(tiny_config, seed=7)
        m2 = build_model(tiny_config, seed=7)
        for (n1, p1), (n2, p2) in zip(m1.named_parameters(), m2.named_parameters()):
            assert n1 == n2
            assert torch.equal(p1, p2)

    def test_different_seed_differs(self, tiny_config):
        m1 = build_model(tiny_config, seed=7)
        m2 = build_model(tiny_config, seed=8)
        assert any(
            not torch.equal(p1, p2)
            for p1, p2 in zip(m1.parameters(), m2.parameters())
        )

    def test_leaf_count_matches_hand_count(self):
        # levels=2, base=4: channels [4, 8], bottleneck 16.
        # encoder (x2): level0 group 3*(w,b)+IN(w,b)=8, down conv+IN=4,
        #               level1 group=8            -> 20 each, 40 total
        # fusion MMFF(16): 3 spatial convs (w,b)  -> 6
        # correlation: 2 estimators x 2 linears x (w,b)          -> 8
        # decoder_seg: MMFF(24)=6 + group(24->4)=8 + head(w,b)=2 -> 16
        # decoder_pred: MMFF(28)=6 + group(28->4)=8 + head=2     -> 16
        cfg = NetworkConfig(levels=2, base_channels=4, input_size=16)
        model = build_model(cfg, seed=0)
        assert len(list(model.parameters())) == 40 + 6 + 8 + 16 + 16

    def test_all_leaves_finite_and_biases_zero(self, small_config):
        model = build_model(small_config, seed=11)
        for name, p in model.named_parameters():
            assert torch.isfinite(p).all(), name
            if name.endswith(".bias") and "norm" not in name:
                assert torch.equal(p, torch.zeros_like(p)), name
