import numpy as np
import pytest

from crossiris.autodiff import Tensor, no_grad
from crossiris.models import (DiscriminatorConfig, FeatureNet, GeneratorConfig, build_discriminator,
                              build_generator, build_translate_generator, build_unet_generator,
                              embed)


def _x(shape, seed=0):
    return Tensor(np.random.default_rng(seed).random(shape).astype(np.float32))


@pytest.mark.parametrize("hw", [(16, 32), (32, 64)])
def test_translate_generator_keeps_shape(hw):
    g = build_generator(GeneratorConfig("translate", blocks=1, head_kernel=3))
    assert g(_x((2, 1) + hw)).shape == (2, 1) + hw


def test_super_resolution_head_doubles_both_dims():
    g = build_generator(GeneratorConfig("translate_sr", blocks=1, head_kernel=3))
    assert g(_x((2, 1, 8, 16))).shape == (2, 1, 16, 32)


@pytest.mark.parametrize("depth,wm", [(2, 0.25), (3, 0.125), (4, 0.25)])
def test_unet_shapes_and_embedding_length(depth, wm):
    g = build_generator(GeneratorConfig("unet", width_multiplier=wm, depth=depth))
    x = _x((2, 1, 32, 64))
    out, z = g.forward_with_embedding(x)
    assert out.shape == x.shape
    assert z.shape == (2, g.embedding_length)
    assert g.embedding_length == max(1, round(64 * wm)) * 2 ** depth


def test_embedding_length_is_independent_of_resolution():
    # cross-resolution matching needs equal lengths from HR and LR inputs
    g = build_unet_generator(GeneratorConfig("unet", depth=2)).eval()
    with no_grad():
        assert embed(g, _x((1, 1, 32, 64))).shape == embed(g, _x((1, 1, 16, 32))).shape


def test_tiled_embedding_averages_tile_vectors():
    g = build_unet_generator(GeneratorConfig("unet", depth=2)).eval()
    x = _x((2, 1, 16, 64))
    with no_grad():
        tiled = g.embed(x, (16, 32)).data
        left = g.embed(Tensor(x.data[..., :32])).data
        right = g.embed(Tensor(x.data[..., 32:])).data
    np.testing.assert_allclose(tiled, (left + right) / 2, rtol=1e-5, atol=1e-6)
    with pytest.raises(ValueError):
        g.embed(x, (16, 24))


def test_unet_rejects_indivisible_inputs():
    g = build_generator(GeneratorConfig("unet", depth=3))
    with pytest.raises(ValueError):
        g(_x((1, 1, 20, 64)))


@pytest.mark.parametrize("kind", ["global", "patch"])
def test_discriminators_output_probabilities(kind):
    cfg = DiscriminatorConfig(kind, input_hw=(32, 64))
    d = build_discriminator(cfg)
    p = d(_x((3, 1, 32, 64), 1), _x((3, 1, 32, 64), 2)).data
    assert ((p > 0) & (p < 1)).all()
    assert p.shape == ((3, 1) if kind == "global" else (3, 1, 2, 4))
    with pytest.raises(ValueError):
        d(_x((3, 1, 16, 64)), _x((3, 1, 16, 64)))


def test_discriminator_upsamples_low_resolution_condition():
    d = build_discriminator(DiscriminatorConfig("global", input_hw=(32, 64), cond_scale=2))
    assert d(_x((2, 1, 16, 32)), _x((2, 1, 32, 64))).shape == (2, 1)


def test_unconditional_discriminator():
    d = build_discriminator(DiscriminatorConfig("patch", input_hw=(32, 64), in_channels=1))
    assert d(None, _x((2, 1, 32, 64))).shape == (2, 1, 2, 4)


def test_same_seed_same_weights():
    cfg = GeneratorConfig("translate", blocks=1, head_kernel=3)
    a = build_generator(cfg, 7).state_arrays()
    b = build_generator(cfg, 7).state_arrays()
    c = build_generator(cfg, 8).state_arrays()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not all(np.array_equal(a[k], c[k]) for k in a)


def test_parameter_count_grows_with_width():
    small = build_generator(GeneratorConfig("translate", width_multiplier=0.125)).num_parameters()
    big = build_generator(GeneratorConfig("translate", width_multiplier=0.25)).num_parameters()
    assert big > 3 * small


def test_dropout_defaults():
    assert GeneratorConfig("unet").dropout_p() == 0.5
    assert GeneratorConfig("translate").dropout_p() == 0.0
    assert GeneratorConfig("unet", dropout=0.1).dropout_p() == 0.1


@pytest.mark.parametrize("bad", [
    lambda: build_generator(GeneratorConfig("vae")),
    lambda: build_generator(GeneratorConfig("translate", width_multiplier=0)),
    lambda: build_generator(GeneratorConfig("translate", blocks=0)),
    lambda: build_generator(GeneratorConfig("unet", depth=1)),
    lambda: build_translate_generator(GeneratorConfig("unet")),
    lambda: build_discriminator(DiscriminatorConfig("global", input_hw=(24, 64))),
    lambda: GeneratorConfig(init="xavier"),
    lambda: GeneratorConfig.from_dict({"kind": "unet", "colour": 1}),
])
def test_invalid_configs(bad):
    with pytest.raises(ValueError):
        bad()


def test_config_dict_round_trip():
    g = GeneratorConfig("unet", width_multiplier=0.5, depth=3)
    assert GeneratorConfig.from_dict(g.to_dict()) == g
    d = DiscriminatorConfig("patch", input_hw=(32, 64))
    assert DiscriminatorConfig.from_dict(d.to_dict()) == d


def test_feature_net_is_frozen_and_deterministic():
    a, b = FeatureNet(3), FeatureNet(3)
    assert all(not p.requires_grad for p in a.parameters())
    x = _x((1, 1, 16, 16))
    np.testing.assert_array_equal(a(x).data, b(x).data)
    assert a(x).shape == (1, 64, 2, 2)
