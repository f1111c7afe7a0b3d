import numpy as np
import pytest

from glnet import tensor as T
from glnet.gradcheck import toy_config
from glnet.model import Backbone, GLNet, ModelConfig, backbone_widths, forward_group
from glnet.tensor import Tensor


def images(rng, n=3, side=16):
    return Tensor(rng.uniform(0, 1, (n, 3, side, side)).astype(np.float32))


def test_backbone_default_extent(rng):
    bb = Backbone(32, 3, rng)
    assert bb(Tensor(rng.uniform(0, 1, (3, 160, 160)).astype(np.float32))).shape == (32, 20, 20)
    assert backbone_widths(32, 3) == [8, 16, 32]


def test_backbone_is_shared_across_images(rng):
    bb = Backbone(8, 2, rng)
    img = rng.uniform(0, 1, (3, 16, 16)).astype(np.float32)
    out = bb(Tensor(np.stack([img, img]))).data
    np.testing.assert_array_equal(out[0], out[1])
    with pytest.raises(ValueError):
        bb(Tensor(np.zeros((3, 18, 18), np.float32)))


def test_full_forward_default_config():
    model = GLNet(ModelConfig())
    x = Tensor(np.random.default_rng(0).uniform(0, 1, (5, 3, 160, 160)).astype(np.float32))
    maps = forward_group(x, model)
    assert len(maps) == 5
    for m in maps:
        assert m.shape == (1, 160, 160)
        assert m.data.min() > 0 and m.data.max() < 1


def test_identical_group_gives_identical_maps(rng):
    model = GLNet(toy_config())
    one = rng.uniform(0, 1, (3, 16, 16)).astype(np.float32)
    out = model(Tensor(np.stack([one] * 3))).data
    np.testing.assert_array_equal(out[0], out[1])
    np.testing.assert_array_equal(out[1], out[2])


def test_single_image_baseline_equals_manual_wiring(rng):
    model = GLNet(toy_config(disable_gcm=True, disable_lcm=True, single_image_baseline=True))
    x = images(rng)
    F_ia = model.backbone(x)
    manual = model.decoder(model.aewf(F_ia, F_ia))
    np.testing.assert_array_equal(model(x).data, manual.data)


def test_single_branch_ablations_use_gla_attention_only(rng):
    x = images(rng)
    no_lcm = GLNet(toy_config(disable_lcm=True))
    feats = T.unstack(no_lcm.backbone(x), axis=0)
    G = no_lcm.gcm(T.stack(feats, axis=1)).G
    F_ie = no_lcm.inter_features(feats)
    for k in range(3):
        np.testing.assert_array_equal(F_ie.data[k], no_lcm.gla.attend(G).data)
    no_gcm = GLNet(toy_config(disable_gcm=True))
    feats = T.unstack(no_gcm.backbone(x), axis=0)
    P = no_gcm.lcm.all_images(feats)
    np.testing.assert_allclose(no_gcm.inter_features(feats).data,
                               np.stack([no_gcm.gla.attend(p).data for p in P]), rtol=1e-6, atol=1e-7)


@pytest.mark.parametrize("flags", [dict(disable_gcm=True), dict(disable_lcm=True), dict(gcm_use_2d=True),
                                   dict(shared_projection=True)])
def test_variants_run(rng, flags):
    model = GLNet(toy_config(**flags))
    assert model(images(rng)).shape == (3, 1, 16, 16)


def test_group_size_mismatch(rng):
    with pytest.raises(ValueError):
        GLNet(toy_config())(images(rng, n=4))


def test_config_validation_and_round_trip():
    with pytest.raises(ValueError):
        ModelConfig(image_size=100, stride=8)
    with pytest.raises(ValueError):
        ModelConfig(stride=6, image_size=96)
    with pytest.raises(ValueError):
        ModelConfig(disable_gcm=True, disable_lcm=True)
    with pytest.raises(ValueError):
        ModelConfig(group_size=1)
    cfg = ModelConfig(channels=16, seed=4)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(KeyError):
        ModelConfig.from_dict({"width": 3})


def test_same_seed_same_parameters():
    a, b = GLNet(toy_config(seed=2)), GLNet(toy_config(seed=2))
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and pa.data.tobytes() == pb.data.tobytes()


def test_glorot_initialisation():
    model = GLNet(ModelConfig())
    for name, p in model.named_parameters():
        if name.endswith("bias"):
            assert not p.data.any()
        else:
            rf = int(np.prod(p.shape[2:]))
            if "ups" in name:
                fan_in, fan_out = p.shape[0] * rf, p.shape[1] * rf
            else:
                fan_in, fan_out = p.shape[1] * rf, p.shape[0] * rf
            assert np.abs(p.data).max() <= np.sqrt(6.0 / (fan_in + fan_out))
