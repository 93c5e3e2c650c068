import numpy as np
import pytest

from conftest import numeric_grad_smooth, rel_error
from prae.errors import ConfigError, DimensionError
from prae.harness.audit import PUBLISHED_COUNTS
from prae.loss import batch_multihead_chamfer_loss
from prae.metrics import chamfer
from prae.metrics.nn import brute_force_nn
from prae.model import (
    CUSTOM,
    DEEP_AE,
    LIGHT_AE,
    DecoderSpec,
    EncoderSpec,
    build_model,
    count_parameters,
    decoder_param_count,
    spec_from_dict,
    spec_to_dict,
)
from prae.tensor import Adam, BatchNorm, Dense, PointwiseLinear, ReLU


def _model(backbone=LIGHT_AE, depth=1, heads=1, K=2048, seed=0, dtype=np.float32):
    return build_model(EncoderSpec(backbone), DecoderSpec(backbone, depth, heads, K), seed, dtype)


def _dims(net, cls):
    return [(l.in_features, l.out_features) for l in net if isinstance(l, cls)]


def test_light_encoder_layout():
    m = _model()
    assert _dims(m.encoder, PointwiseLinear) == [(3, 64), (64, 128), (128, 128)]
    kinds = [l.kind for l in m.encoder]
    assert kinds == ["PointwiseLinear", "BatchNorm", "ReLU", "PointwiseLinear", "BatchNorm",
                     "ReLU", "PointwiseLinear", "BatchNorm", "MaxPoolPoints"]


def test_deep_encoder_layout():
    m = _model(DEEP_AE, depth=1)
    assert _dims(m.encoder, PointwiseLinear) == [(3, 64), (64, 64), (64, 64), (64, 128),
                                                  (128, 1024)]
    assert m.latent_dim == 1024


def test_light_depth1_single_layer():
    m = _model(LIGHT_AE, 1, 1)
    assert _dims(m.heads[0], Dense) == [(128, 6144)]


def test_deep_depth3_two_heads():
    m = _model(DEEP_AE, 3, 2)
    assert len(m.heads) == 2
    for head in m.heads:
        assert _dims(head, Dense) == [(1024, 512), (512, 1024), (1024, 3072)]
        # BatchNorm after every hidden layer, nothing after the output layer
        assert [l.kind for l in head] == ["Dense", "BatchNorm", "ReLU", "Dense", "BatchNorm",
                                          "ReLU", "Dense"]
    x = np.random.default_rng(0).normal(size=(2, 3, 64)).astype(np.float32)
    assert m.reconstruct(x).shape == (2, 2048, 3)


def test_light_decoder_has_no_batchnorm():
    m = _model(LIGHT_AE, 4, 2)
    for head in m.heads:
        assert not any(isinstance(l, BatchNorm) for l in head)
        assert isinstance(head[-1], Dense)


def test_same_seed_same_parameters():
    a, b = _model(LIGHT_AE, 3, 2, seed=7), _model(LIGHT_AE, 3, 2, seed=7)
    for (na, pa, _, _), (nb, pb, _, _) in zip(a.named_params(), b.named_params()):
        assert na == nb and np.array_equal(pa, pb)
    c = _model(LIGHT_AE, 3, 2, seed=8)
    assert not np.array_equal(a.heads[0][0].params["weight"], c.heads[0][0].params["weight"])


def test_heads_have_identical_shapes_but_independent_weights():
    m = _model(LIGHT_AE, 3, 4, K=256)
    shapes = [[p.shape for _, p, _, _ in h.named_params()] for h in m.heads]
    assert all(s == shapes[0] for s in shapes)
    assert not np.array_equal(m.heads[0][0].params["weight"], m.heads[1][0].params["weight"])


@pytest.mark.parametrize("backbone,depth,heads,expected", [
    (LIGHT_AE, 1, 1, 792_576),
    (LIGHT_AE, 2, 2, 1_645_056),
    (DEEP_AE, 1, 1, 6_297_600),
    (DEEP_AE, 1, 2, 6_297_600),
])
def test_exact_parameter_counts(backbone, depth, heads, expected):
    m = _model(backbone, depth, heads)
    assert count_parameters(m) == expected
    assert decoder_param_count(m.decoder_spec) == expected


@pytest.mark.parametrize("backbone", [LIGHT_AE, DEEP_AE])
@pytest.mark.parametrize("depth", [1, 2, 3, 4, 5])
@pytest.mark.parametrize("heads", [1, 2])
def test_parameter_audit_matches_published_table(backbone, depth, heads):
    m = _model(backbone, depth, heads)
    n = count_parameters(m)
    assert n == decoder_param_count(m.decoder_spec)
    published = PUBLISHED_COUNTS[backbone][depth - 1][heads - 1]
    assert abs(round(n / 1e4) - round(published * 100)) <= 1


def test_count_scopes():
    m = _model(LIGHT_AE, 1, 1)
    enc = (3 * 64 + 64 + 128) + (64 * 128 + 128 + 256) + (128 * 128 + 128 + 256)
    assert count_parameters(m, "encoder") == enc
    assert count_parameters(m, "all") == enc + 792_576


def test_single_head_matches_single_head_column_shapes():
    for depth in range(1, 6):
        single = _model(LIGHT_AE, depth, 1)
        assert single.decoder_spec.layer_dims[-1] == 2048 * 3
        two = _model(LIGHT_AE, depth, 2)
        assert single.decoder_spec.layer_dims[:-1] == two.decoder_spec.layer_dims[:-1]


def test_spec_validation_errors():
    with pytest.raises(ConfigError):
        DecoderSpec(LIGHT_AE, 3, 2, 255)
    with pytest.raises(ConfigError):
        DecoderSpec(LIGHT_AE, 6, 1)
    with pytest.raises(ConfigError):
        DecoderSpec(LIGHT_AE, 2, 1, hidden_dims=(512, 6144))
    with pytest.raises(ConfigError):
        EncoderSpec("PTv3")
    with pytest.raises(ConfigError):
        build_model(EncoderSpec(LIGHT_AE), DecoderSpec(DEEP_AE, 1, 1))


def test_spec_dict_round_trip():
    enc, dec = EncoderSpec(DEEP_AE), DecoderSpec(DEEP_AE, 4, 2, 1024)
    assert spec_from_dict(spec_to_dict(enc, dec)) == (enc, dec)


def test_head_outputs_sizes_and_order():
    m = _model(LIGHT_AE, 2, 2, K=2048)
    x = np.random.default_rng(1).normal(size=(3, 3, 100)).astype(np.float32)
    heads = m.forward(x, train=False)
    assert [h.shape for h in heads] == [(3, 1024, 3), (3, 1024, 3)]
    rec = m.reconstruct(x)
    assert np.array_equal(rec[:, :1024], heads[0]) and np.array_equal(rec[:, 1024:], heads[1])


def test_single_head_reconstruct_is_decode_of_encode():
    m = _model(LIGHT_AE, 2, 1, K=512)
    x = np.random.default_rng(2).normal(size=(2, 3, 50)).astype(np.float32)
    assert np.array_equal(m.reconstruct(x), m.decode(m.encode(x))[0])


def test_untrained_output_finite():
    m = _model(LIGHT_AE, 3, 1)
    out = m.reconstruct(np.random.default_rng(3).normal(size=(2, 3, 2048)).astype(np.float32))
    assert out.shape == (2, 2048, 3) and np.all(np.isfinite(out))


def test_encode_exactly_permutation_invariant():
    rng = np.random.default_rng(4)
    for backbone in (LIGHT_AE, DEEP_AE):
        m = _model(backbone, 1, 1, K=64)
        x = rng.normal(size=(1, 3, 300)).astype(np.float32)
        perm = rng.permutation(300)
        assert np.array_equal(m.encode(x), m.encode(x[:, :, perm]))


def test_single_point_latent_equals_point_features():
    m = _model(LIGHT_AE, 1, 1, K=64)
    x = np.array([[[0.3], [-0.2], [0.9]]], dtype=np.float32)
    feats = x
    for layer in m.encoder.layers[:-1]:
        feats = layer.forward(feats, train=False)
    assert np.array_equal(m.encode(x), feats[:, :, 0])


def test_identical_clouds_give_identical_latents():
    m = _model(LIGHT_AE, 1, 1, K=64)
    x = np.random.default_rng(5).normal(size=(1, 3, 40)).astype(np.float32)
    lat = m.encode(np.concatenate([x, x]))
    assert np.array_equal(lat[0], lat[1])


def test_zeroing_one_head_changes_only_its_slice():
    m = _model(LIGHT_AE, 3, 4, K=256)
    x = np.random.default_rng(6).normal(size=(2, 3, 80)).astype(np.float32)
    before = m.reconstruct(x)
    for _, p, _, _ in m.heads[2].named_params():
        p[...] = 0
    after = m.reconstruct(x)
    changed = np.any(before != after, axis=(0, 2))
    assert changed[128:192].all()
    assert not changed[:128].any() and not changed[192:].any()
    assert not np.any(after[:, 128:192])


def test_wrong_input_shape_raises():
    m = _model(LIGHT_AE, 1, 1, K=64)
    with pytest.raises(DimensionError):
        m.encode(np.zeros((2, 50, 3), dtype=np.float32))
    with pytest.raises(DimensionError):
        m.decode(np.zeros((2, 64), dtype=np.float32))


def test_head_gradients_are_independent():
    # a loss on head j's output puts gradient on head j's output bias only
    m = _model(LIGHT_AE, 2, 3, K=96)
    x = np.random.default_rng(7).normal(size=(2, 3, 40)).astype(np.float32)
    heads = m.forward(x, train=True)
    grads = [np.zeros(h.shape) for h in heads]
    grads[1] = np.random.default_rng(8).normal(size=heads[1].shape)
    m.zero_grad()
    m.backward(grads)
    assert np.any(m.heads[1][-1].grads["bias"])
    for j in (0, 2):
        assert not np.any(m.heads[j][-1].grads["bias"])
        assert not np.any(m.heads[j][0].grads["weight"])


def _tiny_model(seed, heads=2):
    enc = EncoderSpec(CUSTOM, widths=(3, 8, 16))
    dec = DecoderSpec(CUSTOM, depth=2, heads=heads, output_points=8,
                      hidden_dims=(12, 8 // heads * 3), latent_dim=16)
    return build_model(enc, dec, seed=seed, dtype=np.float64)


def _signature(model, gt, heads):
    """Discrete state of a forward pass: ReLU masks, pooling argmax and both
    nearest-neighbour directions."""
    sig = [tuple(model.encoder[-1]._cache[0].ravel())]
    for net in model.networks():
        sig += [l._cache.tobytes() for l in net if isinstance(l, ReLU)]
    for b in range(gt.shape[0]):
        for h in heads:
            sig.append(tuple(brute_force_nn(gt[b], h[b])[1]))
            sig.append(tuple(brute_force_nn(h[b], gt[b])[1]))
    return tuple(sig)


def test_end_to_end_gradient_matches_finite_differences():
    checked = total = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        m = _tiny_model(seed, heads=(1, 2, 4)[seed % 3])
        x = rng.uniform(-1, 1, size=(2, 3, 32))
        gt = x.transpose(0, 2, 1)
        last = {}

        def f():
            last["heads"] = m.forward(x, train=True)
            return batch_multihead_chamfer_loss(gt, last["heads"])[0]

        def sig():
            return _signature(m, gt, last["heads"])

        m.zero_grad()
        _, grads = batch_multihead_chamfer_loss(gt, m.forward(x, train=True))
        m.backward(grads)
        analytic = {n: layer.grads[k].copy() for n, _, layer, k in m.named_params()}
        for name, p, _, _ in m.named_params():
            num, valid = numeric_grad_smooth(f, sig, p)
            err = rel_error(analytic[name][valid], num[valid])
            assert err < 1e-3, (seed, name, err)
            checked += int(valid.sum())
            total += valid.size
    # kinks are rare: nearly every coordinate is actually checked
    assert checked > 0.95 * total


def test_overfits_one_shape():
    rng = np.random.default_rng(0)
    u = rng.normal(size=(256, 3))
    cloud = (u / np.linalg.norm(u, axis=1, keepdims=True)).astype(np.float32)
    x = np.repeat(cloud.T[None], 2, axis=0)
    m = _model(LIGHT_AE, 2, 2, K=256)
    untrained = chamfer(m.reconstruct(x)[0], cloud)
    opt = Adam(lr=1e-3)
    for _ in range(200):
        m.zero_grad()
        _, grads = batch_multihead_chamfer_loss(x.transpose(0, 2, 1), m.forward(x, train=True))
        m.backward(grads)
        opt.step(m.named_grads())
    trained = chamfer(m.reconstruct(x)[0], cloud)
    assert trained < untrained / 10
