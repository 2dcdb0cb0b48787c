import math

import numpy as np
import pytest

from dptext.autodiff import ConfigError, Tensor, no_grad, ops
from dptext.autodiff.gradcheck import check_function
from dptext.geometry import is_clockwise
from dptext.model import (BoxQueryEncoder, DeformableAttention, Detector, FactorizedSelfAttention, ModelConfig,
                          PointQueryEncoder, load_checkpoint, point_update, prior_points_sampling,
                          save_checkpoint)
from dptext.model.checkpoint import CheckpointError, decode_checkpoint, encode_checkpoint
from dptext.selfcheck import TINY_MODEL, model_gradcheck

SMALL = ModelConfig(d_model=16, n_heads=4, n_deform_points=2, n_encoder_layers=1, n_decoder_layers=3,
                    n_queries=4, n_points=8, d_ffn=32, image_size=32, stem_channels=(4, 8))


# -- prior points -----------------------------------------------------------

def test_prior_points_hand_example():
    pts = prior_points_sampling(np.array([0.5, 0.5, 0.4, 0.2]), 4)
    expected = np.array([(0.3, 0.4), (0.7, 0.4), (0.7, 0.6), (0.3, 0.6)])
    np.testing.assert_array_equal(pts, expected)


def test_prior_points_first_is_top_left_and_degenerate_box():
    box = np.array([0.4, 0.6, 0.2, 0.3])
    assert tuple(prior_points_sampling(box, 4)[0]) == pytest.approx((0.3, 0.45))
    collapsed = prior_points_sampling(np.array([0.4, 0.6, 0.0, 0.0]), 8)
    np.testing.assert_array_equal(collapsed, np.tile([0.4, 0.6], (8, 1)))


@pytest.mark.parametrize("n", [3, 2, 7])
def test_prior_points_rejects_bad_n(n):
    with pytest.raises(ConfigError):
        prior_points_sampling(np.array([0.5, 0.5, 0.2, 0.2]), n)


def test_prior_points_clockwise_random_boxes():
    rng = np.random.default_rng(0)
    centre = rng.uniform(0.2, 0.8, (1000, 2))
    size = rng.uniform(0.01, 0.4, (1000, 2))
    pts = prior_points_sampling(np.hstack([centre, size]), 8)
    assert all(is_clockwise(p) for p in pts)


# -- positional queries -----------------------------------------------------

def test_point_encoder_identical_rows_and_shape():
    enc = PointQueryEncoder(16, np.random.default_rng(0))
    pts = prior_points_sampling(np.array([[0.5, 0.5, 0.4, 0.2]] * 2 + [[0.3, 0.3, 0.1, 0.1]]), 8)
    out = enc(Tensor(pts))
    assert out.shape == (3, 8, 16)
    np.testing.assert_array_equal(out.data[0], out.data[1])
    # respective priors: every point of a non-degenerate box gets its own vector
    assert len(np.unique(out.data[2].round(12), axis=0)) == 8


def test_point_encoder_gradcheck_wrt_points():
    rng = np.random.default_rng(1)
    enc = PointQueryEncoder(16, rng)
    pts = Tensor(rng.uniform(0.1, 0.9, (2, 4, 2)))
    assert check_function(lambda p: enc(p), [pts], rng=rng) < 1e-4


def test_box_encoder_rows_identical_and_boxes_distinct():
    enc = BoxQueryEncoder(16, np.random.default_rng(0))
    out = enc(Tensor(np.array([[0.5, 0.5, 0.4, 0.2], [0.3, 0.6, 0.2, 0.1]])), 8).data
    assert out.shape == (2, 8, 16)
    assert np.all(out[0] == out[0, :1]) and np.all(out[1] == out[1, :1])
    assert not np.allclose(out[0, 0], out[1, 0])


def test_point_update_examples():
    pts = np.random.default_rng(0).uniform(0.05, 0.95, (2, 4, 2))
    np.testing.assert_allclose(point_update(Tensor(pts), Tensor(np.zeros_like(pts))).data, pts, atol=1e-9)
    assert point_update(Tensor([0.5]), Tensor([math.log(3.0)])).data[0] == pytest.approx(0.75, abs=1e-12)
    moved = point_update(Tensor(pts), Tensor(np.random.default_rng(1).normal(0, 20, pts.shape))).data
    assert np.all((moved > 0) & (moved < 1))


# -- self-attention block ---------------------------------------------------

def _fsa(enhanced=True, n=8):
    rng = np.random.default_rng(3)
    block = FactorizedSelfAttention(16, 4, rng, enhanced=enhanced, kernel_size=5)
    content = Tensor(rng.standard_normal((1, 3, n, 16)))
    positional = Tensor(rng.standard_normal((1, 3, n, 16)))
    return block, content, positional


@pytest.mark.parametrize("enhanced", [True, False])
def test_efsa_shape_and_instance_equivariance(enhanced):
    block, c, p = _fsa(enhanced)
    out = block(c, p).data
    assert out.shape == c.shape
    perm = np.array([2, 0, 1])
    permuted = block(Tensor(c.data[:, perm]), Tensor(p.data[:, perm])).data
    np.testing.assert_allclose(permuted, out[:, perm], atol=1e-10)


def test_circular_branch_rotation_equivariance():
    block, c, p = _fsa()
    block.eval()
    q = c + p
    base = block.local_branch(q).data
    rolled = block.local_branch(Tensor(np.roll(q.data, 3, axis=2))).data
    np.testing.assert_allclose(rolled, np.roll(base, 3, axis=2), atol=1e-12)


def test_circular_kernel_larger_than_points_errors():
    block, c, p = _fsa(n=4)
    with pytest.raises(ConfigError):
        block(c, p)
    with pytest.raises(ConfigError):
        ModelConfig(n_points=4, efsa_neighborhood=6)


# -- deformable attention ---------------------------------------------------

def _deform(rng):
    attn = DeformableAttention(8, 2, 4, rng)
    query = Tensor(rng.standard_normal((1, 5, 8)))
    value = Tensor(rng.standard_normal((1, 16, 8)))
    refs = Tensor(rng.uniform(0.15, 0.85, (1, 5, 2)))
    return attn, query, value, refs


def test_deformable_collapsed_sampling_is_projected_feature():
    rng = np.random.default_rng(0)
    attn, query, value, refs = _deform(rng)
    attn.sampling_offsets.bias.data[:] = 0.0
    out = attn(query, refs, value, (4, 4)).data
    projected = attn.value_proj(value).reshape(1, 4, 4, 8)
    at_ref = ops.bilinear_sample(projected, refs)
    np.testing.assert_allclose(out, attn.output_proj(at_ref).data, atol=1e-12)


def test_deformable_weights_sum_to_one():
    rng = np.random.default_rng(1)
    attn, query, _, _ = _deform(rng)
    attn.attention_weights.weight.data = rng.standard_normal(attn.attention_weights.weight.shape)
    _, weights = attn.sampling(query)
    np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0, atol=1e-12)


def test_deformable_gradcheck_wrt_reference_points():
    rng = np.random.default_rng(2)
    attn, query, value, refs = _deform(rng)
    attn.sampling_offsets.bias.data += rng.uniform(-0.3, 0.3, attn.sampling_offsets.bias.shape)
    err = check_function(lambda r: attn(query, r, value, (4, 4)), [refs], rng=rng)
    assert err < 1e-4


# -- full detector ----------------------------------------------------------

@pytest.mark.parametrize("mode", ["explicit_point", "box_baseline"])
def test_decoder_output_contract(mode):
    cfg = ModelConfig(**{**SMALL.to_dict(), "query_mode": mode})
    model = Detector(cfg)
    images = np.random.default_rng(0).uniform(0, 1, (2, 32, 32))
    with no_grad():
        out = model(images)
    assert len(out.layers) == cfg.n_decoder_layers
    for layer in out.layers:
        assert layer.logits.shape == (2, cfg.n_queries)
        assert layer.points.shape == (2, cfg.n_queries, cfg.n_points, 2)
    assert out.proposals.boxes.shape == (2, cfg.n_queries, 4)
    assert np.all((out.proposals.boxes >= 0) & (out.proposals.boxes <= 1))
    refs = [layer.reference for layer in out.layers]
    if mode == "box_baseline":
        # no refinement between layers: every layer starts from the proposal centre
        assert all(np.array_equal(r, refs[0]) for r in refs)
    else:
        np.testing.assert_array_equal(refs[1], out.layers[0].points.data)


def test_forward_deterministic_and_batch_order_free():
    images = np.random.default_rng(1).uniform(0, 1, (3, 32, 32))
    a, b = Detector(SMALL).eval(), Detector(SMALL).eval()
    with no_grad():
        out_a = a(images)
        out_b = b(images)
        rev = a(images[::-1].copy())
    np.testing.assert_array_equal(out_a.final.points.data, out_b.final.points.data)
    np.testing.assert_allclose(rev.final.points.data[::-1], out_a.final.points.data, atol=1e-12)
    np.testing.assert_allclose(rev.final.logits.data[::-1], out_a.final.logits.data, atol=1e-12)


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    model = Detector(SMALL)
    for _, p in model.named_parameters():
        p.data = p.data + np.random.default_rng(0).normal(0, 1e-3, p.shape)
    save_checkpoint(tmp_path / "m.ckpt", model, {"note": 1})
    loaded, extra = load_checkpoint(tmp_path / "m.ckpt")
    assert extra == {"note": 1} and loaded.cfg == model.cfg
    for (na, pa), (nb, pb) in zip(model.named_parameters(), loaded.named_parameters()):
        assert na == nb and pa.data.tobytes() == pb.data.tobytes()
    payload = (tmp_path / "m.ckpt").read_bytes()
    state, cfg, _ = decode_checkpoint(payload)
    assert encode_checkpoint(state, cfg, {"note": 1}) == payload
    with pytest.raises(CheckpointError):
        decode_checkpoint(b"garbage" + payload)


def test_tiny_config_matches_frozen_setting():
    assert (TINY_MODEL.n_queries, TINY_MODEL.n_points, TINY_MODEL.d_model, TINY_MODEL.feature_size) == (2, 4, 16, 4)


@pytest.mark.parametrize("seed", [0, 5])
def test_full_model_gradcheck(seed):
    assert model_gradcheck(seed) < 1e-3
