"""Quantization, autoencoder, and checkpoint container tests."""

import os

import numpy as np
import pytest

from bevgen import checkpoint as ckpt
from bevgen import numcore as nc
from bevgen import vq
from bevgen.numcore import Tensor


def make_codebook(vectors):
    cb = vq.Codebook(len(vectors), len(vectors[0]), np.random.default_rng(0))
    cb.vectors.data[:] = np.asarray(vectors, dtype=np.float64)
    return cb


def test_quantize_hand_distances():
    cb = make_codebook([(0, 0), (1, 1), (2, 2)])
    tokens, q = vq.quantize(cb, Tensor(np.array([[0.9, 1.2]])))
    assert tokens[0] == 1
    assert np.array_equal(q.data[0], [1.0, 1.0])


def test_quantize_exact_match_and_tie_break():
    cb = make_codebook([(0, 0), (1, 1)])
    tokens, _ = vq.quantize(cb, Tensor(np.array([[0.0, 0.0], [0.5, 0.5]])))
    assert tokens[0] == 0          # exact match
    assert tokens[1] == 0          # equidistant -> lowest index


def test_quantize_brute_force_oracle():
    rng = np.random.default_rng(42)
    cb = vq.Codebook(32, 8, rng)
    feats = rng.normal(0, 1, (500, 8))
    tokens, _ = vq.quantize(cb, Tensor(feats))
    for s in range(500):
        d2 = [float(((feats[s] - cb.vectors.data[m]) ** 2).sum())
              for m in range(32)]
        assert tokens[s] == int(np.argmin(d2))


def test_quantize_dim_mismatch():
    cb = make_codebook([(0, 0), (1, 1)])
    with pytest.raises(nc.ShapeError):
        vq.quantize(cb, Tensor(np.zeros((4, 3))))


def test_quantize_usage_counts():
    cb = make_codebook([(0, 0), (5, 5)])
    vq.quantize(cb, Tensor(np.zeros((3, 7, 2))))
    assert cb.usage.sum() == 21
    assert cb.usage[0] == 21 and cb.usage[1] == 0


def test_straight_through_gradient():
    rng = np.random.default_rng(9)
    cb = vq.Codebook(8, 4, rng)
    feats = Tensor(rng.normal(0, 1, (6, 4)), requires_grad=True)
    _, q = vq.quantize(cb, feats)
    w = rng.normal(0, 1, (6, 4))
    loss = nc.mul(q, Tensor.const(w)).sum()
    loss.backward()
    # gradient w.r.t. features must equal gradient w.r.t. quantized output
    assert np.array_equal(feats.grad, w)


def test_codebook_and_commit_terms_zero_on_exact_features():
    cb = make_codebook([(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)])
    feats = Tensor(np.array([[1.0, 1.0], [2.0, 2.0]]), requires_grad=True)
    tokens, q = vq.quantize(cb, feats)
    e = nc.embedding_lookup(cb.vectors, tokens)
    assert np.array_equal(q.data, feats.data)
    assert float(((e.data - feats.data) ** 2).sum()) == 0.0


def image_model(rng=None):
    rng = rng or np.random.default_rng(7)
    return vq.VqAutoencoder(in_channels=3, stages=3, base_channels=8,
                            code_dim=8, codebook_size=16, kind="image",
                            rng=rng)


def bev_model(rng=None):
    rng = rng or np.random.default_rng(8)
    return vq.VqAutoencoder(in_channels=3, stages=2, base_channels=8,
                            code_dim=8, codebook_size=16, kind="bev",
                            rng=rng,
                            channel_tags=["binary", "binary", "continuous"])


def test_roundtrip_shapes():
    model = image_model()
    x = np.zeros((2, 3, 32, 64))
    tokens = vq.encode_tokens(model, x)
    assert tokens.shape == (2, 4, 8)
    recon = vq.decode_tokens(model, tokens)
    assert recon.shape == (2, 3, 32, 64)


def test_decode_tokens_range_check():
    model = image_model()
    with pytest.raises(IndexError):
        vq.decode_tokens(model, np.full((1, 4, 8), 16))


def test_constant_token_grid_uniform_cells():
    model = bev_model()
    out = vq.decode_tokens(model, np.full((1, 4, 4), 3))
    # weight sharing: interior latent cells decode identically (cell = 4 px)
    a = out[0, :, 4:8, 4:8]
    b = out[0, :, 8:12, 8:12]
    assert np.allclose(a, b, atol=1e-12)


def test_image_recon_loss_zero_on_equal():
    model = image_model()
    target = np.random.default_rng(1).random((2, 3, 8, 8))
    loss = model.reconstruction_loss(Tensor(target.copy()), target)
    assert loss.item() == 0.0


def test_bev_loss_separates_channels():
    model = bev_model()
    rng = np.random.default_rng(3)
    out = Tensor(rng.normal(0, 1, (2, 3, 8, 8)))
    target = np.concatenate([
        (rng.random((2, 2, 8, 8)) < 0.5).astype(np.float64),
        rng.normal(0, 1, (2, 1, 8, 8))], axis=1)
    base = model.reconstruction_loss(out, target).item()
    # changing the continuous channel's target leaves binary terms alone
    target2 = target.copy()
    target2[:, 2] += 1.0
    shifted = model.reconstruction_loss(out, target2).item()
    assert shifted != base
    # changing only binary targets leaves the L2 part alone: check additivity
    per = []
    for ch, tag in enumerate(model.channel_tags):
        if tag == "binary":
            z = out.data[:, ch]
            y = target[:, ch]
            per.append(float((np.maximum(z, 0) - z * y
                              + np.log1p(np.exp(-np.abs(z)))).mean()))
        else:
            per.append(float(((out.data[:, ch] - target[:, ch]) ** 2).mean()))
    assert abs(base - sum(per)) < 1e-12


def test_vq_train_step_reduces_reconstruction():
    rng = np.random.default_rng(5)
    model = vq.VqAutoencoder(in_channels=1, stages=2, base_channels=6,
                             code_dim=6, codebook_size=8, kind="image",
                             rng=rng)
    batch = rng.random((2, 1, 8, 8))
    params = list(model.parameters().values())
    opt = nc.AdamW(params, lr=3e-3)
    first = vq.vq_losses(model, batch)[1].item()
    for step in range(80):
        vq.vq_train_step(model, batch, opt, step=step, rng=rng)
    last = vq.vq_losses(model, batch)[1].item()
    assert last < first


def test_vq_train_step_divergence_error():
    rng = np.random.default_rng(5)
    model = image_model(rng)
    model.enc[0].w.data[:] = np.nan
    opt = nc.AdamW(list(model.parameters().values()), lr=1e-3)
    with pytest.raises(vq.DivergenceError) as exc:
        vq.vq_train_step(model, np.zeros((1, 3, 32, 64)), opt, step=17)
    assert "17" in str(exc.value)


def test_dead_code_reseed():
    rng = np.random.default_rng(4)
    cb = vq.Codebook(4, 2, rng)
    cb.vectors.data[:] = [[0, 0], [1, 1], [50, 50], [60, 60]]
    feats = np.array([[0.1, 0.1], [0.9, 0.9]])
    for _ in range(200):
        tokens, _ = vq.quantize(cb, Tensor(feats))
        cb.note_step(tokens)
    n = cb.reseed_dead(feats, rng, idle_limit=200)
    assert n == 2
    for row in cb.vectors.data[2:]:
        assert any(np.array_equal(row, f) for f in feats)


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    blocks = {
        "layer.w": rng.normal(0, 1, (3, 4, 5)),
        "layer.b": rng.normal(0, 1, (4,)),
        "scalar": np.array(3.25),
    }
    path = tmp_path / "model.ckpt"
    ckpt.save_checkpoint(path, "lr = 0.001\nseed = 7\n", blocks)
    cfg, back = ckpt.load_checkpoint(path)
    assert cfg == "lr = 0.001\nseed = 7\n"
    assert set(back) == set(blocks)
    for name in blocks:
        assert np.array_equal(back[name], blocks[name])
    # atomic write leaves no temp droppings
    assert [p for p in os.listdir(tmp_path) if p.startswith(".ckpt-")] == []


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"not a checkpoint at all")
    with pytest.raises(ValueError):
        ckpt.load_checkpoint(p)


def test_model_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(11)
    model = image_model(rng)
    blocks = {k: v.data for k, v in model.parameters().items()}
    path = tmp_path / "vq.ckpt"
    ckpt.save_checkpoint(path, "", blocks)
    model2 = image_model(np.random.default_rng(99))
    _, loaded = ckpt.load_checkpoint(path)
    model2.load_parameters(loaded)
    x = rng.random((1, 3, 32, 64))
    assert np.array_equal(vq.encode_tokens(model, x),
                          vq.encode_tokens(model2, x))
    with pytest.raises(KeyError):
        model2.load_parameters({})
    loaded["enc0.w"] = np.zeros((1,))
    with pytest.raises(ValueError):
        model2.load_parameters(loaded)
