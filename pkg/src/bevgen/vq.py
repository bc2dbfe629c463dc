"""First-stage vector-quantized autoencoders for images and BEV grids.

Two flavors share one implementation: the image model trains with an L1
reconstruction loss on RGB in [0, 1]; the BEV model mixes binary
cross-entropy on the layout's binary channels with L2 on its continuous
channels. Quantization picks the Euclidean-nearest codebook row (lowest
index on ties) and passes gradients straight through to the encoder.
"""

from __future__ import annotations

import math

import numpy as np

from . import numcore as nc
from .numcore import Tensor


class DivergenceError(RuntimeError):
    """Training produced a non-finite or runaway loss."""

    def __init__(self, step, value):
        super().__init__(f"training diverged at step {step}: loss {value}")
        self.step = step
        self.value = value


class Codebook:
    """Ordered code vectors with cumulative usage counters.

    ``usage`` counts assignments per code across quantize calls;
    ``idle_steps`` counts consecutive training steps without any
    assignment and drives dead-code reseeding.
    """

    def __init__(self, size, dim, rng):
        if size < 2:
            raise ValueError(f"codebook needs at least 2 codes, got {size}")
        self.vectors = Tensor(rng.normal(0.0, 0.5, (size, dim)),
                              requires_grad=True)
        self.usage = np.zeros(size, dtype=np.int64)
        self.idle_steps = np.zeros(size, dtype=np.int64)

    @property
    def size(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]

    def note_step(self, tokens):
        """Update idle counters after a training step's assignments."""
        used = np.zeros(self.size, dtype=bool)
        used[np.unique(tokens)] = True
        self.idle_steps[used] = 0
        self.idle_steps[~used] += 1

    def reseed_dead(self, features, rng, idle_limit=200):
        """Re-seed codes idle for ``idle_limit`` steps from batch features.

        ``features`` is any (..., dim) array of encoder outputs; each dead
        code is replaced by one feature vector drawn at random. Returns
        the number of reseeded codes.
        """
        dead = np.flatnonzero(self.idle_steps >= idle_limit)
        if dead.size == 0:
            return 0
        pool = np.asarray(features, dtype=np.float64).reshape(-1, self.dim)
        picks = rng.integers(0, pool.shape[0], size=dead.size)
        self.vectors.data[dead] = pool[picks]
        self.idle_steps[dead] = 0
        return int(dead.size)


def quantize(codebook, features):
    """Nearest-code assignment with straight-through gradients.

    ``features`` is a Tensor of shape (..., dim). Returns (tokens,
    quantized): tokens is an integer array of the leading shape, and
    quantized carries the selected code values while routing gradients
    straight through to ``features``.
    """
    if features.shape[-1] != codebook.dim:
        raise nc.ShapeError(
            f"quantize: feature dim {features.shape[-1]} vs codebook dim "
            f"{codebook.dim}")
    lead = features.shape[:-1]
    flat = features.data.reshape(-1, codebook.dim)
    codes = codebook.vectors.data
    tokens = np.empty(flat.shape[0], dtype=np.int64)
    # chunked exact squared distances; argmin takes the lowest index on ties
    chunk = 4096
    for lo in range(0, flat.shape[0], chunk):
        part = flat[lo:lo + chunk]
        d2 = ((part[:, None, :] - codes[None, :, :]) ** 2).sum(axis=-1)
        tokens[lo:lo + chunk] = np.argmin(d2, axis=1)
    tokens = tokens.reshape(lead)
    np.add.at(codebook.usage, tokens.reshape(-1), 1)
    selected = codes[tokens]
    quantized = nc.add(features, Tensor.const(selected - features.data))
    return tokens, quantized


class Conv:
    """One (possibly transposed) convolution layer with fan-in init."""

    def __init__(self, cin, cout, k, stride, pad, rng, transpose=False):
        fan_in = cin * k * k
        bound = 1.0 / math.sqrt(fan_in)
        shape = (cin, cout, k, k) if transpose else (cout, cin, k, k)
        self.w = Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)
        self.b = Tensor(rng.uniform(-bound, bound, (cout,)), requires_grad=True)
        self.stride = stride
        self.pad = pad
        self.transpose = transpose

    def __call__(self, x):
        if self.transpose:
            return nc.conv_transpose2d(x, self.w, self.b, self.stride, self.pad)
        return nc.conv2d(x, self.w, self.b, self.stride, self.pad)


class VqAutoencoder:
    """Strided conv encoder + codebook + transposed-conv decoder.

    ``stages`` halvings take (H, W) to (H/2^stages, W/2^stages); a 1x1
    projection maps into the code dimension and back out. ``kind`` selects
    the reconstruction loss: "image" for L1 on all channels, "bev" for
    BCE-on-logits binary channels plus L2 continuous channels, routed by
    ``channel_tags``.
    """

    def __init__(self, in_channels, stages, base_channels, code_dim,
                 codebook_size, kind, rng, channel_tags=None):
        if kind not in ("image", "bev"):
            raise ValueError(f"unknown autoencoder kind {kind!r}")
        if kind == "bev":
            if channel_tags is None or len(channel_tags) != in_channels:
                raise ValueError("bev autoencoder needs one tag per channel")
        self.kind = kind
        self.in_channels = in_channels
        self.stages = stages
        self.channel_tags = list(channel_tags) if channel_tags else None
        self.codebook = Codebook(codebook_size, code_dim, rng)

        widths = [in_channels] + [base_channels * min(2 ** s, 2)
                                  for s in range(stages)]
        self.enc = []
        for s in range(stages):
            self.enc.append(Conv(widths[s], widths[s + 1], 4, 2, 1, rng))
        self.enc_proj = Conv(widths[-1], code_dim, 1, 1, 0, rng)
        self.dec_proj = Conv(code_dim, widths[-1], 1, 1, 0, rng)
        self.dec = []
        for s in reversed(range(stages)):
            self.dec.append(Conv(widths[s + 1], widths[s], 4, 2, 1, rng,
                                 transpose=True))

    def encode(self, x):
        """(B, C, H, W) -> features (B, h, w, code_dim)."""
        h = x
        for layer in self.enc:
            h = nc.gelu(layer(h))
        h = self.enc_proj(h)                    # (B, n, h, w)
        return nc.transpose(h, (0, 2, 3, 1))

    def decode(self, zq):
        """(B, h, w, code_dim) -> (B, C, H, W) raw decoder output."""
        h = nc.transpose(zq, (0, 3, 1, 2))
        h = nc.gelu(self.dec_proj(h))
        for idx, layer in enumerate(self.dec):
            h = layer(h)
            if idx != len(self.dec) - 1:
                h = nc.gelu(h)
        return h

    def reconstruction_loss(self, output, target):
        """Loss per the model's schema; target is a plain array."""
        target = np.asarray(target, dtype=np.float64)
        if self.kind == "image":
            return nc.abs_(nc.add(output, nc.mul(Tensor.const(target), -1.0))).mean()
        terms = []
        for ch, tag in enumerate(self.channel_tags):
            out_ch = output[:, ch]
            if tag == "binary":
                terms.append(nc.bce_with_logits(out_ch, target[:, ch]))
            else:
                diff = nc.add(out_ch, Tensor.const(-target[:, ch]))
                terms.append(nc.mul(diff, diff).mean())
        total = terms[0]
        for t in terms[1:]:
            total = nc.add(total, t)
        return total

    def output_to_data(self, output):
        """Map raw decoder output to data space (plain array).

        Images come back clipped to [0, 1]; BEV binary channels become
        sigmoid probabilities, continuous channels pass through.
        """
        arr = output.data if isinstance(output, Tensor) else np.asarray(output)
        if self.kind == "image":
            return np.clip(arr, 0.0, 1.0)
        out = arr.copy()
        for ch, tag in enumerate(self.channel_tags):
            if tag == "binary":
                out[:, ch] = 1.0 / (1.0 + np.exp(-np.clip(arr[:, ch], -60, 60)))
        return out

    def parameters(self):
        params = {}
        for i, layer in enumerate(self.enc):
            params[f"enc{i}.w"] = layer.w
            params[f"enc{i}.b"] = layer.b
        params["enc_proj.w"] = self.enc_proj.w
        params["enc_proj.b"] = self.enc_proj.b
        params["dec_proj.w"] = self.dec_proj.w
        params["dec_proj.b"] = self.dec_proj.b
        for i, layer in enumerate(self.dec):
            params[f"dec{i}.w"] = layer.w
            params[f"dec{i}.b"] = layer.b
        params["codebook.vectors"] = self.codebook.vectors
        return params

    def load_parameters(self, blocks):
        for name, tensor in self.parameters().items():
            if name not in blocks:
                raise KeyError(f"checkpoint is missing block {name!r}")
            if blocks[name].shape != tensor.shape:
                raise ValueError(
                    f"block {name!r}: shape {blocks[name].shape} vs "
                    f"expected {tensor.shape}")
            tensor.data[...] = blocks[name]


def vq_losses(model, batch):
    """Forward pass returning (total, recon, codebook, commit) tensors."""
    x = batch if isinstance(batch, Tensor) else Tensor.const(batch)
    feats = model.encode(x)
    tokens, zq = quantize(model.codebook, feats)
    # gradient path to the codebook goes through a fresh lookup
    e = nc.embedding_lookup(model.codebook.vectors, tokens)
    feats_const = Tensor.const(feats.data)
    cb_diff = nc.add(e, nc.mul(feats_const, -1.0))
    codebook_term = nc.mul(cb_diff, cb_diff).mean()
    cm_diff = nc.add(feats, Tensor.const(-e.data))
    commit_term = nc.mul(cm_diff, cm_diff).mean()
    recon = model.decode(zq)
    recon_term = model.reconstruction_loss(recon, x.data)
    total = nc.add(nc.add(recon_term, codebook_term),
                   nc.mul(commit_term, 0.25))
    return total, recon_term, codebook_term, commit_term, tokens, feats


def vq_train_step(model, batch, opt, step=0, rng=None, reseed_after=200,
                  divergence_limit=1e6):
    """One optimization step; returns the scalar loss.

    Raises DivergenceError when the loss goes non-finite or exceeds
    ``divergence_limit``. With ``rng`` given, codes idle for
    ``reseed_after`` steps are re-seeded from the current batch's
    encoder features.
    """
    total, *_rest, tokens, feats = vq_losses(model, batch)
    value = total.item()
    if not np.isfinite(value) or value > divergence_limit:
        raise DivergenceError(step, value)
    opt.zero_grad()
    total.backward()
    opt.step()
    model.codebook.note_step(tokens)
    if rng is not None:
        model.codebook.reseed_dead(feats.data, rng, idle_limit=reseed_after)
    return value


def encode_tokens(model, x):
    """(B, C, H, W) array -> (B, h, w) integer token grids."""
    with nc.no_grad():
        feats = model.encode(Tensor.const(np.asarray(x, dtype=np.float64)))
        tokens, _ = quantize(model.codebook, feats)
    return tokens


def decode_tokens(model, tokens):
    """(B, h, w) token grids -> (B, C, H, W) data-space reconstruction."""
    tokens = np.asarray(tokens)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= model.codebook.size):
        raise IndexError(
            f"token outside codebook of {model.codebook.size} codes")
    with nc.no_grad():
        zq = nc.embedding_lookup(model.codebook.vectors, tokens)
        out = model.decode(zq)
    return model.output_to_data(out)
