"""Autoregressive transformer prior over BEV-conditioned view sequences.

The model consumes the combined token sequence (BEV codes first, then
camera codes in center-out emission order) and predicts the next camera
code at every position from the last BEV token onward. BEV tokens are
conditioning context only — they are never predicted, so the output head
covers just the image codebook.

Blocks are pre-norm: attention and MLP residuals each read a layernormed
copy of the stream. Attention logits carry the shared geometric bias
(direction cosines plus learnable offsets) on image-query rows.
"""

from __future__ import annotations

import numpy as np

from . import numcore as nc
from .attention import BiasedAttentionLayer, BiasOffsets, build_bias, \
    full_causal_mask
from .numcore import AdamW, Tensor, clip_grad_norm
from .sequence import EmbeddingTables, embed_sequence
from .vq import DivergenceError


class _Block:
    """Pre-norm transformer block: attention + 4x MLP, residual both."""

    def __init__(self, width, heads, rng):
        self.ln1_g = Tensor(np.ones(width), requires_grad=True)
        self.ln1_b = Tensor(np.zeros(width), requires_grad=True)
        self.attn = BiasedAttentionLayer(width, heads, rng)
        self.ln2_g = Tensor(np.ones(width), requires_grad=True)
        self.ln2_b = Tensor(np.zeros(width), requires_grad=True)
        hidden = 4 * width
        self.w1 = Tensor(rng.normal(0.0, 0.02, (width, hidden)),
                         requires_grad=True)
        self.b1 = Tensor(np.zeros(hidden), requires_grad=True)
        self.w2 = Tensor(rng.normal(0.0, 0.02, (hidden, width)),
                         requires_grad=True)
        self.b2 = Tensor(np.zeros(width), requires_grad=True)

    def parameters(self, prefix):
        out = {f"{prefix}ln1.g": self.ln1_g, f"{prefix}ln1.b": self.ln1_b,
               f"{prefix}ln2.g": self.ln2_g, f"{prefix}ln2.b": self.ln2_b,
               f"{prefix}mlp.w1": self.w1, f"{prefix}mlp.b1": self.b1,
               f"{prefix}mlp.w2": self.w2, f"{prefix}mlp.b2": self.b2}
        out.update(self.attn.parameters(prefix=f"{prefix}attn."))
        return out

    def __call__(self, x, bias, mask, drop):
        a = self.attn(nc.layernorm(x, self.ln1_g, self.ln1_b),
                      bias=bias, mask=mask)
        x = nc.add(x, drop(a))
        h = nc.layernorm(x, self.ln2_g, self.ln2_b)
        h = nc.gelu(nc.add(nc.matmul(h, self.w1), self.b1))
        h = nc.add(nc.matmul(h, self.w2), self.b2)
        return nc.add(x, drop(h))


class PriorModel:
    """GPT-style decoder for camera tokens given a BEV prefix.

    ``vocab_img`` and ``vocab_bev`` are the two codebook sizes; the
    embedding table covers their disjoint union (camera codes first).
    ``theta_mode`` picks the learnable bias offsets ("factored", "full",
    or None for cosine-only); ``direction_bias`` off removes the
    attention bias entirely and ``spatial_embed`` off drops direction
    and coordinate embeddings (the two ablation switches). ``mask`` is a
    boolean (S, S) attention mask, full causal by default; a sparse mask
    from the attention module plugs in unchanged.

    The output head starts at zero, so an untrained model assigns the
    uniform distribution to every prediction: initial loss == ln(vocab).
    """

    def __init__(self, layout, dirs, vocab_img, vocab_bev, rng, *,
                 n_emb=64, n_head=4, n_layer=2, dropout=0.0,
                 theta_mode="factored", direction_bias=True,
                 spatial_embed=True, normalize_directions=False, mask=None):
        if vocab_img < 2 or vocab_bev < 1:
            raise ValueError(
                f"vocabulary sizes ({vocab_img}, {vocab_bev}) too small")
        if not 0.0 <= dropout < 1.0:
            raise ValueError(f"dropout {dropout} outside [0, 1)")
        self.layout = layout
        self.dirs = dirs
        self.vocab_img = vocab_img
        self.vocab_bev = vocab_bev
        self.n_emb = n_emb
        self.dropout = dropout
        self._drop_rng = None
        self.direction_bias = direction_bias
        self.spatial_embed = spatial_embed
        self.tables = EmbeddingTables(vocab_img + vocab_bev, n_emb, layout,
                                      rng,
                                      normalize_directions=normalize_directions)
        self.blocks = [_Block(n_emb, n_head, rng) for _ in range(n_layer)]
        self.final_g = Tensor(np.ones(n_emb), requires_grad=True)
        self.final_b = Tensor(np.zeros(n_emb), requires_grad=True)
        self.head_w = Tensor(np.zeros((n_emb, vocab_img)), requires_grad=True)
        self.head_b = Tensor(np.zeros(vocab_img), requires_grad=True)
        self.offsets = (BiasOffsets(layout, rng, mode=theta_mode)
                        if direction_bias and theta_mode else None)
        self.mask = (full_causal_mask(layout.total) if mask is None
                     else np.asarray(mask, dtype=bool))
        if self.mask.shape != (layout.total, layout.total):
            raise ValueError(
                f"mask shape {self.mask.shape} does not cover the "
                f"{layout.total}-token sequence")

    def parameters(self):
        params = dict(self.tables.parameters())
        if self.offsets is not None:
            params.update(self.offsets.parameters())
        for i, block in enumerate(self.blocks):
            params.update(block.parameters(f"block{i}."))
        params.update({"final.g": self.final_g, "final.b": self.final_b,
                       "head.w": self.head_w, "head.b": self.head_b})
        return params

    def decay_parameters(self):
        """The weight-decayed subset: projection and MLP matrices."""
        decayed = {"wq", "wk", "wv", "wo", "w1", "w2", "w", "dir_w", "coord_w"}
        return [t for name, t in self.parameters().items()
                if name.rsplit(".", 1)[-1] in decayed]

    def bias_tensor(self):
        if not self.direction_bias:
            return None
        return build_bias(self.dirs, self.layout, self.offsets)

    def train_mode(self, rng):
        """Enable dropout, drawing masks from ``rng``."""
        self._drop_rng = rng

    def eval_mode(self):
        self._drop_rng = None

    def _drop(self, x):
        if self._drop_rng is None or self.dropout == 0.0:
            return x
        return nc.dropout(x, self.dropout, self._drop_rng)

    def hidden(self, tokens):
        """Token prefix (..., P) -> normalized hidden states (..., P, E)."""
        p = np.asarray(tokens).shape[-1]
        x = embed_sequence(tokens, self.layout, self.tables, self.dirs,
                           spatial_embed=self.spatial_embed)
        x = self._drop(x)
        bias = self.bias_tensor()
        if bias is not None and p < self.layout.total:
            bias = nc.getitem(bias, (slice(0, p), slice(0, p)))
        mask = self.mask[:p, :p]
        for block in self.blocks:
            x = block(x, bias, mask, self._drop)
        return nc.layernorm(x, self.final_g, self.final_b)

    def forward(self, tokens):
        """Logits (..., P_pred, vocab_img) at camera-predicting positions.

        Position p predicts the token at p + 1, so rows run from the last
        BEV position through the second-to-last position of the prefix.
        """
        p = np.asarray(tokens).shape[-1]
        n_bev = self.layout.n_bev
        h = self.hidden(tokens)
        stop = min(p, self.layout.total - 1)
        h = nc.getitem(h, (Ellipsis, slice(n_bev - 1, stop), slice(None)))
        return nc.add(nc.matmul(h, self.head_w), self.head_b)

    def next_token_logits(self, tokens):
        """Logits (..., vocab_img) for the token following the prefix."""
        h = self.hidden(tokens)
        h = nc.getitem(h, (Ellipsis, slice(-1, None), slice(None)))
        out = nc.add(nc.matmul(h, self.head_w), self.head_b)
        return nc.getitem(out, (Ellipsis, 0, slice(None)))

    def load_parameters(self, blocks):
        params = self.parameters()
        for name, tensor in params.items():
            if name not in blocks:
                raise KeyError(f"checkpoint is missing parameter {name!r}")
            arr = np.asarray(blocks[name], dtype=np.float64)
            if arr.shape != tensor.shape:
                raise ValueError(
                    f"parameter {name!r}: checkpoint shape {arr.shape} "
                    f"!= model shape {tensor.shape}")
            tensor.data = arr.copy()


# -- sequence assembly -------------------------------------------------------------


def sequence_tokens(layout, vocab_img, bev_tokens, cam_tokens):
    """Combine BEV (..., h_b, w_b) and camera (..., n, h_c, w_c) code grids.

    Returns (..., total) combined-vocabulary sequences: BEV codes offset
    past the image codebook, camera codes laid out in emission order.
    """
    bev = np.asarray(bev_tokens)
    cam = np.asarray(cam_tokens)
    lead = bev.shape[:-2]
    if bev.shape[-2:] != (layout.h_b, layout.w_b):
        raise ValueError(f"BEV grid {bev.shape[-2:]} does not match layout "
                         f"({layout.h_b}, {layout.w_b})")
    if cam.shape[-3:] != (layout.n, layout.h_c, layout.w_c):
        raise ValueError(f"camera grids {cam.shape[-3:]} do not match layout "
                         f"({layout.n}, {layout.h_c}, {layout.w_c})")
    seq = np.empty(lead + (layout.total,), dtype=np.int64)
    seq[..., :layout.n_bev] = bev.reshape(lead + (layout.n_bev,)) + vocab_img
    ks, is_, js = (np.array(ix) for ix in zip(*layout.order))
    seq[..., layout.n_bev:] = cam[..., ks, is_, js]
    return seq


def camera_grids(layout, seq):
    """Invert sequence_tokens for the camera block: (..., n, h_c, w_c)."""
    seq = np.asarray(seq)
    if seq.shape[-1] == layout.total:
        seq = seq[..., layout.n_bev:]
    elif seq.shape[-1] != layout.n_cam:
        raise ValueError(
            f"sequence length {seq.shape[-1]} is neither the full "
            f"{layout.total} nor the camera block {layout.n_cam}")
    grids = np.empty(seq.shape[:-1] + (layout.n, layout.h_c, layout.w_c),
                     dtype=np.int64)
    ks, is_, js = (np.array(ix) for ix in zip(*layout.order))
    grids[..., ks, is_, js] = seq
    return grids


def foreground_weights(layout, masks, boost=5.0):
    """Per-token loss weights favoring vehicle pixels.

    ``masks`` is the (n, H, W) uint8 render mask stack; a camera token
    whose image patch contains any vehicle pixel (bit 0) weighs ``boost``,
    all others weigh 1. Returns weights in emission order (n_cam,).
    """
    masks = np.asarray(masks)
    n, h, w = masks.shape
    if n != layout.n or h % layout.h_c or w % layout.w_c:
        raise ValueError(
            f"mask stack {masks.shape} does not tile the "
            f"({layout.n}, {layout.h_c}, {layout.w_c}) latent grid")
    ph, pw = h // layout.h_c, w // layout.w_c
    veh = (masks & 1).astype(bool)
    patch_any = veh.reshape(n, layout.h_c, ph, layout.w_c, pw).any(axis=(2, 4))
    weights = np.ones(layout.n_cam)
    for step, (k, i, j) in enumerate(layout.order):
        if patch_any[k, i, j]:
            weights[step] = boost
    return weights


# -- training ----------------------------------------------------------------------


def prior_loss(model, tokens, weights=None):
    """Mean (optionally weighted) cross-entropy over camera predictions.

    ``tokens`` is (..., total) full sequences; ``weights`` per-target
    weights shaped (..., n_cam) or (n_cam,).
    """
    tokens = np.asarray(tokens)
    layout = model.layout
    if tokens.shape[-1] != layout.total:
        raise ValueError(f"training sequences must be complete "
                         f"({layout.total} tokens), got {tokens.shape[-1]}")
    logits = model.forward(tokens)
    flat = nc.reshape(logits, (-1, model.vocab_img))
    targets = tokens[..., layout.n_bev:].reshape(-1)
    if targets.min() < 0 or targets.max() >= model.vocab_img:
        raise IndexError("camera target outside the image codebook")
    if weights is not None:
        weights = np.broadcast_to(np.asarray(weights, dtype=np.float64),
                                  tokens.shape[:-1] + (layout.n_cam,))
        weights = Tensor.const(weights.reshape(-1))
    return nc.cross_entropy(flat, targets, weights)


def train_prior(model, sequences, steps, rng, *, weights=None, lr=3e-4,
                betas=(0.9, 0.95), weight_decay=0.01, batch_size=8,
                clip=50.0, divergence_limit=1e3, on_step=None):
    """AdamW training over complete token sequences.

    ``sequences`` is (N, total); ``weights`` an optional (N, n_cam) array
    of per-target loss weights. Each step draws a batch with replacement
    from ``rng``, backpropagates, clips the global grad norm, and steps.
    Raises DivergenceError on a non-finite or runaway loss. ``on_step``
    receives (step, record) after each update; the records are returned.
    """
    sequences = np.asarray(sequences)
    if sequences.ndim != 2:
        raise ValueError(f"sequences must be (N, total), got {sequences.shape}")
    n = sequences.shape[0]
    params = model.parameters()
    decay_ids = {id(t) for t in model.decay_parameters()}
    opt = AdamW(params.values(), lr=lr, betas=betas,
                weight_decay=weight_decay,
                no_decay=[t for t in params.values()
                          if id(t) not in decay_ids])
    history = []
    model.train_mode(np.random.default_rng(rng.integers(2 ** 63)))
    try:
        for step in range(steps):
            idx = rng.integers(0, n, size=min(batch_size, n))
            batch_w = None if weights is None else weights[idx]
            loss = prior_loss(model, sequences[idx], batch_w)
            value = loss.item()
            if not np.isfinite(value) or value > divergence_limit:
                raise DivergenceError(step, value)
            opt.zero_grad()
            loss.backward()
            grad_norm = clip_grad_norm(params.values(), clip)
            opt.step()
            record = {"step": step, "loss": value,
                      "grad_norm": float(grad_norm)}
            history.append(record)
            if on_step is not None:
                on_step(step, record)
    finally:
        model.eval_mode()
    return history


def sequence_nll(model, sequences, weights=None, batch_size=16):
    """Mean per-token NLL (nats) of complete sequences under the model."""
    sequences = np.asarray(sequences)
    if sequences.ndim == 1:
        sequences = sequences[None]
    totals, count = 0.0, 0
    with nc.no_grad():
        for lo in range(0, sequences.shape[0], batch_size):
            chunk = sequences[lo:lo + batch_size]
            w = None if weights is None else weights[lo:lo + batch_size]
            loss = prior_loss(model, chunk, w)
            rows = chunk.shape[0] * model.layout.n_cam
            totals += loss.item() * rows
            count += rows
    return totals / count


# -- sampling ----------------------------------------------------------------------


def _sample_rows(logits, rng, top_k, temperature):
    """Per-row categorical sampling with top-k and temperature."""
    if top_k is not None:
        if top_k < 1:
            raise ValueError(f"top_k must be positive, got {top_k}")
        top_k = min(top_k, logits.shape[-1])
    if temperature < 0:
        raise ValueError(f"temperature must be nonnegative, got {temperature}")
    if temperature == 0.0:
        return np.argmax(logits, axis=-1)
    scaled = logits / temperature
    if top_k is not None and top_k < logits.shape[-1]:
        kth = np.partition(scaled, -top_k, axis=-1)[:, -top_k][:, None]
        scaled = np.where(scaled >= kth, scaled, -np.inf)
    scaled = scaled - scaled.max(axis=-1, keepdims=True)
    probs = np.exp(scaled)
    probs /= probs.sum(axis=-1, keepdims=True)
    u = rng.random(probs.shape[0])
    cdf = np.cumsum(probs, axis=-1)
    return np.minimum((cdf < u[:, None]).sum(axis=-1), probs.shape[-1] - 1)


def generate(model, bev_tokens, rng, *, top_k=None, temperature=1.0,
             provided_views=None):
    """Sample camera token grids conditioned on BEV codes.

    ``bev_tokens`` is an (h_b, w_b) or (B, h_b, w_b) grid of raw BEV
    codes. ``provided_views`` maps camera index -> (h_c, w_c) or
    (B, h_c, w_c) grids whose tokens are copied instead of sampled
    (view-conditioned generation). Temperature 0 takes the argmax.
    Returns (B, n, h_c, w_c) grids, squeezed to (n, h_c, w_c) for an
    unbatched input.
    """
    layout = model.layout
    bev = np.asarray(bev_tokens)
    unbatched = bev.ndim == 2
    if unbatched:
        bev = bev[None]
    if bev.shape[1:] != (layout.h_b, layout.w_b):
        raise ValueError(f"BEV grid {bev.shape[1:]} does not match layout "
                         f"({layout.h_b}, {layout.w_b})")
    if bev.min() < 0 or bev.max() >= model.vocab_bev:
        raise IndexError("BEV token outside the BEV codebook")
    b = bev.shape[0]
    provided = {}
    for k, grid in (provided_views or {}).items():
        grid = np.asarray(grid)
        if grid.ndim == 2:
            grid = np.broadcast_to(grid, (b,) + grid.shape)
        if grid.shape != (b, layout.h_c, layout.w_c):
            raise ValueError(f"provided view {k}: grid shape {grid.shape}")
        if grid.min() < 0 or grid.max() >= model.vocab_img:
            raise IndexError(f"provided view {k}: token outside codebook")
        provided[int(k)] = grid

    seq = np.empty((b, layout.total), dtype=np.int64)
    seq[:, :layout.n_bev] = bev.reshape(b, layout.n_bev) + model.vocab_img
    with nc.no_grad():
        for pos in range(layout.n_bev, layout.total):
            _, k, i, j = layout.token_at(pos)
            if k in provided:
                seq[:, pos] = provided[k][:, i, j]
                continue
            logits = model.next_token_logits(seq[:, :pos]).data
            seq[:, pos] = _sample_rows(logits, rng, top_k, temperature)
    grids = camera_grids(layout, seq)
    return grids[0] if unbatched else grids
