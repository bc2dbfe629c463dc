"""Biased causal self-attention and similarity-weighted sparse masks.

Attention logits are (q . k + beta) / sqrt(d): the additive bias rides
inside the scale. Masked entries are set to -inf before the softmax.

Sparse masks are materialized at block granularity. Every image query
block keeps all BEV blocks and a sliding window of its most recent
predecessor blocks; the remaining budget for a global density target is
sampled per query block without replacement, weighted by the average-
pooled cosine similarity (shifted to [0, 1]) of the direction vectors.
BEV query blocks attend causally among themselves (they are conditioning
context, but their hidden states still feed the image tokens).
"""

from __future__ import annotations

import math
import warnings

import numpy as np

from . import numcore as nc
from .numcore import Tensor


def _check_mask_rows(mask):
    dead = np.flatnonzero(~mask.any(axis=1))
    if dead.size:
        raise ValueError(
            f"mask has fully-masked query rows (first: {int(dead[0])}); "
            "softmax cannot normalize an empty row")


def additive_mask(mask):
    """Boolean (S, S) mask -> additive 0/-inf matrix."""
    return np.where(mask, 0.0, -np.inf)


def biased_attention(q, k, v, bias=None, mask=None):
    """softmax((q k^T + beta) / sqrt(d)) v over the trailing two dims.

    ``q``/``k``/``v`` are (..., S, d) tensors; ``bias`` is an (S, S)
    tensor or array added to the raw dot products; ``mask`` a boolean
    (S, S) array, true where attention is allowed. Raises on any query
    row with no allowed key.
    """
    s, d = q.shape[-2], q.shape[-1]
    scores = nc.matmul(q, nc.transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)))
    if bias is not None:
        bias = bias if isinstance(bias, Tensor) else Tensor.const(bias)
        if bias.shape != (s, s):
            raise nc.ShapeError(f"bias shape {bias.shape}, expected {(s, s)}")
        scores = nc.add(scores, bias)
    scores = nc.mul(scores, 1.0 / math.sqrt(d))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (s, s):
            raise nc.ShapeError(f"mask shape {mask.shape}, expected {(s, s)}")
        _check_mask_rows(mask)
        scores = nc.add(scores, Tensor.const(additive_mask(mask)))
    attn = nc.softmax(scores, axis=-1)
    return nc.matmul(attn, v)


class BiasedAttentionLayer:
    """Multi-head attention whose logits carry a shared additive bias.

    The bias matrix is passed per call (it is shared across layers and
    heads); with bias None and a full mask this reduces exactly to
    standard multi-head self-attention.
    """

    def __init__(self, width, heads, rng):
        if width % heads:
            raise ValueError(f"width {width} not divisible by {heads} heads")
        self.width = width
        self.heads = heads
        self.head_dim = width // heads
        def lin(shape):
            bound = 1.0 / math.sqrt(shape[0])
            return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)
        self.wq, self.wk, self.wv, self.wo = (lin((width, width)) for _ in range(4))
        self.bq = Tensor(np.zeros(width), requires_grad=True)
        self.bk = Tensor(np.zeros(width), requires_grad=True)
        self.bv = Tensor(np.zeros(width), requires_grad=True)
        self.bo = Tensor(np.zeros(width), requires_grad=True)

    def parameters(self, prefix=""):
        return {f"{prefix}wq": self.wq, f"{prefix}bq": self.bq,
                f"{prefix}wk": self.wk, f"{prefix}bk": self.bk,
                f"{prefix}wv": self.wv, f"{prefix}bv": self.bv,
                f"{prefix}wo": self.wo, f"{prefix}bo": self.bo}

    def _split(self, x, s):
        # (..., S, D) -> (..., H, S, dh)
        lead = x.shape[:-2]
        x = nc.reshape(x, lead + (s, self.heads, self.head_dim))
        perm = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
        return nc.transpose(x, perm)

    def __call__(self, x, bias=None, mask=None):
        s = x.shape[-2]
        q = self._split(nc.add(nc.matmul(x, self.wq), self.bq), s)
        k = self._split(nc.add(nc.matmul(x, self.wk), self.bk), s)
        v = self._split(nc.add(nc.matmul(x, self.wv), self.bv), s)
        out = biased_attention(q, k, v, bias=bias, mask=mask)
        lead = x.shape[:-2]
        perm = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
        out = nc.reshape(nc.transpose(out, perm), lead + (s, self.width))
        return nc.add(nc.matmul(out, self.wo), self.bo)


# -- learnable bias offsets ------------------------------------------------------


class BiasOffsets:
    """The learnable theta of the attention bias.

    Factored mode (default): theta_rc = dist[|r - c|] + pair[g_r, g_c],
    where g maps a position to its camera index (BEV positions share one
    extra group). Full mode stores the whole S x S matrix; only sensible
    for tiny sequences.
    """

    def __init__(self, layout, rng, mode="factored", init=0.0):
        self.mode = mode
        self.layout = layout
        s = layout.total
        groups = np.empty(s, dtype=np.int64)
        groups[:layout.n_bev] = layout.n
        for step, (k, _i, _j) in enumerate(layout.order):
            groups[layout.n_bev + step] = k
        self._groups = groups
        if mode == "factored":
            self.dist = Tensor(np.full((s, 1), init), requires_grad=True)
            self.pair = Tensor(np.full(((layout.n + 1) ** 2, 1), init),
                               requires_grad=True)
        elif mode == "full":
            self.full = Tensor(np.full((s, s), init), requires_grad=True)
        else:
            raise ValueError(f"unknown bias offset mode {mode!r}")

    def parameters(self, prefix="theta."):
        if self.mode == "factored":
            return {f"{prefix}dist": self.dist, f"{prefix}pair": self.pair}
        return {f"{prefix}full": self.full}

    def matrix(self):
        """Assemble theta as an (S, S) tensor (differentiable)."""
        if self.mode == "full":
            return self.full
        s = self.layout.total
        idx = np.abs(np.arange(s)[:, None] - np.arange(s)[None, :])
        d = nc.reshape(nc.embedding_lookup(self.dist, idx), (s, s))
        pidx = self._groups[:, None] * (self.layout.n + 1) + self._groups[None, :]
        p = nc.reshape(nc.embedding_lookup(self.pair, pidx), (s, s))
        return nc.add(d, p)


def build_bias(dirs, layout, offsets=None):
    """Full-sequence attention bias: reindexed cosine + learnable offsets.

    The geometry cosine matrix is in canonical token order; rows/columns
    are permuted into sequence order here. BEV query rows stay zero —
    generation never emits BEV tokens, so only image queries are biased.
    Returns a Tensor; gradients flow to ``offsets`` only (directions are
    fixed inputs).
    """
    from .geometry import pairwise_bias  # local import to avoid cycle at init

    perm = layout.canonical
    base = pairwise_bias(dirs)[np.ix_(perm, perm)]
    beta = Tensor.const(base)
    if offsets is not None:
        theta = offsets.matrix()
        img_rows = np.zeros((layout.total, layout.total))
        img_rows[layout.n_bev:, :] = 1.0
        beta = nc.add(beta, nc.mul(theta, Tensor.const(img_rows)))
    return beta


# -- sparse masks -----------------------------------------------------------------


class SparseMask:
    """Block-granular attention mask over one sequence shape.

    ``layout`` is the (n_blocks, n_blocks) boolean block matrix; the
    token-level mask is its expansion ANDed with the causal triangle.
    """

    def __init__(self, block_layout, block, s_total, n_bev, window, density,
                 target_density, forced_only):
        self.block_layout = block_layout
        self.block = block
        self.s_total = s_total
        self.n_bev = n_bev
        self.window = window
        self.density = density
        self.target_density = target_density
        self.forced_only = forced_only

    def token_mask(self):
        b = self.block
        expanded = np.repeat(np.repeat(self.block_layout, b, axis=0), b, axis=1)
        expanded = expanded[:self.s_total, :self.s_total]
        return expanded & np.tril(np.ones((self.s_total, self.s_total), dtype=bool))

    def allowed_token_pairs(self, region="all"):
        """Count token-level (query, key) pairs under the mask.

        region "all" counts everything; "image" restricts both query and
        key to image positions (the sparsified part of the computation).
        """
        m = self.token_mask()
        if region == "image":
            m = m[self.n_bev:, self.n_bev:]
        elif region != "all":
            raise ValueError(f"unknown region {region!r}")
        return int(m.sum())


def dense_causal_pairs(s_total, n_bev=0, region="all"):
    """Token pairs of a dense causal mask, optionally image-region only."""
    if region == "image":
        s = s_total - n_bev
        return s * (s + 1) // 2
    return s_total * (s_total + 1) // 2


def sparse_attention_flops(mask, head_dim=1, region="all"):
    """Multiply-accumulate count for masked score computation (q . k)."""
    return mask.allowed_token_pairs(region) * head_dim


def dense_attention_flops(s_total, head_dim=1, n_bev=0, region="all"):
    return dense_causal_pairs(s_total, n_bev, region) * head_dim


def pool_block_weights(beta_img, block):
    """Average-pool the image-image cosine matrix to block resolution,
    mapped to [0, 1] via (c + 1) / 2 so sampling weights stay nonnegative."""
    s = beta_img.shape[0]
    nb = s // block
    w = (np.asarray(beta_img, dtype=np.float64) + 1.0) / 2.0
    return w.reshape(nb, block, nb, block).mean(axis=(1, 3))


def build_sparse_mask(beta_img, n_bev, density, window, block, seed):
    """Sample a block-sparse mask for one sequence shape.

    ``beta_img`` is the (S_img, S_img) image-image cosine matrix in
    sequence order. Per image query block, the window of
    ceil(window/block) most recent predecessor blocks (diagonal included)
    and all BEV blocks are forced on; remaining causal image blocks are
    sampled without replacement, weighted by the pooled similarity, until
    the global density target over causal image-image block pairs is met.
    When the target sits below the forced-on set, the mask is exactly the
    forced-on set and a warning is emitted.
    """
    beta_img = np.asarray(beta_img, dtype=np.float64)
    s_img = beta_img.shape[0]
    if not 0.0 < density <= 1.0:
        raise ValueError(f"density must be in (0, 1], got {density}")
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if s_img % block or n_bev % block:
        raise ValueError(
            f"block size {block} must divide image length {s_img} and "
            f"BEV length {n_bev}")
    nb_bev = n_bev // block
    nb_img = s_img // block
    nb = nb_bev + nb_img
    win_blocks = math.ceil(window / block)
    rng = np.random.default_rng(seed)
    weights = pool_block_weights(beta_img, block)

    layout = np.zeros((nb, nb), dtype=bool)
    # BEV rows: causal among themselves
    for qb in range(nb_bev):
        layout[qb, :qb + 1] = True

    forced_sets = []
    candidate_sets = []
    for qi in range(nb_img):
        qb = nb_bev + qi
        layout[qb, :nb_bev] = True                 # all BEV blocks
        lo = max(0, qi - win_blocks + 1)
        layout[qb, nb_bev + lo:qb + 1] = True      # sliding window + diagonal
        forced_sets.append(qi - lo + 1)
        candidate_sets.append(np.arange(0, lo))    # image blocks before window

    causal_total = nb_img * (nb_img + 1) // 2
    forced_total = sum(forced_sets)
    target_total = int(round(density * causal_total))
    extra = target_total - forced_total
    forced_only = extra <= 0
    if forced_only:
        if extra < 0:
            warnings.warn(
                f"density target {density:.3f} is below the forced-on "
                f"density {forced_total / causal_total:.3f}; "
                "mask equals the forced-on set")
        extra = 0

    # distribute the extra budget over query blocks in proportion to the
    # number of available candidates (largest-remainder rounding)
    avail = np.array([len(c) for c in candidate_sets], dtype=np.int64)
    total_avail = int(avail.sum())
    extra = min(extra, total_avail)
    if extra > 0 and total_avail > 0:
        share = extra * avail / total_avail
        alloc = np.floor(share).astype(np.int64)
        rem = extra - int(alloc.sum())
        order = np.argsort(-(share - alloc), kind="stable")
        for qi in order:
            if rem == 0:
                break
            if alloc[qi] < avail[qi]:
                alloc[qi] += 1
                rem -= 1
        # any remainder left means those rows were saturated; sweep again
        qi_iter = 0
        while rem > 0:
            if alloc[qi_iter] < avail[qi_iter]:
                alloc[qi_iter] += 1
                rem -= 1
            qi_iter = (qi_iter + 1) % nb_img
        for qi in range(nb_img):
            take = int(alloc[qi])
            if take == 0:
                continue
            cands = candidate_sets[qi]
            # floor keeps zero-weight candidates drawable when the take
            # exceeds the nonzero count (choice without replacement balks)
            w = np.maximum(weights[qi, cands], 1e-12)
            picks = rng.choice(cands, size=take, replace=False, p=w / w.sum())
            layout[nb_bev + qi, nb_bev + picks] = True

    img_block = layout[nb_bev:, nb_bev:]
    achieved = (float(np.tril(img_block).sum()) / causal_total
                if causal_total else 1.0)
    return SparseMask(layout, block, n_bev + s_img, n_bev, window,
                      achieved, density, forced_only)


def full_causal_mask(s_total):
    """Dense causal token mask (the p=1 / dense-mode reference)."""
    return np.tril(np.ones((s_total, s_total), dtype=bool))


# -- benchmark kernels -------------------------------------------------------------
# Plain-numpy forward passes used by the attention benchmark: the dense
# path is one full GEMM under a causal mask, the sparse path visits only
# the allowed key blocks of each query block, so its wall clock tracks
# the mask density. Both compute the same masked softmax attention.


def _softmax_rows(scores):
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def dense_masked_attention(q, k, v, mask):
    """Reference numpy attention under a boolean (S, S) mask."""
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    scores = (q @ k.T) / math.sqrt(q.shape[-1])
    scores = np.where(mask, scores, -np.inf)
    return _softmax_rows(scores) @ v


def block_sparse_attention(q, k, v, mask):
    """Numpy attention that only multiplies allowed blocks of a SparseMask.

    Equal (up to rounding) to dense_masked_attention under
    ``mask.token_mask()``; the diagonal block applies the token-level
    causal triangle, every other allowed block is fully visible.
    """
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    s, d = q.shape
    b = mask.block
    layout = mask.block_layout
    scale = 1.0 / math.sqrt(d)
    out = np.empty((s, v.shape[-1]))
    for qb in range((s + b - 1) // b):
        rows = slice(qb * b, min((qb + 1) * b, s))
        kbs = np.flatnonzero(layout[qb])
        kbs = kbs[kbs <= qb]
        cols = np.concatenate([np.arange(kb * b, min((kb + 1) * b, s))
                               for kb in kbs])
        scores = (q[rows] @ k[cols].T) * scale
        if kbs[-1] == qb:  # token-level causal triangle on the diagonal
            qi = np.arange(rows.start, rows.stop)[:, None]
            scores[:, -(rows.stop - rows.start):] = np.where(
                cols[-(rows.stop - rows.start):][None, :] <= qi,
                scores[:, -(rows.stop - rows.start):], -np.inf)
        out[rows] = _softmax_rows(scores) @ v[cols]
    return out
