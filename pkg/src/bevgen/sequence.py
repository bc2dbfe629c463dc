"""Token ordering and composite sequence embeddings.

A full sequence is the BEV latent grid in raster order followed by all
camera tokens in center-out emission order. Center-out starts at the top
row of the front camera's center column and walks outward column by
column, visiting every camera (in a fixed ring order) at each column
before moving to the next offset, then drops to the next row.

Each position's embedding is the sum of a shared token embedding, a
spatial term (a linear map of the token's ego-frame direction vector for
camera tokens, or of its 2D cell coordinate for BEV tokens), and a
per-position learnable vector.
"""

from __future__ import annotations

import numpy as np

from . import numcore as nc
from .numcore import Tensor


def default_ring_order(n):
    """Camera visitation order for center-out emission.

    Cameras are indexed by increasing yaw (counterclockwise, front first),
    as built by scenegen rigs. The order alternates front/back then
    left/right pairs; ring orders for other camera counts fall back to
    index order.
    """
    if n == 6:
        # front, back, front_left, front_right, back_left, back_right
        return [0, 3, 1, 5, 2, 4]
    if n == 4:
        # front, back, left, right
        return [0, 2, 1, 3]
    return list(range(n))


def center_out_offsets(w):
    """Column offsets 0, +1, -1, +2, -2, ... covering a width-w row."""
    c0 = w // 2
    offs = [0]
    for o in range(1, max(c0, w - 1 - c0) + 1):
        offs.append(o)
        offs.append(-o)
    return [o for o in offs if 0 <= c0 + o < w]


def center_out_order(n, h, w, ring_order=None):
    """Emission order over all (camera, row, col) tokens.

    Returns a list of n*h*w triples. For each row from the top, columns
    are visited center-outward (center c0 = w//2, then +1, -1, +2, ...),
    and every camera in ``ring_order`` emits its token at that column
    before the walk advances.
    """
    ring = default_ring_order(n) if ring_order is None else list(ring_order)
    if sorted(ring) != list(range(n)):
        raise ValueError(f"ring order {ring} is not a permutation of 0..{n - 1}")
    if ring[0] != 0:
        raise ValueError("ring order must start with the front camera (index 0)")
    c0 = w // 2
    order = []
    for i in range(h):
        for o in center_out_offsets(w):
            j = c0 + o
            for k in ring:
                order.append((k, i, j))
    return order


def raster_order(n, h, w):
    """Camera-major row-major order (the ablation baseline)."""
    return [(k, i, j) for k in range(n) for i in range(h) for j in range(w)]


class SequenceLayout:
    """Bijection between flat sequence positions and token identities.

    Positions [0, h_b*w_b) are the BEV cells in raster order; the rest are
    camera tokens in ``order`` (center-out by default, raster for the
    ablation baseline).
    """

    def __init__(self, n, h_c, w_c, h_b, w_b, center_out=True, ring_order=None):
        self.n = n
        self.h_c, self.w_c = h_c, w_c
        self.h_b, self.w_b = h_b, w_b
        self.n_bev = h_b * w_b
        self.n_cam = n * h_c * w_c
        self.total = self.n_bev + self.n_cam
        self.center_out = center_out
        if center_out:
            self.order = center_out_order(n, h_c, w_c, ring_order)
        else:
            self.order = raster_order(n, h_c, w_c)
        # camera token (k,i,j) -> flat sequence position
        self.pos_of_cam = np.empty((n, h_c, w_c), dtype=np.int64)
        for step, (k, i, j) in enumerate(self.order):
            self.pos_of_cam[k, i, j] = self.n_bev + step
        # canonical token index (BEV raster, then camera-major raster) per
        # sequence position; used to reindex geometry-ordered matrices
        self.canonical = np.empty(self.total, dtype=np.int64)
        self.canonical[:self.n_bev] = np.arange(self.n_bev)
        for step, (k, i, j) in enumerate(self.order):
            self.canonical[self.n_bev + step] = (
                self.n_bev + k * h_c * w_c + i * w_c + j)

    def token_at(self, pos):
        """Sequence position -> ("bev", x, y) or ("cam", k, i, j)."""
        if not 0 <= pos < self.total:
            raise IndexError(f"position {pos} out of range [0, {self.total})")
        if pos < self.n_bev:
            return ("bev", pos // self.w_b, pos % self.w_b)
        k, i, j = self.order[pos - self.n_bev]
        return ("cam", k, i, j)

    def position_of(self, token):
        kind = token[0]
        if kind == "bev":
            _, x, y = token
            if not (0 <= x < self.h_b and 0 <= y < self.w_b):
                raise IndexError(f"BEV cell {(x, y)} out of range")
            return x * self.w_b + y
        if kind == "cam":
            _, k, i, j = token
            return int(self.pos_of_cam[k, i, j])
        raise ValueError(f"unknown token kind {kind!r}")


def seq_index_maps(layout):
    """Forward (position -> token) and inverse (token -> position) maps."""
    return layout.token_at, layout.position_of


def sequence_directions(layout, dirs):
    """Per-position spatial inputs in sequence order.

    Returns (cam_dirs, bev_coords): cam_dirs[m] is the direction vector of
    the m-th emitted camera token, bev_coords in raster order.
    """
    cam = np.empty((layout.n_cam, 3))
    for step, (k, i, j) in enumerate(layout.order):
        cam[step] = dirs.cam[k, i, j]
    bev = dirs.bev.reshape(layout.n_bev, 2)
    return cam, bev


class EmbeddingTables:
    """Learnable embedding parameters for one sequence layout.

    ``token`` is the shared code embedding over the combined vocabulary
    (camera codes first, BEV codes offset above them); ``dir_w``/``dir_b``
    map 3-vector directions (a 1x1 convolution over the channel axis,
    i.e. one shared linear map); ``coord_w``/``coord_b`` map 2D BEV
    coordinates; ``position`` holds one vector per sequence position.
    """

    def __init__(self, vocab, n_emb, layout, rng, normalize_directions=False):
        self.vocab = vocab
        self.n_emb = n_emb
        self.normalize_directions = normalize_directions
        self.token = Tensor(rng.normal(0.0, 0.02, (vocab, n_emb)),
                            requires_grad=True)
        self.dir_w = Tensor(rng.normal(0.0, 0.02, (3, n_emb)), requires_grad=True)
        self.dir_b = Tensor(np.zeros(n_emb), requires_grad=True)
        self.coord_w = Tensor(rng.normal(0.0, 0.02, (2, n_emb)), requires_grad=True)
        self.coord_b = Tensor(np.zeros(n_emb), requires_grad=True)
        self.position = Tensor(rng.normal(0.0, 0.02, (layout.total, n_emb)),
                               requires_grad=True)

    def parameters(self):
        return {
            "embed.token": self.token,
            "embed.dir_w": self.dir_w,
            "embed.dir_b": self.dir_b,
            "embed.coord_w": self.coord_w,
            "embed.coord_b": self.coord_b,
            "embed.position": self.position,
        }


def embed_sequence(tokens, layout, tables, dirs, spatial_embed=True):
    """Compose per-position embeddings for a sequence prefix.

    ``tokens`` is a 1-D or 2-D (batch) integer array of combined-vocabulary
    indices in sequence order; its length P may be any prefix covering at
    least the BEV block. Returns a (P, n_emb) or (B, P, n_emb) tensor:
    token embedding + spatial term + per-position vector. ``spatial_embed``
    off drops the direction/coordinate terms (ablation baseline).
    """
    tokens = np.asarray(tokens)
    p = tokens.shape[-1]
    if p < layout.n_bev or p > layout.total:
        raise ValueError(
            f"prefix length {p} outside [{layout.n_bev}, {layout.total}]")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= tables.vocab):
        raise IndexError(
            f"token outside combined vocabulary of {tables.vocab}")
    emb = nc.embedding_lookup(tables.token, tokens)
    if spatial_embed:
        cam_dirs, bev_coords = sequence_directions(layout, dirs)
        if tables.normalize_directions:
            norms = np.linalg.norm(cam_dirs, axis=1, keepdims=True)
            cam_dirs = np.divide(cam_dirs, norms, out=np.zeros_like(cam_dirs),
                                 where=norms > 0)
        spatial_bev = nc.add(nc.matmul(Tensor(bev_coords), tables.coord_w),
                             tables.coord_b)
        n_cam_prefix = p - layout.n_bev
        if n_cam_prefix > 0:
            spatial_cam = nc.add(
                nc.matmul(Tensor(cam_dirs[:n_cam_prefix]), tables.dir_w),
                tables.dir_b)
            spatial = nc.concat([spatial_bev, spatial_cam], axis=0)
        else:
            spatial = spatial_bev
        emb = nc.add(emb, spatial)
    emb = nc.add(emb, nc.getitem(tables.position, slice(0, p)))
    return emb
