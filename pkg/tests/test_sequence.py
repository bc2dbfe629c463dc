"""Ordering and embedding checks, mostly by enumeration."""

import numpy as np
import pytest

from bevgen import geometry as geo
from bevgen import sequence as seq
from bevgen.numcore import Tensor


def test_center_out_two_cameras_enumerated():
    # h=1, w=3, ring (front, back): walk is col 1, col 2, col 0
    order = seq.center_out_order(2, 1, 3)
    assert order == [(0, 0, 1), (1, 0, 1),
                     (0, 0, 2), (1, 0, 2),
                     (0, 0, 0), (1, 0, 0)]


def test_center_out_single_token():
    assert seq.center_out_order(1, 1, 1) == [(0, 0, 0)]


def test_center_out_is_permutation_sweep():
    rng = np.random.default_rng(11)
    for _ in range(120):
        n = int(rng.integers(1, 7))
        h = int(rng.integers(1, 9))
        w = int(rng.integers(1, 9))
        order = seq.center_out_order(n, h, w)
        assert sorted(order) == [(k, i, j) for k in range(n)
                                 for i in range(h) for j in range(w)]


def test_center_out_rows_in_order_and_first_token():
    for n, h, w in [(6, 4, 8), (2, 3, 5), (4, 2, 2)]:
        order = seq.center_out_order(n, h, w)
        assert order[0] == (0, 0, w // 2)
        rows = [i for _, i, _ in order]
        assert rows == sorted(rows)


def test_center_out_cameras_alternate_with_period_n():
    n, h, w = 6, 2, 4
    order = seq.center_out_order(n, h, w)
    ring = seq.default_ring_order(n)
    for g in range(0, len(order), n):
        group = order[g:g + n]
        assert [k for k, _, _ in group] == ring
        assert len({(i, j) for _, i, j in group}) == 1  # same cell per group


def test_ring_order_validation():
    with pytest.raises(ValueError):
        seq.center_out_order(3, 1, 1, ring_order=[0, 1, 1])
    with pytest.raises(ValueError):
        seq.center_out_order(3, 1, 1, ring_order=[1, 0, 2])


def test_layout_maps_roundtrip():
    layout = seq.SequenceLayout(2, 3, 4, 5, 5)
    fwd, inv = seq.seq_index_maps(layout)
    for pos in range(layout.total):
        assert inv(fwd(pos)) == pos
    assert fwd(0) == ("bev", 0, 0)
    assert fwd(layout.n_bev) == ("cam", 0, 0, 4 // 2)
    with pytest.raises(IndexError):
        fwd(layout.total)


def test_layout_canonical_indices():
    layout = seq.SequenceLayout(2, 2, 3, 2, 2)
    # canonical = BEV raster, then camera-major raster
    assert list(layout.canonical[:4]) == [0, 1, 2, 3]
    k, i, j = layout.order[0]
    assert layout.canonical[4] == 4 + k * 6 + i * 3 + j
    assert sorted(layout.canonical) == list(range(layout.total))


def test_raster_layout_first_token():
    layout = seq.SequenceLayout(2, 2, 3, 2, 2, center_out=False)
    assert layout.token_at(layout.n_bev) == ("cam", 0, 0, 0)


def small_setup(seed=3):
    cams = [geo.Camera(f"c{k}",
                       geo.intrinsics(16.0, 32, 16),
                       geo.camera_rotation_from_yaw(np.pi * k),
                       np.zeros(3)) for k in range(2)]
    rig = geo.CameraRig(cams, 16, 32, 2, 3)
    lay = geo.BevLayout(np.zeros((8, 8, 1)), 1.0, ["binary"], 2, 2)
    dirs = geo.direction_field(rig, lay)
    layout = seq.SequenceLayout(2, 2, 3, 2, 2)
    rng = np.random.default_rng(seed)
    tables = seq.EmbeddingTables(vocab=20, n_emb=8, layout=layout, rng=rng)
    return layout, tables, dirs


def test_embed_sequence_shapes_and_prefix():
    layout, tables, dirs = small_setup()
    tokens = np.arange(layout.total) % 20
    full = seq.embed_sequence(tokens, layout, tables, dirs)
    assert full.shape == (layout.total, 8)
    pre = seq.embed_sequence(tokens[:layout.n_bev + 3], layout, tables, dirs)
    assert pre.shape == (layout.n_bev + 3, 8)
    assert np.array_equal(pre.data, full.data[:layout.n_bev + 3])
    with pytest.raises(ValueError):
        seq.embed_sequence(tokens[:2], layout, tables, dirs)
    with pytest.raises(IndexError):
        seq.embed_sequence(np.full(layout.total, 20), layout, tables, dirs)


def test_embed_identical_rows_for_identical_inputs():
    layout, tables, dirs = small_setup()
    # duplicate token value at two camera positions with equal direction and
    # equal position vector: force both by hand
    tokens = np.zeros(layout.total, dtype=np.int64)
    tables.position.data[layout.n_bev] = tables.position.data[layout.n_bev + 1]
    cam_dirs, _ = seq.sequence_directions(layout, dirs)
    dirs.cam[layout.order[1]] = dirs.cam[layout.order[0]]
    out = seq.embed_sequence(tokens, layout, tables, dirs)
    assert np.allclose(out.data[layout.n_bev], out.data[layout.n_bev + 1])


def test_embed_additive_decomposition():
    layout, tables, dirs = small_setup()
    tokens = np.arange(layout.total) % 20
    tables.dir_w.data[:] = 0.0
    tables.dir_b.data[:] = 0.0
    tables.coord_w.data[:] = 0.0
    tables.coord_b.data[:] = 0.0
    tables.position.data[:] = 0.0
    out = seq.embed_sequence(tokens, layout, tables, dirs)
    assert np.array_equal(out.data, tables.token.data[tokens])


def test_embed_spatial_flag_drops_theta_only():
    layout, tables, dirs = small_setup()
    tokens = np.arange(layout.total) % 20
    with_spatial = seq.embed_sequence(tokens, layout, tables, dirs).data
    without = seq.embed_sequence(tokens, layout, tables, dirs,
                                 spatial_embed=False).data
    cam_dirs, bev_coords = seq.sequence_directions(layout, dirs)
    theta_bev = bev_coords @ tables.coord_w.data + tables.coord_b.data
    theta_cam = cam_dirs @ tables.dir_w.data + tables.dir_b.data
    theta = np.concatenate([theta_bev, theta_cam], axis=0)
    assert np.allclose(with_spatial - without, theta)


def test_embed_position_gradient_is_local():
    layout, tables, dirs = small_setup()
    tokens = np.arange(layout.total) % 20
    out = seq.embed_sequence(tokens, layout, tables, dirs)
    # loss touches only position 1's row
    loss = out[1].sum()
    loss.backward()
    g = tables.position.grad
    assert np.all(g[1] == 1.0)
    mask = np.ones(layout.total, dtype=bool)
    mask[1] = False
    assert np.all(g[mask] == 0.0)


def test_embed_direction_normalization_flag():
    layout, tables, dirs = small_setup()
    tables.normalize_directions = True
    tokens = np.zeros(layout.total, dtype=np.int64)
    out = seq.embed_sequence(tokens, layout, tables, dirs)
    cam_dirs, _ = seq.sequence_directions(layout, dirs)
    unit = cam_dirs / np.linalg.norm(cam_dirs, axis=1, keepdims=True)
    want = (tables.token.data[0] + unit @ tables.dir_w.data + tables.dir_b.data
            + tables.position.data[layout.n_bev:])
    assert np.allclose(out.data[layout.n_bev:], want)
