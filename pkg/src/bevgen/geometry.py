"""Camera and BEV coordinate machinery.

Conventions used throughout the package:

* Ego frame: x forward, y left, z up, origin at the ego vehicle, meters.
* Camera frame: x right, y down, z forward (optical axis).
* A camera is (K, R, t) where K maps camera-frame rays to pixels, R is the
  camera-from-ego rotation, and t is the camera center in the ego frame.
  Unprojecting a homogeneous pixel z therefore gives the ego-frame point
  d = R^-1 K^-1 z + t, the pixel's ray point at camera depth 1. Dropping
  the ``+ t`` (``pure_direction=True``) yields a translation-free ray.
* BEV grids are ego-centered: row index grows with ego x (forward), column
  index grows with ego y (left), and the ego sits at the grid center.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_ORTHO_TOL = 1e-9


def rot_z(angle_rad):
    """Right-handed rotation about ego z (counterclockwise seen from above)."""
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


# Ego-to-camera axis permutation for a camera looking along ego +x:
# camera x = ego -y (right), camera y = ego -z (down), camera z = ego +x.
_AXIS_SWAP = np.array([[0.0, -1.0, 0.0],
                       [0.0, 0.0, -1.0],
                       [1.0, 0.0, 0.0]])


def camera_rotation_from_yaw(yaw_rad):
    """Camera-from-ego rotation for a level camera with the given heading.

    ``yaw_rad`` is measured counterclockwise from ego +x (forward), so the
    optical axis points along (cos yaw, sin yaw, 0) in the ego frame.
    """
    return _AXIS_SWAP @ rot_z(-yaw_rad)


def intrinsics(focal_px, width_px, height_px):
    """Pinhole K with square pixels and the principal point at image center."""
    return np.array([[focal_px, 0.0, width_px / 2.0],
                     [0.0, focal_px, height_px / 2.0],
                     [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Camera:
    name: str
    K: np.ndarray  # 3x3 intrinsics, pixels
    R: np.ndarray  # 3x3 camera-from-ego rotation
    t: np.ndarray  # camera center in ego frame, meters


class CameraRig:
    """A set of cameras sharing one image size and one latent grid.

    Validation is strict: K must be invertible and every R orthonormal
    with determinant +1 (both to 1e-9). All violations are collected and
    reported together.
    """

    def __init__(self, cameras, image_h, image_w, latent_h, latent_w):
        if len(cameras) < 1:
            raise ValueError("CameraRig needs at least one camera")
        problems = []
        cams = []
        for idx, cam in enumerate(cameras):
            K = np.asarray(cam.K, dtype=np.float64)
            R = np.asarray(cam.R, dtype=np.float64)
            t = np.asarray(cam.t, dtype=np.float64).reshape(3)
            if K.shape != (3, 3):
                problems.append(f"camera {idx} ({cam.name}): K shape {K.shape}")
            elif abs(np.linalg.det(K)) < 1e-12:
                problems.append(f"camera {idx} ({cam.name}): K is singular")
            if R.shape != (3, 3):
                problems.append(f"camera {idx} ({cam.name}): R shape {R.shape}")
            else:
                ortho = np.abs(R @ R.T - np.eye(3)).max()
                if ortho > _ORTHO_TOL:
                    problems.append(
                        f"camera {idx} ({cam.name}): R not orthonormal "
                        f"(max deviation {ortho:.2e})")
                elif abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
                    problems.append(
                        f"camera {idx} ({cam.name}): det(R) = "
                        f"{np.linalg.det(R):+.6f}, expected +1")
            cams.append(Camera(cam.name, K, R, t))
        for dim, val in (("image_h", image_h), ("image_w", image_w),
                         ("latent_h", latent_h), ("latent_w", latent_w)):
            if int(val) < 1:
                problems.append(f"{dim} must be >= 1, got {val}")
        if problems:
            raise ValueError("invalid camera rig: " + "; ".join(problems))
        self.cameras = cams
        self.image_h = int(image_h)
        self.image_w = int(image_w)
        self.latent_h = int(latent_h)
        self.latent_w = int(latent_w)

    def __len__(self):
        return len(self.cameras)

    @property
    def names(self):
        return [c.name for c in self.cameras]


@dataclass
class BevLayout:
    """Ego-centered multi-channel grid with metric scale.

    ``channels`` tags each grid channel "binary" or "continuous"; binary
    channels may only hold 0/1 values.
    """

    grid: np.ndarray            # (H_b, H_b, c_b)
    meters_per_cell: float
    channels: list = field(default_factory=list)
    latent_h: int = 8
    latent_w: int = 8

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.grid.ndim != 3 or self.grid.shape[0] != self.grid.shape[1]:
            raise ValueError(f"BEV grid must be square HxHxC, got {self.grid.shape}")
        if len(self.channels) != self.grid.shape[2]:
            raise ValueError(
                f"channel schema lists {len(self.channels)} entries for "
                f"{self.grid.shape[2]} grid channels")
        for ch, tag in enumerate(self.channels):
            if tag not in ("binary", "continuous"):
                raise ValueError(f"channel {ch}: unknown tag {tag!r}")
            if tag == "binary":
                vals = self.grid[:, :, ch]
                if not np.all((vals == 0.0) | (vals == 1.0)):
                    raise ValueError(f"binary channel {ch} holds non-0/1 values")

    @property
    def cells(self):
        return self.grid.shape[0]

    @property
    def extent_m(self):
        return self.grid.shape[0] * self.meters_per_cell


# -- per-token geometry --------------------------------------------------------


def token_pixel_center(rig, k, i, j):
    """Homogeneous pixel coordinate of latent cell (i, j) in camera k.

    The latent grid tiles the image; each token maps to the center of its
    tile: ((j+0.5)*W/w, (i+0.5)*H/h, 1).
    """
    if not 0 <= k < len(rig):
        raise IndexError(f"camera index {k} out of range for {len(rig)} cameras")
    if not 0 <= i < rig.latent_h:
        raise IndexError(f"latent row {i} out of range [0, {rig.latent_h})")
    if not 0 <= j < rig.latent_w:
        raise IndexError(f"latent col {j} out of range [0, {rig.latent_w})")
    u = (j + 0.5) * rig.image_w / rig.latent_w
    v = (i + 0.5) * rig.image_h / rig.latent_h
    return np.array([u, v, 1.0])


def direction_vector(rig, k, i, j, pure_direction=False):
    """Ego-frame direction for token (k, i, j): d = R^-1 K^-1 z + t.

    With ``pure_direction`` the translation is dropped, leaving the bare
    ray direction.
    """
    cam = rig.cameras[k]
    z = token_pixel_center(rig, k, i, j)
    return pixel_direction(cam, z[0], z[1], pure_direction)


def pixel_direction(cam, u, v, pure_direction=False):
    """Ego-frame direction for continuous pixel coordinates (u, v).

    ``u``/``v`` may be scalars or same-shape arrays; the result gains a
    trailing axis of 3. This is the same unprojection the per-token
    vectors use, evaluated at arbitrary image points.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    z = np.stack([u.ravel(), v.ravel(), np.ones(u.size)])
    d = cam.R.T @ np.linalg.solve(cam.K, z)
    if not pure_direction:
        d = d + cam.t[:, None]
    return d.T.reshape(u.shape + (3,))


def bev_cell_coordinate(layout, x, y):
    """Ego-frame (meters) center of latent BEV cell (x, y).

    The latent grid tiles the full layout, so one latent cell spans
    meters_per_cell * (H_b / h_b) meters per side; coordinates are offsets
    from the grid center (the ego).
    """
    if not 0 <= x < layout.latent_h:
        raise IndexError(f"latent row {x} out of range [0, {layout.latent_h})")
    if not 0 <= y < layout.latent_w:
        raise IndexError(f"latent col {y} out of range [0, {layout.latent_w})")
    half = layout.extent_m / 2.0
    cell_x = layout.extent_m / layout.latent_h
    cell_y = layout.extent_m / layout.latent_w
    return np.array([(x + 0.5) * cell_x - half, (y + 0.5) * cell_y - half])


@dataclass(frozen=True)
class DirectionField:
    """Precomputed token geometry for one rig + layout.

    ``cam`` holds the Eq.-style vectors for every camera token; ``cam_center``
    holds the variant with the pixel row replaced by the vertical image
    center (used against BEV keys, where image-plane height is meaningless);
    ``bev`` holds ego-frame 2D cell-center coordinates.
    """

    cam: np.ndarray          # (n, h_c, w_c, 3)
    cam_center: np.ndarray   # (n, w_c, 3)
    bev: np.ndarray          # (h_b, w_b, 2)
    pure_direction: bool = False

    @property
    def n_cameras(self):
        return self.cam.shape[0]

    @property
    def n_image_tokens(self):
        return self.cam.shape[0] * self.cam.shape[1] * self.cam.shape[2]

    @property
    def n_bev_tokens(self):
        return self.bev.shape[0] * self.bev.shape[1]


def direction_field(rig, layout, pure_direction=False):
    """Evaluate all token direction vectors and BEV coordinates at once."""
    n = len(rig)
    h, w = rig.latent_h, rig.latent_w
    us = (np.arange(w) + 0.5) * rig.image_w / w
    vs = (np.arange(h) + 0.5) * rig.image_h / h
    cam = np.empty((n, h, w, 3))
    cam_center = np.empty((n, w, 3))
    for k, c in enumerate(rig.cameras):
        uu, vv = np.meshgrid(us, vs)             # (h, w)
        z = np.stack([uu.ravel(), vv.ravel(), np.ones(h * w)])   # 3 x hw
        rays = c.R.T @ np.linalg.solve(c.K, z)   # 3 x hw, ego frame
        if not pure_direction:
            rays = rays + c.t[:, None]
        cam[k] = rays.T.reshape(h, w, 3)
        zc = np.stack([us, np.full(w, rig.image_h / 2.0), np.ones(w)])
        rc = c.R.T @ np.linalg.solve(c.K, zc)
        if not pure_direction:
            rc = rc + c.t[:, None]
        cam_center[k] = rc.T
    hb, wb = layout.latent_h, layout.latent_w
    bev = np.empty((hb, wb, 2))
    for x in range(hb):
        for y in range(wb):
            bev[x, y] = bev_cell_coordinate(layout, x, y)
    return DirectionField(cam, cam_center, bev, pure_direction)


# -- pairwise cosine bias --------------------------------------------------------


def cosine_matrix(a, b):
    """Pairwise cosine similarity between row sets; zero-norm rows give 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    dots = a @ b.T
    denom = np.outer(na, nb)
    out = np.zeros_like(dots)
    np.divide(dots, denom, out=out, where=denom > 0.0)
    return out


def pairwise_bias(dirs):
    """Cosine-similarity bias over all token pairs, canonical token order.

    Canonical order: BEV cells in raster order first, then camera tokens
    camera-major in raster order. Rows with a BEV query are identically
    zero (BEV positions are conditioning only and are never generated).
    Image queries against image keys use the full direction vectors;
    image queries against BEV keys use the vertical-center variant of the
    query vector and the zero-padded 2D BEV coordinate of the key.
    """
    n, h, w, _ = dirs.cam.shape
    n_img = n * h * w
    n_bev = dirs.n_bev_tokens
    s = n_bev + n_img
    beta = np.zeros((s, s))

    img = dirs.cam.reshape(n_img, 3)
    beta[n_bev:, n_bev:] = cosine_matrix(img, img)

    # image query vs BEV key: query vector re-evaluated at image mid-height,
    # key is the BEV coordinate lifted to 3D with zero height
    center = np.repeat(dirs.cam_center[:, None, :, :], h, axis=1).reshape(n_img, 3)
    bev3 = np.concatenate(
        [dirs.bev.reshape(n_bev, 2), np.zeros((n_bev, 1))], axis=1)
    beta[n_bev:, :n_bev] = cosine_matrix(center, bev3)
    return beta


# -- rig file I/O ------------------------------------------------------------------

_RIG_HEADER = "bevgen-rig 1"


def save_rig(rig, path):
    """Write a rig as key-value text: per-camera K/R/t plus grid sizes."""
    lines = [f"format {_RIG_HEADER}",
             f"n_cameras {len(rig)}",
             f"image_h {rig.image_h}",
             f"image_w {rig.image_w}",
             f"latent_h {rig.latent_h}",
             f"latent_w {rig.latent_w}"]
    for idx, cam in enumerate(rig.cameras):
        lines.append(f"cam{idx}.name {cam.name}")
        lines.append(f"cam{idx}.K " + " ".join(repr(float(v)) for v in cam.K.ravel()))
        lines.append(f"cam{idx}.R " + " ".join(repr(float(v)) for v in cam.R.ravel()))
        lines.append(f"cam{idx}.t " + " ".join(repr(float(v)) for v in cam.t))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_rig(path):
    kv = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition(" ")
            kv[key] = val
    if kv.get("format") != _RIG_HEADER:
        raise ValueError(f"{path}: not a rig file (format {kv.get('format')!r})")
    n = int(kv["n_cameras"])
    cams = []
    for idx in range(n):
        cams.append(Camera(
            name=kv[f"cam{idx}.name"],
            K=np.array([float(v) for v in kv[f"cam{idx}.K"].split()]).reshape(3, 3),
            R=np.array([float(v) for v in kv[f"cam{idx}.R"].split()]).reshape(3, 3),
            t=np.array([float(v) for v in kv[f"cam{idx}.t"].split()]),
        ))
    return CameraRig(cams, int(kv["image_h"]), int(kv["image_w"]),
                     int(kv["latent_h"]), int(kv["latent_w"]))
