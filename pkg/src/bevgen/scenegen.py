"""Procedural toy scenes, BEV rasterization, and a pinhole renderer.

The renderer is deliberately simple — flat-shaded boxes over a ground
plane, painter's algorithm by face depth — because it serves as the
geometric oracle: every painted mask pixel must trace back to its box
through the same unprojection the rest of the package uses.

Scene classes: "vehicle" boxes are red-family so a color threshold can
recover them from rendered (or generated) images; "building" boxes are
blue-gray and exist to clutter the skyline.
"""

from __future__ import annotations

import math
import os
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .geometry import BevLayout, Camera, CameraRig, camera_rotation_from_yaw, \
    intrinsics, pixel_direction

BEV_CHANNELS = ["binary", "binary", "binary", "binary", "continuous"]
CH_ROAD, CH_DIVIDER, CH_VEHICLE, CH_BUILDING, CH_HEIGHT = range(5)
CLASS_IDS = {"vehicle": 0, "building": 1}
MASK_BIT = {"vehicle": 1, "building": 2}

DIVIDER_HALF_WIDTH = 0.5
NEAR_PLANE = 0.05

ROAD_COLOR = np.array([0.28, 0.28, 0.30])
DIVIDER_COLOR = np.array([0.95, 0.95, 0.95])
BASE_SKY = np.array([0.55, 0.70, 0.95])
BASE_GROUND = np.array([0.35, 0.48, 0.30])


@dataclass(frozen=True)
class Road:
    points: np.ndarray      # (P, 2) centerline, meters, ego frame
    width: float


@dataclass(frozen=True)
class Box:
    center: np.ndarray      # (3,)
    size: np.ndarray        # (length, width, height)
    yaw: float
    cls: str
    color: np.ndarray       # RGB in [0, 1]


@dataclass(frozen=True)
class Style:
    sky: np.ndarray
    ground: np.ndarray


@dataclass(frozen=True)
class ToyScene:
    roads: list
    boxes: list
    style: Style
    seed: int
    extent_m: float


@dataclass
class SceneConfig:
    extent_m: float = 80.0
    min_vehicles: int = 1
    max_vehicles: int = 4
    min_buildings: int = 0
    max_buildings: int = 3
    road_width: tuple = (7.0, 10.0)
    bend_probability: float = 0.5

    @staticmethod
    def difficulty(level):
        """Scaled box budget; level 0 is an empty road-only scene."""
        level = float(level)
        if level <= 0.0:
            return SceneConfig(min_vehicles=0, max_vehicles=0,
                               min_buildings=0, max_buildings=0,
                               bend_probability=0.0)
        return SceneConfig(min_vehicles=1,
                           max_vehicles=max(1, round(4 * level)),
                           min_buildings=0,
                           max_buildings=round(3 * level))


def _unit(angle):
    return np.array([math.cos(angle), math.sin(angle)])


def distance_to_polyline(points, polyline):
    """Distance from each 2D point to a polyline (min over segments)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    best = np.full(points.shape[0], np.inf)
    for a, b in zip(polyline[:-1], polyline[1:]):
        ab = b - a
        denom = float(ab @ ab)
        if denom == 0.0:
            d = np.linalg.norm(points - a, axis=1)
        else:
            s = np.clip((points - a) @ ab / denom, 0.0, 1.0)
            proj = a + s[:, None] * ab
            d = np.linalg.norm(points - proj, axis=1)
        best = np.minimum(best, d)
    return best


def _road_heading_at(road, point):
    """Heading of the road segment nearest to ``point``."""
    best, heading = np.inf, 0.0
    for a, b in zip(road.points[:-1], road.points[1:]):
        d = distance_to_polyline(point[None], np.stack([a, b]))[0]
        if d < best:
            best = d
            heading = math.atan2(b[1] - a[1], b[0] - a[0])
    return heading


def sample_scene(seed, config=None):
    """Deterministic scene from one seed: road, vehicles, buildings, style."""
    config = config or SceneConfig()
    rng = np.random.default_rng(seed)
    half = config.extent_m / 2.0

    # road through (or near) the ego, optionally with one bend
    heading = rng.uniform(0.0, 2.0 * math.pi)
    anchor = rng.uniform(-4.0, 4.0, size=2)
    width = rng.uniform(*config.road_width)
    reach = config.extent_m * 0.75
    if rng.random() < config.bend_probability:
        turn = rng.uniform(math.radians(30), math.radians(80))
        turn *= -1.0 if rng.random() < 0.5 else 1.0
        pts = np.stack([anchor - reach * _unit(heading),
                        anchor,
                        anchor + reach * _unit(heading + turn)])
    else:
        pts = np.stack([anchor - reach * _unit(heading),
                        anchor + reach * _unit(heading)])
    roads = [Road(pts, width)]

    boxes = []
    n_veh = int(rng.integers(config.min_vehicles, config.max_vehicles + 1))
    for _ in range(n_veh):
        for _attempt in range(32):
            road = roads[0]
            seg = int(rng.integers(0, len(road.points) - 1))
            a, b = road.points[seg], road.points[seg + 1]
            s = rng.uniform(0.1, 0.9)
            along = a + s * (b - a)
            seg_heading = math.atan2(b[1] - a[1], b[0] - a[0])
            lateral = rng.uniform(-road.width / 2 + 1.2, road.width / 2 - 1.2)
            pos = along + lateral * _unit(seg_heading + math.pi / 2)
            if np.abs(pos).max() > half * 0.9 or np.linalg.norm(pos) < 4.0:
                continue
            size = np.array([rng.uniform(3.6, 5.0),
                             rng.uniform(1.8, 2.2),
                             rng.uniform(1.4, 1.8)])
            yaw = seg_heading + rng.uniform(-0.17, 0.17)
            if rng.random() < 0.5:
                yaw += math.pi
            color = np.array([rng.uniform(0.62, 0.92),
                              rng.uniform(0.05, 0.30),
                              rng.uniform(0.05, 0.30)])
            boxes.append(Box(np.array([pos[0], pos[1], size[2] / 2]),
                             size, yaw, "vehicle", color))
            break

    n_bld = int(rng.integers(config.min_buildings, config.max_buildings + 1))
    for _ in range(n_bld):
        for _attempt in range(64):
            pos = rng.uniform(-half * 0.85, half * 0.85, size=2)
            clearance = roads[0].width / 2 + 5.0
            if distance_to_polyline(pos[None], roads[0].points)[0] < clearance:
                continue
            if np.linalg.norm(pos) < 8.0:
                continue
            size = np.array([rng.uniform(6.0, 12.0),
                             rng.uniform(6.0, 12.0),
                             rng.uniform(5.0, 10.0)])
            yaw = rng.uniform(0.0, math.pi)
            color = np.array([rng.uniform(0.35, 0.50),
                              rng.uniform(0.40, 0.55),
                              rng.uniform(0.55, 0.75)])
            boxes.append(Box(np.array([pos[0], pos[1], size[2] / 2]),
                             size, yaw, "building", color))
            break

    style = Style(sky=np.clip(BASE_SKY * rng.uniform(0.70, 1.10), 0, 1),
                  ground=np.clip(BASE_GROUND * rng.uniform(0.75, 1.10), 0, 1))
    return ToyScene(roads, boxes, style, int(seed), config.extent_m)


# -- BEV rasterization -----------------------------------------------------------


def box_corners_2d(box):
    """Ground-plane corners (4, 2) of a box footprint."""
    l, w = box.size[0] / 2.0, box.size[1] / 2.0
    local = np.array([[l, w], [l, -w], [-l, -w], [-l, w]])
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s], [s, c]])
    return box.center[:2] + local @ rot.T


def _round_span(lo, hi, n_cells):
    """Half-open cell span for a metric interval, in grid-index units.

    Spans round to the nearest cell edge; an interval thinner than one
    cell still claims the single cell nearest its midpoint.
    """
    a = int(round(lo))
    b = int(round(hi))
    if b <= a:
        mid = int(round((lo + hi) / 2.0))
        a, b = mid, mid + 1
    a = max(a, 0)
    b = min(b, n_cells)
    if b <= a:  # fully outside the grid
        return 0, 0
    return a, b


def _clip_poly_halfplane(poly, axis, bound, keep_below):
    """Sutherland-Hodgman step: keep points with coord <= / >= bound."""
    out = []
    m = len(poly)
    for i in range(m):
        p, q = poly[i], poly[(i + 1) % m]
        pin = p[axis] <= bound if keep_below else p[axis] >= bound
        qin = q[axis] <= bound if keep_below else q[axis] >= bound
        if pin:
            out.append(p)
        if pin != qin:
            t = (bound - p[axis]) / (q[axis] - p[axis])
            out.append(p + t * (q - p))
    return out


def fill_polygon_cells(corners, cells, extent_m, target, value=1.0, reducer=None):
    """Scan-fill a convex footprint polygon into a square grid channel.

    Rows claim the polygon's x-extent by nearest-edge rounding; within
    each row slab, the clipped polygon's y-extent claims columns the same
    way, so thin footprints keep at least one cell per axis (this is what
    makes a 4x2 m box on 2.5 m cells fill exactly 2x1 cells).
    """
    cell_m = extent_m / cells
    half = extent_m / 2.0
    idx = (np.asarray(corners) + half) / cell_m    # corner coords in index units
    r0, r1 = _round_span(idx[:, 0].min(), idx[:, 0].max(), cells)
    for r in range(r0, r1):
        slab = _clip_poly_halfplane([p for p in idx], 0, r + 1.0, True)
        if len(slab) >= 2:
            slab = _clip_poly_halfplane(slab, 0, float(r), False)
        if len(slab) < 2:
            # slab misses the polygon (happens for clamped thin spans):
            # fall back to the unclipped column extent
            slab = [p for p in idx]
        ys = [p[1] for p in slab]
        c0, c1 = _round_span(min(ys), max(ys), cells)
        for c in range(c0, c1):
            if reducer is None:
                target[r, c] = value
            else:
                target[r, c] = reducer(target[r, c], value)


def rasterize_bev(scene, cells=32, latent=(8, 8)):
    """Scene -> BevLayout with road/divider/vehicle/building + height channels."""
    grid = np.zeros((cells, cells, len(BEV_CHANNELS)))
    cell_m = scene.extent_m / cells
    half = scene.extent_m / 2.0
    centers_1d = (np.arange(cells) + 0.5) * cell_m - half
    cx, cy = np.meshgrid(centers_1d, centers_1d, indexing="ij")
    pts = np.stack([cx.ravel(), cy.ravel()], axis=1)
    for road in scene.roads:
        d = distance_to_polyline(pts, road.points).reshape(cells, cells)
        grid[:, :, CH_ROAD][d <= road.width / 2.0] = 1.0
        grid[:, :, CH_DIVIDER][d <= DIVIDER_HALF_WIDTH] = 1.0
    for box in scene.boxes:
        ch = CH_VEHICLE if box.cls == "vehicle" else CH_BUILDING
        corners = box_corners_2d(box)
        fill_polygon_cells(corners, cells, scene.extent_m, grid[:, :, ch])
        fill_polygon_cells(corners, cells, scene.extent_m,
                           grid[:, :, CH_HEIGHT], value=box.size[2] / 10.0,
                           reducer=max)
    return BevLayout(grid, cell_m, list(BEV_CHANNELS), latent[0], latent[1])


# -- rigs -----------------------------------------------------------------------

_RIG_NAMES = {
    1: ["front"],
    2: ["front", "back"],
    4: ["front", "left", "back", "right"],
    6: ["front", "front_left", "back_left", "back", "back_right", "front_right"],
}


def make_rig(n=6, image=(32, 64), latent=(4, 8), fov_deg=70.0,
             radius=1.0, height=1.6):
    """Standard test rigs: n cameras at equal yaw spacing, front first.

    Cameras sit on a ring of ``radius`` meters at ``height`` above the
    ground, each looking outward along its yaw.
    """
    names = _RIG_NAMES.get(n, [f"cam{k}" for k in range(n)])
    h, w = image
    focal = (w / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
    cams = []
    for k in range(n):
        yaw = 2.0 * math.pi * k / n
        t = np.array([radius * math.cos(yaw), radius * math.sin(yaw), height])
        cams.append(Camera(names[k], intrinsics(focal, w, h),
                           camera_rotation_from_yaw(yaw), t))
    return CameraRig(cams, h, w, latent[0], latent[1])


# -- rendering --------------------------------------------------------------------


def _box_faces(box):
    """Six quads (each (4, 3) ego-frame) of one box."""
    l, w, h = box.size / 2.0
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    corners = np.array([[sx * l, sy * w, sz * h]
                        for sx in (1, -1) for sy in (1, -1) for sz in (1, -1)])
    world = corners @ rot.T + box.center
    # corner index bits: 4 = -x, 2 = -y, 1 = -z
    quads = [
        (0, 1, 3, 2),  # +x
        (4, 6, 7, 5),  # -x
        (0, 4, 5, 1),  # +y
        (2, 3, 7, 6),  # -y
        (0, 2, 6, 4),  # +z (top)
        (1, 5, 7, 3),  # -z (bottom)
    ]
    faces = [world[list(q)] for q in quads]
    normals = [rot @ np.array(v, dtype=float) for v in
               [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0),
                (0, 0, 1), (0, 0, -1)]]
    return faces, normals


_LIGHT = np.array([0.3, 0.25, 0.9])
_LIGHT = _LIGHT / np.linalg.norm(_LIGHT)


def _shade(color, normal):
    lam = max(0.0, float(normal @ _LIGHT))
    return np.clip(color * (0.55 + 0.45 * lam), 0.0, 1.0)


def project_points(cam, pts):
    """Ego points (m, 3) -> (pixel coords (m, 2), camera depth (m,))."""
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    local = (pts - cam.t) @ cam.R.T
    z = local[:, 2]
    uvw = local @ cam.K.T
    return uvw[:, :2] / z[:, None], z


def _clip_near(poly_cam, z_near=NEAR_PLANE):
    """Clip a camera-frame polygon against the plane z >= z_near."""
    out = []
    m = len(poly_cam)
    for i in range(m):
        p, q = poly_cam[i], poly_cam[(i + 1) % m]
        pin, qin = p[2] >= z_near, q[2] >= z_near
        if pin:
            out.append(p)
        if pin != qin:
            t = (z_near - p[2]) / (q[2] - p[2])
            out.append(p + t * (q - p))
    return out


def _paint_polygon(image, mask, poly_px, color, bit):
    """Fill pixels whose centers fall inside a convex polygon."""
    poly = np.asarray(poly_px)
    area2 = 0.0
    m = len(poly)
    for i in range(m):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % m]
        area2 += x0 * y1 - x1 * y0
    if area2 == 0.0:
        return
    if area2 < 0.0:
        poly = poly[::-1]
    hgt, wid = mask.shape
    x_lo = max(int(math.floor(poly[:, 0].min() - 0.5)), 0)
    x_hi = min(int(math.ceil(poly[:, 0].max() - 0.5)) + 1, wid)
    y_lo = max(int(math.floor(poly[:, 1].min() - 0.5)), 0)
    y_hi = min(int(math.ceil(poly[:, 1].max() - 0.5)) + 1, hgt)
    if x_hi <= x_lo or y_hi <= y_lo:
        return
    xs = np.arange(x_lo, x_hi) + 0.5
    ys = np.arange(y_lo, y_hi) + 0.5
    px, py = np.meshgrid(xs, ys)
    inside = np.ones(px.shape, dtype=bool)
    for i in range(len(poly)):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % len(poly)]
        inside &= (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0) >= -1e-9
    if not inside.any():
        return
    region = (slice(y_lo, y_hi), slice(x_lo, x_hi))
    image[region][inside] = color
    mask[region][inside] |= bit


def _ground_image(scene, cam, h, w):
    """Sky/ground/road backdrop for one camera, plus nothing in the mask."""
    us, vs = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    dirs = pixel_direction(cam, us, vs, pure_direction=True)
    img = np.empty((h, w, 3))
    img[:] = scene.style.sky
    dz = dirs[:, :, 2]
    down = dz < -1e-9
    if down.any():
        tt = -cam.t[2] / dz[down]
        hits = cam.t + dirs[down] * tt[:, None]
        pts = hits[:, :2]
        ground = np.tile(scene.style.ground, (pts.shape[0], 1))
        for road in scene.roads:
            d = distance_to_polyline(pts, road.points)
            ground[d <= road.width / 2.0] = ROAD_COLOR
            ground[d <= DIVIDER_HALF_WIDTH] = DIVIDER_COLOR
        img[down] = ground
    return img


def render_views(scene, rig):
    """Render all cameras: (n, H, W, 3) images and (n, H, W) uint8 masks.

    Mask bits: 1 = vehicle face, 2 = building face. Boxes are drawn with
    the painter's algorithm over faces sorted by mean camera depth;
    degenerate (zero-extent) boxes are skipped with a warning.
    """
    h, w = rig.image_h, rig.image_w
    images = np.empty((len(rig), h, w, 3))
    masks = np.zeros((len(rig), h, w), dtype=np.uint8)
    for k, cam in enumerate(rig.cameras):
        img = _ground_image(scene, cam, h, w)
        queue = []
        for box in scene.boxes:
            if np.any(box.size <= 0.0):
                warnings.warn(f"skipping degenerate box of size {box.size}")
                continue
            faces, normals = _box_faces(box)
            for face, normal in zip(faces, normals):
                local_z = (face - cam.t) @ cam.R.T[:, 2]
                if np.all(local_z < NEAR_PLANE):
                    continue
                clipped = _clip_near([(p - cam.t) @ cam.R.T for p in face])
                if len(clipped) < 3:
                    continue
                depth = float(np.mean([p[2] for p in clipped]))
                uvw = np.asarray(clipped) @ cam.K.T
                poly_px = uvw[:, :2] / uvw[:, 2:3]
                queue.append((depth, poly_px, _shade(box.color, normal),
                              MASK_BIT[box.cls]))
        queue.sort(key=lambda item: -item[0])
        for _depth, poly_px, color, bit in queue:
            _paint_polygon(img, masks[k], poly_px, color, bit)
        images[k] = img
    return images, masks


def vehicle_pixels(image):
    """Heuristic vehicle detector: red-dominant pixels.

    Works on oracle renders and on decoded generations; the threshold
    clears every shaded vehicle color and rejects sky/ground/road/
    building palettes.
    """
    r, g, b = image[..., 0], image[..., 1], image[..., 2]
    return (r - np.maximum(g, b) > 0.12) & (r > 0.3)


def ray_hits_box(origin, direction, box, tol=1e-6):
    """Slab test: does the ray meet the box hull (within tol meters)?"""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    o = rot.T @ (np.asarray(origin, dtype=float) - box.center)
    d = rot.T @ np.asarray(direction, dtype=float)
    t0, t1 = 0.0, np.inf
    for ax in range(3):
        half = box.size[ax] / 2.0 + tol
        if abs(d[ax]) < 1e-15:
            if abs(o[ax]) > half:
                return False
            continue
        ta = (-half - o[ax]) / d[ax]
        tb = (half - o[ax]) / d[ax]
        if ta > tb:
            ta, tb = tb, ta
        t0, t1 = max(t0, ta), min(t1, tb)
        if t0 > t1:
            return False
    return True


# -- dataset records ---------------------------------------------------------------

_REC_MAGIC = b"BVGS"
_REC_VERSION = 1


def write_record(path, scene, bev, images, masks):
    """One sample: BEV grid + quantized images + masks + box table.

    Images are stored as uint8 (value*255 rounded); ``read_record``
    returns them as float64 in [0, 1].
    """
    img_u8 = np.clip(np.round(np.asarray(images) * 255.0), 0, 255).astype(np.uint8)
    boxes = np.array([[b.center[0], b.center[1], b.center[2],
                       b.size[0], b.size[1], b.size[2], b.yaw,
                       CLASS_IDS[b.cls], b.color[0], b.color[1], b.color[2]]
                      for b in scene.boxes], dtype=np.float64).reshape(-1, 11)
    with open(path, "wb") as fh:
        fh.write(_REC_MAGIC)
        fh.write(struct.pack("<I", _REC_VERSION))
        fh.write(struct.pack("<q", scene.seed))
        fh.write(struct.pack("<d", scene.extent_m))
        fh.write(struct.pack("<6d", *scene.style.sky, *scene.style.ground))
        grid = np.ascontiguousarray(bev.grid, dtype="<f8")
        fh.write(struct.pack("<3q", *grid.shape))
        fh.write(struct.pack("<d", bev.meters_per_cell))
        fh.write(grid.tobytes())
        fh.write(struct.pack("<4q", *img_u8.shape))
        fh.write(img_u8.tobytes())
        m = np.ascontiguousarray(masks, dtype=np.uint8)
        fh.write(struct.pack("<3q", *m.shape))
        fh.write(m.tobytes())
        fh.write(struct.pack("<q", boxes.shape[0]))
        fh.write(np.ascontiguousarray(boxes, dtype="<f8").tobytes())


def read_record(path):
    """Load one sample record; see write_record for the layout."""
    with open(path, "rb") as fh:
        if fh.read(4) != _REC_MAGIC:
            raise ValueError(f"{path}: not a scene record")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _REC_VERSION:
            raise ValueError(f"{path}: unsupported record version {version}")
        (seed,) = struct.unpack("<q", fh.read(8))
        (extent,) = struct.unpack("<d", fh.read(8))
        style6 = struct.unpack("<6d", fh.read(48))
        shape = struct.unpack("<3q", fh.read(24))
        (mpc,) = struct.unpack("<d", fh.read(8))
        grid = np.frombuffer(fh.read(8 * int(np.prod(shape))),
                             dtype="<f8").reshape(shape).astype(np.float64)
        ishape = struct.unpack("<4q", fh.read(32))
        images = np.frombuffer(fh.read(int(np.prod(ishape))),
                               dtype=np.uint8).reshape(ishape)
        images = images.astype(np.float64) / 255.0
        mshape = struct.unpack("<3q", fh.read(24))
        masks = np.frombuffer(fh.read(int(np.prod(mshape))),
                              dtype=np.uint8).reshape(mshape).copy()
        (nboxes,) = struct.unpack("<q", fh.read(8))
        table = np.frombuffer(fh.read(8 * 11 * nboxes),
                              dtype="<f8").reshape(nboxes, 11)
        boxes = []
        names = {v: k for k, v in CLASS_IDS.items()}
        for row in table:
            boxes.append(Box(row[0:3].copy(), row[3:6].copy(), float(row[6]),
                             names[int(row[7])], row[8:11].copy()))
    return {
        "seed": seed,
        "extent_m": extent,
        "style": Style(np.array(style6[:3]), np.array(style6[3:])),
        "grid": grid,
        "meters_per_cell": mpc,
        "images": images,
        "masks": masks,
        "boxes": boxes,
    }


def record_name(index):
    return f"sample_{index:05d}.bin"


def write_dataset(out_dir, seeds, config, rig, cells=32, latent=(8, 8)):
    """Generate and store one record per seed plus a manifest."""
    os.makedirs(out_dir, exist_ok=True)
    lines = ["# index seed file n_boxes"]
    for idx, seed in enumerate(seeds):
        scene = sample_scene(seed, config)
        bev = rasterize_bev(scene, cells=cells, latent=latent)
        images, masks = render_views(scene, rig)
        name = record_name(idx)
        write_record(os.path.join(out_dir, name), scene, bev, images, masks)
        lines.append(f"{idx} {seed} {name} {len(scene.boxes)}")
    with open(os.path.join(out_dir, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(data_dir):
    """Manifest rows as (index, seed, filename, n_boxes)."""
    rows = []
    with open(os.path.join(data_dir, "manifest.txt")) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            idx, seed, name, nb = line.split()
            rows.append((int(idx), int(seed), name, int(nb)))
    return rows
