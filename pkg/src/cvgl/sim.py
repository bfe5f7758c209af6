"""Synthetic scenes with full ground truth.

A metric world (x east, y north, z up, origin at the gallery-area center) is
populated with box buildings over a color-ramped ground. A ring of oblique
UAV cameras looks at a scene region inside one gallery tile. Everything the
pipeline consumes is then expressed in a scale-ambiguous local frame (the
first camera's frame scaled to ``scene_units`` per tile footprint), as a 3D
reconstruction backbone would report it.

Tokens come from a shared low-rank basis: every ground cell owns a latent
vector, and any token that "looks at" a cell carries that cell's feature.
Tiles overlapping the scene therefore share features with the UAV frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

from .attention import TokenMatrix
from .errors import InvalidConfig
from .geometry import Plane, PointCloud, SE3Pose, orthonormalize
from .georegistration import AbsolutePose, GeoTile, heading_deg
from .scene import CandidatePrediction, Frame, Gallery, SceneBundle
from .utm import UtmZone, latlon_to_utm, utm_to_latlon

ENU = SE3Pose.identity()


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    # gallery
    tile_px: int = 128
    delta: float = 2.0               # meters per pixel
    grid: int = 5                    # tiles per side; M = grid**2
    overlap: float = 0.25            # shared fraction of a tile side between neighbours
    # world
    building_count: int = 60
    building_size: tuple = (15.0, 40.0)
    building_height: tuple = (12.0, 40.0)
    scene_half: float = 0.4          # scene half-size, fraction of the tile side
    scene_offset: float = 0.08       # max scene-center offset from the GT tile center, fraction
    # UAV
    n_views: int = 12
    orbit_radius: float = 0.35       # fraction of the tile side
    altitude: tuple = (110.0, 150.0)
    fov_deg: float = 50.0
    # reconstruction
    n_points: int = 20000
    scene_units: float = 4.0         # local units per tile side
    sat_samples: int = 65            # satellite-view points per tile side
    # tokens
    token_dim: int = 64
    token_rank: int = 48
    token_grid: int = 8              # patches per side for frames and tiles
    cell_size: float = 32.0
    # noise
    point_sigma: float = 0.0         # scene units
    pose_rot_sigma: float = 0.0      # radians
    pose_trans_sigma: float = 0.0    # scene units
    token_noise: float = 0.0
    color_sigma: float = 0.0

    def __post_init__(self):
        counts = ("tile_px", "grid", "building_count", "n_views", "n_points", "sat_samples",
                  "token_dim", "token_rank", "token_grid")
        for name in counts:
            if int(getattr(self, name)) < 1:
                raise InvalidConfig(f"{name} must be >= 1")
        if self.sat_samples < 2:
            raise InvalidConfig("sat_samples must be >= 2")
        if not 0.0 <= self.overlap < 1.0:
            raise InvalidConfig("overlap must be in [0, 1)")
        for name in ("point_sigma", "pose_rot_sigma", "pose_trans_sigma", "token_noise", "color_sigma"):
            if getattr(self, name) < 0:
                raise InvalidConfig(f"{name} must be >= 0")
        for name in ("delta", "scene_units", "cell_size", "fov_deg"):
            if not getattr(self, name) > 0:
                raise InvalidConfig(f"{name} must be > 0")
        if not 0 < self.scene_half + self.scene_offset <= 0.5:
            raise InvalidConfig("scene region must fit inside the GT tile")
        if self.orbit_radius + self.scene_offset > 0.5:
            raise InvalidConfig("UAV orbit must stay inside the GT tile")
        if self.token_rank > self.token_dim:
            raise InvalidConfig("token_rank must be <= token_dim")

    @property
    def footprint(self) -> float:
        return self.tile_px * self.delta

    @property
    def stride(self) -> float:
        return self.footprint * (1.0 - self.overlap)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


# harder regime: small off-center scene, dense tile overlap, noisy colors and tokens
NOISY_PRESET = dict(scene_half=0.2, scene_offset=0.25, overlap=0.5, orbit_radius=0.2,
                    point_sigma=0.02, token_noise=0.5, color_sigma=0.1)


@dataclass(frozen=True)
class NoiseLevels:
    point_sigma: float = 0.0
    pose_rot_sigma: float = 0.0
    pose_trans_sigma: float = 0.0
    token_noise: float = 0.0
    color_sigma: float = 0.0

    def is_zero(self) -> bool:
        return not any(getattr(self, f.name) for f in fields(self))


@dataclass(eq=False)
class SyntheticBundle:
    bundle: SceneBundle
    gallery: Gallery
    gt_tile_id: str
    gt_poses: list
    gt_plane: Plane
    config: SimConfig
    scene_region: tuple = ()              # metric (xmin, ymin, xmax, ymax)
    local_scale: float = 1.0              # local units per meter
    extras: dict = field(default_factory=dict)

    @property
    def query_id(self) -> str:
        return self.bundle.query_id

    def truth_dict(self) -> dict:
        return {
            "version": 1,
            "query_id": self.query_id,
            "gt_tile": self.gt_tile_id,
            "poses": [p.to_dict() for p in self.gt_poses],
            "plane": self.gt_plane.to_dict(),
        }


def _f32(a) -> np.ndarray:
    """Round to float32 precision so in-memory and on-disk bundles agree."""
    return np.asarray(a, dtype=np.float32).astype(np.float64)


class _World:
    def __init__(self, cfg: SimConfig, rng: np.random.Generator):
        self.cfg = cfg
        half = (cfg.grid - 1) / 2 * cfg.stride + cfg.footprint / 2
        self.half = half
        self.bounds = (-half, -half, half, half)
        lo_s, hi_s = cfg.building_size
        lo_h, hi_h = cfg.building_height
        n = cfg.building_count
        centers = rng.uniform(-half, half, size=(n, 2))
        sizes = rng.uniform(lo_s, hi_s, size=(n, 2))
        self.box_min = np.column_stack([centers - sizes / 2, np.zeros(n)])
        self.box_max = np.column_stack([centers + sizes / 2, rng.uniform(lo_h, hi_h, size=n)])
        self.roof_colors = rng.uniform(0.1, 0.9, size=(n, 3))
        # ground texture and token latents on a cell grid with one footprint of margin
        margin = cfg.footprint
        self.cell_origin = -half - margin
        self.n_cells = int(math.ceil((2 * (half + margin)) / cfg.cell_size))
        self.parcel = rng.uniform(0.0, 1.0, size=(self.n_cells, self.n_cells))
        basis = rng.standard_normal((cfg.token_dim, cfg.token_rank)) / math.sqrt(cfg.token_rank)
        latents = rng.standard_normal((self.n_cells, self.n_cells, cfg.token_rank))
        feats = latents @ basis.T
        self.cell_features = feats / np.linalg.norm(feats, axis=-1, keepdims=True)

    def _cells(self, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        idx = np.floor((xy - self.cell_origin) / self.cfg.cell_size).astype(np.int64)
        idx = np.clip(idx, 0, self.n_cells - 1)
        return idx[:, 0], idx[:, 1]

    def top_surface(self, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Height and color of the highest surface above each (x, y)."""
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        x0, y0, x1, y1 = self.bounds
        cx, cy = self._cells(xy)
        color = np.column_stack([
            0.15 + 0.7 * np.clip((xy[:, 0] - x0) / (x1 - x0), 0, 1),
            0.15 + 0.7 * np.clip((xy[:, 1] - y0) / (y1 - y0), 0, 1),
            0.35 + 0.3 * self.parcel[cx, cy],
        ])
        height = np.zeros(len(xy))
        for b in range(len(self.box_min)):
            inside = ((xy[:, 0] >= self.box_min[b, 0]) & (xy[:, 0] <= self.box_max[b, 0])
                      & (xy[:, 1] >= self.box_min[b, 1]) & (xy[:, 1] <= self.box_max[b, 1])
                      & (self.box_max[b, 2] > height))
            height[inside] = self.box_max[b, 2]
            color[inside] = self.roof_colors[b]
        return height, color

    def features(self, xy: np.ndarray) -> np.ndarray:
        cx, cy = self._cells(np.asarray(xy, dtype=np.float64).reshape(-1, 2))
        return self.cell_features[cx, cy]

    def occluded_counts(self, points: np.ndarray, centers: np.ndarray) -> np.ndarray:
        """Per point, number of cameras whose line of sight hits a building first."""
        counts = np.zeros(len(points), dtype=np.int64)
        lo = np.minimum(points.min(axis=0), centers.min(axis=0))
        hi = np.maximum(points.max(axis=0), centers.max(axis=0))
        near = np.all(self.box_max >= lo, axis=1) & np.all(self.box_min <= hi, axis=1)
        bmin, bmax = self.box_min[near], self.box_max[near]
        for c in centers:
            d = points - c
            d = np.where(np.abs(d) < 1e-12, 1e-12, d)
            blocked = np.zeros(len(points), dtype=bool)
            for b in range(len(bmin)):
                t1 = (bmin[b] - c) / d
                t2 = (bmax[b] - c) / d
                t_near = np.minimum(t1, t2).max(axis=1)
                t_far = np.maximum(t1, t2).min(axis=1)
                blocked |= (t_near < t_far) & (t_near < 1.0 - 1e-6) & (t_far > 0.0)
            counts += blocked
        return counts


def _look_at(center: np.ndarray, target: np.ndarray) -> np.ndarray:
    z = target - center
    z /= np.linalg.norm(z)
    x = np.cross(z, [0.0, 0.0, 1.0])
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.column_stack([x, y, z])


def _square_grid(cx: float, cy: float, half: float, n: int) -> np.ndarray:
    s = np.linspace(-half, half, n)
    gx, gy = np.meshgrid(cx + s, cy + s, indexing="xy")
    return np.column_stack([gx.ravel(), gy.ravel()])


def _patch_centers(cx: float, cy: float, side: float, n: int) -> np.ndarray:
    s = (np.arange(n) + 0.5) / n * side - side / 2
    gx, gy = np.meshgrid(cx + s, cy - s, indexing="xy")   # row-major, north row first
    return np.column_stack([gx.ravel(), gy.ravel()])


def _overlap_fraction(tile_box, region) -> float:
    w = min(tile_box[2], region[2]) - max(tile_box[0], region[0])
    h = min(tile_box[3], region[3]) - max(tile_box[1], region[1])
    if w <= 0 or h <= 0:
        return 0.0
    return w * h / ((tile_box[2] - tile_box[0]) * (tile_box[3] - tile_box[1]))


def generate_scene(config: Optional[SimConfig] = None, **overrides) -> SyntheticBundle:
    """Deterministic synthetic query scene plus gallery, given ``config.seed``."""
    cfg = replace(config or SimConfig(), **overrides) if overrides else (config or SimConfig())
    rng = np.random.default_rng(cfg.seed)
    F = cfg.footprint
    world = _World(cfg, rng)

    # geographic anchor: area center near a zone's central meridian
    zone_number = int(rng.integers(1, 61))
    lat_c = float(rng.uniform(-60.0, 60.0))
    lon_c = (zone_number - 1) * 6.0 - 180.0 + 3.0 + float(rng.uniform(-2.0, 2.0))
    zone = UtmZone(zone_number, lat_c >= 0.0)
    e_c, n_c, _ = latlon_to_utm(lat_c, lon_c, zone)

    # gallery grid, north row first
    offsets = (np.arange(cfg.grid) - (cfg.grid - 1) / 2) * cfg.stride
    tiles, tile_xy = [], {}
    for r in range(cfg.grid):
        for c in range(cfg.grid):
            x, y = offsets[c], offsets[cfg.grid - 1 - r]
            lat, lon = utm_to_latlon(e_c + x, n_c + y, zone)
            tid = f"tile_{r:02d}_{c:02d}"
            tiles.append(GeoTile(tid, lat, lon, cfg.delta, cfg.tile_px, cfg.tile_px))
            tile_xy[tid] = (x, y)

    gt = tiles[int(rng.integers(len(tiles)))]
    gx, gy = tile_xy[gt.tile_id]
    sx = gx + float(rng.uniform(-cfg.scene_offset, cfg.scene_offset)) * F
    sy = gy + float(rng.uniform(-cfg.scene_offset, cfg.scene_offset)) * F
    hs = cfg.scene_half * F
    region = (sx - hs, sy - hs, sx + hs, sy + hs)

    # UAV orbit
    theta0 = float(rng.uniform(0, 2 * np.pi))
    metric_R, metric_C = [], []
    for j in range(cfg.n_views):
        th = theta0 + 2 * np.pi * j / cfg.n_views
        alt = float(rng.uniform(*cfg.altitude))
        C = np.array([sx + cfg.orbit_radius * F * np.cos(th), sy + cfg.orbit_radius * F * np.sin(th), alt])
        target = np.array([sx, sy, 0.0]) + np.append(rng.uniform(-0.05, 0.05, 2) * F, 0.0)
        metric_R.append(_look_at(C, target))
        metric_C.append(C)
    metric_C = np.array(metric_C)

    # local frame = first camera frame, scaled
    s = cfg.scene_units / F
    Q = metric_R[0].T
    o = metric_C[0]

    def to_local(p):
        return s * (np.asarray(p, dtype=np.float64) - o) @ Q.T

    # scene point cloud
    xy = np.column_stack([rng.uniform(region[0], region[2], cfg.n_points),
                          rng.uniform(region[1], region[3], cfg.n_points)])
    height, color = world.top_surface(xy)
    pts = np.column_stack([xy, height])
    conf = 1.0 / (1.0 + world.occluded_counts(pts, metric_C))
    cloud = PointCloud(_f32(to_local(pts)), _f32(color), _f32(conf))

    # frames
    frames, gt_poses = [], []
    half_tan = math.tan(math.radians(cfg.fov_deg) / 2)
    uv = np.linspace(-half_tan, half_tan, cfg.token_grid)
    gu, gv = np.meshgrid(uv, uv, indexing="xy")
    rays_cam = np.column_stack([gu.ravel(), gv.ravel(), np.ones(gu.size)])
    for j, (R, C) in enumerate(zip(metric_R, metric_C)):
        rays = rays_cam @ R.T
        down = rays[:, 2] < -1e-6
        t = np.where(down, -C[2] / np.where(down, rays[:, 2], -1.0), 0.0)
        ground = C[:2] + t[:, None] * rays[:, :2]
        ground = ground[down] if down.any() else C[None, :2]
        tokens = TokenMatrix(_f32(world.features(ground)), f"frame_{j:03d}")
        pose = SE3Pose(orthonormalize(Q @ R), to_local(C))
        frames.append(Frame(tokens, pose))
        lat, lon = utm_to_latlon(e_c + C[0], n_c + C[1], zone)
        gt_poses.append(AbsolutePose(e_c + C[0], n_c + C[1], lat, lon,
                                     heading_deg(SE3Pose(R, C), ENU), j, str(zone)))

    # gallery content and per-tile backbone predictions
    images, features, candidates = {}, {}, {}
    px = (np.arange(cfg.tile_px) + 0.5) * cfg.delta - F / 2
    sat_R = orthonormalize(Q)
    for tile in tiles:
        tx, ty = tile_xy[tile.tile_id]
        pgx, pgy = np.meshgrid(tx + px, ty - px, indexing="xy")
        _, img = world.top_surface(np.column_stack([pgx.ravel(), pgy.ravel()]))
        images[tile.tile_id] = TokenMatrix(_f32(img), tile.tile_id)
        feat = world.features(_patch_centers(tx, ty, F, cfg.token_grid))
        features[tile.tile_id] = TokenMatrix(_f32(feat), tile.tile_id)

        frac = _overlap_fraction((tx - F / 2, ty - F / 2, tx + F / 2, ty + F / 2), region)
        grid = _square_grid(tx, ty, F / 2, cfg.sat_samples)
        _, gcol = world.top_surface(grid)
        if frac > 0:
            pose = SE3Pose(sat_R, to_local([tx, ty, 0.0]))
            gp = np.column_stack([grid, np.zeros(len(grid))])
            gconf = np.full(len(grid), 0.5 + 0.5 * frac)
        else:
            # hallucinated registration: somewhere on the scene, random yaw, low confidence
            yaw = float(rng.uniform(0, 2 * np.pi))
            hx, hy = np.array([sx, sy]) + rng.uniform(-0.3, 0.3, 2) * F
            half = float(rng.uniform(0.15, 0.5)) * F
            Rz = Rotation.from_rotvec([0.0, 0.0, yaw]).as_matrix()
            pose = SE3Pose(orthonormalize(Q @ Rz), to_local([hx, hy, 0.0]))
            local = _square_grid(0.0, 0.0, half, cfg.sat_samples)
            gp = np.column_stack([local, np.zeros(len(local))]) @ Rz.T + [hx, hy, 0.0]
            gconf = rng.uniform(0.02, 0.15, len(grid))
        candidates[tile.tile_id] = CandidatePrediction(
            tile.tile_id, pose, PointCloud(_f32(to_local(gp)), _f32(gcol), _f32(gconf)))

    gallery = Gallery.from_images(tiles, images, features)
    centroid = np.mean([f.pose.translation for f in frames], axis=0)
    n_local = Q @ np.array([0.0, 0.0, 1.0])
    gt_plane = Plane(n_local / np.linalg.norm(n_local), s * o[2])
    metadata = {"query_id": f"sim_{cfg.seed:06d}", "seed": cfg.seed, "source": "cvgl.sim"}
    bundle = SceneBundle(frames, cloud, centroid, candidates, metadata)
    sb = SyntheticBundle(bundle, gallery, gt.tile_id, gt_poses, gt_plane, cfg, region, s,
                         {"zone": str(zone), "area_center_utm": (e_c, n_c)})
    noise = NoiseLevels(cfg.point_sigma, cfg.pose_rot_sigma, cfg.pose_trans_sigma,
                        cfg.token_noise, cfg.color_sigma)
    if not noise.is_zero():
        sb = perturb_bundle(sb, noise, seed=cfg.seed + 1_000_003)
    return sb


def _jitter_pose(pose: SE3Pose, rng, rot_sigma: float, trans_sigma: float) -> SE3Pose:
    R, t = pose.rotation, pose.translation
    if rot_sigma > 0:
        R = orthonormalize(Rotation.from_rotvec(rng.normal(0.0, rot_sigma, 3)).as_matrix() @ R)
    if trans_sigma > 0:
        t = t + rng.normal(0.0, trans_sigma, 3)
    return SE3Pose(R, t)


def _jitter_cloud(cloud: PointCloud, rng, point_sigma: float, color_sigma: float) -> PointCloud:
    pos, col = cloud.positions, cloud.colors
    if point_sigma > 0:
        pos = _f32(pos + rng.normal(0.0, point_sigma, pos.shape))
    if color_sigma > 0:
        col = _f32(np.clip(col + rng.normal(0.0, color_sigma, col.shape), 0.0, 1.0))
    return PointCloud(pos, col, cloud.confidence)


def perturb_bundle(sb: SyntheticBundle, noise: NoiseLevels, seed: int = 0) -> SyntheticBundle:
    """Seeded jitter on points, poses and UAV tokens; ground truth is untouched."""
    if noise.is_zero():
        return sb
    rng = np.random.default_rng(seed)
    b = sb.bundle
    cloud = _jitter_cloud(b.cloud, rng, noise.point_sigma, noise.color_sigma)
    frames = []
    for f in b.frames:
        tok = f.tokens.tokens
        if noise.token_noise > 0:
            tok = _f32(tok + rng.normal(0.0, noise.token_noise / math.sqrt(tok.shape[1]), tok.shape))
        frames.append(Frame(TokenMatrix(tok, f.tokens.source_id),
                            _jitter_pose(f.pose, rng, noise.pose_rot_sigma, noise.pose_trans_sigma)))
    candidates = {}
    for tid in sorted(b.candidates):
        c = b.candidates[tid]
        candidates[tid] = CandidatePrediction(
            tid, _jitter_pose(c.pose, rng, noise.pose_rot_sigma, noise.pose_trans_sigma),
            _jitter_cloud(c.points, rng, noise.point_sigma, 0.0))
    centroid = np.mean([f.pose.translation for f in frames], axis=0)
    bundle = SceneBundle(frames, cloud, centroid, candidates, dict(b.metadata))
    return replace(sb, bundle=bundle)
