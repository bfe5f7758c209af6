"""Bird's-eye-view synthesis from a reconstructed point cloud."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateYaw, InputError, ZeroExtent
from .geometry import Plane, PointCloud, SE3Pose

DEFAULT_SIZE = 256
YAW_TOL = 1e-9
EXTENT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class BevCamera:
    """Virtual nadir camera.

    ``pose`` maps world points into the camera frame (``p' = R p + T``), so
    ``pose.translation == -pose.rotation @ center``. Camera axes: x along the
    yaw reference, z = -normal (looking down), y = z × x.
    """

    pose: SE3Pose
    center: np.ndarray
    normal: np.ndarray

    @property
    def rotation(self) -> np.ndarray:
        return self.pose.rotation

    @property
    def translation(self) -> np.ndarray:
        return self.pose.translation


@dataclass(frozen=True, eq=False)
class BevRaster:
    width: int
    height: int
    pixels: np.ndarray      # (H, W, 3) in [0, 1]
    occupancy: np.ndarray   # (H, W) bool

    def tokens(self) -> np.ndarray:
        """Colors of occupied pixels in row-major order, one 3-dim token each."""
        return self.pixels[self.occupancy]

    @property
    def occupied_fraction(self) -> float:
        return float(self.occupancy.mean())


def build_bev_camera(cloud: PointCloud, plane: Plane, yaw_reference) -> BevCamera:
    if len(cloud) == 0:
        raise InputError("cannot build a BEV camera for an empty cloud")
    n = plane.normal
    yaw = np.asarray(yaw_reference, dtype=np.float64).reshape(3)
    x = yaw - (yaw @ n) * n
    norm = np.linalg.norm(x)
    if norm < YAW_TOL:
        raise DegenerateYaw("yaw reference is parallel to the plane normal")
    x = x / norm
    z = -n
    y = np.cross(z, x)
    R = np.vstack([x, y, z])
    center = cloud.centroid() + n
    return BevCamera(SE3Pose(R, -R @ center), center, n.copy())


def default_yaw_reference(poses: Sequence[SE3Pose], plane: Plane) -> np.ndarray:
    """Horizontal heading of the first camera that has one."""
    n = plane.normal
    for pose in poses:
        for axis in (pose.rotation[:, 2], pose.rotation[:, 0]):
            h = axis - (axis @ n) * n
            if np.linalg.norm(h) > 1e-6:
                return h / np.linalg.norm(h)
    # no usable camera: any direction orthogonal to n
    helper = np.eye(3)[int(np.argmin(np.abs(n)))]
    h = helper - (helper @ n) * n
    return h / np.linalg.norm(h)


def _planar(cloud: PointCloud, cam: BevCamera) -> np.ndarray:
    return cam.pose.apply(cloud.positions)


def bev_extent(cloud: PointCloud, cam: BevCamera) -> tuple[np.ndarray, float]:
    """Centroid of the in-plane coordinates and the half-size ``S_max``.

    ``S_max`` is the largest absolute in-plane deviation from the centroid, so
    every point maps into the unit square.
    """
    if len(cloud) == 0:
        raise InputError("cannot project an empty cloud")
    p = _planar(cloud, cam)[:, :2]
    center = p.mean(axis=0)
    s_max = float(np.abs(p - center).max())
    if s_max <= EXTENT_TOL:
        raise ZeroExtent("all points coincide in the BEV plane")
    return center, s_max


def project_to_bev(cloud: PointCloud, cam: BevCamera) -> np.ndarray:
    center, s_max = bev_extent(cloud, cam)
    p = _planar(cloud, cam)[:, :2]
    return (p - center) / (2.0 * s_max) + 0.5


def pixel_indices(coords: np.ndarray, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    cols = np.floor(coords[:, 0] * (width - 1) + 0.5).astype(np.int64)
    rows = np.floor(coords[:, 1] * (height - 1) + 0.5).astype(np.int64)
    return np.clip(cols, 0, width - 1), np.clip(rows, 0, height - 1)


def rasterize_bev(coords: np.ndarray, cloud: PointCloud, cam: BevCamera,
                  width: int = DEFAULT_SIZE, height: int = DEFAULT_SIZE) -> BevRaster:
    """Z-buffered splat: per pixel keep the point highest along the normal.

    Equal heights resolve to the lower point index.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if len(coords) != len(cloud):
        raise InputError("coords and cloud lengths differ")
    pixels = np.zeros((height, width, 3))
    occ = np.zeros((height, width), dtype=bool)
    if len(cloud):
        cols, rows = pixel_indices(coords, width, height)
        flat = rows * width + cols
        h = cloud.positions @ cam.normal
        order = np.lexsort((np.arange(len(flat)), -h, flat))
        first = np.ones(len(order), dtype=bool)
        first[1:] = flat[order][1:] != flat[order][:-1]
        win = order[first]
        pixels.reshape(-1, 3)[flat[win]] = np.clip(cloud.colors[win], 0.0, 1.0)
        occ.reshape(-1)[flat[win]] = True
    return BevRaster(width, height, pixels, occ)


@dataclass
class BevView:
    camera: BevCamera
    raster: BevRaster
    cloud: PointCloud
    s_max: float

    @property
    def center(self) -> np.ndarray:
        return self.camera.center


def render_bev(cloud: PointCloud, plane: Plane, yaw_reference,
               width: int = DEFAULT_SIZE, height: int = DEFAULT_SIZE) -> BevView:
    cam = build_bev_camera(cloud, plane, yaw_reference)
    _, s_max = bev_extent(cloud, cam)
    coords = project_to_bev(cloud, cam)
    return BevView(cam, rasterize_bev(coords, cloud, cam, width, height), cloud, s_max)


@dataclass(frozen=True, eq=False)
class ReferenceView:
    """A selected satellite candidate: its pose and its reconstructed points."""

    tile_id: str
    pose: SE3Pose
    points: PointCloud


def merge_reference(cloud: PointCloud, reference: ReferenceView, conf_threshold: float) -> PointCloud:
    """Scene cloud plus the reference's points with confidence >= threshold."""
    keep = reference.points.confidence >= conf_threshold
    return cloud.concat(reference.points.subset(keep))


@dataclass
class RefinementTrace:
    views: list = field(default_factory=list)       # BevView per iteration, [0] is initial
    references: list = field(default_factory=list)  # ReferenceView chosen before each step


def refine_bev(
    cloud: PointCloud,
    plane: Plane,
    initial_yaw,
    choose_reference: Callable[[BevView], ReferenceView],
    iteration_budget: int = 2,
    conf_threshold: float = 0.0,
    width: int = DEFAULT_SIZE,
    height: int = DEFAULT_SIZE,
) -> RefinementTrace:
    """Iteratively re-render the BEV around a chosen satellite reference.

    Each step asks ``choose_reference`` for a reference given the current
    view, merges that reference's confident points into the *original* scene
    cloud and re-renders with the reference's x-axis as yaw. Merging against
    the original cloud makes a step with an unchanged reference idempotent.
    """
    trace = RefinementTrace()
    view = render_bev(cloud, plane, initial_yaw, width, height)
    trace.views.append(view)
    for _ in range(iteration_budget):
        ref = choose_reference(view)
        trace.references.append(ref)
        merged = merge_reference(cloud, ref, conf_threshold)
        view = render_bev(merged, plane, ref.pose.rotation[:, 0], width, height)
        trace.views.append(view)
    return trace
