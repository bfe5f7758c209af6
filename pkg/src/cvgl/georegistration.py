"""Metric scale recovery and absolute 3-DoF geo-registration.

The satellite reference frame is a local east-north-up frame anchored at the
tile center: its camera x axis points east, y north, z up. Headings are
measured in that frame counter-clockwise from east, in degrees [0, 360).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Union

import numpy as np

from .errors import DegenerateExtent, InputError, VerticalOpticalAxis, ZoneMismatch
from .geometry import PointCloud, SE3Pose
from .utm import MAX_LAT, UtmZone, latlon_to_utm, utm_to_latlon

AXIS_TOL = 1e-9
OPTICAL_AXIS = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class GeoTile:
    """Satellite gallery tile; ``origin_lat``/``origin_lon`` is the tile center."""

    tile_id: str
    origin_lat: float
    origin_lon: float
    delta: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise InputError(f"tile {self.tile_id!r}: ground resolution must be > 0")
        if not abs(self.origin_lat) <= MAX_LAT:
            raise InputError(f"tile {self.tile_id!r}: |lat| must be <= {MAX_LAT}")
        if self.width < 1 or self.height < 1:
            raise InputError(f"tile {self.tile_id!r}: pixel size must be positive")

    @cached_property
    def utm(self) -> tuple[float, float, UtmZone]:
        return latlon_to_utm(self.origin_lat, self.origin_lon)

    @property
    def utm_zone(self) -> UtmZone:
        return self.utm[2]

    @property
    def footprint_m(self) -> tuple[float, float]:
        return self.width * self.delta, self.height * self.delta

    def footprint(self) -> tuple[float, float, float, float]:
        """Axis-aligned (emin, nmin, emax, nmax) in the tile's UTM zone."""
        e0, n0, _ = self.utm
        w, h = self.footprint_m
        return e0 - w / 2, n0 - h / 2, e0 + w / 2, n0 + h / 2


@dataclass(frozen=True)
class AbsolutePose:
    easting: float
    northing: float
    lat: float
    lon: float
    heading: float
    frame_index: int
    zone: str

    def to_dict(self) -> dict:
        return {
            "frame_index": self.frame_index,
            "easting": self.easting,
            "northing": self.northing,
            "lat": self.lat,
            "lon": self.lon,
            "heading_deg": self.heading,
            "utm_zone": self.zone,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AbsolutePose":
        return cls(float(d["easting"]), float(d["northing"]), float(d["lat"]), float(d["lon"]),
                   float(d["heading_deg"]), int(d["frame_index"]), str(d["utm_zone"]))


def estimate_scale(sat_points: Union[PointCloud, np.ndarray], tile: GeoTile) -> float:
    """Meters per scene unit from the tile's physical diagonal.

    The point extent is the L2 norm of the per-coordinate (max - min) vector,
    so ``sat_points`` should be expressed in the satellite frame.
    """
    p = sat_points.positions if isinstance(sat_points, PointCloud) else np.asarray(sat_points, float)
    if len(p) < 2:
        raise DegenerateExtent("need at least two satellite points")
    extent = float(np.linalg.norm(p.max(axis=0) - p.min(axis=0)))
    if extent <= 0.0:
        raise DegenerateExtent("satellite points have zero extent")
    w, h = tile.footprint_m
    return math.hypot(w, h) / extent


def relative_translation(uav_pose: SE3Pose, sat_pose: SE3Pose, alpha: float) -> np.ndarray:
    """Metric (east, north, up) offset of the UAV from the tile center."""
    if not alpha > 0:
        raise InputError("scale must be positive")
    return alpha * sat_pose.rotation.T @ (uav_pose.translation - sat_pose.translation)


def heading_deg(uav_pose: SE3Pose, sat_pose: SE3Pose) -> float:
    z = sat_pose.rotation.T @ (uav_pose.rotation @ OPTICAL_AXIS)
    if math.hypot(z[0], z[1]) < AXIS_TOL:
        raise VerticalOpticalAxis("optical axis is vertical; heading undefined")
    return math.degrees(math.atan2(z[1], z[0])) % 360.0


def absolute_pose(t_rel, uav_pose: SE3Pose, sat_pose: SE3Pose, tile: GeoTile,
                  frame_index: int = 0) -> AbsolutePose:
    e0, n0, zone = tile.utm
    e = e0 + float(t_rel[0])
    n = n0 + float(t_rel[1])
    lat, lon = utm_to_latlon(e, n, zone)
    heading = heading_deg(uav_pose, sat_pose)
    # a value like 359.99999999999997 rounds to 360.0 in printing; keep [0, 360)
    if heading >= 360.0:
        heading = 0.0
    return AbsolutePose(e, n, lat, lon, heading, frame_index, str(zone))


def require_same_zone(*zones) -> str:
    names = {str(z) for z in zones}
    if len(names) > 1:
        raise ZoneMismatch(f"coordinates span UTM zones {sorted(names)}")
    return names.pop()
