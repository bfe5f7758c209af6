"""Containers for one query scene and for the satellite gallery."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .attention import TokenMatrix
from .errors import InputError
from .geometry import PointCloud, SE3Pose
from .georegistration import GeoTile
from .retrieval import GalleryIndex, gem_pool, DEFAULT_P


@dataclass(frozen=True, eq=False)
class Frame:
    tokens: TokenMatrix
    pose: SE3Pose


@dataclass(frozen=True, eq=False)
class CandidatePrediction:
    """Backbone output for one gallery tile registered against the scene.

    ``pose`` is the satellite frame (east, north, up axes) in scene
    coordinates; ``points`` are the tile's reconstructed points.
    """

    tile_id: str
    pose: SE3Pose
    points: PointCloud


@dataclass(eq=False)
class SceneBundle:
    frames: list
    cloud: PointCloud
    camera_centroid: np.ndarray
    candidates: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.frames:
            raise InputError("bundle has no frames")
        dims = {f.tokens.dim for f in self.frames}
        if len(dims) != 1:
            raise InputError(f"frame token dims differ: {sorted(dims)}")
        self.camera_centroid = np.asarray(self.camera_centroid, dtype=np.float64).reshape(3)

    @property
    def query_id(self) -> str:
        return str(self.metadata.get("query_id", "query"))

    @property
    def poses(self) -> list:
        return [f.pose for f in self.frames]

    def uav_tokens(self) -> TokenMatrix:
        return TokenMatrix(np.vstack([f.tokens.tokens for f in self.frames]), "uav")


@dataclass(eq=False)
class Gallery:
    tiles: list
    index: GalleryIndex
    features: dict = field(default_factory=dict)   # tile_id -> TokenMatrix (attention tokens)
    images: dict = field(default_factory=dict)     # tile_id -> TokenMatrix of pixel colors

    def __post_init__(self):
        self._by_id = {t.tile_id: t for t in self.tiles}

    def __len__(self) -> int:
        return len(self.tiles)

    def tile(self, tile_id: str) -> GeoTile:
        return self._by_id[tile_id]

    @property
    def by_id(self) -> dict:
        return dict(self._by_id)

    @classmethod
    def from_images(cls, tiles: list, images: dict, features: Optional[dict] = None,
                    p: float = DEFAULT_P) -> "Gallery":
        ids = [t.tile_id for t in tiles]
        index = GalleryIndex.build(ids, [gem_pool(images[i], p) for i in ids])
        return cls(list(tiles), index, dict(features or {}), dict(images))
