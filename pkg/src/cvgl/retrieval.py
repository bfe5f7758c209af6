"""GeM global descriptors and cosine top-k retrieval over a tile gallery."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .attention import TokenMatrix
from .errors import DuplicateTileId, EmptyGallery, EmptyTokens, InputError

DEFAULT_P = 3.0
NORM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class GlobalDescriptor:
    vector: np.ndarray

    def __post_init__(self):
        v = np.array(self.vector, dtype=np.float64, copy=True).reshape(-1)
        if abs(np.linalg.norm(v) - 1.0) > NORM_TOL:
            raise InputError("descriptor must be L2-normalized")
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)


def _as_array(tokens: Union[TokenMatrix, np.ndarray]) -> np.ndarray:
    if isinstance(tokens, TokenMatrix):
        return tokens.tokens
    return np.asarray(tokens, dtype=np.float64)


def gem(tokens: Union[TokenMatrix, np.ndarray], p: float = DEFAULT_P) -> np.ndarray:
    """Unnormalized generalized mean over tokens, per dimension.

    Tokens are clamped at zero first; the fractional root needs non-negative input.
    """
    t = _as_array(tokens)
    if t.ndim != 2 or t.shape[0] == 0:
        raise EmptyTokens("GeM pooling needs at least one token")
    if p <= 0:
        raise InputError("GeM exponent must be positive")
    t = np.clip(t, 0.0, None)
    return np.mean(t ** p, axis=0) ** (1.0 / p)


def gem_pool(tokens: Union[TokenMatrix, np.ndarray], p: float = DEFAULT_P) -> GlobalDescriptor:
    g = gem(tokens, p)
    norm = np.linalg.norm(g)
    if norm == 0.0:
        raise EmptyTokens("all tokens are zero after clamping; descriptor undefined")
    return GlobalDescriptor(g / norm)


@dataclass(frozen=True, eq=False)
class GalleryIndex:
    descriptors: np.ndarray
    tile_ids: tuple

    def __post_init__(self):
        d = np.array(self.descriptors, dtype=np.float64, copy=True)
        ids = tuple(str(i) for i in self.tile_ids)
        if d.ndim != 2 or len(d) != len(ids):
            raise InputError("descriptor rows and tile ids disagree")
        if len(set(ids)) != len(ids):
            seen = set()
            dup = next(i for i in ids if i in seen or seen.add(i))
            raise DuplicateTileId(f"duplicate tile id {dup!r}")
        if len(d) and np.abs(np.linalg.norm(d, axis=1) - 1.0).max() > NORM_TOL:
            raise InputError("gallery descriptors must be L2-normalized")
        d.setflags(write=False)
        object.__setattr__(self, "descriptors", d)
        object.__setattr__(self, "tile_ids", ids)

    def __len__(self) -> int:
        return len(self.tile_ids)

    @classmethod
    def build(cls, tile_ids: Sequence[str], descriptors: Sequence[GlobalDescriptor]) -> "GalleryIndex":
        if not descriptors:
            return cls(np.zeros((0, 0)), ())
        return cls(np.vstack([d.vector for d in descriptors]), tuple(tile_ids))


def rank_gallery(query: GlobalDescriptor, gallery: GalleryIndex) -> list[tuple[str, float]]:
    """Full ranking by cosine score, descending; ties by ascending tile id."""
    if len(gallery) == 0:
        raise EmptyGallery("gallery is empty")
    if gallery.descriptors.shape[1] != len(query.vector):
        raise InputError(
            f"query dim {len(query.vector)} != gallery dim {gallery.descriptors.shape[1]}")
    scores = gallery.descriptors @ query.vector
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], gallery.tile_ids[i]))
    return [(gallery.tile_ids[i], float(scores[i])) for i in order]


def retrieve_topk(query: GlobalDescriptor, gallery: GalleryIndex, k: int) -> list[tuple[str, float]]:
    if len(gallery) == 0:
        raise EmptyGallery("gallery is empty")
    if not 1 <= k <= len(gallery):
        raise InputError(f"k={k} must be in [1, {len(gallery)}]")
    return rank_gallery(query, gallery)[:k]
