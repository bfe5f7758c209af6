"""Point clouds, rigid poses and robust ground-plane estimation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateCloud, InputError, NoConsensus

ORTHO_TOL = 1e-9
COLLINEAR_TOL = 1e-9


def _frozen(a, dtype=np.float64) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Reconstructed scene points with per-point color and confidence."""

    positions: np.ndarray
    colors: np.ndarray
    confidence: np.ndarray

    def __post_init__(self):
        pos = _frozen(self.positions).reshape(-1, 3)
        n = len(pos)
        col = _frozen(self.colors).reshape(-1, 3)
        conf = _frozen(self.confidence).reshape(-1)
        if len(col) != n or len(conf) != n:
            raise InputError(
                f"point cloud arrays disagree in length: {n}, {len(col)}, {len(conf)}")
        if not (np.isfinite(pos).all() and np.isfinite(col).all() and np.isfinite(conf).all()):
            raise InputError("point cloud contains non-finite values")
        if n and (conf.min() < 0.0 or conf.max() > 1.0):
            raise InputError("confidence values must lie in [0, 1]")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "colors", col)
        object.__setattr__(self, "confidence", conf)

    def __len__(self) -> int:
        return len(self.positions)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))

    def subset(self, mask) -> "PointCloud":
        return PointCloud(self.positions[mask], self.colors[mask], self.confidence[mask])

    def concat(self, other: "PointCloud") -> "PointCloud":
        return PointCloud(
            np.vstack([self.positions, other.positions]),
            np.vstack([self.colors, other.colors]),
            np.concatenate([self.confidence, other.confidence]),
        )

    def centroid(self) -> np.ndarray:
        return self.positions.mean(axis=0)


@dataclass(frozen=True, eq=False)
class SE3Pose:
    """Rigid transform ``x -> R @ x + t``.

    Camera poses use the camera-to-world convention, so ``translation`` is the
    camera center and ``rotation`` holds the camera axes as columns.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = _frozen(self.rotation).reshape(3, 3)
        t = _frozen(self.translation).reshape(3)
        if not (np.isfinite(R).all() and np.isfinite(t).all()):
            raise InputError("pose contains non-finite values")
        if np.abs(R.T @ R - np.eye(3)).max() > ORTHO_TOL:
            raise InputError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise InputError("rotation has det != 1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "SE3Pose":
        return cls(np.eye(3), np.zeros(3))

    def inverse(self) -> "SE3Pose":
        Rt = self.rotation.T
        return SE3Pose(Rt, -Rt @ self.translation)

    def compose(self, other: "SE3Pose") -> "SE3Pose":
        """``self ∘ other``: apply ``other`` first."""
        return SE3Pose(self.rotation @ other.rotation,
                       self.rotation @ other.translation + self.translation)

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SE3Pose":
        return cls(np.asarray(d["rotation"], dtype=np.float64),
                   np.asarray(d["translation"], dtype=np.float64))


def orthonormalize(R) -> np.ndarray:
    """Nearest rotation matrix (SVD projection)."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=np.float64))
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] *= -1
        Q = U @ Vt
    return Q


@dataclass(frozen=True, eq=False)
class Plane:
    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = _frozen(self.normal).reshape(3)
        if abs(np.linalg.norm(n) - 1.0) > ORTHO_TOL:
            raise InputError("plane normal must be unit length")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset))

    def signed_distance(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.normal + self.offset

    def flipped(self) -> "Plane":
        return Plane(-self.normal, -self.offset)

    def project(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p - np.outer(self.signed_distance(p), self.normal)

    def to_dict(self) -> dict:
        return {"normal": self.normal.tolist(), "offset": self.offset}


def transform_points(cloud: PointCloud, pose: SE3Pose) -> PointCloud:
    return PointCloud(pose.apply(cloud.positions), cloud.colors, cloud.confidence)


def _lstsq_plane(points: np.ndarray) -> tuple[np.ndarray, float]:
    c = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - c, full_matrices=False)
    n = vt[-1]
    n = n / np.linalg.norm(n)
    return n, float(-n @ c)


def _draw_samples(rng: np.random.Generator, n_points: int, count: int) -> np.ndarray:
    """``count`` index triples of distinct points."""
    idx = np.empty((count, 3), dtype=np.int64)
    for i in range(count):
        idx[i] = rng.choice(n_points, size=3, replace=False)
    return idx


def fit_ground_plane(
    cloud: PointCloud,
    inlier_threshold: float = 0.1,
    max_iterations: int = 1024,
    seed: int = 0,
    camera_center: Optional[np.ndarray] = None,
    chunk: int = 64,
) -> tuple[Plane, np.ndarray]:
    """RANSAC ground plane with a least-squares refit on the consensus set.

    Hypotheses come from 3-point samples; samples whose centered singular
    values show rank < 2 are redrawn. The winning consensus set is refit by
    total least squares and the returned mask is recomputed against the refit
    plane, so every reported inlier is within ``inlier_threshold``.

    The normal is oriented towards ``camera_center`` when given; otherwise
    towards the side holding most of the off-plane points.
    """
    if inlier_threshold <= 0:
        raise InputError("inlier_threshold must be positive")
    P = cloud.positions
    n_pts = len(P)
    if n_pts < 3:
        raise DegenerateCloud(f"need at least 3 points, got {n_pts}")
    sv = np.linalg.svd(P - P.mean(axis=0), compute_uv=False)
    if sv[1] < COLLINEAR_TOL * max(1.0, sv[0]):
        raise DegenerateCloud("points are collinear or coincident")

    rng = np.random.default_rng(seed)
    best_count = -1
    best_n = None
    best_d = 0.0
    done = 0
    draws = 0
    max_draws = 10 * max_iterations + 100
    while done < max_iterations and draws < max_draws:
        m = min(chunk, max_iterations - done)
        idx = _draw_samples(rng, n_pts, m)
        draws += m
        tri = P[idx]                                   # (m, 3, 3)
        centered = tri - tri.mean(axis=1, keepdims=True)
        s = np.linalg.svd(centered, compute_uv=False)  # (m, 3)
        ok = s[:, 1] >= COLLINEAR_TOL
        if not ok.any():
            continue
        tri = tri[ok]
        normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        offsets = -np.einsum("ij,ij->i", normals, tri[:, 0])
        counts = (np.abs(P @ normals.T + offsets) <= inlier_threshold).sum(axis=0)
        j = int(np.argmax(counts))
        if counts[j] > best_count:
            best_count = int(counts[j])
            best_n, best_d = normals[j], float(offsets[j])
        done += len(tri)

    if best_n is None or best_count < 3:
        raise NoConsensus(f"best consensus set has {max(best_count, 0)} points")

    inliers = np.abs(P @ best_n + best_d) <= inlier_threshold
    n, d = _lstsq_plane(P[inliers])
    mask = np.abs(P @ n + d) <= inlier_threshold
    if mask.sum() < 3:
        # refit drifted away from a thin consensus set; keep the sampled plane
        n, d, mask = best_n, best_d, inliers

    plane = Plane(n, d)
    if camera_center is not None:
        if plane.signed_distance(np.asarray(camera_center, dtype=np.float64)) < 0:
            plane = plane.flipped()
    else:
        off = plane.signed_distance(P[~mask])
        if (off > 0).sum() < (off < 0).sum():
            plane = plane.flipped()
    mask.setflags(write=False)
    return plane, mask
