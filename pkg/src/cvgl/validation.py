"""Candidate validation: geometric consistency and feature similarity."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .attention import TokenMatrix
from .bev import BevCamera
from .errors import DimensionMismatch, EmptyCandidateSet, InputError
from .geometry import PointCloud, SE3Pose

DEFAULT_CONF_FRACTION = 0.2
STRATEGIES = ("geometric", "feature")


@dataclass(frozen=True, eq=False)
class CandidateEvaluation:
    tile_id: str
    sat_pose: SE3Pose
    local_offset: np.ndarray
    valid_point_count: int
    planar_distance: float
    geometric_score: float = 0.0
    feature_score: float = 0.0
    softmax_prob: float = 0.0
    retrieval_score: float = 0.0

    def to_row(self) -> dict:
        return {
            "tile_id": self.tile_id,
            "retrieval_score": self.retrieval_score,
            "valid_point_count": self.valid_point_count,
            "planar_distance": self.planar_distance,
            "geometric_score": self.geometric_score,
            "feature_score": self.feature_score,
            "softmax_prob": self.softmax_prob,
            "offset_x": float(self.local_offset[0]),
            "offset_y": float(self.local_offset[1]),
            "offset_z": float(self.local_offset[2]),
        }


def project_candidate_offset(sat_pose: SE3Pose, bev_cam: BevCamera) -> np.ndarray:
    """``R_BEV^T (T_sat - T_BEV)``: the candidate translation under the inverse BEV transform."""
    return bev_cam.rotation.T @ (sat_pose.translation - bev_cam.translation)


def planar_distance(sat_pose: SE3Pose, bev_cam: BevCamera) -> float:
    """Horizontal distance between the candidate center and the BEV center, in BEV axes."""
    v = bev_cam.pose.apply(sat_pose.translation)
    return float(np.hypot(v[0], v[1]))


def confidence_threshold(cloud: PointCloud, fraction: float = DEFAULT_CONF_FRACTION) -> float:
    if len(cloud) == 0:
        return 0.0
    return fraction * float(cloud.confidence.max())


def evaluate_candidate(tile_id: str, sat_pose: SE3Pose, sat_points: PointCloud,
                       bev_cam: BevCamera, conf_threshold: float,
                       retrieval_score: float = 0.0) -> CandidateEvaluation:
    return CandidateEvaluation(
        tile_id=tile_id,
        sat_pose=sat_pose,
        local_offset=project_candidate_offset(sat_pose, bev_cam),
        valid_point_count=int((sat_points.confidence >= conf_threshold).sum()),
        planar_distance=planar_distance(sat_pose, bev_cam),
        retrieval_score=retrieval_score,
    )


def geometric_scores(evals: Sequence[CandidateEvaluation]) -> list[CandidateEvaluation]:
    """Coverage share minus normalized distance.

    A zero total count zeroes the coverage term; a zero maximum distance
    zeroes the distance term.
    """
    if not evals:
        raise EmptyCandidateSet("no candidates to score")
    counts = np.array([e.valid_point_count for e in evals], dtype=np.float64)
    dists = np.array([e.planar_distance for e in evals], dtype=np.float64)
    total, dmax = counts.sum(), dists.max()
    coverage = counts / total if total > 0 else np.zeros_like(counts)
    penalty = dists / dmax if dmax > 0 else np.zeros_like(dists)
    return [replace(e, geometric_score=float(c - p)) for e, c, p in zip(evals, coverage, penalty)]


def _normalize_rows(t: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(t, axis=1, keepdims=True)
    return t / np.where(norms > 0, norms, 1.0)


def feature_similarity(sat_tokens: TokenMatrix, uav_tokens: TokenMatrix) -> float:
    """Mean pairwise cosine similarity between two token sets.

    Equal to the dot product of the two mean unit tokens.
    """
    if sat_tokens.dim != uav_tokens.dim:
        raise DimensionMismatch(f"token dims differ: {sat_tokens.dim} vs {uav_tokens.dim}")
    a = _normalize_rows(sat_tokens.tokens).mean(axis=0)
    b = _normalize_rows(uav_tokens.tokens).mean(axis=0)
    return float(a @ b)


def candidate_feature_score(sat_tokens: TokenMatrix, frames: Sequence[TokenMatrix]) -> float:
    if not frames:
        raise InputError("need at least one UAV frame")
    return float(np.mean([feature_similarity(sat_tokens, f) for f in frames]))


def softmax(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    e = np.exp(s - s.max())
    return e / e.sum()


def _argmax_tie_low_id(values: np.ndarray, ids: Sequence[str]) -> int:
    best = values.max()
    return min((i for i in range(len(values)) if values[i] == best), key=lambda i: ids[i])


def with_probabilities(evals: Sequence[CandidateEvaluation], strategy: str = "feature") -> list[CandidateEvaluation]:
    """Attach softmax probabilities over the strategy's scores."""
    if not evals:
        raise EmptyCandidateSet("no candidates to select from")
    if strategy not in STRATEGIES:
        raise InputError(f"unknown strategy {strategy!r}")
    key = "geometric_score" if strategy == "geometric" else "feature_score"
    probs = softmax([getattr(e, key) for e in evals])
    return [replace(e, softmax_prob=float(p)) for e, p in zip(evals, probs)]


def select_reference(evals: Sequence[CandidateEvaluation], strategy: str = "feature",
                     ) -> CandidateEvaluation:
    """Highest-scoring candidate; exact ties go to the lowest tile id."""
    scored = with_probabilities(evals, strategy)
    key = "geometric_score" if strategy == "geometric" else "feature_score"
    values = np.array([getattr(e, key) for e in scored])
    return scored[_argmax_tie_low_id(values, [e.tile_id for e in scored])]

