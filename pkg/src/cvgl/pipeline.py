"""End-to-end localization: plane fit -> BEV -> retrieval -> satellite-wise
attention -> validation -> refinement -> geo-registration."""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .attention import AttentionWeights, satellite_wise_attention
from .bev import BevView, ReferenceView, default_yaw_reference, refine_bev
from .errors import InputError, NoCandidate
from .geometry import Plane, fit_ground_plane
from .georegistration import AbsolutePose, absolute_pose, estimate_scale, relative_translation
from .retrieval import DEFAULT_P, gem_pool, rank_gallery
from .scene import Gallery, SceneBundle
from .validation import (
    DEFAULT_CONF_FRACTION,
    STRATEGIES,
    candidate_feature_score,
    confidence_threshold,
    evaluate_candidate,
    geometric_scores,
    select_reference,
    with_probabilities,
)

log = logging.getLogger(__name__)

RESULT_VERSION = 1


@dataclass
class PipelineOptions:
    k: int = 10
    refine_iters: int = 2
    strategy: str = "feature"
    ransac_threshold: float = 0.1
    ransac_iterations: int = 1024
    seed: int = 0
    bev_size: int = 256
    gem_p: float = DEFAULT_P
    conf_fraction: float = DEFAULT_CONF_FRACTION
    weights: Optional[AttentionWeights] = None
    threads: Optional[int] = None

    def __post_init__(self):
        if self.k < 1:
            raise InputError("k must be >= 1")
        if self.refine_iters < 0:
            raise InputError("refine_iters must be >= 0")
        if self.strategy not in STRATEGIES:
            raise InputError(f"strategy must be one of {STRATEGIES}")


def thread_count(explicit: Optional[int] = None) -> int:
    if explicit:
        return max(1, int(explicit))
    raw = os.environ.get("CVGL_THREADS", "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise InputError(f"CVGL_THREADS must be an integer, got {raw!r}") from None


@dataclass
class Stage:
    """One retrieval + validation round."""

    ranking: list        # full gallery ranking [(tile_id, score)]
    evaluations: list    # CandidateEvaluation for the top-k
    chosen: str
    bev_center: np.ndarray


@dataclass
class LocalizationResult:
    query_id: str
    poses: list
    chosen_tile: str
    stages: list
    plane: Plane
    scale: float
    refine_iters: int
    strategy: str
    k: int
    wall_time_s: float = field(default=0.0, compare=False)

    @property
    def candidates(self) -> list:
        return self.stages[-1].evaluations

    @property
    def final_ranking(self) -> list:
        return self.stages[-1].ranking

    @property
    def initial_ranking(self) -> list:
        return self.stages[0].ranking

    def rank_of(self, tile_id: str, stage: int = -1) -> Optional[int]:
        for i, (tid, _) in enumerate(self.stages[stage].ranking, start=1):
            if tid == tile_id:
                return i
        return None

    def to_dict(self) -> dict:
        """Canonical content; wall time is deliberately left out."""
        return {
            "version": RESULT_VERSION,
            "query_id": self.query_id,
            "chosen_tile": self.chosen_tile,
            "refine_iterations": self.refine_iters,
            "strategy": self.strategy,
            "k": self.k,
            "scale_m_per_unit": self.scale,
            "plane": self.plane.to_dict(),
            "poses": [p.to_dict() for p in self.poses],
            "candidates": [e.to_row() for e in self.candidates],
            "retrieval": [
                {"iteration": i, "chosen": st.chosen,
                 "ranked": [{"tile_id": t, "score": s} for t, s in st.ranking[:self.k]]}
                for i, st in enumerate(self.stages)
            ],
        }


def run_pipeline(bundle: SceneBundle, gallery: Gallery,
                 options: Optional[PipelineOptions] = None) -> LocalizationResult:
    opts = options or PipelineOptions()
    if len(gallery) == 0:
        raise NoCandidate("gallery is empty")
    t0 = time.perf_counter()
    threads = thread_count(opts.threads)
    k = min(opts.k, len(gallery))

    plane, _ = fit_ground_plane(bundle.cloud, opts.ransac_threshold, opts.ransac_iterations,
                                opts.seed, camera_center=bundle.camera_centroid)
    tau = confidence_threshold(bundle.cloud, opts.conf_fraction)
    uav = bundle.uav_tokens()
    frame_tokens = [f.tokens for f in bundle.frames]
    weights = opts.weights or AttentionWeights.identity(uav.dim)
    stages: list[Stage] = []

    def choose(view: BevView) -> ReferenceView:
        ranking = rank_gallery(gem_pool(view.raster.tokens(), opts.gem_p), gallery.index)
        top = ranking[:k]
        missing = [t for t, _ in top if t not in bundle.candidates]
        if missing:
            raise InputError(f"bundle has no backbone prediction for candidate(s) {missing}")
        no_feat = [t for t, _ in top if t not in gallery.features]
        if no_feat:
            raise InputError(f"gallery has no feature tokens for candidate(s) {no_feat}")
        attended = satellite_wise_attention([gallery.features[t] for t, _ in top], uav, weights,
                                            max_workers=threads)
        evals = [evaluate_candidate(t, bundle.candidates[t].pose, bundle.candidates[t].points,
                                    view.camera, tau, score) for t, score in top]
        evals = geometric_scores(evals)
        evals = [replace(e, feature_score=candidate_feature_score(z, frame_tokens))
                 for e, z in zip(evals, attended)]
        evals = with_probabilities(evals, opts.strategy)
        # a candidate without confident points cannot anchor scale recovery
        eligible = [e for e in evals if e.valid_point_count > 0] or evals
        chosen = select_reference(eligible, opts.strategy)
        stages.append(Stage(ranking, evals, chosen.tile_id, view.center.copy()))
        pred = bundle.candidates[chosen.tile_id]
        return ReferenceView(chosen.tile_id, pred.pose, pred.points)

    yaw = default_yaw_reference(bundle.poses, plane)
    trace = refine_bev(bundle.cloud, plane, yaw, choose, opts.refine_iters, tau,
                       opts.bev_size, opts.bev_size)
    ref = choose(trace.views[-1])

    tile = gallery.tile(ref.tile_id)
    sat_pose = ref.pose
    confident = ref.points.subset(ref.points.confidence >= tau)
    alpha = estimate_scale(sat_pose.inverse().apply(confident.positions), tile)
    poses: list[AbsolutePose] = []
    for i, frame in enumerate(bundle.frames):
        t_rel = relative_translation(frame.pose, sat_pose, alpha)
        poses.append(absolute_pose(t_rel, frame.pose, sat_pose, tile, i))

    result = LocalizationResult(bundle.query_id, poses, ref.tile_id, stages, plane, alpha,
                                opts.refine_iters, opts.strategy, k)
    result.wall_time_s = time.perf_counter() - t0
    log.info("localized %s with tile %s in %.3fs", bundle.query_id, ref.tile_id, result.wall_time_s)
    return result
