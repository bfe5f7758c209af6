"""Retrieval and localization metrics."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import EmptyResults, InputError, NoRelevant, ZoneMismatch
from .georegistration import AbsolutePose, GeoTile

# intersections thinner than this (meters) count as touching, not overlapping
EDGE_TOL_M = 1e-6

DEFAULT_KS = (1, 5, 10)
DEFAULT_TAUS = (0.1, 0.2, 0.5, 0.8, 1.0)
DEFAULT_MSR_THRESHOLDS = (1.0, 3.0, 5.0, 10.0, 20.0, 50.0, 100.0)


@dataclass(frozen=True)
class RankedResult:
    query_id: str
    ranked: tuple
    ground_truth: str

    def __post_init__(self):
        ranked = tuple(str(r) for r in self.ranked)
        if len(set(ranked)) != len(ranked):
            raise InputError(f"query {self.query_id!r}: ranked ids are not unique")
        object.__setattr__(self, "ranked", ranked)

    def rank_of(self, tile_id: str) -> Optional[int]:
        """1-based rank, or None when absent."""
        try:
            return self.ranked.index(tile_id) + 1
        except ValueError:
            return None


def recall_at_k(results: Sequence[RankedResult], k: int) -> float:
    if not results:
        raise EmptyResults("no results")
    if k < 1:
        raise InputError("k must be >= 1")
    hits = sum(r.ground_truth in r.ranked[:k] for r in results)
    return hits / len(results)


def average_precision(result: RankedResult, relevant_ids: Iterable[str]) -> float:
    """Mean of precision at each relevant hit, over all relevant items.

    Relevant items missing from the ranking contribute zero.
    """
    relevant = set(relevant_ids)
    if not relevant:
        raise NoRelevant(f"query {result.query_id!r} has no relevant items")
    hits = 0
    total = 0.0
    for rank, tile_id in enumerate(result.ranked, start=1):
        if tile_id in relevant:
            hits += 1
            total += hits / rank
    return total / len(relevant)


def mean_average_precision(results: Sequence[RankedResult],
                           relevant: Optional[Mapping[str, Iterable[str]]] = None) -> float:
    if not results:
        raise EmptyResults("no results")
    aps = [average_precision(r, relevant[r.query_id] if relevant else {r.ground_truth})
           for r in results]
    return float(np.mean(aps))


def footprint_iou(a: tuple, b: tuple) -> float:
    w = min(a[2], b[2]) - max(a[0], b[0])
    h = min(a[3], b[3]) - max(a[1], b[1])
    if w <= EDGE_TOL_M or h <= EDGE_TOL_M:
        return 0.0
    inter = w * h
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union)


def tile_iou(a: GeoTile, b: GeoTile) -> float:
    if a.utm_zone != b.utm_zone:
        raise ZoneMismatch(f"tiles {a.tile_id!r} ({a.utm_zone}) and {b.tile_id!r} ({b.utm_zone})")
    if a.tile_id == b.tile_id:
        return 1.0
    return footprint_iou(a.footprint(), b.footprint())


def iou_recall_at_k(results: Sequence[RankedResult], gallery: Mapping[str, GeoTile],
                    tau: float, k: int) -> float:
    """Share of queries with some top-k candidate at IoU >= tau against the GT tile."""
    if not results:
        raise EmptyResults("no results")
    if not 0.0 < tau <= 1.0:
        raise InputError("tau must be in (0, 1]")
    if k < 1:
        raise InputError("k must be >= 1")
    hits = 0
    for r in results:
        gt = gallery[r.ground_truth]
        if any(c == r.ground_truth or tile_iou(gallery[c], gt) >= tau for c in r.ranked[:k]):
            hits += 1
    return hits / len(results)


def position_error(pred: AbsolutePose, gt: AbsolutePose) -> float:
    if pred.zone != gt.zone:
        raise ZoneMismatch(f"prediction in {pred.zone}, ground truth in {gt.zone}")
    return float(np.hypot(pred.easting - gt.easting, pred.northing - gt.northing))


def heading_error(pred: float, gt: float) -> float:
    d = abs(float(pred) - float(gt)) % 360.0
    return min(d, 360.0 - d)


def msr_curve(errors: Sequence[float], thresholds: Sequence[float]) -> list[float]:
    if len(errors) == 0:
        raise EmptyResults("no errors")
    e = np.asarray(errors, dtype=np.float64)
    return [float(np.mean(e <= x)) for x in thresholds]


def overlap_counts(gallery: Sequence[GeoTile], scene_tile_ids: Sequence[str]) -> list[int]:
    """Per scene: gallery tiles overlapping its GT tile, the GT tile included."""
    by_id = {t.tile_id: t for t in gallery}
    return [sum(tile_iou(t, by_id[gid]) > 0.0 for t in gallery) for gid in scene_tile_ids]


def overlap_histogram(gallery: Sequence[GeoTile], scene_tile_ids: Sequence[str]) -> dict[int, int]:
    return dict(sorted(Counter(overlap_counts(gallery, scene_tile_ids)).items()))


@dataclass
class EvalReport:
    recall: dict = field(default_factory=dict)          # k -> R@k
    mean_ap: float = 0.0
    iou_recall: dict = field(default_factory=dict)      # "tau@k" -> rate
    gpe_mean: Optional[float] = None
    gpe_median: Optional[float] = None
    he_mean: Optional[float] = None
    he_median: Optional[float] = None
    msr: dict = field(default_factory=dict)             # threshold -> rate
    overlap_histogram: dict = field(default_factory=dict)
    query_count: int = 0
    frame_count: int = 0

    def to_dict(self) -> dict:
        return {
            "query_count": self.query_count,
            "frame_count": self.frame_count,
            "recall": {f"R@{k}": v for k, v in self.recall.items()},
            "mAP": self.mean_ap,
            "iou_recall": self.iou_recall,
            "gpe_m": {"mean": self.gpe_mean, "median": self.gpe_median},
            "heading_error_deg": {"mean": self.he_mean, "median": self.he_median},
            "msr": {f"MSR@{x:g}": v for x, v in self.msr.items()},
            "overlap_histogram": {str(k): v for k, v in self.overlap_histogram.items()},
        }


def evaluate(results: Sequence[RankedResult], gallery: Sequence[GeoTile],
             pose_pairs: Sequence[tuple[AbsolutePose, AbsolutePose]] = (),
             ks: Sequence[int] = DEFAULT_KS, taus: Sequence[float] = DEFAULT_TAUS,
             msr_thresholds: Sequence[float] = DEFAULT_MSR_THRESHOLDS) -> EvalReport:
    by_id = {t.tile_id: t for t in gallery}
    report = EvalReport(query_count=len(results), frame_count=len(pose_pairs))
    report.recall = {k: recall_at_k(results, k) for k in ks}
    report.mean_ap = mean_average_precision(results)
    report.iou_recall = {f"tau={t:g}@{k}": iou_recall_at_k(results, by_id, t, k)
                         for t in taus for k in ks}
    if pose_pairs:
        gpe = [position_error(p, g) for p, g in pose_pairs]
        he = [heading_error(p.heading, g.heading) for p, g in pose_pairs]
        report.gpe_mean, report.gpe_median = float(np.mean(gpe)), float(np.median(gpe))
        report.he_mean, report.he_median = float(np.mean(he)), float(np.median(he))
        report.msr = dict(zip(msr_thresholds, msr_curve(gpe, msr_thresholds)))
    report.overlap_histogram = overlap_histogram(gallery, [r.ground_truth for r in results])
    return report
