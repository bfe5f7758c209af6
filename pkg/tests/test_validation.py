import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from cvgl.attention import TokenMatrix
from cvgl.bev import BevCamera, build_bev_camera
from cvgl.errors import EmptyCandidateSet, InputError
from cvgl.geometry import Plane, PointCloud, SE3Pose
from cvgl.pipeline import PipelineOptions, run_pipeline
from cvgl.sim import generate_scene
from cvgl.validation import (
    CandidateEvaluation,
    candidate_feature_score,
    confidence_threshold,
    evaluate_candidate,
    feature_similarity,
    geometric_scores,
    planar_distance,
    project_candidate_offset,
    select_reference,
    softmax,
    with_probabilities,
)


def cam_from(pose: SE3Pose) -> BevCamera:
    return BevCamera(pose, -pose.rotation.T @ pose.translation, -pose.rotation[2])


def ev(tile_id, count=0, dist=0.0, feat=0.0, geo=0.0):
    return CandidateEvaluation(tile_id, SE3Pose.identity(), np.zeros(3), count, dist,
                               geometric_score=geo, feature_score=feat)


def random_pose(rng):
    return SE3Pose(Rotation.random(random_state=int(rng.integers(1 << 31))).as_matrix(),
                   rng.normal(0, 3, 3))


class TestOffsets:
    def test_same_translation_gives_zero(self, rng):
        bev = random_pose(rng)
        sat = SE3Pose(random_pose(rng).rotation, bev.translation)
        assert np.allclose(project_candidate_offset(sat, cam_from(bev)), 0)

    def test_identity_rotation(self):
        bev = SE3Pose(np.eye(3), [1.0, 1.0, 1.0])
        sat = SE3Pose(np.eye(3), [2.0, 3.0, 4.0])
        assert np.allclose(project_candidate_offset(sat, cam_from(bev)), [1, 2, 3])

    def test_matches_explicit_inverse(self, rng):
        for _ in range(20):
            bev, sat = random_pose(rng), random_pose(rng)
            M = np.linalg.inv(bev.as_matrix())
            expected = M[:3, :3] @ sat.translation - M[:3, :3] @ bev.translation
            assert np.abs(project_candidate_offset(sat, cam_from(bev)) - expected).max() < 1e-10

    def test_planar_distance_ignores_height(self):
        c = PointCloud(np.array([[0, 0, 0], [2, 0, 0], [0, 2, 0.0]]), np.zeros((3, 3)), np.ones(3))
        cam = build_bev_camera(c, Plane(np.array([0, 0, 1.0]), 0.0), [1, 0, 0])
        sat = SE3Pose(np.eye(3), cam.center + [3, 4, -7])
        assert planar_distance(sat, cam) == pytest.approx(5.0)


class TestGeometricScores:
    def test_worked_example(self):
        out = geometric_scores([ev("a", 300, 0.0), ev("b", 100, 5.0)])
        assert [e.geometric_score for e in out] == pytest.approx([0.75, -0.75])

    def test_single_candidate(self):
        (e,) = geometric_scores([ev("a", 40, 2.0)])
        assert e.geometric_score == 0.0

    def test_all_at_center(self):
        out = geometric_scores([ev("a", 1, 0.0), ev("b", 3, 0.0)])
        assert [e.geometric_score for e in out] == pytest.approx([0.25, 0.75])

    def test_no_valid_points(self):
        out = geometric_scores([ev("a", 0, 1.0), ev("b", 0, 2.0)])
        assert [e.geometric_score for e in out] == pytest.approx([-0.5, -1.0])

    def test_empty(self):
        with pytest.raises(EmptyCandidateSet):
            geometric_scores([])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(1, 1000), st.floats(0.01, 100)), min_size=1, max_size=12))
    def test_bounded(self, rows):
        out = geometric_scores([ev(f"t{i}", c, d) for i, (c, d) in enumerate(rows)])
        assert all(-1 - 1e-12 <= e.geometric_score <= 1 + 1e-12 for e in out)

    def test_valid_count_uses_threshold(self):
        pts = PointCloud(np.zeros((4, 3)), np.zeros((4, 3)), np.array([0.1, 0.2, 0.3, 0.9]))
        cam = cam_from(SE3Pose.identity())
        assert evaluate_candidate("x", SE3Pose.identity(), pts, cam, 0.2).valid_point_count == 3

    def test_confidence_threshold_is_fraction_of_max(self):
        c = PointCloud(np.zeros((3, 3)), np.zeros((3, 3)), np.array([0.1, 0.5, 0.25]))
        assert confidence_threshold(c) == pytest.approx(0.1)


class TestFeatureSimilarity:
    def test_identical_single_token(self):
        t = TokenMatrix(np.array([[0.6, 0.8]]))
        assert feature_similarity(t, t) == pytest.approx(1.0)

    def test_orthogonal_sets(self):
        a = TokenMatrix(np.array([[1.0, 0, 0, 0], [0, 2.0, 0, 0]]))
        b = TokenMatrix(np.array([[0, 0, 3.0, 0], [0, 0, 0, 1.0]]))
        assert feature_similarity(a, b) == 0.0

    def test_matches_double_loop(self, rng):
        a, b = rng.normal(size=(7, 16)), rng.normal(size=(5, 16))
        total = 0.0
        for x in a:
            for y in b:
                total += x @ y / (np.linalg.norm(x) * np.linalg.norm(y))
        expected = total / (7 * 5)
        assert abs(feature_similarity(TokenMatrix(a), TokenMatrix(b)) - expected) < 1e-9

    def test_frames_averaged_equally(self, rng):
        sat = TokenMatrix(rng.normal(size=(4, 8)))
        frames = [TokenMatrix(rng.normal(size=(3, 8))) for _ in range(3)]
        expected = np.mean([feature_similarity(sat, f) for f in frames])
        assert candidate_feature_score(sat, frames) == pytest.approx(expected)

    def test_no_frames(self, rng):
        with pytest.raises(InputError):
            candidate_feature_score(TokenMatrix(np.ones((1, 2))), [])


class TestSelection:
    def test_single_candidate(self):
        assert select_reference([ev("only", feat=-3.0)]).tile_id == "only"

    def test_softmax_example(self):
        evals = [ev("a", feat=0.2), ev("b", feat=0.9), ev("c", feat=0.4)]
        chosen = select_reference(evals)
        expected = math.exp(0.9) / (math.exp(0.2) + math.exp(0.9) + math.exp(0.4))
        assert chosen.tile_id == "b"
        assert chosen.softmax_prob == pytest.approx(expected, rel=1e-12)

    def test_ties_to_lowest_id(self):
        assert select_reference([ev("z", feat=0.5), ev("m", feat=0.5), ev("q", feat=0.1)]).tile_id == "m"

    def test_geometric_strategy(self):
        evals = [ev("a", feat=0.9, geo=-0.2), ev("b", feat=0.1, geo=0.4)]
        assert select_reference(evals, "geometric").tile_id == "b"

    def test_unknown_strategy(self):
        with pytest.raises(InputError):
            select_reference([ev("a")], "vote")

    def test_empty(self):
        with pytest.raises(EmptyCandidateSet):
            select_reference([])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=10), st.randoms(use_true_random=False))
    def test_probabilities_and_order_invariance(self, scores, rnd):
        evals = [ev(f"t{i:02d}", feat=s) for i, s in enumerate(scores)]
        probs = [e.softmax_prob for e in with_probabilities(evals)]
        assert abs(sum(probs) - 1) < 1e-9
        assert int(np.argmax(probs)) == int(np.argmax(scores))
        shuffled = list(evals)
        rnd.shuffle(shuffled)
        assert select_reference(shuffled).tile_id == select_reference(evals).tile_id

    def test_softmax_stable_for_large_scores(self):
        p = softmax([1000.0, 1000.0])
        assert np.allclose(p, [0.5, 0.5])


@pytest.mark.slow
def test_feature_strategy_picks_true_tile():
    seeds = range(20)
    hits = 0
    for seed in seeds:
        sb = generate_scene(seed=seed)
        res = run_pipeline(sb.bundle, sb.gallery, PipelineOptions(refine_iters=0))
        hits += res.stages[0].chosen == sb.gt_tile_id
    assert hits / len(seeds) >= 0.95
