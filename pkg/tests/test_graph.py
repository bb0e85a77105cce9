import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import random_cloud, random_segment_set
from seggraph.geometry import PointCloud
from seggraph.graph import (
    build_segment_graph,
    build_segment_graph_bruteforce,
    min_pairwise_distance,
    point_set_iou,
)
from seggraph.masks import Segment, SegmentSet


def seg_of(ids, seg_id=0, view=0):
    ids = np.asarray(sorted(ids), dtype=np.int64)
    return Segment(segment_id=seg_id, view_id=view, camera_position=np.array([0.0, 0, 2.2]),
                   point_ids=ids, centroid=np.zeros(3))


def set_of(segments, n):
    memberships = [[] for _ in range(n)]
    for s in segments:
        for p in s.point_ids:
            memberships[int(p)].append(s.segment_id)
    return SegmentSet(segments=segments, point_memberships=memberships)


class TestIoU:
    def test_identical(self):
        assert point_set_iou(seg_of([1, 2, 3]), seg_of([1, 2, 3])) == 1.0

    def test_disjoint(self):
        assert point_set_iou(seg_of([1, 2]), seg_of([3, 4])) == 0.0

    def test_half(self):
        assert point_set_iou(seg_of([1, 2, 3]), seg_of([2, 3, 4])) == 0.5


class TestMinDistance:
    def test_shared_point_is_zero(self):
        cloud = random_cloud(0, n=20)
        assert min_pairwise_distance(seg_of([0, 1, 2]), seg_of([2, 5]), cloud.positions) == 0.0

    def test_singletons(self):
        pts = np.array([[0.0, 0, 0], [0.3, 0.4, 0.0]])
        nrm = np.zeros((2, 3))
        nrm[:, 2] = 1
        cloud = PointCloud(positions=pts, normals=nrm)
        d = min_pairwise_distance(seg_of([0]), seg_of([1], seg_id=1), cloud.positions)
        assert d == pytest.approx(0.5, abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        cloud = random_cloud(seed + 100, n=220)
        a = seg_of(rng.choice(220, size=100, replace=False), seg_id=0)
        b = seg_of(rng.choice(220, size=100, replace=False), seg_id=1)
        pa, pb = cloud.positions[a.point_ids], cloud.positions[b.point_ids]
        brute = np.sqrt(((pa[:, None] - pb[None]) ** 2).sum(-1)).min()
        assert min_pairwise_distance(a, b, cloud.positions) == pytest.approx(brute, abs=1e-9)


def graphs_equal(a, b):
    return (
        a.node_count == b.node_count
        and np.array_equal(a.overlap_edges, b.overlap_edges)
        and np.array_equal(a.adjacency_edges, b.adjacency_edges)
    )


class TestBuild:
    def test_same_points_different_views_overlap(self):
        cloud = random_cloud(1, n=30)
        segs = set_of([seg_of(range(10), seg_id=0, view=0), seg_of(range(10), seg_id=1, view=1)], 30)
        g = build_segment_graph(segs, cloud)
        assert g.overlap_edges.tolist() == [[0, 1]]
        assert len(g.adjacency_edges) == 0

    def test_far_singletons_no_edge(self):
        pts = np.array([[0.0, 0, 0], [0.5, 0, 0]])
        nrm = np.zeros((2, 3))
        nrm[:, 2] = 1
        cloud = PointCloud(positions=pts, normals=nrm)
        segs = set_of([seg_of([0], seg_id=0, view=0), seg_of([1], seg_id=1, view=1)], 2)
        g = build_segment_graph(segs, cloud)
        assert len(g.overlap_edges) == 0 and len(g.adjacency_edges) == 0

    def test_empty_set_gives_empty_graph(self):
        cloud = random_cloud(2, n=5)
        g = build_segment_graph(SegmentSet(segments=[], point_memberships=[[] for _ in range(5)]), cloud)
        assert g.node_count == 0

    def test_identical_points_same_view_not_overlap(self):
        # same-view high-IoU pairs cannot happen via decomposition, but the
        # builder guards the cross-view condition explicitly
        cloud = random_cloud(3, n=30)
        segs = set_of([seg_of(range(10), seg_id=0, view=2), seg_of(range(8), seg_id=1, view=2)], 30)
        g = build_segment_graph(segs, cloud)
        assert len(g.overlap_edges) == 0

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_bruteforce(self, seed):
        cloud = random_cloud(seed, n=150)
        segs = random_segment_set(seed, cloud, num_segments=30)
        fast = build_segment_graph(segs, cloud)
        brute = build_segment_graph_bruteforce(segs, cloud)
        assert graphs_equal(fast, brute)

    def test_deterministic(self):
        cloud = random_cloud(12, n=120)
        segs = random_segment_set(12, cloud, num_segments=25)
        a = build_segment_graph(segs, cloud)
        b = build_segment_graph(segs, cloud)
        assert graphs_equal(a, b)

    def test_mutual_exclusivity_and_cross_view(self):
        for seed in range(5):
            cloud = random_cloud(seed + 40, n=140)
            segs = random_segment_set(seed + 40, cloud, num_segments=40)
            g = build_segment_graph(segs, cloud)
            views = segs.view_ids()
            o = {tuple(e) for e in g.overlap_edges.tolist()}
            a = {tuple(e) for e in g.adjacency_edges.tolist()}
            assert not (o & a)
            assert all(views[i] != views[j] for i, j in o)

    def test_overlap_edges_scale_invariant(self):
        cloud = random_cloud(7, n=100)
        segs = random_segment_set(7, cloud, num_segments=20)
        g1 = build_segment_graph(segs, cloud)
        shrunk = PointCloud(positions=cloud.positions * 0.2, normals=cloud.normals)
        segs2 = random_segment_set(7, shrunk, num_segments=20)
        g2 = build_segment_graph(segs2, shrunk)
        assert np.array_equal(g1.overlap_edges, g2.overlap_edges)

    @given(st.integers(0, 300), st.integers(2, 26))
    def test_property_fast_equals_brute(self, seed, num_segments):
        cloud = random_cloud(seed, n=80)
        segs = random_segment_set(seed, cloud, num_segments=num_segments)
        assert graphs_equal(build_segment_graph(segs, cloud), build_segment_graph_bruteforce(segs, cloud))
