"""Segment graph construction: overlap and adjacency edges.

Two segments in different views are linked by an overlap edge when their
point-set IoU exceeds ``tau_iou``; pairs with negligible overlap are linked
by an adjacency edge when their closest points come within ``tau_adj`` in the
normalized space.  The two edge sets are mutually exclusive by construction.

The accelerated builder prunes candidate pairs through a shared-point index
and a uniform spatial hash grid of cell size ``tau_adj``; pruning never
changes the result, which ``build_segment_graph_bruteforce`` checks by
evaluating every pair directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import GraphIndexError
from .masks import Segment, SegmentSet

TAU_IOU = 0.10
TAU_ADJ = 0.01


@dataclass(frozen=True)
class SegmentGraph:
    node_count: int
    overlap_edges: np.ndarray  # (E_o, 2) int64, each row sorted, rows lex-sorted
    adjacency_edges: np.ndarray  # (E_a, 2) int64

    def validate(self, view_ids: np.ndarray) -> None:
        for name, edges in (("overlap", self.overlap_edges), ("adjacency", self.adjacency_edges)):
            if len(edges) == 0:
                continue
            if edges.min() < 0 or edges.max() >= self.node_count:
                raise GraphIndexError(f"{name} edge references a node outside [0, {self.node_count})")
            if np.any(edges[:, 0] == edges[:, 1]):
                raise GraphIndexError(f"{name} edges contain a self-edge")
        o = {tuple(e) for e in self.overlap_edges.tolist()}
        a = {tuple(e) for e in self.adjacency_edges.tolist()}
        if o & a:
            raise GraphIndexError("overlap and adjacency edges are not disjoint")
        for i, j in o:
            if view_ids[i] == view_ids[j]:
                raise GraphIndexError(f"overlap edge ({i}, {j}) joins two segments of view {view_ids[i]}")


def point_set_iou(a: Segment, b: Segment) -> float:
    inter = len(np.intersect1d(a.point_ids, b.point_ids, assume_unique=True))
    union = len(a.point_ids) + len(b.point_ids) - inter
    return inter / union


def _cells(points: np.ndarray, cell: float) -> np.ndarray:
    return np.floor(points / cell).astype(np.int64)


def _grid_index(points: np.ndarray, cell: float) -> dict[tuple, np.ndarray]:
    cells = _cells(points, cell)
    index: dict[tuple, list[int]] = {}
    for i, key in enumerate(map(tuple, cells)):
        index.setdefault(key, []).append(i)
    return {k: np.array(v, dtype=np.int64) for k, v in index.items()}


def min_pairwise_distance(a: Segment, b: Segment, positions: np.ndarray, cell: float = TAU_ADJ) -> float:
    """Exact minimum distance between the two segments' point sets.

    A hash grid of the given cell size resolves near pairs with early exit;
    when no pair falls within one cell, the exact answer comes from a direct
    pass over the remaining combinations.
    """
    pa = positions[a.point_ids]
    pb = positions[b.point_ids]
    index = _grid_index(pb, cell)
    best = np.inf
    cells_a = _cells(pa, cell)
    for i, key in enumerate(map(tuple, cells_a)):
        neighbors = [
            index.get((key[0] + dx, key[1] + dy, key[2] + dz))
            for dx in (-1, 0, 1)
            for dy in (-1, 0, 1)
            for dz in (-1, 0, 1)
        ]
        cand = [c for c in neighbors if c is not None]
        if not cand:
            continue
        cand = np.concatenate(cand)
        d = np.min(np.linalg.norm(pb[cand] - pa[i], axis=1))
        best = min(best, float(d))
        if best == 0.0:
            return 0.0
    if best < cell:
        # any pair closer than one cell lives in a same-or-adjacent cell,
        # so a sub-cell result from the grid pass is already exact
        return best
    block = 1024
    for s in range(0, len(pa), block):
        diff = pa[s : s + block, None, :] - pb[None, :, :]
        best = min(best, float(np.sqrt((diff * diff).sum(axis=2)).min()))
    return best


def _has_pair_within(pa: np.ndarray, index: dict[tuple, np.ndarray], pb: np.ndarray, tau: float, cell: float) -> bool:
    for i, key in enumerate(map(tuple, _cells(pa, cell))):
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    cand = index.get((key[0] + dx, key[1] + dy, key[2] + dz))
                    if cand is None:
                        continue
                    d2 = ((pb[cand] - pa[i]) ** 2).sum(axis=1)
                    if d2.min() < tau * tau:
                        return True
    return False


def _finalize(edges: set[tuple[int, int]]) -> np.ndarray:
    if not edges:
        return np.zeros((0, 2), dtype=np.int64)
    arr = np.array(sorted(edges), dtype=np.int64)
    return arr


def build_segment_graph(
    segs: SegmentSet,
    cloud,
    tau_iou: float = TAU_IOU,
    tau_adj: float = TAU_ADJ,
) -> SegmentGraph:
    """Build the segment graph with shared-point and grid pruning."""
    g = segs.num_segments
    if g == 0:
        return SegmentGraph(node_count=0, overlap_edges=_finalize(set()), adjacency_edges=_finalize(set()))
    positions = cloud.positions
    views = segs.view_ids()

    candidates: set[tuple[int, int]] = set()
    for member_of in segs.point_memberships:
        for i, j in combinations(sorted(member_of), 2):
            candidates.add((i, j))

    cell = tau_adj
    seg_cells: list[set[tuple]] = []
    cell_to_segs: dict[tuple, set[int]] = {}
    for s in segs.segments:
        keys = set(map(tuple, _cells(positions[s.point_ids], cell)))
        seg_cells.append(keys)
        for key in keys:
            cell_to_segs.setdefault(key, set()).add(s.segment_id)
    for key, owners in cell_to_segs.items():
        near = set()
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    near |= cell_to_segs.get((key[0] + dx, key[1] + dy, key[2] + dz), set())
        for i in owners:
            for j in near:
                if i < j:
                    candidates.add((i, j))

    point_sets = [s.point_ids for s in segs.segments]
    grid_cache: dict[int, dict[tuple, np.ndarray]] = {}
    overlap: set[tuple[int, int]] = set()
    adjacency: set[tuple[int, int]] = set()
    for i, j in sorted(candidates):
        inter = len(np.intersect1d(point_sets[i], point_sets[j], assume_unique=True))
        union = len(point_sets[i]) + len(point_sets[j]) - inter
        iou = inter / union
        if views[i] != views[j] and iou > tau_iou:
            overlap.add((i, j))
            continue
        if iou > tau_iou:
            continue
        if inter > 0:
            adjacency.add((i, j))  # shared point: distance is zero
            continue
        small, large = (i, j) if len(point_sets[i]) <= len(point_sets[j]) else (j, i)
        if large not in grid_cache:
            grid_cache[large] = _grid_index(positions[point_sets[large]], cell)
        if _has_pair_within(positions[point_sets[small]], grid_cache[large], positions[point_sets[large]], tau_adj, cell):
            adjacency.add((i, j))

    graph = SegmentGraph(node_count=g, overlap_edges=_finalize(overlap), adjacency_edges=_finalize(adjacency))
    graph.validate(views)
    return graph


def build_segment_graph_bruteforce(
    segs: SegmentSet,
    cloud,
    tau_iou: float = TAU_IOU,
    tau_adj: float = TAU_ADJ,
) -> SegmentGraph:
    """Reference construction evaluating every unordered pair directly."""
    g = segs.num_segments
    positions = cloud.positions
    views = segs.view_ids()
    overlap: set[tuple[int, int]] = set()
    adjacency: set[tuple[int, int]] = set()
    for i in range(g):
        si = set(segs.segments[i].point_ids.tolist())
        for j in range(i + 1, g):
            sj = set(segs.segments[j].point_ids.tolist())
            inter = len(si & sj)
            union = len(si | sj)
            iou = inter / union
            if views[i] != views[j] and iou > tau_iou:
                overlap.add((i, j))
                continue
            if iou > tau_iou:
                continue
            pa = positions[segs.segments[i].point_ids]
            pb = positions[segs.segments[j].point_ids]
            diff = pa[:, None, :] - pb[None, :, :]
            dmin = float(np.sqrt((diff * diff).sum(axis=2)).min())
            if dmin < tau_adj:
                adjacency.add((i, j))
    return SegmentGraph(node_count=g, overlap_edges=_finalize(overlap), adjacency_edges=_finalize(adjacency))
