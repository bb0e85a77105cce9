"""The segment-graph network.

Per shape the forward pass:
  1. projects pooled point features to the working width,
  2. encodes each segment from its members' normals and normalized relative
     positions (max pool + additive attention over projected point features),
  3. propagates segment features through three layers of two GATv2 branches
     (overlap edges / adjacency edges) fused by a per-layer MLP with a
     residual connection,
  4. unpools segment features back to points with softmax weights driven by
     the |cos| between each point normal and the ray to the segment's camera,
  5. classifies fused point features with a two-layer head.

Ablation flags can replace segment encoding with mean pooling, quality
weighting with uniform averaging, drop either edge set, skip propagation, or
reduce the whole model to a point MLP on projected pooled features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .errors import ConfigurationError, DegenerateGeometryError
from .geometry import PointCloud
from .graph import SegmentGraph
from .masks import SegmentSet

EXTENT_EPS = 1e-6


@dataclass(frozen=True)
class ModelConfig:
    c: int = 96
    c_in: int = 768
    k: int = 2
    heads: int = 4
    quality_hidden: int = 16
    leaky_slope: float = 0.2
    gat_layers: int = 3

    def __post_init__(self):
        if self.c % self.heads != 0:
            raise ConfigurationError(f"width {self.c} not divisible by {self.heads} heads")
        if self.k < 1:
            raise ConfigurationError("need at least one class")


@dataclass(frozen=True)
class AblationFlags:
    mlp_baseline: bool = False
    no_segment_encoder: bool = False
    uniform_unpool: bool = False
    no_overlap_edges: bool = False
    no_adjacency_edges: bool = False
    no_graph: bool = False


def relative_normalize(positions: np.ndarray, point_ids: np.ndarray) -> np.ndarray:
    """Member positions relative to the segment centroid, scaled per axis by the
    segment extent (clamped below by EXTENT_EPS); components land in [-1, 1]."""
    pts = positions[point_ids]
    centroid = pts.mean(axis=0)
    extent = pts.max(axis=0) - pts.min(axis=0)
    return (pts - centroid) / np.maximum(extent, EXTENT_EPS)


def view_quality_raw(
    positions: np.ndarray,
    normals: np.ndarray,
    pair_point: np.ndarray,
    pair_cam: np.ndarray,
) -> np.ndarray:
    """|cos| between each member point's normal and the ray from the segment camera."""
    rel = positions[pair_point] - pair_cam
    dist = np.linalg.norm(rel, axis=1)
    if np.any(dist < 1e-9):
        raise DegenerateGeometryError("point coincides with a segment camera position")
    return np.abs((normals[pair_point] * (rel / dist[:, None])).sum(axis=1))


def _directed_edges(edges: np.ndarray, num_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Expand undirected pairs to both directions and append self-loops."""
    loops = np.arange(num_nodes, dtype=np.int64)
    if len(edges) == 0:
        return loops, loops
    tgt = np.concatenate([edges[:, 0], edges[:, 1], loops])
    src = np.concatenate([edges[:, 1], edges[:, 0], loops])
    return tgt, src


@dataclass
class ShapeBatch:
    """Constant per-shape inputs, precomputed once and reused every epoch."""

    name: str
    num_points: int
    num_segments: int
    bank: np.ndarray  # (N, c_in)
    labels: np.ndarray | None  # (N,) int64 with -1 sentinel
    pair_point: np.ndarray  # (P,)
    pair_seg: np.ndarray  # (P,)
    geom_in: np.ndarray  # (P, 6) [normal ; relative position]
    quality: np.ndarray  # (P, 1)
    seg_counts: np.ndarray  # (G,)
    edges_overlap: np.ndarray  # (E_o, 2)
    edges_adjacency: np.ndarray  # (E_a, 2)
    positions: np.ndarray  # (N, 3), kept for exports
    dtype: np.dtype = np.dtype(np.float32)


def build_shape_batch(
    name: str,
    cloud: PointCloud,
    bank_features: np.ndarray,
    segs: SegmentSet,
    graph: SegmentGraph,
    labels: np.ndarray | None = None,
    dtype=np.float32,
) -> ShapeBatch:
    g = segs.num_segments
    if graph.node_count != g:
        raise ConfigurationError(f"graph has {graph.node_count} nodes for {g} segments")
    pair_point, pair_seg = segs.membership_pairs()
    rel_chunks = [relative_normalize(cloud.positions, s.point_ids) for s in segs.segments]
    rel = np.concatenate(rel_chunks) if rel_chunks else np.zeros((0, 3))
    geom_in = np.concatenate([cloud.normals[pair_point], rel], axis=1) if g else np.zeros((0, 6))
    pair_cam = (
        np.concatenate([np.repeat(s.camera_position[None, :], len(s.point_ids), axis=0) for s in segs.segments])
        if g
        else np.zeros((0, 3))
    )
    quality = (
        view_quality_raw(cloud.positions, cloud.normals, pair_point, pair_cam)[:, None]
        if g
        else np.zeros((0, 1))
    )
    seg_counts = np.array([len(s.point_ids) for s in segs.segments], dtype=np.int64)
    # scale-normalize pooled features so backbone magnitude cannot saturate
    # the tanh layers; one scalar per shape keeps the pooling linearity intact
    rms = float(np.sqrt((bank_features.astype(np.float64) ** 2).mean()))
    bank = bank_features / max(rms, 1e-12)
    return ShapeBatch(
        name=name,
        num_points=cloud.num_points,
        num_segments=g,
        bank=bank.astype(dtype),
        labels=None if labels is None else np.asarray(labels, dtype=np.int64),
        pair_point=pair_point,
        pair_seg=pair_seg,
        geom_in=geom_in.astype(dtype),
        quality=quality.astype(dtype),
        seg_counts=seg_counts,
        edges_overlap=graph.overlap_edges,
        edges_adjacency=graph.adjacency_edges,
        positions=cloud.positions,
        dtype=np.dtype(dtype),
    )


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape: tuple, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_params(cfg: ModelConfig, seed: int, dtype=np.float32) -> ParamStore:
    """Seeded parameter store; creation order is fixed, so training is
    reproducible and checkpoints align by name."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5E6]))
    p = ParamStore()
    c, ci, k, h = cfg.c, cfg.c_in, cfg.k, cfg.heads
    hd = c // h

    def lin(name, fin, fout):
        p.add(f"{name}.w", _xavier(rng, fin, fout, (fin, fout), dtype))
        p.add(f"{name}.b", np.zeros(fout, dtype=dtype))

    lin("proj", ci, c)
    lin("geom.l1", 6, c)
    lin("geom.l2", c, c)
    p.add("attn.w_local", _xavier(rng, c, c, (c, c), dtype))
    p.add("attn.w_pooled", _xavier(rng, c, c, (c, c), dtype))
    p.add("attn.v", _xavier(rng, c, 1, (c,), dtype))
    for layer in range(1, cfg.gat_layers + 1):
        for kind in ("o", "a"):
            base = f"gat.{layer}.{kind}"
            p.add(f"{base}.w_dst", _xavier(rng, c, c, (c, c), dtype))
            p.add(f"{base}.w_src", _xavier(rng, c, c, (c, c), dtype))
            p.add(f"{base}.att", _xavier(rng, hd, 1, (h, hd), dtype))
        lin(f"gat.{layer}.fuse", 2 * c, c)
    lin("quality.l1", 1, cfg.quality_hidden)
    lin("quality.l2", cfg.quality_hidden, 1)
    lin("head.l1", c, c)
    lin("head.l2", c, k)
    return p


def _affine(p: ParamStore, name: str, x: Tensor) -> Tensor:
    return ad.add(ad.matmul(x, p[f"{name}.w"]), p[f"{name}.b"])


def encode_segments(
    p: ParamStore,
    geom_in: Tensor,
    pair_seg: np.ndarray,
    num_segments: int,
    point_feats_pairs: Tensor,
    seg_counts: np.ndarray,
    mean_pool: bool = False,
) -> Tensor:
    """Per-segment feature from member geometry and projected point features."""
    if mean_pool:
        inv = (1.0 / seg_counts).astype(point_feats_pairs.dtype)[:, None]
        return ad.mul(ad.scatter_add_rows(point_feats_pairs, pair_seg, num_segments), Tensor(inv))
    local = _affine(p, "geom.l2", ad.tanh(_affine(p, "geom.l1", geom_in)))
    pooled = ad.segmented_maxpool(local, pair_seg, num_segments)
    mixed = ad.tanh(
        ad.add(ad.matmul(local, p["attn.w_local"]), ad.gather_rows(ad.matmul(pooled, p["attn.w_pooled"]), pair_seg))
    )
    scores = ad.sum_(ad.mul(mixed, ad.reshape(p["attn.v"], (1, -1))), axis=1)
    alpha = ad.grouped_softmax(scores, pair_seg, num_segments)
    weighted = ad.mul(ad.reshape(alpha, (-1, 1)), point_feats_pairs)
    return ad.add(pooled, ad.scatter_add_rows(weighted, pair_seg, num_segments))


def gatv2_layer(
    h: Tensor,
    edges: np.ndarray,
    w_dst: Tensor,
    w_src: Tensor,
    att: Tensor,
    heads: int,
    slope: float = 0.2,
) -> Tensor:
    """One GATv2 layer over undirected edges (self-loops added internally)."""
    num_nodes = h.shape[0]
    if len(edges) and (edges.min() < 0 or edges.max() >= num_nodes):
        from .errors import GraphIndexError

        raise GraphIndexError(f"edge index out of range for {num_nodes} nodes")
    tgt, src = _directed_edges(edges, num_nodes)
    hd = h.shape[1] // heads
    hs = ad.matmul(h, w_dst)
    ht = ad.matmul(h, w_src)
    combined = ad.add(ad.gather_rows(hs, tgt), ad.gather_rows(ht, src))
    combined = ad.reshape(combined, (-1, heads, hd))
    scores = ad.sum_(ad.mul(ad.leaky_relu(combined, slope), ad.reshape(att, (1, heads, hd))), axis=2)
    alpha = ad.grouped_softmax(scores, tgt, num_nodes)  # per target node, per head
    msgs = ad.mul(ad.reshape(alpha, (-1, heads, 1)), ad.reshape(ad.gather_rows(ht, src), (-1, heads, hd)))
    out = ad.scatter_add_rows(msgs, tgt, num_nodes)
    return ad.reshape(out, (num_nodes, -1))


def propagate_graph(p: ParamStore, h: Tensor, batch: ShapeBatch, cfg: ModelConfig, flags: AblationFlags) -> Tensor:
    empty = np.zeros((0, 2), dtype=np.int64)
    edges_o = empty if flags.no_overlap_edges else batch.edges_overlap
    edges_a = empty if flags.no_adjacency_edges else batch.edges_adjacency
    for layer in range(1, cfg.gat_layers + 1):
        branches = []
        for kind, edges in (("o", edges_o), ("a", edges_a)):
            base = f"gat.{layer}.{kind}"
            branches.append(
                gatv2_layer(h, edges, p[f"{base}.w_dst"], p[f"{base}.w_src"], p[f"{base}.att"], cfg.heads, cfg.leaky_slope)
            )
        h = ad.add(h, ad.tanh(_affine(p, f"gat.{layer}.fuse", ad.concat(branches, axis=1))))
    return h


def unpool_weights(p: ParamStore, batch: ShapeBatch, uniform: bool = False) -> Tensor:
    """Softmax fusion weights over each point's containing segments."""
    if uniform:
        deg = np.bincount(batch.pair_point, minlength=batch.num_points).astype(batch.dtype)
        return Tensor((1.0 / deg[batch.pair_point]).astype(batch.dtype))
    logits = _affine(p, "quality.l2", ad.tanh(_affine(p, "quality.l1", Tensor(batch.quality))))
    return ad.grouped_softmax(ad.reshape(logits, (-1,)), batch.pair_point, batch.num_points)


def fuse_and_classify(
    p: ParamStore,
    point_feats: Tensor,
    seg_feats: Tensor,
    weights: Tensor,
    pair_point: np.ndarray,
    pair_seg: np.ndarray,
    num_points: int,
) -> tuple[Tensor, Tensor]:
    contrib = ad.mul(ad.reshape(weights, (-1, 1)), ad.gather_rows(seg_feats, pair_seg))
    fused = ad.add(point_feats, ad.scatter_add_rows(contrib, pair_point, num_points))
    logits = _affine(p, "head.l2", ad.tanh(_affine(p, "head.l1", fused)))
    return logits, fused


@dataclass
class ForwardResult:
    logits: Tensor
    fused: Tensor
    segment_feats: Tensor | None


def forward(p: ParamStore, batch: ShapeBatch, cfg: ModelConfig, flags: AblationFlags = AblationFlags()) -> ForwardResult:
    if batch.bank.shape[1] != cfg.c_in:
        raise ConfigurationError(f"bank has {batch.bank.shape[1]} channels, model expects {cfg.c_in}")
    point_feats = _affine(p, "proj", Tensor(batch.bank))
    if flags.mlp_baseline or batch.num_segments == 0:
        logits = _affine(p, "head.l2", ad.tanh(_affine(p, "head.l1", point_feats)))
        return ForwardResult(logits=logits, fused=point_feats, segment_feats=None)

    feats_pairs = ad.gather_rows(point_feats, batch.pair_point)
    seg_feats = encode_segments(
        p,
        Tensor(batch.geom_in),
        batch.pair_seg,
        batch.num_segments,
        feats_pairs,
        batch.seg_counts,
        mean_pool=flags.no_segment_encoder,
    )
    if not flags.no_graph:
        seg_feats = propagate_graph(p, seg_feats, batch, cfg, flags)
    weights = unpool_weights(p, batch, uniform=flags.uniform_unpool)
    logits, fused = fuse_and_classify(p, point_feats, seg_feats, weights, batch.pair_point, batch.pair_seg, batch.num_points)
    return ForwardResult(logits=logits, fused=fused, segment_feats=seg_feats)
