"""Central-difference checks for every differentiable primitive and the full model.

Checks run in float64.  Inputs for kinked ops (relu, leaky_relu, max pool)
are nudged away from the non-differentiable set; that skip policy is part of
the contract, not a workaround.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, gradcheck
from .geometry import PointCloud
from .graph import SegmentGraph
from .masks import Segment, SegmentSet
from .model import AblationFlags, ModelConfig, build_shape_batch, forward


def _rand(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def _away_from_zero(x: Tensor, margin: float = 0.2) -> Tensor:
    x.data = x.data + margin * np.sign(x.data)
    return x


def op_gradchecks(seed: int = 0) -> dict[str, float]:
    """Max relative error per registered primitive on small random inputs."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD1FF]))
    checks: dict[str, float] = {}

    a, b = _rand(rng, 3, 4), _rand(rng, 4, 5)
    checks["matmul"] = gradcheck(lambda: ad.sum_(ad.matmul(a, b)), [a, b])

    x, bias = _rand(rng, 3, 4), _rand(rng, 4)
    checks["add"] = gradcheck(lambda: ad.sum_(ad.add(x, bias)), [x, bias])

    m1, m2 = _rand(rng, 3, 4), _rand(rng, 3, 1)
    checks["mul"] = gradcheck(lambda: ad.sum_(ad.mul(m1, m2)), [m1, m2])

    c1, c2 = _rand(rng, 2, 3), _rand(rng, 4, 3)
    checks["concat"] = gradcheck(lambda: ad.sum_(ad.mul(ad.concat([c1, c2], axis=0), ad.concat([c1, c2], axis=0))), [c1, c2])

    r = _rand(rng, 3, 4)
    checks["reshape"] = gradcheck(lambda: ad.sum_(ad.mul(ad.reshape(r, (4, 3)), ad.reshape(r, (4, 3)))), [r])

    gsrc = _rand(rng, 5, 3)
    gidx = np.array([0, 2, 2, 4, 1, 0])
    checks["gather"] = gradcheck(lambda: ad.sum_(ad.mul(ad.gather_rows(gsrc, gidx), ad.gather_rows(gsrc, gidx))), [gsrc])

    s = _rand(rng, 6, 3)
    sidx = np.array([0, 1, 0, 2, 2, 1])
    checks["scatter_add"] = gradcheck(
        lambda: ad.sum_(ad.mul(ad.scatter_add_rows(s, sidx, 3), ad.scatter_add_rows(s, sidx, 3))), [s]
    )

    re = _away_from_zero(_rand(rng, 3, 4))
    checks["relu"] = gradcheck(lambda: ad.sum_(ad.mul(ad.relu(re), ad.relu(re))), [re])

    le = _away_from_zero(_rand(rng, 3, 4))
    checks["leaky_relu"] = gradcheck(lambda: ad.sum_(ad.mul(ad.leaky_relu(le, 0.2), ad.leaky_relu(le, 0.2))), [le])

    th = _rand(rng, 3, 4)
    checks["tanh"] = gradcheck(lambda: ad.sum_(ad.mul(ad.tanh(th), ad.tanh(th))), [th])

    sm = _rand(rng, 3, 4)
    checks["sum_axis"] = gradcheck(lambda: ad.sum_(ad.mul(ad.sum_(sm, axis=1), ad.sum_(sm, axis=1))), [sm])

    groups = np.array([0, 0, 1, 1, 1, 2, 2])
    gs = _rand(rng, 7)
    mixer = Tensor(rng.normal(size=7))
    checks["grouped_softmax"] = gradcheck(
        lambda: ad.sum_(ad.mul(ad.grouped_softmax(gs, groups, 3), mixer)), [gs]
    )

    # keep per-group/channel argmaxes well separated so +/-h never flips them
    mp = Tensor(rng.normal(size=(7, 3)), requires_grad=True)
    mp.data += np.arange(7)[:, None] * 0.25
    mixer2 = Tensor(rng.normal(size=(3, 3)))
    checks["segmented_maxpool"] = gradcheck(
        lambda: ad.sum_(ad.mul(ad.segmented_maxpool(mp, groups, 3), mixer2)), [mp]
    )

    logits = _rand(rng, 5, 4)
    labels = np.array([0, 3, -1, 1, 2])
    checks["cross_entropy"] = gradcheck(lambda: ad.cross_entropy(logits, labels), [logits])
    return checks


def tiny_batch(seed: int = 0, n: int = 50, num_segments: int = 8, dtype=np.float64):
    """A small random but structurally valid shape for end-to-end checks."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x71D7]))
    positions = rng.uniform(-0.4, 0.4, size=(n, 3))
    normals = rng.normal(size=(n, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    k = 3
    labels = rng.integers(0, k, size=n)
    cloud = PointCloud(positions=positions, normals=normals, labels=labels, k=k)

    cam_positions = rng.normal(size=(4, 3))
    cam_positions = 2.2 * cam_positions / np.linalg.norm(cam_positions, axis=1, keepdims=True)
    segments = []
    memberships: list[list[int]] = [[] for _ in range(n)]
    for seg_id in range(num_segments):
        size = int(rng.integers(4, 10))
        ids = np.sort(rng.choice(n, size=size, replace=False))
        view = int(seg_id % 4)
        segments.append(
            Segment(
                segment_id=seg_id,
                view_id=view,
                camera_position=cam_positions[view],
                point_ids=ids,
                centroid=positions[ids].mean(axis=0),
            )
        )
        for p in ids:
            memberships[int(p)].append(seg_id)
    segs = SegmentSet(segments=segments, point_memberships=memberships)

    def random_edges(count):
        edges = set()
        while len(edges) < count:
            i, j = rng.integers(0, num_segments, size=2)
            if i != j:
                edges.add((min(int(i), int(j)), max(int(i), int(j))))
        return np.array(sorted(edges), dtype=np.int64)

    overlap = random_edges(5)
    adjacency = np.array(
        sorted(set(map(tuple, random_edges(5).tolist())) - set(map(tuple, overlap.tolist()))), dtype=np.int64
    )
    if adjacency.size == 0:
        adjacency = adjacency.reshape(0, 2)
    graph = SegmentGraph(node_count=num_segments, overlap_edges=overlap, adjacency_edges=adjacency)

    c_in = 12
    bank = rng.normal(size=(n, c_in))
    return build_shape_batch("tiny", cloud, bank, segs, graph, labels=labels, dtype=dtype)


def end_to_end_gradcheck(seed: int = 1, h: float = 1e-5) -> float:
    """Gradcheck of the full loss wrt every parameter on a tiny shape."""
    from .model import init_params

    batch = tiny_batch(seed, dtype=np.float64)
    cfg = ModelConfig(c=16, c_in=12, k=3, heads=4)
    params = init_params(cfg, seed, dtype=np.float64)
    flags = AblationFlags()

    def loss_fn():
        result = forward(params, batch, cfg, flags)
        return ad.cross_entropy(result.logits, batch.labels)

    leaves = [params[name] for name in params.names()]
    return gradcheck(loss_fn, leaves, h=h)
