from dataclasses import replace

import numpy as np

from seggraph import autodiff as ad
from seggraph.autodiff import AdamState, ParamStore, Tensor, adam_step
from seggraph.geometry import rasterize_visibility
from seggraph.synth import (
    SynthConfig,
    analytic_normal,
    generate_features,
    generate_shape,
    generate_views_and_masks,
    part_prototypes,
    shape_recipe,
)

CFG = SynthConfig()


def vis_for(cloud, cfg=CFG):
    return [rasterize_visibility(cloud, cam, cfg.splat, cfg.eps_z) for cam in cfg.cameras()]


class TestShapes:
    def test_single_part_shape(self):
        cfg = replace(CFG, parts_per_shape=1, points_per_shape=300)
        cloud = generate_shape(cfg, 0)
        assert set(np.unique(cloud.labels)) == {0}

    def test_deterministic_bitwise(self):
        a = generate_shape(CFG, 3)
        b = generate_shape(CFG, 3)
        assert np.array_equal(a.positions, b.positions)
        assert np.array_equal(a.normals, b.normals)
        assert np.array_equal(a.labels, b.labels)

    def test_different_indices_differ(self):
        a = generate_shape(CFG, 0)
        b = generate_shape(CFG, 1)
        assert a.num_points != b.num_points or not np.allclose(a.positions[: min(a.num_points, b.num_points)],
                                                               b.positions[: min(a.num_points, b.num_points)])

    def test_attachments_stay_small(self):
        for idx in range(6):
            cloud = generate_shape(CFG, idx)
            counts = np.bincount(cloud.labels, minlength=CFG.parts_per_shape)
            fractions = counts / cloud.num_points
            assert fractions[1:].max() < 0.05
            assert counts[1:].min() >= 5

    def test_normals_match_analytic_oracle(self):
        cfg = CFG
        cloud = generate_shape(cfg, 0, quantize=False)
        recipe = shape_recipe(cfg, 0)
        prims = [recipe.body] + recipe.attachments
        # normalization is translate + uniform scale, so normals transfer directly;
        # positions must be mapped back to the original frame for the oracle
        raw = generate_shape.__wrapped__(cfg, 0) if hasattr(generate_shape, "__wrapped__") else None
        # reconstruct the transform from the recipe itself
        import seggraph.synth as synth

        rng = synth._rng(cfg, synth._STREAM_SHAPE, 0, sub=1)
        pts_parts, nrm_parts, lab_parts = [], [], []
        for label, (prim, count) in enumerate(zip(prims, recipe.point_counts)):
            pts, nrm = synth._sample_primitive(prim, count, rng)
            keep = np.ones(count, dtype=bool)
            for other_idx, other in enumerate(prims):
                if other_idx == label:
                    continue
                keep &= ~synth._contains(other, pts, shrink=0.999 if other_idx == 0 else 1.0)
            pts_parts.append(pts[keep])
            nrm_parts.append(nrm[keep])
            lab_parts.append(np.full(int(keep.sum()), label))
        positions = np.concatenate(pts_parts)
        labels = np.concatenate(lab_parts)
        worst = 0.0
        for label, prim in enumerate(prims):
            sel = labels == label
            expect = analytic_normal(prim, positions[sel])
            got = np.concatenate(nrm_parts)[sel]
            dot = np.clip((expect * got).sum(axis=1), -1.0, 1.0)
            worst = max(worst, float(np.arccos(dot).max()))
        assert worst < 1e-6
        # and the emitted cloud's normals are the same up to normalization transfer
        assert np.allclose(np.concatenate(nrm_parts), cloud.normals, atol=1e-12)


class TestMasks:
    def test_zero_corruption_equals_part_visibility(self):
        cfg = replace(CFG, split_rate=0.0, merge_rate=0.0, coarse_rate=0.0)
        cloud = generate_shape(cfg, 1)
        cams = cfg.cameras()
        vis = vis_for(cloud, cfg)
        stacks, events = generate_views_and_masks(cloud, cams, cfg, 1, vis=vis)
        assert events == []
        for stack, vm in zip(stacks, vis):
            owner_label = np.where(vm.pixel_owner >= 0, cloud.labels[np.maximum(vm.pixel_owner, 0)], -1)
            ideal = [owner_label == k for k in range(cfg.parts_per_shape) if (owner_label == k).any()]
            assert stack.num_masks == len(ideal)
            for a, b in zip(ideal, stack.masks):
                assert np.array_equal(a, b)

    def test_split_rate_one_fragments_every_part(self):
        cfg = replace(CFG, split_rate=1.0, merge_rate=0.0, coarse_rate=0.0)
        cloud = generate_shape(cfg, 1)
        cams = cfg.cameras()
        vis = vis_for(cloud, cfg)
        stacks, _ = generate_views_and_masks(cloud, cams, cfg, 1, vis=vis)
        for stack, vm in zip(stacks, vis):
            owner_label = np.where(vm.pixel_owner >= 0, cloud.labels[np.maximum(vm.pixel_owner, 0)], -1)
            parts = [k for k in range(cfg.parts_per_shape) if ((owner_label == k).sum()) >= 2]
            assert stack.num_masks >= 2 * len(parts)

    def test_split_fragments_are_label_consistent(self):
        cfg = replace(CFG, split_rate=1.0, merge_rate=0.0, coarse_rate=0.0)
        cloud = generate_shape(cfg, 2)
        cams = cfg.cameras()
        vis = vis_for(cloud, cfg)
        stacks, _ = generate_views_and_masks(cloud, cams, cfg, 2, vis=vis)
        for stack, vm in zip(stacks, vis):
            owner_label = np.where(vm.pixel_owner >= 0, cloud.labels[np.maximum(vm.pixel_owner, 0)], -1)
            for mask in stack.masks:
                labs = owner_label[mask]
                labs = labs[labs >= 0]
                assert len(np.unique(labs)) <= 1

    def test_events_replay_bitwise(self):
        cloud = generate_shape(CFG, 4)
        cams = CFG.cameras()
        vis = vis_for(cloud)
        s1, e1 = generate_views_and_masks(cloud, cams, CFG, 4, vis=vis)
        s2, e2 = generate_views_and_masks(cloud, cams, CFG, 4, vis=vis)
        assert e1 == e2
        for a, b in zip(s1, s2):
            assert np.array_equal(a.masks, b.masks)

    def test_merges_join_adjacent_parts(self):
        cfg = replace(CFG, split_rate=0.0, merge_rate=1.0, coarse_rate=0.0)
        cloud = generate_shape(cfg, 0)
        cams = cfg.cameras()
        vis = vis_for(cloud, cfg)
        _, events = generate_views_and_masks(cloud, cams, cfg, 0, vis=vis)
        merges = [e for e in events if e["kind"] == "merge"]
        assert merges, "merge rate 1 should produce merge events"
        for e in merges:
            assert len(e["parts"]) == 2


class TestFeatures:
    def test_pure_patches_equal_prototype(self):
        cfg = replace(CFG, feature_noise=0.0, view_bias=0.0)
        cloud = generate_shape(cfg, 0)
        cams = cfg.cameras()
        vis = vis_for(cloud, cfg)
        grids = generate_features(cloud, cams, cfg, 0, vis=vis)
        protos = part_prototypes(cfg)
        p = cfg.patch_size
        checked = 0
        for grid, vm in zip(grids, vis):
            owner_label = np.where(vm.pixel_owner >= 0, cloud.labels[np.maximum(vm.pixel_owner, 0)], -1)
            gh, gw = grid.grid.shape[:2]
            tiles = owner_label.reshape(gh, p, gw, p)
            for r in range(gh):
                for c in range(gw):
                    labs = tiles[r, :, c, :]
                    labs = labs[labs >= 0]
                    if len(labs) and (labs == labs[0]).all():
                        assert np.allclose(grid.grid[r, c], protos[labs[0]], atol=1e-5)
                        checked += 1
        assert checked > 50

    def test_mixed_patches_are_ownership_weighted_midpoints(self):
        cfg = replace(CFG, feature_noise=0.0, view_bias=0.0)
        cloud = generate_shape(cfg, 0)
        cams = cfg.cameras()
        vis = vis_for(cloud, cfg)
        grids = generate_features(cloud, cams, cfg, 0, vis=vis)
        protos = part_prototypes(cfg)
        p = cfg.patch_size
        mixed_checked = 0
        for grid, vm in zip(grids, vis):
            owner_label = np.where(vm.pixel_owner >= 0, cloud.labels[np.maximum(vm.pixel_owner, 0)], -1)
            gh, gw = grid.grid.shape[:2]
            tiles = owner_label.reshape(gh, p, gw, p)
            for r in range(gh):
                for c in range(gw):
                    labs = tiles[r, :, c, :]
                    labs = labs[labs >= 0]
                    if len(labs) == 0 or (labs == labs[0]).all():
                        continue
                    weights = np.bincount(labs, minlength=cfg.parts_per_shape) / len(labs)
                    assert np.allclose(grid.grid[r, c], weights @ protos, atol=1e-5)
                    mixed_checked += 1
        assert mixed_checked > 0

    def test_prototype_statistics_with_noise(self):
        cfg = replace(CFG, feature_noise=0.8, view_bias=0.0)
        cloud = generate_shape(cfg, 5)
        cams = cfg.cameras()
        vis = vis_for(cloud, cfg)
        grids = generate_features(cloud, cams, cfg, 5, vis=vis)
        protos = part_prototypes(cfg)
        p = cfg.patch_size
        samples = []
        for grid, vm in zip(grids, vis):
            owner_label = np.where(vm.pixel_owner >= 0, cloud.labels[np.maximum(vm.pixel_owner, 0)], -1)
            gh, gw = grid.grid.shape[:2]
            tiles = owner_label.reshape(gh, p, gw, p)
            for r in range(gh):
                for c in range(gw):
                    labs = tiles[r, :, c, :]
                    labs = labs[labs >= 0]
                    if len(labs) and (labs == 0).all():
                        samples.append(grid.grid[r, c])
        samples = np.stack(samples)
        n = len(samples)
        err = np.abs(samples.mean(axis=0) - protos[0])
        assert err.max() < 3 * 0.8 / np.sqrt(n) + 0.8 / np.sqrt(n)  # 3-sigma band with slack

    def test_deterministic(self):
        cloud = generate_shape(CFG, 6)
        cams = CFG.cameras()
        vis = vis_for(cloud)
        g1 = generate_features(cloud, cams, CFG, 6, vis=vis)
        g2 = generate_features(cloud, cams, CFG, 6, vis=vis)
        for a, b in zip(g1, g2):
            assert np.array_equal(a.grid, b.grid)


class TestBenchmarkFloor:
    def test_clean_corpus_linearly_separable(self):
        """With zero corruption and noise, one linear layer nails the labels.

        Uses the calibration shape (attachments lifted off the body) so no
        point is base-shadowed out of every view.
        """
        from seggraph.features import pool_point_features

        cfg = replace(CFG, feature_noise=0.0, view_bias=0.0, split_rate=0.0, merge_rate=0.0, coarse_rate=0.0,
                      parts_per_shape=3, points_per_shape=1200, patch_size=7, views=20, attachment_gap=0.12)
        cloud = generate_shape(cfg, 0)
        cams = cfg.cameras()
        vis = vis_for(cloud, cfg)
        grids = generate_features(cloud, cams, cfg, 0, vis=vis)
        bank = pool_point_features(grids, vis, cloud)

        params = ParamStore()
        rng = np.random.default_rng(0)
        params.add("w", (rng.normal(size=(cfg.c_in, cfg.parts_per_shape)) * 0.01).astype(np.float64))
        params.add("b", np.zeros(cfg.parts_per_shape))
        state = AdamState.for_params(params, lr=0.05)
        x = Tensor(bank.features)
        for _ in range(300):
            logits = ad.add(ad.matmul(x, params["w"]), params["b"])
            loss = ad.cross_entropy(logits, cloud.labels)
            params.zero_grad()
            loss.backward()
            adam_step(params, state)
        logits = (bank.features @ params["w"].data) + params["b"].data
        accuracy = float((np.argmax(logits, axis=1) == cloud.labels).mean())
        assert accuracy == 1.0
