import numpy as np
import pytest

from seggraph.errors import ConfigurationError, MetricUndefinedError
from seggraph.gradsuite import tiny_batch
from seggraph.model import ModelConfig
from seggraph.train import (
    TrainConfig,
    category_score,
    evaluate_shape,
    export_pca_colors,
    mean_iou,
    pca_projection,
    predict_labels,
    small_part_breakdown,
    train_fewshot,
    write_ply,
)


class TestMeanIoU:
    def test_perfect_prediction(self):
        _, miou, acc, _ = mean_iou(np.array([0, 1, 1, 0]), np.array([0, 1, 1, 0]), 2)
        assert miou == 1.0 and acc == 1.0

    def test_hand_computed_example(self):
        per_class, miou, acc, n = mean_iou(np.array([0, 1, 1, 1]), np.array([0, 0, 1, 1]), 2)
        assert per_class[0] == pytest.approx(0.5)
        assert per_class[1] == pytest.approx(2.0 / 3.0)
        assert miou == (0.5 + 2.0 / 3.0) / 2.0
        assert miou == pytest.approx(7.0 / 12.0, abs=1e-15)

    def test_absent_class_excluded(self):
        per_class, miou, _, _ = mean_iou(np.array([0, 0]), np.array([0, 0]), 3)
        assert per_class[1] is None and per_class[2] is None
        assert miou == 1.0

    def test_gt_sentinel_excluded(self):
        _, miou, acc, n = mean_iou(np.array([0, 1]), np.array([0, -1]), 2)
        assert miou == 1.0 and n == 1

    def test_no_valid_points_raises(self):
        with pytest.raises(MetricUndefinedError):
            mean_iou(np.array([0]), np.array([-1]), 2)

    def test_point_order_symmetric(self):
        rng = np.random.default_rng(0)
        pred = rng.integers(0, 3, size=50)
        gt = rng.integers(0, 3, size=50)
        perm = rng.permutation(50)
        a = mean_iou(pred, gt, 3)
        b = mean_iou(pred[perm], gt[perm], 3)
        assert a[1] == b[1]

    def test_consistent_relabeling_invariance(self):
        rng = np.random.default_rng(1)
        pred = rng.integers(0, 3, size=60)
        gt = rng.integers(0, 3, size=60)
        relabel = np.array([2, 0, 1])
        a = mean_iou(pred, gt, 3)[1]
        b = mean_iou(relabel[pred], relabel[gt], 3)[1]
        assert a == pytest.approx(b)

    def test_miou_one_iff_exact(self):
        pred = np.array([0, 1, 2, 2])
        gt = np.array([0, 1, 2, 1])
        assert mean_iou(pred, gt, 3)[1] < 1.0


class TestSmallParts:
    def test_all_large_gives_absent_small(self):
        pred = np.array([0] * 50 + [1] * 50)
        small, large, ids = small_part_breakdown(pred, pred, 2)
        assert small is None and ids == []
        assert large == 1.0

    def test_two_percent_class_is_small(self):
        gt = np.array([0] * 98 + [1] * 2)
        small, large, ids = small_part_breakdown(gt, gt, 2)
        assert ids == [1] and small == 1.0

    def test_hand_partitioned_means(self):
        # class sizes: 92 / 4 / 4 -> classes 1, 2 sit below the 5% cut
        gt = np.array([0] * 92 + [1] * 4 + [2] * 4)
        pred = gt.copy()
        pred[0] = 1  # one body point mislabeled
        pred[92] = 0  # one class-1 point mislabeled
        per_class, _, _, _ = mean_iou(pred, gt, 3)
        small, large, ids = small_part_breakdown(pred, gt, 3, small_fraction=0.05)
        assert ids == [1, 2]
        assert small == pytest.approx((per_class[1] + per_class[2]) / 2.0)
        assert large == pytest.approx(per_class[0])

    def test_category_score_order_invariant(self):
        r1 = evaluate_shape(np.array([0, 1]), np.array([0, 1]), 2)
        r2 = evaluate_shape(np.array([0, 0]), np.array([0, 1]), 2)
        assert category_score([r1, r2]) == category_score([r2, r1])


def small_training_setup(seed=0):
    shapes = [tiny_batch(seed + i, n=40, num_segments=6, dtype=np.float32) for i in range(3)]
    cfg = ModelConfig(c=16, c_in=12, k=3, heads=4)
    return shapes, cfg


class TestTraining:
    def test_fixed_seed_bitwise_identical(self):
        shapes, cfg = small_training_setup()
        tc = TrainConfig(shots=3, epochs=5, seed=7)
        p1, c1 = train_fewshot(tc, shapes, cfg)
        p2, c2 = train_fewshot(tc, shapes, cfg)
        assert c1 == c2
        for name in p1.names():
            assert np.array_equal(p1[name].data, p2[name].data)

    def test_zero_epochs_returns_initialization(self):
        from seggraph.model import init_params

        shapes, cfg = small_training_setup()
        tc = TrainConfig(shots=3, epochs=0, seed=3)
        params, curve = train_fewshot(tc, shapes, cfg)
        init = init_params(cfg, 3)
        assert curve == []
        for name in params.names():
            assert np.array_equal(params[name].data, init[name].data)

    def test_loss_decreases(self):
        shapes, cfg = small_training_setup()
        tc = TrainConfig(shots=3, epochs=30, seed=0)
        _, curve = train_fewshot(tc, shapes, cfg)
        assert curve[-1] < curve[0]

    def test_separable_features_reach_high_accuracy(self):
        # pooled features equal to a per-class prototype: trivially separable
        rng = np.random.default_rng(5)
        shapes = []
        protos = rng.normal(size=(3, 12)) * 3
        for i in range(8):
            batch = tiny_batch(i, n=40, num_segments=6, dtype=np.float32)
            batch.bank = (protos[batch.labels] + rng.normal(size=(40, 12)) * 0.05).astype(np.float32)
            shapes.append(batch)
        cfg = ModelConfig(c=16, c_in=12, k=3, heads=4)
        tc = TrainConfig(shots=8, epochs=100, seed=0)
        params, _ = train_fewshot(tc, shapes, cfg)
        correct = total = 0
        for batch in shapes:
            pred, _ = predict_labels(params, batch, cfg)
            correct += int((pred == batch.labels).sum())
            total += len(pred)
        assert correct / total > 0.95

    def test_shot_subsampling_is_seeded(self):
        shapes, cfg = small_training_setup()
        tc = TrainConfig(shots=2, epochs=2, seed=9)
        p1, _ = train_fewshot(tc, shapes, cfg)
        p2, _ = train_fewshot(tc, shapes, cfg)
        for name in p1.names():
            assert np.array_equal(p1[name].data, p2[name].data)

    def test_unlabeled_shapes_rejected(self):
        shapes, cfg = small_training_setup()
        for s in shapes:
            s.labels = None
        with pytest.raises(ConfigurationError):
            train_fewshot(TrainConfig(shots=2, epochs=1), shapes, cfg)


class TestPredict:
    def test_deterministic(self):
        shapes, cfg = small_training_setup()
        tc = TrainConfig(shots=3, epochs=3, seed=1)
        params, _ = train_fewshot(tc, shapes, cfg)
        a, la = predict_labels(params, shapes[0], cfg)
        b, lb = predict_labels(params, shapes[0], cfg)
        assert np.array_equal(a, b) and np.array_equal(la, lb)

    def test_tie_breaks_to_lowest_class(self):
        assert int(np.argmax(np.array([0.2, 0.9, 0.9]))) == 1


class TestPCA:
    def test_axis_aligned_features_recovered(self):
        rng = np.random.default_rng(2)
        feats = np.zeros((200, 3))
        feats[:, 0] = rng.normal(scale=5.0, size=200)
        feats[:, 1] = rng.normal(scale=2.0, size=200)
        feats[:, 2] = rng.normal(scale=0.5, size=200)
        colors = export_pca_colors(feats)
        spans = feats.max(axis=0) - feats.min(axis=0)
        expect = (feats - feats.min(axis=0)) / spans
        for ch in range(3):
            diff = min(np.abs(colors[:, ch] - expect[:, ch]).max(), np.abs(colors[:, ch] - (1 - expect[:, ch])).max())
            assert diff < 0.05  # up to sign and tiny rotation mixing

    def test_constant_features_give_gray(self):
        colors = export_pca_colors(np.ones((10, 6)))
        assert np.allclose(colors, 0.5)

    def test_projection_matches_svd_oracle(self):
        rng = np.random.default_rng(3)
        feats = rng.normal(size=(100, 96)) @ np.diag(np.linspace(3, 0.1, 96))
        mean, comps = pca_projection(feats)
        centered = feats - feats.mean(axis=0)
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        for i in range(3):
            dot = abs(float(comps[i] @ vt[i]))
            assert dot == pytest.approx(1.0, abs=1e-5)

    def test_needs_three_points(self):
        with pytest.raises(ConfigurationError):
            pca_projection(np.ones((2, 4)))

    def test_ply_roundtrip(self, tmp_path):
        pts = np.array([[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]])
        colors = np.array([[1.0, 0.0, 0.5], [0.0, 1.0, 0.25]])
        write_ply(tmp_path / "o.ply", pts, colors)
        lines = (tmp_path / "o.ply").read_text().splitlines()
        assert lines[0] == "ply"
        assert "element vertex 2" in lines[2]
        assert lines[-1].split()[3:] == ["0", "255", "64"]
