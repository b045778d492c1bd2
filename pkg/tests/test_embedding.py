import numpy as np
import pytest
from hypothesis import given, strategies as st

from sgnms.embedding import (
    BoxAssignment,
    EmbeddingLossConfig,
    EmbeddingTrainingScene,
    LinearSemanticProvider,
    NonFiniteLoss,
    assign_boxes,
    attach_provider_embeddings,
    compute_sge,
    embedding_loss_gradient,
    group_loss,
    load_provider,
    normalized_geometry,
    oracle_embeddings,
    save_provider,
    scene_losses,
    separation_loss,
    train_provider,
    training_scene,
)
from sgnms.evaluation import GroundTruth, Scene
from sgnms.geometry import Box
from sgnms.suppression import Detection


class TestComputeSge:
    def test_coordinate_selector(self):
        assert compute_sge((1, 0, 0, 0), (3, 4, 2, 2)) == 3.0

    def test_zero_weights(self):
        assert compute_sge((0, 0, 0, 0), (7, -2, 5, 9)) == 0.0

    def test_mixed_weights(self):
        assert compute_sge((0.5, 0.5, 1, -1), (2, 4, 3, 3)) == pytest.approx(3.0)

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            compute_sge((1, 0, 0), (1, 2, 3, 4))
        with pytest.raises(ValueError):
            compute_sge((1, 0, 0, 0), (1, 2, 3))

    @given(
        st.lists(st.floats(-10, 10), min_size=4, max_size=4),
        st.lists(st.floats(-10, 10), min_size=4, max_size=4),
        st.lists(st.floats(-10, 10), min_size=4, max_size=4),
        st.floats(-5, 5),
        st.floats(-5, 5),
    )
    def test_linear_in_geometry(self, s, g1, g2, a, b):
        combo = [a * u + b * v for u, v in zip(g1, g2)]
        lhs = compute_sge(s, combo)
        rhs = a * compute_sge(s, g1) + b * compute_sge(s, g2)
        assert lhs == pytest.approx(rhs, abs=1e-7)


class TestConfig:
    def test_defaults(self):
        cfg = EmbeddingLossConfig()
        assert (cfg.theta, cfg.rho, cfg.sigma) == (0.7, 0.27, 0.3)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"theta": 0.0},
            {"theta": 1.5},
            {"rho": 0.0},
            {"rho": 1.1},
            {"sigma": 0.0},
            {"sigma": -0.3},
        ],
    )
    def test_rejects_out_of_range(self, kwargs):
        with pytest.raises(ValueError):
            EmbeddingLossConfig(**kwargs)


class TestAssignBoxes:
    cfg = EmbeddingLossConfig()

    def test_exact_match_single_gt(self):
        gt = Box(0, 0, 10, 10)
        [a] = assign_boxes([gt], [gt], self.cfg)
        assert a == BoxAssignment(primary_gt=0, secondary_gt=None, occluded=False)

    def test_below_theta_unassigned(self):
        # IoU exactly 0.6 < 0.7
        [a] = assign_boxes([Box(0, 0, 4, 2)], [Box(1, 0, 5, 2)], self.cfg)
        assert a.primary_gt is None

    def test_at_theta_unassigned(self):
        # assignment requires strictly greater than theta
        cfg = EmbeddingLossConfig(theta=0.6)
        [a] = assign_boxes([Box(0, 0, 4, 2)], [Box(1, 0, 5, 2)], cfg)
        assert a.primary_gt is None

    def test_occluded_pair(self):
        # IoU 0.8 to gt0, 0.4 to gt1; 0.4 > rho
        box = Box(1, 0, 10, 1)
        gts = [Box(0, 0, 9, 1), Box(1, 0, 4.6, 1)]
        [a] = assign_boxes([box], gts, self.cfg)
        assert a == BoxAssignment(primary_gt=0, secondary_gt=1, occluded=True)

    def test_secondary_below_rho_not_occluded(self):
        box = Box(1, 0, 10, 1)
        gts = [Box(0, 0, 9, 1), Box(1, 0, 2.8, 1)]  # IoU(box, gt1) = 0.2
        [a] = assign_boxes([box], gts, self.cfg)
        assert a.primary_gt == 0 and a.secondary_gt == 1
        assert not a.occluded

    def test_tie_breaks_to_lower_index(self):
        box = Box(0, 0, 10, 10)
        [a] = assign_boxes([box], [Box(0, 0, 10, 10), Box(0, 0, 10, 10)], self.cfg)
        assert a.primary_gt == 0 and a.secondary_gt == 1

    def test_empty_gts(self):
        [a] = assign_boxes([Box(0, 0, 2, 2)], [], self.cfg)
        assert a == BoxAssignment(primary_gt=None, secondary_gt=None, occluded=False)

    def test_primary_never_equals_secondary(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            boxes = [
                Box(x, y, x + w, y + h)
                for x, y, w, h in zip(
                    rng.uniform(0, 50, 5),
                    rng.uniform(0, 50, 5),
                    rng.uniform(2, 20, 5),
                    rng.uniform(2, 20, 5),
                )
            ]
            for a in assign_boxes(boxes, boxes[:3], self.cfg):
                if a.primary_gt is not None and a.secondary_gt is not None:
                    assert a.primary_gt != a.secondary_gt

    def test_irrelevant_gt_changes_nothing_material(self):
        box = Box(1, 0, 10, 1)
        gts = [Box(0, 0, 9, 1), Box(1, 0, 4.6, 1)]
        far = Box(500, 500, 510, 510)
        before = assign_boxes([box], gts, self.cfg)
        after = assign_boxes([box], gts + [far], self.cfg)
        assert after[0].primary_gt == before[0].primary_gt
        assert after[0].secondary_gt == before[0].secondary_gt
        assert after[0].occluded == before[0].occluded


class TestLosses:
    def test_group_perfect(self):
        a = [BoxAssignment(0, None, False)]
        assert group_loss([2.0], [2.0], a) == 0.0

    def test_group_symmetric_pair(self):
        a = [BoxAssignment(0, None, False), BoxAssignment(0, None, False)]
        assert group_loss([1.0, 3.0], [2.0], a) == pytest.approx(2.0)

    def test_group_unassigned_contributes_zero(self):
        a = [BoxAssignment(None, None, False)]
        assert group_loss([99.0], [2.0], a) == 0.0

    def test_separation_margin_satisfied(self):
        a = [BoxAssignment(0, 1, True)]
        assert separation_loss([1.0], [1.0, 1.5], a, sigma=0.3) == 0.0

    def test_separation_inside_margin(self):
        a = [BoxAssignment(0, 1, True)]
        assert separation_loss([1.0], [1.0, 1.1], a, sigma=0.3) == pytest.approx(0.2)

    def test_separation_gated_by_flag(self):
        a = [BoxAssignment(0, 1, False)]
        assert separation_loss([1.0], [1.0, 1.0], a, sigma=0.3) == 0.0

    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=6))
    def test_losses_non_negative(self, es):
        a = [BoxAssignment(0, 1 if len(es) > 1 else None, len(es) > 1) for _ in es]
        gt_es = es[:2] if len(es) > 1 else [es[0]]
        assert group_loss(es, gt_es, a) >= 0.0
        assert separation_loss(es, gt_es, a, sigma=0.3) >= 0.0


def make_training_scene(rng, dim=6, image_size=(100.0, 100.0)):
    """Two overlapping ground truths, one detection pinned on each."""
    gt0 = Box(10, 10, 50, 40)
    gt1 = Box(25, 10, 65, 40)
    boxes = [gt0, gt1]
    return EmbeddingTrainingScene(
        boxes=boxes,
        gt_boxes=[gt0, gt1],
        box_geometry=np.array([normalized_geometry(b, image_size) for b in boxes]),
        gt_geometry=np.array([normalized_geometry(b, image_size) for b in boxes]),
        box_descriptors=rng.normal(size=(2, dim)),
        gt_descriptors=rng.normal(size=(2, dim)),
    )


class TestGradient:
    cfg = EmbeddingLossConfig()

    def total(self, ts, provider):
        g, s = scene_losses(ts, provider, self.cfg)
        return g + s

    def test_zero_loss_zero_gradient(self):
        rng = np.random.default_rng(20)
        ts = make_training_scene(rng)
        # identical descriptors for box and gt force identical embeddings, so the
        # group terms sit at the |x| kink and the separation hinge is inactive
        # only if the margin is met; zero weights kill everything instead
        provider = LinearSemanticProvider(np.zeros((4, 6)))
        g, s = scene_losses(ts, provider, self.cfg)
        assert g == 0.0
        grad = embedding_loss_gradient(ts, provider, self.cfg)
        if s == 0.0:
            assert np.all(grad == 0.0)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(21)
        step = 1e-6
        for _ in range(10):
            ts = make_training_scene(rng)
            provider = LinearSemanticProvider(rng.normal(size=(4, 6)))
            grad = embedding_loss_gradient(ts, provider, self.cfg)
            fd = np.zeros_like(grad)
            for r in range(4):
                for c in range(6):
                    wp = provider.weights.copy()
                    wm = provider.weights.copy()
                    wp[r, c] += step
                    wm[r, c] -= step
                    fd[r, c] = (
                        self.total(ts, LinearSemanticProvider(wp))
                        - self.total(ts, LinearSemanticProvider(wm))
                    ) / (2 * step)
            scale = max(np.abs(fd).max(), 1e-8)
            assert np.abs(grad - fd).max() / scale < 1e-5

    def test_step_against_gradient_decreases_loss(self):
        rng = np.random.default_rng(22)
        ts = make_training_scene(rng)
        provider = LinearSemanticProvider(rng.normal(size=(4, 6)))
        grad = embedding_loss_gradient(ts, provider, self.cfg)
        assert np.abs(grad).max() > 0
        before = self.total(ts, provider)
        after = self.total(
            ts, LinearSemanticProvider(provider.weights - 1e-4 * grad)
        )
        assert after < before


class TestProviderIO:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(30)
        provider = LinearSemanticProvider(rng.normal(size=(4, 9)))
        path = tmp_path / "weights.txt"
        save_provider(provider, path)
        loaded = load_provider(path)
        assert loaded.descriptor_dim == 9
        assert np.array_equal(loaded.weights, provider.weights)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "weights.txt"
        path.write_text("something-else v1 dims=4\n0 0 0 0\n0 0 0 0\n0 0 0 0\n0 0 0 0\n")
        with pytest.raises(ValueError):
            load_provider(path)

    def test_wrong_row_count(self, tmp_path):
        path = tmp_path / "weights.txt"
        path.write_text("sg-provider v1 dims=2\n0 0\n0 0\n0 0\n")
        with pytest.raises(ValueError):
            load_provider(path)

    def test_wrong_dims(self, tmp_path):
        path = tmp_path / "weights.txt"
        path.write_text("sg-provider v1 dims=3\n0 0\n0 0\n0 0\n0 0\n")
        with pytest.raises(ValueError):
            load_provider(path)

    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            LinearSemanticProvider(np.zeros((3, 5)))


class TestTrainProvider:
    cfg = EmbeddingLossConfig()

    def corpus(self, n=8, seed=40):
        rng = np.random.default_rng(seed)
        return [make_training_scene(rng) for _ in range(n)]

    def test_zero_iterations_keeps_initial(self):
        scenes = self.corpus()
        log = []
        provider = train_provider(scenes, self.cfg, iterations=0, seed=1, loss_log=log)
        assert len(log) == 1 and log[0][0] == 0
        g, s = 0.0, 0.0
        for ts in scenes:
            gi, si = scene_losses(ts, provider, self.cfg)
            g, s = g + gi, s + si
        assert (g, s) == pytest.approx((log[0][1], log[0][2]))

    def test_deterministic_given_seed(self):
        scenes = self.corpus()
        a = train_provider(scenes, self.cfg, iterations=50, seed=7)
        b = train_provider(scenes, self.cfg, iterations=50, seed=7)
        assert np.array_equal(a.weights, b.weights)
        c = train_provider(scenes, self.cfg, iterations=50, seed=8)
        assert not np.array_equal(a.weights, c.weights)

    def test_loss_never_worse_than_initial(self):
        scenes = self.corpus(n=12, seed=41)
        log = []
        provider = train_provider(
            scenes, self.cfg, iterations=200, seed=2, loss_log=log
        )
        initial = log[0][1] + log[0][2]
        final = sum(
            sum(scene_losses(ts, provider, self.cfg)) for ts in scenes
        )
        assert final <= initial + 1e-12

    def test_single_gt_scenes_have_zero_separation(self):
        rng = np.random.default_rng(42)
        scenes = []
        for _ in range(5):
            box = Box(10, 10, 30, 30)
            scenes.append(
                EmbeddingTrainingScene(
                    boxes=[box],
                    gt_boxes=[box],
                    box_geometry=np.array([normalized_geometry(box, (100, 100))]),
                    gt_geometry=np.array([normalized_geometry(box, (100, 100))]),
                    box_descriptors=rng.normal(size=(1, 6)),
                    gt_descriptors=rng.normal(size=(1, 6)),
                )
            )
        log = []
        train_provider(scenes, self.cfg, iterations=60, seed=3, loss_log=log)
        assert all(s == 0.0 for _, _, s in log)

    def test_rho_one_disables_separation(self):
        cfg = EmbeddingLossConfig(rho=1.0)
        log = []
        train_provider(self.corpus(), cfg, iterations=60, seed=3, loss_log=log)
        assert all(s == 0.0 for _, _, s in log)

    def test_diverging_rate_raises(self):
        with pytest.raises(NonFiniteLoss):
            train_provider(
                self.corpus(), self.cfg, learning_rate=1e12, iterations=10, seed=4
            )

    def test_mixed_descriptor_dims_rejected(self):
        rng = np.random.default_rng(43)
        scenes = [make_training_scene(rng, dim=6), make_training_scene(rng, dim=7)]
        with pytest.raises(ValueError):
            train_provider(scenes, self.cfg, iterations=1)

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            train_provider([], self.cfg)


def scene_with_ids(ids):
    dets = [
        Detection(Box(i * 5, 0, i * 5 + 4, 4), score=0.9, object_id=oid)
        for i, oid in enumerate(ids)
    ]
    return Scene(id="s", detections=dets, ground_truths=[])


class TestOracleEmbeddings:
    def test_single_object(self):
        assert oracle_embeddings(scene_with_ids([0] * 5)) == [0.0] * 5

    def test_three_objects(self):
        es = oracle_embeddings(scene_with_ids([0, 1, 2, 1]))
        assert es == [0.0, 1.0, 2.0, 1.0]
        distinct = sorted(set(es))
        for a, b in zip(distinct, distinct[1:]):
            assert b - a >= 1.0

    def test_missing_identity(self):
        with pytest.raises(ValueError):
            oracle_embeddings(scene_with_ids([0, None]))


class TestSceneAdapters:
    def make_scene(self, image_size=(100.0, 100.0)):
        rng = np.random.default_rng(50)
        box = Box(10, 10, 30, 30)
        det = Detection(box, 0.9, descriptor=rng.normal(size=5))
        gt = GroundTruth(box, descriptor=rng.normal(size=5))
        ignored = GroundTruth(Box(50, 50, 60, 60), ignore=True)
        return Scene(
            id="s0",
            detections=[det],
            ground_truths=[gt, ignored],
            image_size=image_size,
        )

    def test_training_scene_filters_ignored(self):
        ts = training_scene(self.make_scene())
        assert len(ts.boxes) == 1 and len(ts.gt_boxes) == 1
        assert ts.box_geometry.shape == (1, 4)
        assert ts.box_descriptors.shape == (1, 5)

    def test_training_scene_requires_image_size(self):
        with pytest.raises(ValueError):
            training_scene(self.make_scene(image_size=None))

    def test_training_scene_requires_descriptors(self):
        scene = self.make_scene()
        bare = Scene(
            id="s1",
            detections=[Detection(Box(0, 0, 2, 2), 0.5)],
            ground_truths=scene.ground_truths,
            image_size=scene.image_size,
        )
        with pytest.raises(ValueError):
            training_scene(bare)

    def test_attach_provider_embeddings(self):
        scene = self.make_scene()
        provider = LinearSemanticProvider(np.random.default_rng(51).normal(size=(4, 5)))
        out = attach_provider_embeddings(scene, provider)
        det = out.detections[0]
        expected = provider.embedding(
            det.descriptor, normalized_geometry(det.box, scene.image_size)
        )
        assert det.embedding == expected
        assert scene.detections[0].embedding is None

    def test_normalized_geometry(self):
        g = normalized_geometry(Box(10, 20, 30, 60), (100.0, 200.0))
        assert g == pytest.approx([0.2, 0.2, 0.2, 0.2])
        with pytest.raises(ValueError):
            normalized_geometry(Box(0, 0, 1, 1), (0.0, 100.0))
