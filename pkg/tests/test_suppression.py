import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sgnms.geometry import Box, iou
from sgnms.suppression import (
    Detection,
    MissingEmbedding,
    PhiFunction,
    PhiKind,
    greedy_nms,
    make_algorithm,
    phi_eval,
    sg_nms,
    soft_nms_linear,
    suppress_per_class,
)


def det(x1, y1, x2, y2, score, embedding=None, class_id=0):
    return Detection(Box(x1, y1, x2, y2), score, embedding=embedding, class_id=class_id)


def random_detections(rng, n, with_embeddings=True, classes=1):
    dets = []
    for _ in range(n):
        x1, y1 = rng.uniform(0, 80, 2)
        w, h = rng.uniform(2, 40, 2)
        dets.append(
            Detection(
                Box(x1, y1, x1 + w, y1 + h),
                score=float(rng.uniform(0, 1)),
                embedding=float(rng.uniform(-5, 5)) if with_embeddings else None,
                class_id=int(rng.integers(classes)),
            )
        )
    return dets


class TestGreedy:
    def test_duplicate_removed(self):
        dets = [det(0, 0, 2, 2, 0.9), det(0, 0, 2, 2, 0.8)]
        result = greedy_nms(dets, 0.5)
        assert result.kept_indices == [0]
        assert result.suppressed_by == {1: 0}

    def test_disjoint_kept(self):
        dets = [det(0, 0, 2, 2, 0.9), det(10, 10, 12, 12, 0.8)]
        result = greedy_nms(dets, 0.5)
        assert result.kept_indices == [0, 1]

    def test_third_overlap_suppressed(self):
        # IoU(A, B) = 1/3 >= 0.3
        dets = [det(0, 0, 2, 2, 0.9), det(1, 0, 3, 2, 0.8)]
        result = greedy_nms(dets, 0.3)
        assert result.kept_indices == [0]
        assert result.suppressed_by == {1: 0}

    def test_empty_input(self):
        result = greedy_nms([], 0.5)
        assert result.kept == [] and result.suppressed_by == {}

    def test_nt_zero_keeps_single_box(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            dets = random_detections(rng, int(rng.integers(1, 10)))
            result = greedy_nms(dets, 0.0)
            assert len(result.kept) == 1
            assert result.kept_indices[0] == max(
                range(len(dets)), key=lambda i: (dets[i].score, -i)
            )

    def test_nt_above_one_keeps_all(self):
        rng = np.random.default_rng(6)
        dets = random_detections(rng, 8)
        assert len(greedy_nms(dets, 1.0 + 1e-9).kept) == 8

    def test_equal_scores_lower_index_wins(self):
        dets = [det(0, 0, 2, 2, 0.7), det(0, 0, 2, 2, 0.7)]
        result = greedy_nms(dets, 0.5)
        assert result.kept_indices == [0]

    def test_kept_scores_non_increasing(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            dets = random_detections(rng, 12)
            scores = [s for _, s in greedy_nms(dets, 0.4).kept]
            assert scores == sorted(scores, reverse=True)

    def test_partition_of_input(self):
        rng = np.random.default_rng(8)
        dets = random_detections(rng, 15)
        result = greedy_nms(dets, 0.4)
        kept = set(result.kept_indices)
        suppressed = set(result.suppressed_by)
        assert kept | suppressed == set(range(15))
        assert kept & suppressed == set()


class TestSoft:
    def test_linear_decay_value(self):
        # IoU(A, B) = 0.6 exactly (same size, shifted by w/4)
        dets = [det(0, 0, 4, 2, 1.0), det(1, 0, 5, 2, 0.9)]
        result = soft_nms_linear(dets, 0.3, score_floor=0.0)
        rescored = dict(zip(result.kept_indices, (s for _, s in result.kept)))
        assert abs(rescored[1] - 0.36) < 1e-12
        assert rescored[0] == 1.0

    def test_below_nt_unchanged(self):
        dets = [det(0, 0, 4, 2, 1.0), det(1, 0, 5, 2, 0.9)]
        result = soft_nms_linear(dets, 0.7, score_floor=0.0)
        assert [s for _, s in result.kept] == [1.0, 0.9]

    def test_floor_zero_never_drops(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            dets = random_detections(rng, 10)
            result = soft_nms_linear(dets, 0.2, score_floor=0.0)
            assert len(result.kept) == 10
            assert result.suppressed_by == {}

    def test_floor_drops_and_records(self):
        dets = [det(0, 0, 2, 2, 1.0), det(0, 0, 2, 2, 0.5)]
        result = soft_nms_linear(dets, 0.5, score_floor=0.001)
        assert result.kept_indices == [0]
        assert result.suppressed_by == {1: 0}

    def test_kept_resorted_by_decayed_score(self):
        # box 1 decays below box 2's score, so the output order flips
        dets = [
            det(0, 0, 4, 2, 1.0),
            det(1, 0, 5, 2, 0.9),
            det(50, 50, 54, 52, 0.5),
        ]
        result = soft_nms_linear(dets, 0.3, score_floor=0.0)
        assert result.kept_indices == [0, 2, 1]
        scores = [s for _, s in result.kept]
        assert scores == sorted(scores, reverse=True)


class TestPhi:
    def test_constant(self):
        phi = PhiFunction(PhiKind.CONSTANT, 0.9)
        assert phi_eval(phi, 0.0) == 0.9
        assert phi_eval(phi, 1.0) == 0.9

    def test_linear(self):
        assert phi_eval(PhiFunction(PhiKind.LINEAR, 1.7), 0.5) == pytest.approx(0.85)

    def test_square_zero(self):
        assert phi_eval(PhiFunction(PhiKind.SQUARE, 2.6), 0.0) == 0.0

    def test_requires_positive_t(self):
        with pytest.raises(ValueError):
            PhiFunction(PhiKind.LINEAR, 0.0)
        with pytest.raises(ValueError):
            PhiFunction(PhiKind.CONSTANT, -1.0)

    @given(
        st.sampled_from(list(PhiKind)),
        st.floats(0.01, 10),
        st.floats(0, 1),
        st.floats(0, 1),
    )
    def test_monotone_in_tau(self, kind, t, tau1, tau2):
        phi = PhiFunction(kind, t)
        lo, hi = sorted((tau1, tau2))
        assert phi(lo) <= phi(hi)

    @given(
        st.sampled_from(list(PhiKind)),
        st.floats(0.01, 10),
        st.floats(0.01, 10),
        st.floats(0, 1),
    )
    def test_monotone_in_t(self, kind, t1, t2, tau):
        lo, hi = sorted((t1, t2))
        assert PhiFunction(kind, lo)(tau) <= PhiFunction(kind, hi)(tau)


class TestSgNms:
    def test_same_object_pair_suppressed(self):
        # IoU = 0.8 exactly; phi_linear(0.8) = 1.36 >= |delta e| = 0.1
        dets = [det(0, 0, 9, 1, 0.9, embedding=1.0), det(1, 0, 10, 1, 0.8, embedding=1.1)]
        result = sg_nms(dets, 0.5, PhiFunction(PhiKind.LINEAR, 1.7))
        assert result.kept_indices == [0]
        assert result.suppressed_by == {1: 0}

    def test_occluded_pair_kept(self):
        dets = [det(0, 0, 9, 1, 0.9, embedding=0.0), det(1, 0, 10, 1, 0.8, embedding=2.0)]
        result = sg_nms(dets, 0.5, PhiFunction(PhiKind.LINEAR, 1.7))
        assert result.kept_indices == [0, 1]

    def test_missing_embedding_raises(self):
        dets = [det(0, 0, 2, 2, 0.9, embedding=1.0), det(0, 0, 2, 2, 0.8)]
        with pytest.raises(MissingEmbedding):
            sg_nms(dets, 0.5, PhiFunction(PhiKind.CONSTANT, 1.0))

    def test_negative_phi_keeps_everything(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            dets = random_detections(rng, 10)
            result = sg_nms(dets, 0.0, lambda tau: -1.0)
            assert len(result.kept) == 10

    def test_infinite_phi_equals_greedy(self):
        rng = np.random.default_rng(11)
        phi = PhiFunction(PhiKind.CONSTANT, math.inf)
        for _ in range(200):
            dets = random_detections(rng, int(rng.integers(0, 12)))
            a = greedy_nms(dets, 0.5)
            b = sg_nms(dets, 0.5, phi)
            assert a.kept_indices == b.kept_indices
            assert [s for _, s in a.kept] == [s for _, s in b.kept]
            assert a.suppressed_by == b.suppressed_by

    def test_no_rescoring(self):
        rng = np.random.default_rng(12)
        dets = random_detections(rng, 10)
        result = sg_nms(dets, 0.3, PhiFunction(PhiKind.LINEAR, 1.7))
        for d, s in result.kept:
            assert s == d.score

    def test_two_box_kept_set_monotone_in_t(self):
        # with a single possible suppression there is no cascade, so growing t
        # can only shrink the kept set
        rng = np.random.default_rng(13)
        for _ in range(100):
            dets = random_detections(rng, 2)
            for kind in PhiKind:
                kept = [
                    set(sg_nms(dets, 0.3, PhiFunction(kind, t)).kept_indices)
                    for t in (0.2, 0.7, 1.5, 4.0)
                ]
                for small, big in zip(kept, kept[1:]):
                    assert big <= small

    def test_oracle_gap_keeps_one_per_object(self):
        # objects 1.5 apart in embedding space, phi never reaches 1.5
        rng = np.random.default_rng(14)
        phi = PhiFunction(PhiKind.LINEAR, 1.4)
        for _ in range(50):
            centers = [(20, 20), (23, 20), (60, 60)]
            dets = []
            for obj, (cx, cy) in enumerate(centers):
                for _ in range(int(rng.integers(1, 4))):
                    dx, dy = rng.uniform(-0.5, 0.5, 2)
                    dets.append(
                        Detection(
                            Box(cx + dx, cy + dy, cx + dx + 10, cy + dy + 8),
                            score=float(rng.uniform(0.5, 1.0)),
                            embedding=obj * 1.5,
                            class_id=0,
                        )
                    )
            result = sg_nms(dets, 0.5, phi)
            kept_objects = [int(d.embedding / 1.5) for d, _ in result.kept]
            assert sorted(kept_objects) == sorted(set(kept_objects))
            present = {int(d.embedding / 1.5) for d in dets}
            assert set(kept_objects) == present


class TestPerClass:
    def test_classes_do_not_suppress_each_other(self):
        dets = [det(0, 0, 2, 2, 0.9, class_id=0), det(0, 0, 2, 2, 0.8, class_id=1)]
        result = suppress_per_class(dets, make_algorithm("greedy", nt=0.5))
        assert result.kept_indices == [0, 1]

    def test_single_class_matches_direct_call(self):
        rng = np.random.default_rng(15)
        dets = random_detections(rng, 12)
        direct = greedy_nms(dets, 0.4)
        merged = suppress_per_class(dets, make_algorithm("greedy", nt=0.4))
        assert merged.kept_indices == direct.kept_indices
        assert merged.suppressed_by == direct.suppressed_by

    def test_empty_input(self):
        result = suppress_per_class([], make_algorithm("greedy", nt=0.5))
        assert result.kept == []

    def test_merged_order_by_final_score(self):
        rng = np.random.default_rng(16)
        dets = random_detections(rng, 20, classes=3)
        result = suppress_per_class(dets, make_algorithm("soft", nt=0.3))
        scores = [s for _, s in result.kept]
        assert scores == sorted(scores, reverse=True)


class TestMakeAlgorithm:
    def test_unknown_name(self):
        with pytest.raises(ValueError):
            make_algorithm("cascade", nt=0.5)

    def test_sg_requires_t(self):
        with pytest.raises(ValueError):
            make_algorithm("sg-linear", nt=0.5)

    def test_names_dispatch(self):
        dets = [det(0, 0, 2, 2, 0.9, embedding=0.0), det(0, 0, 2, 2, 0.8, embedding=5.0)]
        assert len(make_algorithm("greedy", nt=0.5)(dets).kept) == 1
        assert len(make_algorithm("sg-constant", nt=0.5, t=1.0)(dets).kept) == 2
