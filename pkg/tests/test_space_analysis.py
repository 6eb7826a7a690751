"""Word-pair probes, orthogonal alignment, PCA, and correlation."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from metaseq.embedding_io import ContextualLayerFile
from metaseq.errors import (
    AlignmentError,
    DegeneracyError,
    DimensionError,
    NumericError,
    ParameterError,
)
from metaseq.space_analysis import (
    avg_l2,
    avg_pair_cosine,
    build_pairs,
    pca_2d,
    pearson_r,
    procrustes_align,
    random_orthogonal,
    svd,
)
from metaseq.tensor_core import RngStream
from metaseq.train_eval import SentenceRecord, TokenRecord


def _sentence(sid, rows):
    return SentenceRecord(sid, "news",
                          [TokenRecord(text, "VERB", label, bool(target))
                           for text, label, target in rows])


class TestBuildPairs:
    def test_dual_labelled_words_paired(self):
        sents = [
            _sentence("a", [("wash", 0, 1), ("run", 1, 1)]),
            _sentence("b", [("wash", 1, 1), ("walk", 0, 1)]),
        ]
        pairs = build_pairs(sents, seed=0)
        assert len(pairs) == 1
        pair = pairs.pairs[0]
        assert pair.word == "wash"
        assert pair.metaphor.sentence_index == 1
        assert pair.literal.sentence_index == 0

    def test_no_dual_word_gives_empty_set(self):
        sents = [_sentence("a", [("x", 0, 1), ("y", 1, 1)])]
        assert len(build_pairs(sents, seed=0)) == 0

    def test_non_target_tokens_ignored(self):
        sents = [
            _sentence("a", [("wash", 0, 0)]),
            _sentence("b", [("wash", 1, 1)]),
        ]
        assert len(build_pairs(sents, seed=0)) == 0

    def test_sampling_seeded(self):
        sents = [_sentence(f"s{i}", [("wash", i % 2, 1)]) for i in range(20)]
        a = build_pairs(sents, seed=5)
        b = build_pairs(sents, seed=5)
        assert a.pairs == b.pairs

    def test_each_word_appears_once(self):
        sents = [
            _sentence("a", [("u", 0, 1), ("v", 0, 1)]),
            _sentence("b", [("u", 1, 1), ("v", 1, 1)]),
            _sentence("c", [("u", 1, 1)]),
        ]
        pairs = build_pairs(sents, seed=1)
        assert sorted(p.word for p in pairs.pairs) == ["u", "v"]


class TestAvgPairCosine:
    def _pairs_and_layer(self, met_vec, lit_vec):
        sents = [_sentence("a", [("w", 0, 1)]), _sentence("b", [("w", 1, 1)])]
        pairs = build_pairs(sents, seed=0)
        layer = ContextualLayerFile(1, len(met_vec), {
            0: np.asarray([lit_vec], dtype=np.float32),
            1: np.asarray([met_vec], dtype=np.float32),
        })
        return pairs, layer

    def test_identical_vectors_give_one(self):
        pairs, layer = self._pairs_and_layer([1.0, 2.0], [1.0, 2.0])
        assert avg_pair_cosine(pairs, layer) == pytest.approx(1.0)

    def test_orthogonal_vectors_give_zero(self):
        pairs, layer = self._pairs_and_layer([1.0, 0.0], [0.0, 1.0])
        assert avg_pair_cosine(pairs, layer) == pytest.approx(0.0, abs=1e-12)

    def test_injected_angle_recovered(self):
        rng = np.random.default_rng(3)
        theta = 0.7
        sents, lit_rows, met_rows = [], {}, {}
        for i in range(10):
            u = rng.normal(size=6)
            u /= np.linalg.norm(u)
            v = rng.normal(size=6)
            v -= (v @ u) * u
            v /= np.linalg.norm(v)
            sents.append(_sentence(f"l{i}", [(f"w{i}", 0, 1)]))
            sents.append(_sentence(f"m{i}", [(f"w{i}", 1, 1)]))
            lit_rows[2 * i] = np.asarray([u], dtype=np.float32)
            met_rows[2 * i + 1] = np.asarray(
                [np.cos(theta) * u + np.sin(theta) * v], dtype=np.float32)
        layer = ContextualLayerFile(1, 6, {**lit_rows, **met_rows})
        pairs = build_pairs(sents, seed=0)
        assert len(pairs) == 10
        assert avg_pair_cosine(pairs, layer) == pytest.approx(np.cos(theta), abs=1e-6)

    def test_scale_invariance_per_vector(self):
        pairs, layer = self._pairs_and_layer([1.0, 1.0], [2.0, 0.0])
        base = avg_pair_cosine(pairs, layer)
        scaled = ContextualLayerFile(1, 2, {
            idx: mat * np.float32(idx + 3.5) for idx, mat in layer.sentences.items()
        })
        assert avg_pair_cosine(pairs, scaled) == pytest.approx(base, abs=1e-7)

    def test_unresolved_locator_names_sentence(self):
        pairs, layer = self._pairs_and_layer([1.0, 0.0], [0.0, 1.0])
        broken = ContextualLayerFile(1, 2, {0: layer.sentences[0]})
        with pytest.raises(AlignmentError, match="sentence 1"):
            avg_pair_cosine(pairs, broken)


class TestSvd:
    def test_diagonal(self):
        _, s, _ = svd(np.diag([3.0, 1.0]))
        np.testing.assert_allclose(s, [3.0, 1.0])

    def test_identity(self):
        _, s, _ = svd(np.eye(4))
        np.testing.assert_allclose(s, np.ones(4))

    def test_reconstruction_and_orthonormality(self):
        rng = np.random.default_rng(0)
        m = rng.normal(size=(8, 8))
        u, s, vt = svd(m)
        assert np.linalg.norm(u @ np.diag(s) @ vt - m) < 1e-8 * np.linalg.norm(m)
        assert np.linalg.norm(u.T @ u - np.eye(8)) < 1e-8
        assert np.linalg.norm(vt @ vt.T - np.eye(8)) < 1e-8
        assert (np.diff(s) <= 0).all() and (s >= 0).all()

    def test_non_finite_rejected(self):
        with pytest.raises(NumericError):
            svd(np.array([[1.0, np.inf], [0.0, 1.0]]))


class TestProcrustes:
    def test_self_alignment(self):
        rng = np.random.default_rng(1)
        b = rng.normal(size=(20, 5))
        result = procrustes_align(b, b)
        assert result.avg_l2 < 1e-10
        np.testing.assert_allclose(result.rotation, np.eye(5), atol=1e-10)

    def test_planted_rotation_recovered(self):
        rng = RngStream(2024)
        q = random_orthogonal(8, rng)
        b = np.random.default_rng(7).normal(size=(50, 8))
        e = b @ q.T          # column-convention e = q . b
        result = procrustes_align(b, e)
        assert np.linalg.norm(result.rotation - q) < 1e-6
        assert result.avg_l2 < 1e-8
        assert result.orthogonality_residual < 1e-8

    def test_rotation_always_orthogonal(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            b = rng.normal(size=(12, 4))
            e = rng.normal(size=(12, 4))
            result = procrustes_align(b, e)
            w = result.rotation
            assert np.linalg.norm(w @ w.T - np.eye(4)) < 1e-8

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            procrustes_align(np.zeros((5, 3)), np.zeros((6, 3)))

    def test_optimality_small_instances(self):
        data_rng = np.random.default_rng(5)
        q_rng = RngStream(99)
        for d, n in ((2, 4), (3, 6)):
            b = data_rng.normal(size=(n, d))
            e = data_rng.normal(size=(n, d))
            best = np.linalg.norm(procrustes_align(b, e).rotated - e)
            for _ in range(2000):
                q = random_orthogonal(d, q_rng)
                assert best <= np.linalg.norm(b @ q.T - e) + 1e-9


class TestAvgL2:
    def test_identical(self):
        m = np.arange(12.0).reshape(4, 3)
        assert avg_l2(m, m) == 0.0

    def test_three_four_five(self):
        assert avg_l2([[0.0, 0.0]], [[3.0, 4.0]]) == pytest.approx(5.0)

    def test_mean_of_row_distances(self):
        e = np.array([[0.0, 0.0], [0.0, 0.0]])
        b = np.array([[3.0, 4.0], [1.0, 0.0]])
        assert avg_l2(e, b) == pytest.approx(3.0)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            avg_l2(np.zeros((2, 2)), np.zeros((3, 2)))


class TestPca2d:
    def test_collinear_points(self):
        v = np.array([3.0, 4.0]) / 5.0
        pts = np.outer([0.0, 1.0, 2.0, 3.0], v)
        proj = pca_2d(pts)
        np.testing.assert_allclose(np.abs(proj.axes[0]), np.abs(v), atol=1e-12)
        assert proj.axes[0][np.argmax(np.abs(proj.axes[0]))] > 0
        assert proj.explained_variance[0] == pytest.approx(1.0)
        assert proj.explained_variance[1] == pytest.approx(0.0, abs=1e-12)

    def test_unit_square_symmetry(self):
        pts = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
        proj = pca_2d(pts)
        assert proj.explained_variance[0] == pytest.approx(0.5)
        assert proj.explained_variance[1] == pytest.approx(0.5)

    def test_projection_non_expansive(self):
        rng = np.random.default_rng(4)
        pts = rng.normal(size=(15, 6))
        proj = pca_2d(pts)
        for i in range(15):
            for j in range(i):
                original = np.linalg.norm(pts[i] - pts[j])
                projected = np.linalg.norm(proj.points[i] - proj.points[j])
                assert projected <= original + 1e-12

    def test_ratios_sum_to_one_for_rank_two(self):
        rng = np.random.default_rng(6)
        basis = rng.normal(size=(2, 7))
        pts = rng.normal(size=(20, 2)) @ basis
        proj = pca_2d(pts)
        assert sum(proj.explained_variance) == pytest.approx(1.0)

    def test_ratios_never_exceed_one(self):
        rng = np.random.default_rng(8)
        proj = pca_2d(rng.normal(size=(30, 5)))
        assert 0.0 <= proj.explained_variance[1] <= proj.explained_variance[0] <= 1.0
        assert sum(proj.explained_variance) <= 1.0 + 1e-12

    def test_rank_zero_rejected(self):
        with pytest.raises(DegeneracyError):
            pca_2d(np.ones((5, 3)))

    def test_too_few_rows(self):
        with pytest.raises(ParameterError):
            pca_2d(np.zeros((2, 3)))

    def test_axes_orthonormal(self):
        rng = np.random.default_rng(9)
        proj = pca_2d(rng.normal(size=(12, 4)))
        np.testing.assert_allclose(proj.axes @ proj.axes.T, np.eye(2), atol=1e-10)


class TestPearson:
    def test_perfect_positive(self):
        x = np.arange(10.0)
        assert pearson_r(x, x) == pytest.approx(1.0)

    def test_perfect_negative_affine(self):
        x = np.arange(10.0)
        assert pearson_r(x, -2.0 * x + 7.0) == pytest.approx(-1.0)

    def test_hand_value(self):
        assert pearson_r([1.0, 2.0, 3.0], [1.0, 2.0, 4.0]) == pytest.approx(
            0.9819805060619659, abs=1e-12)

    def test_zero_variance_rejected(self):
        with pytest.raises(DegeneracyError):
            pearson_r([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            pearson_r([1.0, 2.0], [1.0, 2.0, 3.0])

    @given(st.floats(min_value=0.01, max_value=100.0),
           st.floats(min_value=-50.0, max_value=50.0))
    def test_affine_invariance(self, scale, shift):
        x = np.array([0.0, 1.0, 3.0, 4.0, 9.0])
        y = np.array([2.0, 1.0, 5.0, 4.0, 7.0])
        base = pearson_r(x, y)
        assert pearson_r(x, scale * y + shift) == pytest.approx(base, abs=1e-9)
        assert pearson_r(scale * x + shift, y) == pytest.approx(base, abs=1e-9)
