from __future__ import annotations

import numpy as np
import pytest

from segsong.score import Note, make_bar
from segsong.segmentation import (
    SegmentationConfig,
    eigen_decompose_symmetric,
    kmeans,
    segment,
    segment_bars,
    segment_full,
    similarity_matrix,
)
from oracles import brute_kmeans_best_2partition


def pattern_bar(index: int, pitches: list[int], spacing: int = 8) -> "Bar":
    notes = [Note(onset=(i * spacing) % 32, pitch=p, duration=4, velocity=80) for i, p in enumerate(pitches)]
    return make_bar(index, notes)


X_PITCHES = [60, 64, 67, 72]
Y_PITCHES = [30, 35, 40, 45]


def xyx_bars(block: int = 8):
    bars = []
    for i in range(block):
        bars.append(pattern_bar(i, X_PITCHES))
    for i in range(block, 2 * block):
        bars.append(pattern_bar(i, Y_PITCHES))
    for i in range(2 * block, 3 * block):
        bars.append(pattern_bar(i, X_PITCHES))
    return bars


class TestSimilarityMatrix:
    def test_identical_bars_all_ones(self):
        bars = [pattern_bar(i, X_PITCHES) for i in range(4)]
        s = similarity_matrix(bars)
        assert np.allclose(s, 1.0)

    def test_unit_diagonal(self, rng):
        from conftest import random_bar

        bars = [random_bar(rng, i) for i in range(6)]
        s = similarity_matrix(bars)
        assert np.allclose(np.diag(s), 1.0)
        assert np.allclose(s, s.T)

    def test_block_structure(self):
        s = similarity_matrix(xyx_bars(2))  # XXYYXX
        from segsong.similarity import bar_similarity, note_set

        bars = xyx_bars(2)
        for i in range(6):
            for j in range(6):
                assert s[i, j] == pytest.approx(bar_similarity(note_set(bars[i]), note_set(bars[j])))
        assert s[0, 1] == 1.0
        assert s[0, 2] < 0.2


class TestEigenSolver:
    def test_identity_matrix(self):
        lam, q = eigen_decompose_symmetric(np.eye(5))
        assert np.allclose(lam, 1.0)
        assert np.allclose(q @ q.T, np.eye(5))

    def test_diagonal_matrix(self):
        lam, _ = eigen_decompose_symmetric(np.diag([3.0, 1.0, 2.0]))
        assert np.allclose(lam, [1.0, 2.0, 3.0])

    def test_random_matrices_match_lapack(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            a = rng.normal(size=(20, 20))
            a = (a + a.T) / 2
            lam, q = eigen_decompose_symmetric(a)
            scale = np.max(np.abs(a))
            assert np.max(np.abs(q @ np.diag(lam) @ q.T - a)) <= 1e-8 * scale
            assert np.max(np.abs(q.T @ q - np.eye(20))) <= 1e-8
            assert np.max(np.abs(lam - np.linalg.eigvalsh(a))) <= 1e-8 * scale

    def test_rejects_non_symmetric(self):
        with pytest.raises(ValueError, match="symmetric"):
            eigen_decompose_symmetric(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_rejects_non_square(self):
        with pytest.raises(ValueError, match="square"):
            eigen_decompose_symmetric(np.zeros((2, 3)))


class TestKMeans:
    def test_k_equals_n_distinct_points(self):
        rows = np.array([[0.0], [10.0], [20.0], [30.0]])
        labels = kmeans(rows, 4, seed=0)
        assert len(set(labels.tolist())) == 4

    def test_two_blob_recovery_matches_exhaustive(self):
        rng = np.random.default_rng(4)
        blob_a = rng.normal(0.0, 0.05, size=(5, 2))
        blob_b = rng.normal(5.0, 0.05, size=(5, 2)) + np.array([5.0, 0.0])
        rows = np.vstack([blob_a, blob_b])
        labels = kmeans(rows, 2, seed=0)
        assert len(set(labels[:5].tolist())) == 1
        assert len(set(labels[5:].tolist())) == 1
        assert labels[0] != labels[5]
        centroids = np.array([rows[labels == c].mean(axis=0) for c in sorted(set(labels.tolist()))])
        inertia = float(((rows - centroids[labels]) ** 2).sum())
        assert inertia == pytest.approx(brute_kmeans_best_2partition(rows), rel=1e-9)

    def test_duplicated_points_share_labels(self):
        rows = np.array([[1.0, 1.0], [1.0, 1.0], [5.0, 5.0], [1.0, 1.0]])
        labels = kmeans(rows, 2, seed=0)
        assert labels[0] == labels[1] == labels[3]
        assert labels[2] != labels[0]

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(5)
        rows = rng.normal(size=(30, 3))
        assert np.array_equal(kmeans(rows, 3, seed=9), kmeans(rows, 3, seed=9))

    def test_k_larger_than_n_rejected(self):
        with pytest.raises(ValueError):
            kmeans(np.zeros((3, 2)), 4)


class TestSegment:
    def test_seven_bars_single_segment(self):
        s = similarity_matrix([pattern_bar(i, X_PITCHES) for i in range(7)])
        result = segment(s)
        assert len(result.segments) == 1
        assert result.segments[0].label == "A"
        assert (result.segments[0].start, result.segments[0].end) == (1, 7)

    def test_xyx_recovers_aba(self):
        result = segment_bars(xyx_bars())
        assert len(result.segments) == 3
        assert [seg.label for seg in result.segments] == ["A", "B", "A"]
        assert abs(result.segments[0].end - 8) <= 1
        assert abs(result.segments[1].end - 16) <= 1

    def test_alpha_one_gives_path_graph_spectrum(self, rng):
        # similarity is ignored entirely at alpha=1: the blended matrix is
        # the banded adjacency, whose Laplacian is the path graph's
        for n in (16, 20, 24):
            s = rng.uniform(0.0, 1.0, size=(n, n))
            s = (s + s.T) / 2
            np.fill_diagonal(s, 1.0)
            result, state = segment_full(s, SegmentationConfig(alpha=1.0))
            analytic = 2.0 - 2.0 * np.cos(np.pi * np.arange(n) / n)
            assert np.max(np.abs(state.eigenvalues - np.sort(analytic))) <= 1e-8
            if n < 24:  # K_max = 2: the gap scan has only j = 2 to pick
                assert state.k == 2
                assert len(result.segments) == 2

    def test_alpha_one_larger_song_still_contiguous(self, rng):
        # path-graph eigen-gaps grow with j, so k saturates at K_max; the
        # clustering must still come out contiguous
        n = 24
        s = rng.uniform(0.0, 1.0, size=(n, n))
        s = (s + s.T) / 2
        np.fill_diagonal(s, 1.0)
        result, state = segment_full(s, SegmentationConfig(alpha=1.0))
        assert state.k == state.k_max
        assert len(result.segments) == state.k

    def test_block_constant_matrices_recover_segment_count(self):
        # two alternating patterns, exactly block-constant similarity
        for blocks in (2, 3):
            n = 8 * blocks
            s = np.zeros((n, n))
            for i in range(n):
                for j in range(n):
                    s[i, j] = 1.0 if (i // 8) % 2 == (j // 8) % 2 else 0.05
            result = segment(s)
            assert len(result.segments) == blocks
            expected = ["A", "B", "A"][:blocks]
            assert [seg.label for seg in result.segments] == expected

    def test_deterministic(self):
        s = similarity_matrix(xyx_bars())
        assert segment(s) == segment(s)

    def test_tiling_and_adjacent_labels(self, rng):
        for _ in range(5):
            n = int(rng.integers(16, 40))
            s = rng.uniform(size=(n, n))
            s = (s + s.T) / 2
            np.fill_diagonal(s, 1.0)
            result = segment(s)
            assert result.n_bars == n
            for i in range(1, len(result.segments)):
                assert result.segments[i].label != result.segments[i - 1].label
                assert result.segments[i].start == result.segments[i - 1].end + 1

    def test_rejects_non_symmetric(self):
        with pytest.raises(ValueError):
            segment(np.array([[1.0, 0.5], [0.2, 1.0]]))

    def test_bad_alpha_rejected(self):
        with pytest.raises(ValueError):
            SegmentationConfig(alpha=1.5)
