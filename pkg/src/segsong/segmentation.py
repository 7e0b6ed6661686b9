"""Structure extraction by spectral clustering of the bar-similarity matrix.

Pipeline: pairwise bar similarity, banded adjacency regularization, the
unnormalized graph Laplacian, eigen-gap selection of the cluster count,
then seeded k-means over the leading eigenvectors. Split points fall
wherever consecutive bars land in different clusters.

The eigensolver is a dense cyclic Jacobi iteration: song-scale matrices
stay tiny, and the classic algorithm keeps the whole path auditable
against an independent solver in tests.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .score import Bar
from .similarity import bar_similarity, note_set
from .structure import Structure, from_labels, single_segment


@dataclass(frozen=True)
class SegmentationConfig:
    alpha: float = 0.7  # adjacency blend weight
    k_max_cap: int = 6
    floor: float = 0.3  # similarity floor applied before blending
    kmeans_seed: int = 0
    kmeans_restarts: int = 10
    row_normalize: bool = False  # Ng-Jordan-Weiss style row scaling

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha {self.alpha} outside [0, 1]")
        if self.k_max_cap < 1:
            raise ValueError("k_max_cap must be >= 1")


@dataclass
class SegmentationState:
    """Intermediate artifacts of one segmentation run."""

    similarity: np.ndarray
    adjacency: np.ndarray
    blended: np.ndarray
    degree: np.ndarray
    laplacian: np.ndarray
    eigenvalues: np.ndarray
    k_max: int
    k: int
    bar_labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


def similarity_matrix(bars: Sequence[Bar]) -> np.ndarray:
    """Symmetric matrix of pairwise bar similarities, unit diagonal."""
    sets = [note_set(b) for b in bars]
    n = len(sets)
    s = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            s[i, j] = s[j, i] = bar_similarity(sets[i], sets[j])
    return s


def _check_symmetric(matrix: np.ndarray, name: str) -> np.ndarray:
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m))) if m.size else 1.0)
    if float(np.max(np.abs(m - m.T))) > 1e-9 * scale:
        raise ValueError(f"{name} is not symmetric")
    return m


def eigen_decompose_symmetric(
    matrix: np.ndarray, off_tol: float = 1e-10, max_sweeps: int = 100
) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns eigenvalues in ascending order and the matching orthonormal
    eigenvector columns. Sweeps run until the largest off-diagonal entry
    falls below ``off_tol`` relative to the matrix scale.
    """
    a = _check_symmetric(matrix, "matrix").copy()
    n = a.shape[0]
    if n > 512:
        raise ValueError(f"matrix of size {n} exceeds the supported 512")
    a = (a + a.T) / 2.0
    q = np.eye(n)
    if n > 1:
        scale = max(1.0, float(np.max(np.abs(a))))
        for _ in range(max_sweeps):
            off = float(np.max(np.abs(a - np.diag(np.diag(a)))))
            if off <= off_tol * scale:
                break
            for p in range(n - 1):
                for r in range(p + 1, n):
                    apr = a[p, r]
                    if abs(apr) <= 1e-2 * off_tol * scale:
                        continue
                    theta = (a[r, r] - a[p, p]) / (2.0 * apr)
                    t = np.sign(theta) if theta != 0 else 1.0
                    t = t / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    c = 1.0 / np.sqrt(t * t + 1.0)
                    s = t * c
                    col_p, col_r = a[:, p].copy(), a[:, r].copy()
                    a[:, p] = c * col_p - s * col_r
                    a[:, r] = s * col_p + c * col_r
                    row_p, row_r = a[p, :].copy(), a[r, :].copy()
                    a[p, :] = c * row_p - s * row_r
                    a[r, :] = s * row_p + c * row_r
                    a[p, r] = a[r, p] = 0.0
                    qp, qr = q[:, p].copy(), q[:, r].copy()
                    q[:, p] = c * qp - s * qr
                    q[:, r] = s * qp + c * qr
    eigenvalues = np.diag(a).copy()
    order = np.argsort(eigenvalues, kind="stable")
    return eigenvalues[order], q[:, order]


def kmeans(rows: np.ndarray, k: int, seed: int = 0, restarts: int = 10) -> np.ndarray:
    """Seeded k-means: k-means++ starts, Lloyd iterations, best of ``restarts``.

    Deterministic for a fixed seed; assignment ties go to the lowest
    centroid index. Clusters that empty out are re-seeded on the point
    farthest from its current centroid.
    """
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2:
        raise ValueError(f"rows must be 2-D, got shape {rows.shape}")
    n = rows.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"k={k} outside [1, {n}]")
    rng = np.random.default_rng(seed)

    best_labels: np.ndarray | None = None
    best_inertia = np.inf
    for _ in range(max(1, restarts)):
        centroids = _kmeans_pp(rows, k, rng)
        labels = np.zeros(n, dtype=int)
        for _ in range(100):
            dist = ((rows[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
            new_labels = np.argmin(dist, axis=1)
            for c in range(k):
                members = new_labels == c
                if members.any():
                    centroids[c] = rows[members].mean(axis=0)
                else:
                    far = int(np.argmax(dist[np.arange(n), new_labels]))
                    if dist[far, new_labels[far]] > 0:
                        centroids[c] = rows[far]
                        new_labels[far] = c
            if np.array_equal(new_labels, labels):
                labels = new_labels
                break
            labels = new_labels
        inertia = float(((rows - centroids[labels]) ** 2).sum())
        if inertia < best_inertia - 1e-12:
            best_inertia = inertia
            best_labels = labels
    assert best_labels is not None
    return best_labels


def _kmeans_pp(rows: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = rows.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((rows - rows[chosen[0]]) ** 2).sum(axis=1)
    while len(chosen) < k:
        total = float(d2.sum())
        if total <= 0:
            pool = np.setdiff1d(np.arange(n), np.array(chosen))
            nxt = int(pool[rng.integers(len(pool))]) if len(pool) else int(rng.integers(n))
        else:
            nxt = int(rng.choice(n, p=d2 / total))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((rows - rows[nxt]) ** 2).sum(axis=1))
    return rows[chosen].astype(float).copy()


def segment_full(
    similarity: np.ndarray, config: SegmentationConfig | None = None
) -> tuple[Structure, SegmentationState]:
    """Full segmentation, returning the structure plus intermediates."""
    cfg = config or SegmentationConfig()
    s = _check_symmetric(similarity, "similarity matrix")
    n = s.shape[0]
    if n < 1:
        raise ValueError("empty similarity matrix")

    adjacency = np.eye(n)
    idx = np.arange(n - 1)
    adjacency[idx, idx + 1] = 1.0
    adjacency[idx + 1, idx] = 1.0

    blended = (1.0 - cfg.alpha) * np.maximum(cfg.floor, s) + cfg.alpha * adjacency
    degree = np.diag(blended.sum(axis=1))
    laplacian = degree - blended

    k_max = min(cfg.k_max_cap, n // 8)
    state = SegmentationState(
        similarity=s,
        adjacency=adjacency,
        blended=blended,
        degree=degree,
        laplacian=laplacian,
        eigenvalues=np.zeros(0),
        k_max=k_max,
        k=1,
    )
    if k_max < 2:
        state.bar_labels = np.zeros(n, dtype=int)
        return single_segment(n), state

    eigenvalues, eigenvectors = eigen_decompose_symmetric(laplacian)
    state.eigenvalues = eigenvalues

    gaps = eigenvalues[1:k_max] - eigenvalues[: k_max - 1]  # gap j = lam_j - lam_{j-1}, j = 2..k_max
    k = 2 + int(np.argmax(gaps))  # argmax takes the first max: smallest j wins ties
    state.k = k

    vectors = eigenvectors[:, :k].copy()
    norms = np.linalg.norm(vectors, axis=0)
    vectors /= np.where(norms > 0, norms, 1.0)
    if cfg.row_normalize:
        row_norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        vectors = vectors / np.where(row_norms > 0, row_norms, 1.0)

    labels = kmeans(vectors, k, seed=cfg.kmeans_seed, restarts=cfg.kmeans_restarts)
    state.bar_labels = labels
    letters = [chr(ord("A") + int(l)) for l in labels]
    return from_labels(letters), state


def segment(similarity: np.ndarray, config: SegmentationConfig | None = None) -> Structure:
    """Segment a song given its bar-similarity matrix."""
    result, _ = segment_full(similarity, config)
    return result


def segment_bars(bars: Sequence[Bar], config: SegmentationConfig | None = None) -> Structure:
    """Convenience: similarity matrix plus :func:`segment` in one call."""
    return segment(similarity_matrix(bars), config)
