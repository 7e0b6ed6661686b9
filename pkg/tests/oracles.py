"""Independent brute-force implementations used as test oracles.

Everything here favors literal definitions over efficiency and shares no
code with the package.
"""
from __future__ import annotations

from fractions import Fraction

import numpy as np


def brute_skyline(notes: frozenset[tuple[int, int]]) -> frozenset[tuple[int, int]]:
    """Literal dominance scan with exact rational slopes."""
    threshold = Fraction(12, 8)  # one octave per beat, in frames

    def dominated(n: tuple[int, int]) -> bool:
        for m in notes:
            if m == n:
                continue
            if m[0] == n[0]:
                if m[1] > n[1]:
                    return True
            elif Fraction(m[1] - n[1], abs(m[0] - n[0])) > threshold:
                return True
        return False

    return frozenset(n for n in notes if not dominated(n))


def brute_max_matching(a: frozenset[tuple[int, int]], b: frozenset[tuple[int, int]]) -> int:
    """Exhaustive search over one-to-one matchings."""
    a_list = sorted(a)
    b_list = sorted(b)
    edges = [
        [j for j, nb in enumerate(b_list) if nb[1] == na[1] and abs(nb[0] - na[0]) <= 1]
        for na in a_list
    ]

    def best(i: int, used: frozenset[int]) -> int:
        if i == len(a_list):
            return 0
        result = best(i + 1, used)
        for j in edges[i]:
            if j not in used:
                result = max(result, 1 + best(i + 1, used | {j}))
        return result

    return best(0, frozenset())


def brute_note_overlap(a: frozenset, b: frozenset) -> float:
    if not a and not b:
        return 1.0
    if not a or not b:
        return 0.0
    return brute_max_matching(a, b) / max(len(a), len(b))


def brute_bar_similarity(a: frozenset, b: frozenset) -> float:
    def weighted(a_, b_):
        return 0.5 * brute_note_overlap(a_, b_) + 0.5 * brute_note_overlap(
            brute_skyline(a_), brute_skyline(b_)
        )

    def shift(s, k):
        return frozenset((o, p + k) for o, p in s)

    return max(weighted(a, b), weighted(a, shift(b, 12)), weighted(a, shift(b, -12)))


def brute_select_context(i: int, steps: list[tuple[int, int, str]]):
    """Literal per-definition scan. ``steps`` holds (start, end, label) in
    generation order, 1-based step ``i`` is the target. Returns a dict of
    (start, end) bounds or None per slot."""
    s_i, e_i, l_i = steps[i - 1]
    prior = steps[: i - 1]

    left = None
    candidates = [(s, e) for s, e, _ in prior if e <= s_i]
    if candidates:
        left = max(candidates, key=lambda se: se[1])

    right = None
    candidates = [(s, e) for s, e, _ in prior if s >= e_i]
    if candidates:
        right = min(candidates, key=lambda se: se[0])

    seed = None if i == 1 else (steps[0][0], steps[0][1])

    ref = None
    for s, e, l in prior:
        if l == l_i:
            ref = (s, e)
            break

    return {"left": left, "right": right, "seed": seed, "ref": ref}


def brute_kmeans_best_2partition(rows: np.ndarray) -> float:
    """Minimum 2-means cost by trying every bipartition (n <= 12)."""
    n = len(rows)
    best = np.inf
    for mask in range(1, 2**n - 1):
        sel = np.array([(mask >> i) & 1 for i in range(n)], dtype=bool)
        cost = 0.0
        for part in (rows[sel], rows[~sel]):
            centroid = part.mean(axis=0)
            cost += float(((part - centroid) ** 2).sum())
        best = min(best, cost)
    return best
