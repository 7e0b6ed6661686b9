from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np
import pytest

from segsong.context import (
    ContextSegment,
    ContextSet,
    GenerationPlan,
    PlacedBars,
    bind_context,
    build_training_sample,
    default_order,
    select_context,
    truncate,
)
from segsong.score import Bar, Note, Song, make_bar
from segsong.structure import Segment, Structure, single_segment
from oracles import brute_select_context


def fig_structure() -> Structure:
    return Structure(
        (Segment(1, 2, "A"), Segment(3, 4, "B"), Segment(5, 5, "A"), Segment(6, 7, "B"))
    )


def fig_plan() -> GenerationPlan:
    return GenerationPlan(fig_structure(), (2, 1, 4, 3))


def bounds(seg: ContextSegment | None):
    return None if seg is None else (seg.start_bar, seg.end_bar)


class TestSelectContext:
    def test_step_1_has_no_context(self):
        ctx = select_context(1, fig_plan())
        assert ctx == ContextSet()

    def test_step_2_right_and_seed(self):
        ctx = select_context(2, fig_plan())
        assert bounds(ctx.left) is None
        assert bounds(ctx.right) == (3, 4)
        assert bounds(ctx.seed) == (3, 4)
        assert bounds(ctx.ref) is None

    def test_step_4_all_slots(self):
        ctx = select_context(4, fig_plan())
        assert bounds(ctx.left) == (3, 4)
        assert bounds(ctx.right) == (6, 7)
        assert bounds(ctx.seed) == (3, 4)
        assert bounds(ctx.ref) == (1, 2)

    def test_step_out_of_range(self):
        with pytest.raises(ValueError):
            select_context(5, fig_plan())
        with pytest.raises(ValueError):
            select_context(0, fig_plan())

    def test_never_selects_current_or_later_step(self):
        plan = fig_plan()
        for i in range(1, 5):
            prior_bounds = {plan.step_bounds(j)[:2] for j in range(1, i)}
            ctx = select_context(i, plan)
            for seg in ctx.present():
                assert (seg.start_bar, seg.end_bar) in prior_bounds

    def test_left_right_sandwich_target(self):
        plan = fig_plan()
        for i in range(1, 5):
            s, e, _ = plan.step_bounds(i)
            ctx = select_context(i, plan)
            if ctx.left:
                assert ctx.left.end_bar <= s
            if ctx.right:
                assert ctx.right.start_bar >= e


def all_structures(max_segments: int):
    """Alternating-label structures with segment lengths in {1, 2, 3}."""
    for m in range(1, max_segments + 1):
        for lengths in itertools.product((1, 2, 3), repeat=m):
            segments = []
            start = 1
            for k, length in enumerate(lengths):
                segments.append(Segment(start, start + length - 1, "AB"[k % 2]))
                start += length
            yield Structure(tuple(segments))


class TestExhaustiveAgainstBruteForce:
    def test_all_structures_and_orders_up_to_4_segments(self):
        checked = 0
        for structure in all_structures(4):
            m = structure.n_segments
            for order in itertools.permutations(range(1, m + 1)):
                plan = GenerationPlan(structure, order)
                steps = [plan.step_bounds(j) for j in range(1, m + 1)]
                for i in range(1, m + 1):
                    expected = brute_select_context(i, steps)
                    ctx = select_context(i, plan)
                    assert bounds(ctx.left) == expected["left"]
                    assert bounds(ctx.right) == expected["right"]
                    assert bounds(ctx.seed) == expected["seed"]
                    assert bounds(ctx.ref) == expected["ref"]
                    checked += 1
        assert checked > 1000


class TestTruncate:
    def test_long_left_keeps_rightmost_8(self):
        ctx = ContextSet(left=ContextSegment("left", 1, 12))
        assert bounds(truncate(ctx).left) == (5, 12)

    def test_long_seed_keeps_leftmost_8(self):
        ctx = ContextSet(seed=ContextSegment("seed", 1, 12))
        assert bounds(truncate(ctx).seed) == (1, 8)

    def test_short_context_unchanged(self):
        ctx = ContextSet(ref=ContextSegment("ref", 3, 6))
        assert truncate(ctx) == ctx

    def test_idempotent(self):
        ctx = ContextSet(
            left=ContextSegment("left", 1, 12),
            right=ContextSegment("right", 20, 40),
            seed=ContextSegment("seed", 1, 9),
        )
        once = truncate(ctx)
        assert truncate(once) == once

    def test_truncates_bound_bars_too(self):
        bars = tuple(Bar(i, ()) for i in range(12))
        ctx = ContextSet(left=ContextSegment("left", 1, 12, bars))
        cut = truncate(ctx).left
        assert cut.bars == bars[4:]
        assert cut.n_bars == 8


class TestDefaultOrder:
    def test_single_segment(self):
        plan = default_order(single_segment(4), 0)
        assert plan.order == (1,)

    def test_fig_structure_picks_b_segment_2_first(self):
        # B covers 4 bars vs A's 3; midpoint is bar 4; segment 2 starts at 3
        plan = default_order(fig_structure(), 0)
        assert plan.order[0] == 2
        assert plan.order[1] in (1, 3)  # an A segment second

    def test_equal_coverage_tie_goes_to_lower_label(self):
        structure = Structure((Segment(1, 2, "A"), Segment(3, 4, "B")))
        plan = default_order(structure, 0)
        assert plan.order[0] == 1

    def test_order_is_permutation(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            plan = default_order(fig_structure(), rng)
            assert sorted(plan.order) == [1, 2, 3, 4]

    def test_plan_rejects_non_permutation(self):
        with pytest.raises(ValueError):
            GenerationPlan(fig_structure(), (1, 1, 2, 3))


def song_of_bars(n: int) -> Song:
    bars = tuple(
        make_bar(i, [Note(onset=0, pitch=30 + (i % 60), duration=4, velocity=64)]) for i in range(n)
    )
    return Song(bars, Fraction(120))


class TestBuildTrainingSample:
    def test_single_segment_song(self):
        song = song_of_bars(4)
        sample = build_training_sample(song, single_segment(4), 0)
        assert (sample.target_start, sample.target_end) == (1, 4)
        assert sample.context == ContextSet()
        assert sample.existing == ()
        assert sample.target == song.bars

    def test_large_target_cropped_to_8(self):
        song = song_of_bars(28)
        structure = Structure((Segment(1, 4, "A"), Segment(5, 24, "B"), Segment(25, 28, "A")))
        rng = np.random.default_rng(1)
        starts = set()
        for _ in range(300):
            sample = build_training_sample(song, structure, rng)
            width = sample.target_end - sample.target_start + 1
            assert width <= 8
            if sample.target_start >= 5 and sample.target_end <= 24:
                assert width == 8
                starts.add(sample.target_start)
        assert starts <= set(range(5, 18))

    def test_window_start_uniform_chi_square(self):
        from scipy import stats

        song = song_of_bars(20)
        structure = single_segment(20)
        rng = np.random.default_rng(2)
        counts = np.zeros(13)
        draws = 10_000
        for _ in range(draws):
            sample = build_training_sample(song, structure, rng)
            counts[sample.target_start - 1] += 1
        result = stats.chisquare(counts)
        assert result.pvalue > 0.001

    def test_contexts_are_bound_and_truncated(self):
        song = song_of_bars(24)
        structure = Structure((Segment(1, 8, "A"), Segment(9, 16, "B"), Segment(17, 24, "A")))
        rng = np.random.default_rng(3)
        for _ in range(50):
            sample = build_training_sample(song, structure, rng)
            for seg in sample.context.present():
                assert seg.bars is not None
                assert seg.n_bars <= 8
                expected = song.bars[seg.start_bar - 1 : seg.end_bar]
                assert seg.bars == tuple(expected)

    def test_existing_includes_crop_remainder(self):
        song = song_of_bars(28)
        structure = Structure((Segment(1, 4, "A"), Segment(5, 24, "B"), Segment(25, 28, "A")))
        rng = np.random.default_rng(4)
        seen_remainder = False
        for _ in range(100):
            sample = build_training_sample(song, structure, rng)
            covered = set()
            for placed in sample.existing:
                covered.update(range(placed.start_bar, placed.end_bar + 1))
                assert placed.bars == tuple(song.bars[placed.start_bar - 1 : placed.end_bar])
            target_range = set(range(sample.target_start, sample.target_end + 1))
            assert not (covered & target_range)
            if 5 <= sample.target_start and sample.target_end <= 24 and len(covered) > 0:
                if sample.target_start > 5 or sample.target_end < 24:
                    in_segment = covered & set(range(5, 25))
                    if in_segment:
                        seen_remainder = True
        assert seen_remainder

    def test_structure_size_mismatch(self):
        with pytest.raises(ValueError):
            build_training_sample(song_of_bars(4), single_segment(5), 0)


class TestBindContext:
    def test_unbound_bars_raise(self):
        ctx = ContextSet(left=ContextSegment("left", 1, 2))
        with pytest.raises(ValueError):
            bind_context(ctx, [None, None])

    def test_placed_bars_start_frame(self):
        placed = PlacedBars(3, 4, (Bar(2, ()), Bar(3, ())))
        assert placed.start_frame == 64
