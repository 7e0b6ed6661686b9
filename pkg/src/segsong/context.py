"""Generation ordering and per-step context selection.

A generation plan fixes the order in which a structure's segments get
written. For the segment generated at step ``i`` the model looks at up
to four earlier segments:

* ``left``: nearest existing segment ending at or before the target start
* ``right``: nearest existing segment starting at or after the target end
* ``seed``: the first-generated segment (absent at step 1)
* ``ref``: the earliest-generated segment sharing the target's label

Each is truncated to 8 bars: ``left`` keeps its right-most bars, the
other three keep their left-most bars.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .score import FRAMES_PER_BAR, Bar, Song
from .structure import Structure

MAX_CONTEXT_BARS = 8

CONTEXT_TAGS = ("left", "right", "seed", "ref")


@dataclass(frozen=True)
class ContextSegment:
    """A context slot: an absolute bar range, optionally with content."""

    tag: str
    start_bar: int  # 1-indexed inclusive
    end_bar: int
    bars: tuple[Bar, ...] | None = None

    def __post_init__(self):
        if self.tag not in CONTEXT_TAGS:
            raise ValueError(f"unknown context tag {self.tag!r}")
        if self.start_bar < 1 or self.end_bar < self.start_bar:
            raise ValueError(f"bad context bounds [{self.start_bar}, {self.end_bar}]")
        if self.bars is not None and len(self.bars) != self.n_bars:
            raise ValueError(f"{len(self.bars)} bars bound to a {self.n_bars}-bar context")

    @property
    def n_bars(self) -> int:
        return self.end_bar - self.start_bar + 1

    @property
    def start_frame(self) -> int:
        return (self.start_bar - 1) * FRAMES_PER_BAR


@dataclass(frozen=True)
class ContextSet:
    left: ContextSegment | None = None
    right: ContextSegment | None = None
    seed: ContextSegment | None = None
    ref: ContextSegment | None = None

    def present(self) -> tuple[ContextSegment, ...]:
        return tuple(c for c in (self.left, self.right, self.seed, self.ref) if c is not None)


@dataclass(frozen=True)
class GenerationPlan:
    """A structure plus the order (1-based segment indices) to realize it."""

    structure: Structure
    order: tuple[int, ...]

    def __post_init__(self):
        m = self.structure.n_segments
        if sorted(self.order) != list(range(1, m + 1)):
            raise ValueError(f"order {self.order} is not a permutation of 1..{m}")

    @property
    def n_steps(self) -> int:
        return len(self.order)

    def step_bounds(self, i: int) -> tuple[int, int, str]:
        """(start bar, end bar, label) of the segment generated at step ``i``."""
        if not 1 <= i <= self.n_steps:
            raise ValueError(f"step {i} outside [1, {self.n_steps}]")
        seg = self.structure.segments[self.order[i - 1] - 1]
        return seg.start, seg.end, seg.label


def select_context(
    i: int, plan: GenerationPlan, target_bounds: tuple[int, int] | None = None
) -> ContextSet:
    """Pick the four context segments for generation step ``i``.

    ``target_bounds`` substitutes the target's own (start, end) bars, used
    when the target is a cropped window of a larger segment. Returned
    segments carry bounds only; bind content with :func:`bind_context`.
    """
    s_i, e_i, l_i = plan.step_bounds(i)
    if target_bounds is not None:
        s_i, e_i = target_bounds
    priors = [(j, *plan.step_bounds(j)) for j in range(1, i)]

    left = None
    left_candidates = [(e_j, j, s_j) for j, s_j, e_j, _ in priors if e_j <= s_i]
    if left_candidates:
        e_n, _, s_n = max(left_candidates)
        left = ContextSegment("left", s_n, e_n)

    right = None
    right_candidates = [(s_j, j, e_j) for j, s_j, e_j, _ in priors if s_j >= e_i]
    if right_candidates:
        s_n, _, e_n = min(right_candidates)
        right = ContextSegment("right", s_n, e_n)

    seed = None
    if i > 1:
        s_1, e_1, _ = plan.step_bounds(1)
        seed = ContextSegment("seed", s_1, e_1)

    ref = None
    for j, s_j, e_j, l_j in priors:  # priors are in ascending step order
        if l_j == l_i:
            ref = ContextSegment("ref", s_j, e_j)
            break

    return ContextSet(left=left, right=right, seed=seed, ref=ref)


def truncate(ctx: ContextSet) -> ContextSet:
    """Clip every context to 8 bars; ``left`` keeps its tail, others their head."""

    def clip(seg: ContextSegment | None) -> ContextSegment | None:
        if seg is None or seg.n_bars <= MAX_CONTEXT_BARS:
            return seg
        if seg.tag == "left":
            start = seg.end_bar - MAX_CONTEXT_BARS + 1
            bars = seg.bars[-MAX_CONTEXT_BARS:] if seg.bars is not None else None
            return replace(seg, start_bar=start, bars=bars)
        end = seg.start_bar + MAX_CONTEXT_BARS - 1
        bars = seg.bars[:MAX_CONTEXT_BARS] if seg.bars is not None else None
        return replace(seg, end_bar=end, bars=bars)

    return ContextSet(
        left=clip(ctx.left), right=clip(ctx.right), seed=clip(ctx.seed), ref=clip(ctx.ref)
    )


def bind_context(ctx: ContextSet, bars: Sequence[Bar | None]) -> ContextSet:
    """Attach content from a 0-indexed bar array to each present slot."""

    def bind(seg: ContextSegment | None) -> ContextSegment | None:
        if seg is None:
            return None
        content = tuple(bars[b] for b in range(seg.start_bar - 1, seg.end_bar))
        if any(b is None for b in content):
            raise ValueError(f"context {seg.tag} covers ungenerated bars")
        return replace(seg, bars=content)

    return ContextSet(
        left=bind(ctx.left), right=bind(ctx.right), seed=bind(ctx.seed), ref=bind(ctx.ref)
    )


def _coverage_by_label(structure: Structure) -> dict[str, int]:
    cover: dict[str, int] = {}
    for seg in structure.segments:
        cover[seg.label] = cover.get(seg.label, 0) + seg.n_bars
    return cover


def _pick_theme_segment(structure: Structure, label: str) -> int:
    """1-based index of the ``label`` segment starting nearest the middle."""
    mid = -(-structure.n_bars // 2)  # ceil(N / 2)
    best = None
    for idx, seg in enumerate(structure.segments, start=1):
        if seg.label != label:
            continue
        key = (abs(seg.start - mid), idx)
        if best is None or key < best:
            best = key
    assert best is not None
    return best[1]


def default_order(structure: Structure, rng: np.random.Generator | int = 0) -> GenerationPlan:
    """Theme-first ordering: the most-covering label's segment nearest the
    song middle goes first, the runner-up label's next, the rest shuffled.

    Coverage counts bars, not segments; coverage ties fall to the
    alphabetically lower label, position ties to the earlier segment.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    cover = _coverage_by_label(structure)
    ranked = sorted(cover.items(), key=lambda kv: (-kv[1], kv[0]))

    head = [_pick_theme_segment(structure, ranked[0][0])]
    if len(ranked) > 1:
        head.append(_pick_theme_segment(structure, ranked[1][0]))
    tail = [i for i in range(1, structure.n_segments + 1) if i not in head]
    tail = [tail[j] for j in rng.permutation(len(tail))]
    return GenerationPlan(structure, tuple(head + tail))


@dataclass(frozen=True)
class PlacedBars:
    """A run of bars pinned to absolute song positions (for global vision)."""

    start_bar: int  # 1-indexed inclusive
    end_bar: int
    bars: tuple[Bar, ...]

    @property
    def start_frame(self) -> int:
        return (self.start_bar - 1) * FRAMES_PER_BAR


@dataclass(frozen=True)
class TrainingSample:
    """One teacher-forcing sample: a target window, its contexts, and the
    material that counts as already generated."""

    song_bars: int
    target_start: int  # 1-indexed inclusive, after any cropping
    target_end: int
    target: tuple[Bar, ...]
    context: ContextSet
    existing: tuple[PlacedBars, ...]


def song_segment_bars(song: Song, start_bar: int, end_bar: int) -> tuple[Bar, ...]:
    return tuple(song.bars[start_bar - 1 : end_bar])


def build_training_sample(
    song: Song, structure: Structure, rng: np.random.Generator | int
) -> TrainingSample:
    """Draw one training sample following the theme-first order.

    A uniformly random step becomes the target; targets longer than 8 bars
    are cropped to a uniformly placed 8-bar window. Context follows the
    step rules against the cropped bounds; the uncropped remainder of the
    target's own segment stays visible to global vision only.
    """
    if structure.n_bars != song.n_bars:
        raise ValueError(f"structure covers {structure.n_bars} bars, song has {song.n_bars}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)

    plan = default_order(structure, rng)
    i = 1 + int(rng.integers(plan.n_steps))
    s, e, _ = plan.step_bounds(i)
    if e - s + 1 > MAX_CONTEXT_BARS:
        ts = s + int(rng.integers(e - s + 1 - MAX_CONTEXT_BARS + 1))
        te = ts + MAX_CONTEXT_BARS - 1
    else:
        ts, te = s, e

    ctx = truncate(select_context(i, plan, target_bounds=(ts, te)))
    ctx = bind_context(ctx, list(song.bars))

    existing = [
        PlacedBars(s_j, e_j, song_segment_bars(song, s_j, e_j))
        for s_j, e_j, _ in (plan.step_bounds(j) for j in range(1, i))
    ]
    if ts > s:
        existing.append(PlacedBars(s, ts - 1, song_segment_bars(song, s, ts - 1)))
    if te < e:
        existing.append(PlacedBars(te + 1, e, song_segment_bars(song, te + 1, e)))

    return TrainingSample(
        song_bars=song.n_bars,
        target_start=ts,
        target_end=te,
        target=song_segment_bars(song, ts, te),
        context=ctx,
        existing=tuple(existing),
    )
