from __future__ import annotations

import sys
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from segsong.score import (
    FRAMES_PER_BAR,
    Bar,
    Note,
    Song,
    bars_from_notes,
    clip_same_pitch_overlaps,
    global_notes,
    make_bar,
)


def random_note(rng: np.random.Generator, onset: int | None = None) -> Note:
    return Note(
        onset=int(rng.integers(FRAMES_PER_BAR)) if onset is None else onset,
        pitch=int(rng.integers(21, 109)),
        duration=int(rng.integers(1, 41)),
        velocity=int(rng.integers(1, 128)),
    )


def random_bar(rng: np.random.Generator, index: int = 0, max_notes: int = 8) -> Bar:
    n_notes = int(rng.integers(0, max_notes + 1))
    notes: dict[tuple[int, int], Note] = {}
    for _ in range(n_notes):
        n = random_note(rng)
        notes[(n.onset, n.pitch)] = n
    return make_bar(index, notes.values())


def random_song(rng: np.random.Generator, max_bars: int = 6) -> Song:
    """Random canonical song (same-pitch overlaps clipped, MIDI-exact bpm,
    at least one note so it survives MIDI ingestion)."""
    n_bars = int(rng.integers(1, max_bars + 1))
    bars = [random_bar(rng, i) for i in range(n_bars)]
    if not any(b.notes for b in bars):
        bars[0] = make_bar(0, [random_note(rng)])
    us = int(rng.integers(300_000, 1_000_001))
    song = Song(tuple(bars), Fraction(60_000_000, us))
    canonical = clip_same_pitch_overlaps(global_notes(song))
    return Song(bars_from_notes(canonical, min_bars=n_bars), song.bpm)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
