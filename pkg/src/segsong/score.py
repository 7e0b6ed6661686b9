"""Quantized symbolic score model and MIDI ingestion/export.

Time is measured in frames of 1/8 beat. The meter is fixed at 4/4, so a
bar is 32 frames; files declaring another time signature are rejected.
All types are immutable values, safe to share across threads.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Iterable, Sequence

from . import smf

FRAMES_PER_BEAT = 8
BEATS_PER_BAR = 4
FRAMES_PER_BAR = FRAMES_PER_BEAT * BEATS_PER_BAR
PITCH_MIN = 21
PITCH_MAX = 108
EXPORT_TICKS_PER_QUARTER = 480
BAR_COUNT_MARKER = "segsong:bars="

#: Krumhansl-Kessler key profiles, index 0 = tonic.
KS_MAJOR = (6.35, 2.23, 3.48, 2.33, 4.38, 4.09, 2.52, 5.19, 2.39, 3.66, 2.29, 2.88)
KS_MINOR = (6.33, 2.68, 3.52, 5.38, 2.60, 3.53, 2.54, 4.75, 3.98, 2.69, 3.34, 3.17)


class EmptySongError(ValueError):
    """Raised when a MIDI file contains no notes."""


@dataclass(frozen=True, order=True)
class Note:
    """One quantized note. ``onset`` is in frames; local to a bar when the
    note lives inside a :class:`Bar`, global otherwise. ``duration`` 0 means
    "held" (resolved by the tokenizer's decode rule)."""

    onset: int
    pitch: int
    duration: int
    velocity: int

    def __post_init__(self):
        if self.onset < 0:
            raise ValueError(f"negative onset {self.onset}")
        if not PITCH_MIN <= self.pitch <= PITCH_MAX:
            raise ValueError(f"pitch {self.pitch} outside [{PITCH_MIN}, {PITCH_MAX}]")
        if self.duration < 0:
            raise ValueError(f"negative duration {self.duration}")
        if not 1 <= self.velocity <= 127:
            raise ValueError(f"velocity {self.velocity} outside [1, 127]")


@dataclass(frozen=True)
class Bar:
    """One bar; note onsets are bar-local, in [0, 32)."""

    index: int
    notes: tuple[Note, ...]

    def __post_init__(self):
        if self.index < 0:
            raise ValueError(f"negative bar index {self.index}")
        seen: set[tuple[int, int]] = set()
        prev: Note | None = None
        for n in self.notes:
            if not 0 <= n.onset < FRAMES_PER_BAR:
                raise ValueError(f"bar-local onset {n.onset} outside [0, {FRAMES_PER_BAR})")
            key = (n.onset, n.pitch)
            if key in seen:
                raise ValueError(f"duplicate note at onset {n.onset}, pitch {n.pitch}")
            seen.add(key)
            if prev is not None and (n.onset, n.pitch) < (prev.onset, prev.pitch):
                raise ValueError("notes not sorted by (onset, pitch)")
            prev = n


@dataclass(frozen=True)
class Song:
    """A sequence of bars plus playback tempo. ``bpm`` never affects any
    computation; internal time is purely frame-based."""

    bars: tuple[Bar, ...]
    bpm: Fraction = Fraction(120)

    def __post_init__(self):
        if not self.bars:
            raise ValueError("a song needs at least one bar")
        if self.bpm <= 0:
            raise ValueError(f"non-positive bpm {self.bpm}")
        for i, bar in enumerate(self.bars):
            if bar.index != i:
                raise ValueError(f"bar index {bar.index} at position {i}: indices must be contiguous from 0")

    @property
    def n_bars(self) -> int:
        return len(self.bars)


def _sorted_bar_notes(notes: Iterable[Note]) -> tuple[Note, ...]:
    return tuple(sorted(notes, key=lambda n: (n.onset, n.pitch)))


def make_bar(index: int, notes: Iterable[Note]) -> Bar:
    """Bar constructor that sorts notes into the canonical order."""
    return Bar(index, _sorted_bar_notes(notes))


def empty_song(n_bars: int, bpm: Fraction | int = Fraction(120)) -> Song:
    return Song(tuple(Bar(i, ()) for i in range(n_bars)), Fraction(bpm))


def global_notes(song: Song) -> list[Note]:
    """Flatten a song to notes with global (song-start-relative) onsets."""
    out = []
    for bar in song.bars:
        for n in bar.notes:
            out.append(replace(n, onset=n.onset + bar.index * FRAMES_PER_BAR))
    return out


def bars_from_notes(notes: Iterable[Note], min_bars: int = 1) -> tuple[Bar, ...]:
    """Distribute global-onset notes into bars by onset.

    Onsets become bar-local; durations are kept even when they cross bar
    lines. Produces at least ``min_bars`` bars and enough to cover every
    onset.
    """
    notes = list(notes)
    n_bars = max(min_bars, *(n.onset // FRAMES_PER_BAR + 1 for n in notes)) if notes else min_bars
    buckets: list[list[Note]] = [[] for _ in range(n_bars)]
    for n in notes:
        bar_idx = n.onset // FRAMES_PER_BAR
        buckets[bar_idx].append(replace(n, onset=n.onset % FRAMES_PER_BAR))
    return tuple(make_bar(i, bucket) for i, bucket in enumerate(buckets))


def split_bars(song: Song) -> tuple[Bar, ...]:
    """Re-derive the bar split from global note positions.

    Identity on any valid song; exposed so callers holding flat note data
    can route it through :func:`bars_from_notes` with the same semantics.
    """
    return bars_from_notes(global_notes(song), min_bars=song.n_bars)


def _quantize_tick(tick: int, ticks_per_quarter: int) -> int:
    # Nearest frame, halves away from zero, in exact integer arithmetic.
    num = tick * FRAMES_PER_BEAT
    return (2 * num + ticks_per_quarter) // (2 * ticks_per_quarter)


def _merge_duplicates(notes: Iterable[Note]) -> list[Note]:
    best: dict[tuple[int, int], Note] = {}
    for n in notes:
        key = (n.onset, n.pitch)
        old = best.get(key)
        if old is None or (n.velocity, n.duration) > (old.velocity, old.duration):
            best[key] = n
    return sorted(best.values(), key=lambda n: (n.onset, n.pitch))


def clip_same_pitch_overlaps(notes: Iterable[Note]) -> list[Note]:
    """Cut each note short of the next onset of the same pitch.

    SMF note-on/off streams cannot express two overlapping notes of one
    pitch unambiguously, so this is the canonical form all MIDI I/O uses
    (global onsets expected).
    """
    by_pitch: dict[int, list[Note]] = {}
    for n in notes:
        by_pitch.setdefault(n.pitch, []).append(n)
    out = []
    for pitch, group in by_pitch.items():
        group.sort(key=lambda n: n.onset)
        for a, b in zip(group, group[1:]):
            out.append(replace(a, duration=min(a.duration, b.onset - a.onset)))
        out.append(group[-1])
    return sorted(out, key=lambda n: (n.onset, n.pitch))


def load_midi(data: bytes) -> Song:
    """Parse a format 0/1 SMF into a quantized :class:`Song`.

    Note boundaries snap to the nearest 1/8-beat frame; notes that collapse
    to zero length get duration 1. Same-(onset, pitch) collisions keep the
    highest velocity. Pitches are clamped to the piano range. Files in a
    meter other than 4/4 are rejected.
    """
    parsed = smf.parse(data)

    for ev in parsed.events:
        if isinstance(ev, smf.TimeSignature) and (ev.numerator, ev.denominator) != (4, 4):
            raise ValueError(
                f"unsupported time signature {ev.numerator}/{ev.denominator}: only 4/4 is handled"
            )

    tempo_us = 500_000
    for ev in parsed.events:
        if isinstance(ev, smf.SetTempo):
            tempo_us = ev.microseconds_per_quarter
            break

    open_notes: dict[int, list[smf.NoteOn]] = {}
    raw: list[tuple[int, int, int, int]] = []  # (on_tick, off_tick, pitch, velocity)
    for ev in parsed.events:
        if isinstance(ev, smf.NoteOn):
            open_notes.setdefault(ev.pitch, []).append(ev)
        elif isinstance(ev, smf.NoteOff):
            stack = open_notes.get(ev.pitch)
            if stack:
                on = stack.pop(0)
                raw.append((on.tick, ev.tick, ev.pitch, on.velocity))
    for pitch, stack in open_notes.items():
        for on in stack:  # unterminated: close at end of track
            raw.append((on.tick, max(parsed.end_tick, on.tick), pitch, on.velocity))

    if not raw:
        raise EmptySongError("MIDI file contains no notes")

    tpq = parsed.ticks_per_quarter
    notes = []
    for on_tick, off_tick, pitch, velocity in raw:
        onset = _quantize_tick(on_tick, tpq)
        duration = max(1, _quantize_tick(off_tick, tpq) - onset)
        pitch = min(PITCH_MAX, max(PITCH_MIN, pitch))
        velocity = min(127, max(1, velocity))
        notes.append(Note(onset=onset, pitch=pitch, duration=duration, velocity=velocity))

    # A "bars=N" marker (written by save_midi) pins the bar count exactly,
    # covering trailing silent bars and final notes that ring past the last
    # bar line. Foreign files fall back to the end-of-track tick; floor
    # division keeps a ringing final note from adding a bar there.
    min_bars = 1
    for ev in parsed.events:
        if isinstance(ev, smf.Marker) and ev.text.startswith(BAR_COUNT_MARKER):
            suffix = ev.text[len(BAR_COUNT_MARKER) :]
            if suffix.isdigit() and int(suffix) > 0:
                min_bars = int(suffix)
                break
    else:
        end_frame = _quantize_tick(parsed.end_tick, tpq)
        min_bars = max(1, end_frame // FRAMES_PER_BAR)

    bpm = Fraction(60_000_000, tempo_us)
    canonical = clip_same_pitch_overlaps(_merge_duplicates(notes))
    return Song(bars_from_notes(canonical, min_bars=min_bars), bpm)


def save_midi(song: Song) -> bytes:
    """Serialize to a format-0 SMF at 480 ticks per quarter.

    Round-trips exactly through :func:`load_midi` for canonical songs:
    same-pitch overlaps already clipped and ``bpm`` representable as 60e6
    over integer microseconds. Both always hold for songs that came from
    :func:`load_midi`; other songs are clipped on the way out.
    """
    ticks_per_frame = EXPORT_TICKS_PER_QUARTER // FRAMES_PER_BEAT
    tempo_us = round(Fraction(60_000_000) / song.bpm)
    events: list[smf.Event] = [
        smf.SetTempo(0, int(tempo_us)),
        smf.TimeSignature(0, 4, 4),
        smf.Marker(0, f"{BAR_COUNT_MARKER}{song.n_bars}"),
    ]
    for n in clip_same_pitch_overlaps(global_notes(song)):
        on = n.onset * ticks_per_frame
        off = (n.onset + max(1, n.duration)) * ticks_per_frame
        events.append(smf.NoteOn(on, n.pitch, n.velocity))
        events.append(smf.NoteOff(off, n.pitch))
    end_tick = song.n_bars * FRAMES_PER_BAR * ticks_per_frame
    return smf.build(EXPORT_TICKS_PER_QUARTER, events, end_tick=end_tick)


def pitch_class_histogram(song: Song) -> list[float]:
    """Duration-weighted pitch-class mass, index 0 = C."""
    hist = [0.0] * 12
    for bar in song.bars:
        for n in bar.notes:
            hist[n.pitch % 12] += max(1, n.duration)
    return hist


def _pearson(x: Sequence[float], y: Sequence[float]) -> float:
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    if sxx == 0 or syy == 0:
        return 0.0
    return sxy / (sxx * syy) ** 0.5


def key_profile_score(hist: Sequence[float]) -> float:
    """Best correlation of a pitch-class histogram against C major / A minor."""
    a_minor = tuple(KS_MINOR[(pc - 9) % 12] for pc in range(12))
    return max(_pearson(hist, KS_MAJOR), _pearson(hist, a_minor))


def find_key_shift(song: Song) -> int:
    """Semitone shift in [-6, +6] aligning the song to C major / A minor.

    Songs whose histogram touches fewer than two pitch classes carry no
    key evidence and keep shift 0. Ties prefer 0, then the smaller
    absolute shift, then the upward one.
    """
    hist = pitch_class_histogram(song)
    if sum(1 for v in hist if v > 0) < 2:
        return 0
    best_shift = 0
    best_score = -2.0
    for shift in sorted(range(-6, 7), key=lambda s: (abs(s), -s)):
        shifted = [0.0] * 12
        for pc, v in enumerate(hist):
            shifted[(pc + shift) % 12] += v
        score = key_profile_score(shifted)
        if score > best_score + 1e-12:
            best_score = score
            best_shift = shift
    return best_shift


def transpose(song: Song, shift: int) -> Song:
    """Shift every pitch; notes pushed outside the range fold back by octaves."""
    if shift == 0:
        return song
    bars = []
    for bar in song.bars:
        notes = []
        for n in bar.notes:
            pitch = n.pitch + shift
            while pitch > PITCH_MAX:
                pitch -= 12
            while pitch < PITCH_MIN:
                pitch += 12
            notes.append(replace(n, pitch=pitch))
        bars.append(make_bar(bar.index, _merge_duplicates(notes)))
    return Song(tuple(bars), song.bpm)


def normalize_key(song: Song) -> Song:
    """Transpose towards C major / A minor by Krumhansl-Schmuckler profile fit."""
    return transpose(song, find_key_shift(song))
