"""Bar-to-bar similarity with skyline weighting.

Bars are compared as sets of (onset, pitch) points. The raw overlap is
the size of a maximum one-to-one matching (equal pitch, onsets within one
frame) normalized by the larger set. A skyline term re-weights the melody
line, and the final score is transposition-tolerant within one octave.
"""
from __future__ import annotations

from .score import FRAMES_PER_BEAT, Bar

#: (onset frame within the bar, MIDI pitch)
BarNoteSet = frozenset[tuple[int, int]]

OCTAVE = 12


def note_set(bar: Bar) -> BarNoteSet:
    return frozenset((n.onset, n.pitch) for n in bar.notes)


def shift_pitches(a: BarNoteSet, semitones: int) -> BarNoteSet:
    return frozenset((onset, pitch + semitones) for onset, pitch in a)


def skyline(a: BarNoteSet) -> BarNoteSet:
    """Notes not overshadowed by a higher note nearby.

    A note is dropped when some other note rises above it faster than one
    octave per beat, i.e. (m.pitch - n.pitch) / |m.onset - n.onset| exceeds
    12 pitch steps per 8 frames. At equal onsets the higher pitch wins.
    """
    kept = []
    for n_onset, n_pitch in a:
        dominated = False
        for m_onset, m_pitch in a:
            if (m_onset, m_pitch) == (n_onset, n_pitch):
                continue
            if m_onset == n_onset:
                if m_pitch > n_pitch:
                    dominated = True
                    break
            elif (m_pitch - n_pitch) * FRAMES_PER_BEAT > OCTAVE * abs(m_onset - n_onset):
                dominated = True
                break
        if not dominated:
            kept.append((n_onset, n_pitch))
    return frozenset(kept)


def _max_matching(a: BarNoteSet, b: BarNoteSet) -> int:
    """Maximum one-to-one matching size; an edge needs equal pitch and
    onsets differing by at most one frame.

    Edges only connect equal pitches, so the matching splits per pitch.
    Within a pitch the compatibility intervals are sorted, which makes the
    two-pointer greedy optimal for this convex structure.
    """
    a_by_pitch: dict[int, list[int]] = {}
    b_by_pitch: dict[int, list[int]] = {}
    for onset, pitch in a:
        a_by_pitch.setdefault(pitch, []).append(onset)
    for onset, pitch in b:
        b_by_pitch.setdefault(pitch, []).append(onset)

    total = 0
    for pitch, a_onsets in a_by_pitch.items():
        b_onsets = b_by_pitch.get(pitch)
        if not b_onsets:
            continue
        a_onsets.sort()
        b_onsets.sort()
        i = j = 0
        while i < len(a_onsets) and j < len(b_onsets):
            if abs(a_onsets[i] - b_onsets[j]) <= 1:
                total += 1
                i += 1
                j += 1
            elif a_onsets[i] < b_onsets[j]:
                i += 1
            else:
                j += 1
    return total


def note_overlap(a: BarNoteSet, b: BarNoteSet) -> float:
    """Matching size over max(|a|, |b|); two empty bars count as identical."""
    if not a and not b:
        return 1.0
    if not a or not b:
        return 0.0
    return _max_matching(a, b) / max(len(a), len(b))


def weighted_overlap(a: BarNoteSet, b: BarNoteSet) -> float:
    """Half plain overlap, half skyline overlap."""
    return 0.5 * note_overlap(a, b) + 0.5 * note_overlap(skyline(a), skyline(b))


def bar_similarity(a: BarNoteSet, b: BarNoteSet) -> float:
    """Overlap score maximized over shifting ``b`` by -12, 0, +12 semitones."""
    return max(
        weighted_overlap(a, b),
        weighted_overlap(a, shift_pitches(b, OCTAVE)),
        weighted_overlap(a, shift_pitches(b, -OCTAVE)),
    )
