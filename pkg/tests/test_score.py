from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest

from segsong import smf
from segsong.score import (
    EmptySongError,
    Bar,
    Note,
    Song,
    bars_from_notes,
    empty_song,
    find_key_shift,
    global_notes,
    key_profile_score,
    load_midi,
    make_bar,
    normalize_key,
    pitch_class_histogram,
    save_midi,
    split_bars,
    transpose,
)
from conftest import random_song


def simple_file(notes: list[tuple[int, int, int, int]], tpq: int = 480) -> bytes:
    """(on_tick, off_tick, pitch, velocity) list -> SMF bytes."""
    events: list[smf.Event] = [smf.SetTempo(0, 500_000)]
    for on, off, pitch, vel in notes:
        events.append(smf.NoteOn(on, pitch, vel))
        events.append(smf.NoteOff(off, pitch))
    return smf.build(tpq, events)


class TestLoadMidi:
    def test_single_quarter_note(self):
        song = load_midi(simple_file([(0, 480, 60, 90)]))
        assert song.n_bars == 1
        assert song.bars[0].notes == (Note(onset=0, pitch=60, duration=8, velocity=90),)

    def test_quantizes_to_nearest_frame(self):
        # 0.49 beats at 480 tpq is tick 235 = frame 235*8/480 = 3.92 -> 4
        song = load_midi(simple_file([(235, 480, 60, 90)]))
        assert song.bars[0].notes[0].onset == 4

    def test_half_frame_rounds_away_from_zero(self):
        # tick 30 = exactly half a frame (frame length 60 ticks) -> frame 1
        song = load_midi(simple_file([(30, 480, 60, 90)]))
        assert song.bars[0].notes[0].onset == 1

    def test_duplicate_notes_keep_max_velocity(self):
        song = load_midi(simple_file([(0, 480, 60, 40), (0, 480, 60, 90)]))
        assert song.bars[0].notes == (Note(onset=0, pitch=60, duration=8, velocity=90),)

    def test_zero_length_note_gets_duration_one(self):
        song = load_midi(simple_file([(0, 10, 60, 90)]))  # 10 ticks < half frame
        assert song.bars[0].notes[0].duration == 1

    def test_pitch_clamped_to_piano_range(self):
        song = load_midi(simple_file([(0, 480, 110, 90), (480, 960, 5, 80)]))
        pitches = {n.pitch for n in global_notes(song)}
        assert pitches == {108, 21}

    def test_no_notes_is_an_error(self):
        with pytest.raises(EmptySongError):
            load_midi(smf.build(480, [smf.SetTempo(0, 500_000)]))

    def test_rejects_non_44_meter(self):
        data = smf.build(480, [smf.TimeSignature(0, 3, 4), smf.NoteOn(0, 60, 90), smf.NoteOff(480, 60)])
        with pytest.raises(ValueError, match="time signature"):
            load_midi(data)

    def test_bad_header_reports_offset(self):
        with pytest.raises(smf.MidiParseError) as err:
            load_midi(b"MXhd" + bytes(20))
        assert err.value.offset == 0

    def test_truncated_track_reports_offset(self):
        data = simple_file([(0, 480, 60, 90)])
        with pytest.raises(smf.MidiParseError) as err:
            load_midi(data[:-3])
        assert err.value.offset > 0

    def test_bad_track_magic(self):
        data = bytearray(simple_file([(0, 480, 60, 90)]))
        data[14:18] = b"XTrk"
        with pytest.raises(smf.MidiParseError):
            load_midi(bytes(data))


class TestSaveMidi:
    def test_empty_song_serializes_with_tempo_only(self):
        data = save_midi(empty_song(2, Fraction(100)))
        parsed = smf.parse(data)
        assert any(isinstance(e, smf.SetTempo) for e in parsed.events)
        assert not any(isinstance(e, smf.NoteOn) for e in parsed.events)

    def test_single_note_roundtrip(self):
        song = Song((make_bar(0, [Note(onset=3, pitch=72, duration=5, velocity=17)]),), Fraction(120))
        assert load_midi(save_midi(song)) == song

    def test_roundtrip_100_random_songs(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            song = random_song(rng)
            assert load_midi(save_midi(song)) == song

    def test_quantization_idempotent(self):
        rng = np.random.default_rng(8)
        song = load_midi(save_midi(random_song(rng)))
        again = load_midi(save_midi(song))
        assert again == song


class TestNormalizeKey:
    C_MAJOR_SCALE = [60, 62, 64, 65, 67, 69, 71, 72]

    def scale_song(self, pitches: list[int]) -> Song:
        notes = [Note(onset=4 * i, pitch=p, duration=4, velocity=80) for i, p in enumerate(pitches)]
        return Song(bars_from_notes(notes), Fraction(120))

    def test_c_major_is_fixed_point(self):
        song = self.scale_song(self.C_MAJOR_SCALE)
        assert find_key_shift(song) == 0
        assert normalize_key(song) == song

    def test_d_major_shifts_down_two(self):
        song = self.scale_song([p + 2 for p in self.C_MAJOR_SCALE])
        assert find_key_shift(song) == -2
        assert normalize_key(song) == self.scale_song(self.C_MAJOR_SCALE)

    def test_single_repeated_note_keeps_shift_zero(self):
        notes = [Note(onset=8 * i, pitch=66, duration=4, velocity=80) for i in range(4)]
        song = Song(bars_from_notes(notes), Fraction(120))
        assert find_key_shift(song) == 0
        assert normalize_key(song) == song

    def test_profile_score_never_decreases(self):
        rng = np.random.default_rng(9)
        for _ in range(25):
            song = random_song(rng)
            before = key_profile_score(pitch_class_histogram(song))
            after = key_profile_score(pitch_class_histogram(normalize_key(song)))
            assert after >= before - 1e-12

    def test_transpose_folds_at_pitch_bounds(self):
        song = Song((make_bar(0, [Note(onset=0, pitch=105, duration=4, velocity=80)]),), Fraction(120))
        up = transpose(song, 6)
        assert up.bars[0].notes[0].pitch == 99  # 111 folds one octave down


class TestSplitBars:
    def test_note_at_frame_33_lands_in_bar_1(self):
        bars = bars_from_notes([Note(onset=33, pitch=60, duration=2, velocity=80)])
        assert len(bars) == 2
        assert bars[1].notes[0].onset == 1

    def test_duration_crosses_bar_line(self):
        bars = bars_from_notes([Note(onset=31, pitch=60, duration=4, velocity=80)])
        assert bars[0].notes[0] == Note(onset=31, pitch=60, duration=4, velocity=80)

    def test_64_frame_song_has_two_bars(self):
        notes = [
            Note(onset=0, pitch=60, duration=2, velocity=80),
            Note(onset=63, pitch=62, duration=1, velocity=80),
        ]
        assert len(bars_from_notes(notes)) == 2

    def test_preserves_note_multiset(self, rng):
        for _ in range(50):
            song = random_song(rng)
            rebuilt = split_bars(song)
            assert rebuilt == song.bars
            original = sorted(
                (b.index * 32 + n.onset, n.pitch, n.duration, n.velocity)
                for b in song.bars
                for n in b.notes
            )
            flattened = sorted(
                (n.onset, n.pitch, n.duration, n.velocity) for n in global_notes(song)
            )
            assert original == flattened


class TestValidation:
    def test_note_bounds(self):
        with pytest.raises(ValueError):
            Note(onset=-1, pitch=60, duration=1, velocity=80)
        with pytest.raises(ValueError):
            Note(onset=0, pitch=120, duration=1, velocity=80)
        with pytest.raises(ValueError):
            Note(onset=0, pitch=60, duration=1, velocity=0)

    def test_bar_rejects_duplicates_and_disorder(self):
        n = Note(onset=0, pitch=60, duration=1, velocity=80)
        with pytest.raises(ValueError):
            Bar(0, (n, n))
        hi = Note(onset=0, pitch=62, duration=1, velocity=80)
        with pytest.raises(ValueError):
            Bar(0, (hi, n))

    def test_song_requires_contiguous_indices(self):
        with pytest.raises(ValueError):
            Song((Bar(1, ()),), Fraction(120))
