"""Frame-based token language for bars.

A bar unrolls to 32 frame tokens, each followed by the notes that onset
in that frame, sorted by ascending pitch. A note token bundles three
sub-tokens: pitch, a 32-bin velocity, and a duration in frames where 0
means "held until the next same-pitch onset or the next bar line".

Token heads and their id spaces (used by the model's classifiers):

* pitch head: PAD=0, BOS=1, EOS=2, FRAME=3, pitches 21..108 -> ids 4..91
* velocity head: bins 0..31, bin = (velocity - 1) // 4, center = bin * 4 + 2
* duration head: ids 0..128; 0 = held, 1..128 = explicit frames
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence, Union

from .score import FRAMES_PER_BAR, PITCH_MAX, PITCH_MIN, Bar, Note, make_bar

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
FRAME_ID = 3
PITCH_ID_BASE = 4
PITCH_VOCAB = PITCH_ID_BASE + (PITCH_MAX - PITCH_MIN + 1)  # 92
VELOCITY_BINS = 32
DURATION_MAX = 128
DURATION_VOCAB = DURATION_MAX + 1  # 129, id 0 = held
MAX_NOTES_PER_FRAME = 16


class LossyEncodingWarning(UserWarning):
    """Emitted when a frame holds more notes than the language can carry."""


class TokenError(ValueError):
    """Malformed token sequence. ``index`` is the offending token position."""

    def __init__(self, message: str, index: int):
        super().__init__(f"{message} (token index {index})")
        self.index = index


@dataclass(frozen=True)
class FrameToken:
    def __repr__(self) -> str:
        return "F"


FRAME = FrameToken()


@dataclass(frozen=True)
class NoteToken:
    pitch: int
    velocity_bin: int
    duration: int  # 0 = held, 1..128 explicit frames

    def __post_init__(self):
        if not PITCH_MIN <= self.pitch <= PITCH_MAX:
            raise ValueError(f"pitch {self.pitch} outside [{PITCH_MIN}, {PITCH_MAX}]")
        if not 0 <= self.velocity_bin < VELOCITY_BINS:
            raise ValueError(f"velocity bin {self.velocity_bin} outside [0, {VELOCITY_BINS})")
        if not 0 <= self.duration <= DURATION_MAX:
            raise ValueError(f"duration {self.duration} outside [0, {DURATION_MAX}]")

    @property
    def pitch_id(self) -> int:
        return pitch_to_id(self.pitch)


Token = Union[FrameToken, NoteToken]


def pitch_to_id(pitch: int) -> int:
    return pitch - PITCH_MIN + PITCH_ID_BASE


def id_to_pitch(pitch_id: int) -> int:
    return pitch_id - PITCH_ID_BASE + PITCH_MIN


def velocity_to_bin(velocity: int) -> int:
    return min(VELOCITY_BINS - 1, (velocity - 1) // 4)


def bin_to_velocity(velocity_bin: int) -> int:
    return velocity_bin * 4 + 2


@dataclass(frozen=True)
class TokenSeq:
    """A validated token sequence covering ``n_frames`` frames."""

    tokens: tuple[Token, ...]
    n_frames: int

    def __post_init__(self):
        frames_seen = 0
        notes_in_frame = 0
        last_pitch = -1
        for i, tok in enumerate(self.tokens):
            if isinstance(tok, FrameToken):
                frames_seen += 1
                notes_in_frame = 0
                last_pitch = -1
            else:
                if frames_seen == 0:
                    raise TokenError("note token before the first frame token", i)
                notes_in_frame += 1
                if notes_in_frame > MAX_NOTES_PER_FRAME:
                    raise TokenError(f"more than {MAX_NOTES_PER_FRAME} notes in one frame", i)
                if tok.pitch <= last_pitch:
                    raise TokenError("note pitches within a frame must strictly increase", i)
                last_pitch = tok.pitch
        if frames_seen != self.n_frames:
            raise TokenError(
                f"sequence has {frames_seen} frame tokens, declared {self.n_frames}",
                len(self.tokens),
            )

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def note_count(self) -> int:
        return sum(1 for t in self.tokens if isinstance(t, NoteToken))


def encode(bars: Sequence[Bar]) -> TokenSeq:
    """Unroll bars into the token language with explicit durations.

    Durations are clipped to [1, 128] frames; a frame with more than 16
    onsets keeps the 16 loudest (ties to the higher pitch) and emits a
    :class:`LossyEncodingWarning`.
    """
    tokens: list[Token] = []
    for bar in bars:
        by_onset: dict[int, list[Note]] = {}
        for n in bar.notes:
            by_onset.setdefault(n.onset, []).append(n)
        for frame in range(FRAMES_PER_BAR):
            tokens.append(FRAME)
            group = by_onset.get(frame, [])
            if len(group) > MAX_NOTES_PER_FRAME:
                warnings.warn(
                    f"frame with {len(group)} notes: keeping the {MAX_NOTES_PER_FRAME} loudest",
                    LossyEncodingWarning,
                    stacklevel=2,
                )
                group = sorted(group, key=lambda n: (n.velocity, n.pitch), reverse=True)
                group = group[:MAX_NOTES_PER_FRAME]
            for n in sorted(group, key=lambda n: n.pitch):
                tokens.append(
                    NoteToken(
                        pitch=n.pitch,
                        velocity_bin=velocity_to_bin(n.velocity),
                        duration=min(DURATION_MAX, max(1, n.duration)),
                    )
                )
    return TokenSeq(tuple(tokens), n_frames=FRAMES_PER_BAR * len(bars))


def decode(seq: TokenSeq, start_bar: int = 0) -> tuple[Bar, ...]:
    """Invert :func:`encode`; resolves held (duration-0) notes.

    A held note ends at the next onset of the same pitch or the next bar
    line, whichever comes first, and never gets a length below 1.
    Velocities come back as bin centers.
    """
    if seq.n_frames % FRAMES_PER_BAR != 0:
        raise TokenError(f"frame count {seq.n_frames} is not whole bars", len(seq.tokens))

    placed: list[tuple[int, NoteToken]] = []  # (sequence-global onset frame, token)
    frame = -1
    for i, tok in enumerate(seq.tokens):
        if isinstance(tok, FrameToken):
            frame += 1
        else:
            if frame < 0:
                raise TokenError("note token before the first frame token", i)
            placed.append((frame, tok))

    onsets_by_pitch: dict[int, list[int]] = {}
    for onset, tok in placed:
        onsets_by_pitch.setdefault(tok.pitch, []).append(onset)

    n_bars = seq.n_frames // FRAMES_PER_BAR
    buckets: list[list[Note]] = [[] for _ in range(n_bars)]
    for onset, tok in placed:
        if tok.duration > 0:
            duration = tok.duration
        else:
            bar_line = (onset // FRAMES_PER_BAR + 1) * FRAMES_PER_BAR
            later = [o for o in onsets_by_pitch[tok.pitch] if o > onset]
            end = min([bar_line] + later)
            duration = max(1, end - onset)
        buckets[onset // FRAMES_PER_BAR].append(
            Note(
                onset=onset % FRAMES_PER_BAR,
                pitch=tok.pitch,
                duration=duration,
                velocity=bin_to_velocity(tok.velocity_bin),
            )
        )
    return tuple(make_bar(start_bar + i, bucket) for i, bucket in enumerate(buckets))


@dataclass(frozen=True)
class VocabStats:
    tokens_per_bar: Fraction
    note_count: int


def vocab_stats(seq: TokenSeq) -> VocabStats:
    """Token density of a sequence: (frame + note tokens) per bar."""
    n_bars = seq.n_frames // FRAMES_PER_BAR
    if n_bars == 0:
        raise ValueError("sequence shorter than one bar")
    return VocabStats(Fraction(len(seq.tokens), n_bars), seq.note_count)


def dump_text(seq: TokenSeq) -> str:
    """Plain-text dump, one token per line: ``F`` or ``N pitch vel dur``."""
    lines = []
    for tok in seq.tokens:
        if isinstance(tok, FrameToken):
            lines.append("F")
        else:
            lines.append(f"N {tok.pitch} {tok.velocity_bin} {tok.duration}")
    return "\n".join(lines) + "\n"


def parse_text(text: str) -> TokenSeq:
    """Inverse of :func:`dump_text`."""
    tokens: list[Token] = []
    n_frames = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "F" and len(parts) == 1:
            tokens.append(FRAME)
            n_frames += 1
        elif parts[0] == "N" and len(parts) == 4:
            tokens.append(NoteToken(int(parts[1]), int(parts[2]), int(parts[3])))
        else:
            raise ValueError(f"line {lineno}: unrecognized token line {line!r}")
    return TokenSeq(tuple(tokens), n_frames)


def bars_to_text(bars: Iterable[Bar]) -> str:
    return dump_text(encode(list(bars)))
