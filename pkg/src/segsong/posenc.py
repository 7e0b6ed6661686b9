"""Positional encodings, all indexed by music time in frames.

Three encodings feed the models:

* start-end encoding: sinusoids of the distance from a span's start
  concatenated with sinusoids of the distance to its end;
* sub-beat encoding: one-hot of the frame within the bar plus its 5-bit
  binary form (most significant bit first);
* rotary rotation for attention queries/keys, with the rotation angle
  driven by the token's frame index.

The per-token feature handed to the models concatenates the start-end
encoding relative to the song, the one relative to the segment, and the
sub-beat encoding: 64 + 64 + 37 = 165 values.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .score import FRAMES_PER_BAR

SONG_PE_DIM = 64
SEGMENT_PE_DIM = 64
SUBBEAT_PE_DIM = FRAMES_PER_BAR + 5  # one-hot + binary bits
TOKEN_PE_DIM = SONG_PE_DIM + SEGMENT_PE_DIM + SUBBEAT_PE_DIM  # 165


def sinusoid(position: float | np.ndarray, dim: int) -> np.ndarray:
    """Standard sinusoidal encoding: pairs (sin, cos) of position times
    10000^(-2c/dim) for pair index ``c``."""
    if dim % 2 != 0:
        raise ValueError(f"sinusoid dim {dim} must be even")
    position = np.asarray(position, dtype=np.float64)
    c = np.arange(dim // 2, dtype=np.float64)
    angles = position[..., None] / np.power(10000.0, 2.0 * c / dim)
    out = np.empty(position.shape + (dim,), dtype=np.float64)
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def start_end_pe(pos: int, start: int, end: int, dim: int) -> np.ndarray:
    """Concatenation of sinusoid(pos - start) and sinusoid(end - pos)."""
    if dim % 4 != 0:
        raise ValueError(f"start-end dim {dim} must be divisible by 4")
    if not start <= pos <= end:
        raise ValueError(f"position {pos} outside span [{start}, {end}]")
    half = dim // 2
    return np.concatenate([sinusoid(pos - start, half), sinusoid(end - pos, half)])


def subbeat_pe(frame_in_bar: int) -> np.ndarray:
    """One-hot frame-in-bar plus its 5-bit binary expansion, MSB first."""
    if not 0 <= frame_in_bar < FRAMES_PER_BAR:
        raise ValueError(f"frame {frame_in_bar} outside [0, {FRAMES_PER_BAR})")
    out = np.zeros(SUBBEAT_PE_DIM)
    out[frame_in_bar] = 1.0
    for bit in range(5):
        out[FRAMES_PER_BAR + bit] = (frame_in_bar >> (4 - bit)) & 1
    return out


@dataclass(frozen=True)
class PositionDescriptor:
    """Where a token sits: its frame, and the song/segment spans around it."""

    frame_in_song: int
    song_start: int
    song_end: int
    segment_start: int
    segment_end: int
    frame_in_bar: int

    def __post_init__(self):
        if not self.song_start <= self.frame_in_song <= self.song_end:
            raise ValueError("frame outside song bounds")
        if not (
            self.song_start <= self.segment_start
            and self.segment_end <= self.song_end
            and self.segment_start <= self.segment_end
        ):
            raise ValueError("segment bounds outside song bounds")
        if not 0 <= self.frame_in_bar < FRAMES_PER_BAR:
            raise ValueError(f"frame_in_bar {self.frame_in_bar} outside [0, {FRAMES_PER_BAR})")

    @classmethod
    def at(cls, frame: int, song_span: tuple[int, int], segment_span: tuple[int, int]):
        return cls(
            frame_in_song=frame,
            song_start=song_span[0],
            song_end=song_span[1],
            segment_start=segment_span[0],
            segment_end=segment_span[1],
            frame_in_bar=frame % FRAMES_PER_BAR,
        )


def token_pe(desc: PositionDescriptor) -> np.ndarray:
    """The full 165-value per-token position feature."""
    song = start_end_pe(desc.frame_in_song, desc.song_start, desc.song_end, SONG_PE_DIM)
    seg = start_end_pe(desc.frame_in_song, desc.segment_start, desc.segment_end, SEGMENT_PE_DIM)
    # Tokens outside their nominal segment cannot occur; bounds are enforced
    # by PositionDescriptor, so plain concatenation is safe here.
    return np.concatenate([song, seg, subbeat_pe(desc.frame_in_bar)])


def token_pe_array(
    frames: np.ndarray,
    song_span: tuple[int, int],
    segment_span: tuple[int, int],
) -> np.ndarray:
    """Vectorized :func:`token_pe` for tokens sharing song/segment spans.

    ``frames`` is any integer array; the result appends a trailing axis of
    length 165. Frames must lie inside both spans.
    """
    frames = np.asarray(frames, dtype=np.int64)
    s0, s1 = song_span
    g0, g1 = segment_span
    if frames.size and (frames.min() < max(s0, g0) or frames.max() > min(s1, g1)):
        raise ValueError("frames outside song or segment bounds")
    song = np.concatenate(
        [sinusoid(frames - s0, SONG_PE_DIM // 2), sinusoid(s1 - frames, SONG_PE_DIM // 2)], axis=-1
    )
    seg = np.concatenate(
        [sinusoid(frames - g0, SEGMENT_PE_DIM // 2), sinusoid(g1 - frames, SEGMENT_PE_DIM // 2)],
        axis=-1,
    )
    fib = frames % FRAMES_PER_BAR
    onehot = np.eye(FRAMES_PER_BAR)[fib]
    bits = ((fib[..., None] >> np.arange(4, -1, -1)) & 1).astype(np.float64)
    return np.concatenate([song, seg, onehot, bits], axis=-1)


def rope_rotate(vector: np.ndarray, frame_index: int | np.ndarray) -> np.ndarray:
    """Rotary transform: coordinate pair ``c`` rotates by
    frame_index / 10000^(2c/dim). Norm-preserving; attention dot products
    of rotated queries/keys depend only on frame differences."""
    v = np.asarray(vector, dtype=np.float64)
    dim = v.shape[-1]
    if dim % 2 != 0:
        raise ValueError(f"vector width {dim} must be even")
    c = np.arange(dim // 2, dtype=np.float64)
    theta = np.asarray(frame_index, dtype=np.float64)[..., None] / np.power(10000.0, 2.0 * c / dim)
    cos, sin = np.cos(theta), np.sin(theta)
    even, odd = v[..., 0::2], v[..., 1::2]
    out = np.empty_like(v)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out
