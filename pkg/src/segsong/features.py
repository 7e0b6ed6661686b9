"""Featurization: token streams and training samples to model arrays.

The decoder consumes a shifted stream (BOS + tokens) and predicts
(tokens + EOS). Every array position carries the token's frame index;
notes additionally carry velocity/duration sub-token ids. Context slots
are concatenated into one memory stream tagged with slot type ids, and
bars destined for the global-vision encoder stay as separate short
streams for the bar encoder.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import tokens as tk
from .context import CONTEXT_TAGS, ContextSegment, TrainingSample
from .posenc import TOKEN_PE_DIM, token_pe_array
from .score import FRAMES_PER_BAR, Bar

CONTEXT_TYPE_IDS = {tag: i for i, tag in enumerate(CONTEXT_TAGS)}


@dataclass
class TokenArrays:
    """One token stream: ids per head, note mask, frames, position features."""

    pitch: np.ndarray  # int64 [T]
    velocity: np.ndarray  # int64 [T], 0 outside notes
    duration: np.ndarray  # int64 [T], 0 outside notes
    note_mask: np.ndarray  # bool [T]
    frames: np.ndarray  # int64 [T]
    pe: np.ndarray  # float32 [T, 165]

    def __len__(self) -> int:
        return len(self.pitch)


def _token_ids(seq: tk.TokenSeq, start_frame: int) -> tuple[np.ndarray, ...]:
    """Raw id/frame arrays for a token sequence, without BOS/EOS."""
    n = len(seq.tokens)
    pitch = np.zeros(n, dtype=np.int64)
    velocity = np.zeros(n, dtype=np.int64)
    duration = np.zeros(n, dtype=np.int64)
    note = np.zeros(n, dtype=bool)
    frames = np.zeros(n, dtype=np.int64)
    frame = start_frame - 1
    for i, tok in enumerate(seq.tokens):
        if isinstance(tok, tk.FrameToken):
            frame += 1
            pitch[i] = tk.FRAME_ID
        else:
            pitch[i] = tok.pitch_id
            velocity[i] = tok.velocity_bin
            duration[i] = tok.duration
            note[i] = True
        frames[i] = frame
    return pitch, velocity, duration, note, frames


def bar_span(start_bar: int, end_bar: int) -> tuple[int, int]:
    """Inclusive frame span of a 1-indexed inclusive bar range."""
    return (start_bar - 1) * FRAMES_PER_BAR, end_bar * FRAMES_PER_BAR - 1


def encode_stream(
    bars: tuple[Bar, ...],
    start_bar: int,
    song_bars: int,
    segment_span_bars: tuple[int, int] | None = None,
) -> TokenArrays:
    """Token arrays for bars placed at ``start_bar`` (1-indexed), with
    position features relative to the song and the given segment span."""
    seq = tk.encode(bars)
    start_frame = (start_bar - 1) * FRAMES_PER_BAR
    pitch, velocity, duration, note, frames = _token_ids(seq, start_frame)
    song = bar_span(1, song_bars)
    seg = bar_span(*(segment_span_bars or (start_bar, start_bar + len(bars) - 1)))
    pe = token_pe_array(frames, song, seg).astype(np.float32)
    return TokenArrays(pitch, velocity, duration, note, frames, pe)


@dataclass
class TargetArrays:
    """Decoder-side arrays: shifted inputs plus per-head targets."""

    inputs: TokenArrays  # BOS + tokens, length T
    target_pitch: np.ndarray  # tokens + EOS, length T
    target_velocity: np.ndarray
    target_duration: np.ndarray
    target_note_mask: np.ndarray


def make_target(
    bars: tuple[Bar, ...], start_bar: int, end_bar: int, song_bars: int
) -> TargetArrays:
    stream = encode_stream(bars, start_bar, song_bars, (start_bar, end_bar))
    span = bar_span(start_bar, end_bar)
    song = bar_span(1, song_bars)

    bos_frame = np.array([span[0]], dtype=np.int64)
    inputs = TokenArrays(
        pitch=np.concatenate([[tk.BOS_ID], stream.pitch]),
        velocity=np.concatenate([[0], stream.velocity]),
        duration=np.concatenate([[0], stream.duration]),
        note_mask=np.concatenate([[False], stream.note_mask]),
        frames=np.concatenate([bos_frame, stream.frames]),
        pe=np.concatenate(
            [token_pe_array(bos_frame, song, span).astype(np.float32), stream.pe]
        ),
    )
    return TargetArrays(
        inputs=inputs,
        target_pitch=np.concatenate([stream.pitch, [tk.EOS_ID]]),
        target_velocity=np.concatenate([stream.velocity, [0]]),
        target_duration=np.concatenate([stream.duration, [0]]),
        target_note_mask=np.concatenate([stream.note_mask, [False]]),
    )


@dataclass
class ContextArrays:
    """All four context slots concatenated; absent slots appear as a single
    placeholder position flagged in ``empty_mask``."""

    stream: TokenArrays
    type_ids: np.ndarray  # int64 [C] in 0..3
    empty_mask: np.ndarray  # bool [C]


def make_context(slots: dict[str, ContextSegment | None], song_bars: int) -> ContextArrays:
    parts: list[TokenArrays] = []
    types: list[np.ndarray] = []
    empties: list[np.ndarray] = []
    for tag in CONTEXT_TAGS:
        seg = slots[tag]
        if seg is None or seg.bars is None:
            parts.append(
                TokenArrays(
                    pitch=np.array([tk.PAD_ID], dtype=np.int64),
                    velocity=np.zeros(1, dtype=np.int64),
                    duration=np.zeros(1, dtype=np.int64),
                    note_mask=np.zeros(1, dtype=bool),
                    frames=np.zeros(1, dtype=np.int64),
                    pe=np.zeros((1, TOKEN_PE_DIM), dtype=np.float32),
                )
            )
            types.append(np.full(1, CONTEXT_TYPE_IDS[tag], dtype=np.int64))
            empties.append(np.ones(1, dtype=bool))
        else:
            stream = encode_stream(
                seg.bars, seg.start_bar, song_bars, (seg.start_bar, seg.end_bar)
            )
            parts.append(stream)
            types.append(np.full(len(stream), CONTEXT_TYPE_IDS[tag], dtype=np.int64))
            empties.append(np.zeros(len(stream), dtype=bool))
    stream = TokenArrays(
        pitch=np.concatenate([p.pitch for p in parts]),
        velocity=np.concatenate([p.velocity for p in parts]),
        duration=np.concatenate([p.duration for p in parts]),
        note_mask=np.concatenate([p.note_mask for p in parts]),
        frames=np.concatenate([p.frames for p in parts]),
        pe=np.concatenate([p.pe for p in parts]),
    )
    return ContextArrays(stream, np.concatenate(types), np.concatenate(empties))


@dataclass
class BarArrays:
    """A single bar's token stream for the bar autoencoder, frames bar-local."""

    pitch: np.ndarray
    velocity: np.ndarray
    duration: np.ndarray
    note_mask: np.ndarray
    frames: np.ndarray  # 0..31


def encode_bar(bar: Bar) -> BarArrays:
    seq = tk.encode([Bar(0, bar.notes)])
    pitch, velocity, duration, note, frames = _token_ids(seq, 0)
    return BarArrays(pitch, velocity, duration, note, frames)


@dataclass
class VisionArrays:
    """Existing bars for global vision: bar streams plus placement features."""

    bars: list[BarArrays]
    frames: np.ndarray  # int64 [V], bar start frames
    pe: np.ndarray  # float32 [V, 165]


def make_vision(sample: TrainingSample) -> VisionArrays:
    bars: list[BarArrays] = []
    frames: list[int] = []
    pes: list[np.ndarray] = []
    song = bar_span(1, sample.song_bars)
    for placed in sample.existing:
        seg = bar_span(placed.start_bar, placed.end_bar)
        for offset, bar in enumerate(placed.bars):
            bars.append(encode_bar(bar))
            start = (placed.start_bar - 1 + offset) * FRAMES_PER_BAR
            frames.append(start)
            pes.append(token_pe_array(np.array([start]), song, seg)[0])
    if bars:
        return VisionArrays(bars, np.array(frames, dtype=np.int64), np.stack(pes).astype(np.float32))
    return VisionArrays([], np.zeros(0, dtype=np.int64), np.zeros((0, TOKEN_PE_DIM), dtype=np.float32))


@dataclass
class ModelSample:
    """One fully featurized training/generation conditioning sample."""

    target: TargetArrays
    context: ContextArrays
    vision: VisionArrays


def featurize(sample: TrainingSample) -> ModelSample:
    slots = {
        "left": sample.context.left,
        "right": sample.context.right,
        "seed": sample.context.seed,
        "ref": sample.context.ref,
    }
    return ModelSample(
        target=make_target(
            sample.target, sample.target_start, sample.target_end, sample.song_bars
        ),
        context=make_context(slots, sample.song_bars),
        vision=make_vision(sample),
    )


@dataclass
class Batch:
    """Padded torch tensors for a list of samples."""

    inp_pitch: torch.Tensor  # [B, T] long
    inp_velocity: torch.Tensor
    inp_duration: torch.Tensor
    inp_note: torch.Tensor  # [B, T] bool
    inp_frames: torch.Tensor  # [B, T] long
    inp_pe: torch.Tensor  # [B, T, 165]
    inp_pad: torch.Tensor  # [B, T] bool, True where padding

    tgt_pitch: torch.Tensor  # [B, T] long
    tgt_velocity: torch.Tensor
    tgt_duration: torch.Tensor
    tgt_note: torch.Tensor  # [B, T] bool

    ctx_pitch: torch.Tensor  # [B, C]
    ctx_velocity: torch.Tensor
    ctx_duration: torch.Tensor
    ctx_note: torch.Tensor
    ctx_frames: torch.Tensor
    ctx_pe: torch.Tensor
    ctx_type: torch.Tensor  # [B, C] long
    ctx_empty: torch.Tensor  # [B, C] bool
    ctx_pad: torch.Tensor  # [B, C] bool

    vis_pitch: torch.Tensor  # [B, V, U]
    vis_velocity: torch.Tensor
    vis_duration: torch.Tensor
    vis_note: torch.Tensor
    vis_bar_frames: torch.Tensor  # [B, V, U] frame-in-bar per token
    vis_tok_pad: torch.Tensor  # [B, V, U] bool
    vis_frames: torch.Tensor  # [B, V] bar start frames
    vis_pe: torch.Tensor  # [B, V, 165]
    vis_pad: torch.Tensor  # [B, V] bool

    @property
    def size(self) -> int:
        return self.inp_pitch.shape[0]


def _pad_stack(arrays: list[np.ndarray], width: int, dtype) -> torch.Tensor:
    if arrays and arrays[0].ndim == 2:
        out = np.zeros((len(arrays), width, arrays[0].shape[1]), dtype=dtype)
    else:
        out = np.zeros((len(arrays), width), dtype=dtype)
    for i, a in enumerate(arrays):
        out[i, : len(a)] = a
    return torch.from_numpy(out)


@dataclass
class BarBatch:
    """Padded bar streams for the bar autoencoder.

    Encoder view plus the shifted decoder inputs/targets (BOS prepended,
    EOS appended)."""

    pitch: torch.Tensor  # [B, U]
    velocity: torch.Tensor
    duration: torch.Tensor
    note: torch.Tensor
    frames: torch.Tensor
    tok_pad: torch.Tensor

    dec_pitch: torch.Tensor  # [B, U + 1]
    dec_velocity: torch.Tensor
    dec_duration: torch.Tensor
    dec_note: torch.Tensor
    dec_frames: torch.Tensor

    tgt_pitch: torch.Tensor  # [B, U + 1]
    tgt_velocity: torch.Tensor
    tgt_duration: torch.Tensor
    tgt_note: torch.Tensor
    tgt_valid: torch.Tensor  # [B, U + 1] bool


def collate_bars(bars: list[BarArrays]) -> BarBatch:
    u_max = max(len(b.pitch) for b in bars)
    n = len(bars)

    def padded(fill, dtype):
        return np.full((n, u_max), fill, dtype=dtype)

    pitch = padded(0, np.int64)
    velocity = padded(0, np.int64)
    duration = padded(0, np.int64)
    note = padded(False, bool)
    frames = padded(0, np.int64)
    tok_pad = padded(True, bool)
    dec = {k: np.zeros((n, u_max + 1), dtype=np.int64) for k in ("pitch", "velocity", "duration", "frames")}
    dec_note = np.zeros((n, u_max + 1), dtype=bool)
    tgt = {k: np.zeros((n, u_max + 1), dtype=np.int64) for k in ("pitch", "velocity", "duration")}
    tgt_note = np.zeros((n, u_max + 1), dtype=bool)
    tgt_valid = np.zeros((n, u_max + 1), dtype=bool)

    for i, bar in enumerate(bars):
        length = len(bar.pitch)
        pitch[i, :length] = bar.pitch
        velocity[i, :length] = bar.velocity
        duration[i, :length] = bar.duration
        note[i, :length] = bar.note_mask
        frames[i, :length] = bar.frames
        tok_pad[i, :length] = False
        dec["pitch"][i, 0] = tk.BOS_ID
        dec["pitch"][i, 1 : length + 1] = bar.pitch
        dec["velocity"][i, 1 : length + 1] = bar.velocity
        dec["duration"][i, 1 : length + 1] = bar.duration
        dec_note[i, 1 : length + 1] = bar.note_mask
        dec["frames"][i, 1 : length + 1] = bar.frames
        tgt["pitch"][i, :length] = bar.pitch
        tgt["pitch"][i, length] = tk.EOS_ID
        tgt["velocity"][i, :length] = bar.velocity
        tgt["duration"][i, :length] = bar.duration
        tgt_note[i, :length] = bar.note_mask
        tgt_valid[i, : length + 1] = True

    t = torch.from_numpy
    return BarBatch(
        pitch=t(pitch),
        velocity=t(velocity),
        duration=t(duration),
        note=t(note),
        frames=t(frames),
        tok_pad=t(tok_pad),
        dec_pitch=t(dec["pitch"]),
        dec_velocity=t(dec["velocity"]),
        dec_duration=t(dec["duration"]),
        dec_note=t(dec_note),
        dec_frames=t(dec["frames"]),
        tgt_pitch=t(tgt["pitch"]),
        tgt_velocity=t(tgt["velocity"]),
        tgt_duration=t(tgt["duration"]),
        tgt_note=t(tgt_note),
        tgt_valid=t(tgt_valid),
    )


def collate(samples: list[ModelSample], dtype: torch.dtype = torch.float32) -> Batch:
    t_max = max(len(s.target.inputs) for s in samples)
    c_max = max(len(s.context.stream) for s in samples)
    v_max = max(len(s.vision.bars) for s in samples)
    u_max = max((len(b.pitch) for s in samples for b in s.vision.bars), default=1)
    v_pad_max = max(v_max, 1)

    def stack_stream(getter, width, field, dtype_):
        return _pad_stack([getattr(getter(s), field) for s in samples], width, dtype_)

    inp = lambda s: s.target.inputs
    ctx = lambda s: s.context.stream

    inp_pad = torch.ones((len(samples), t_max), dtype=torch.bool)
    ctx_pad = torch.ones((len(samples), c_max), dtype=torch.bool)
    for i, s in enumerate(samples):
        inp_pad[i, : len(s.target.inputs)] = False
        ctx_pad[i, : len(s.context.stream)] = False

    vis_pitch = np.zeros((len(samples), v_pad_max, u_max), dtype=np.int64)
    vis_velocity = np.zeros_like(vis_pitch)
    vis_duration = np.zeros_like(vis_pitch)
    vis_note = np.zeros(vis_pitch.shape, dtype=bool)
    vis_bar_frames = np.zeros_like(vis_pitch)
    vis_tok_pad = np.ones(vis_pitch.shape, dtype=bool)
    vis_frames = np.zeros((len(samples), v_pad_max), dtype=np.int64)
    vis_pe = np.zeros((len(samples), v_pad_max, TOKEN_PE_DIM), dtype=np.float32)
    vis_pad = np.ones((len(samples), v_pad_max), dtype=bool)
    for i, s in enumerate(samples):
        for v, bar in enumerate(s.vision.bars):
            n = len(bar.pitch)
            vis_pitch[i, v, :n] = bar.pitch
            vis_velocity[i, v, :n] = bar.velocity
            vis_duration[i, v, :n] = bar.duration
            vis_note[i, v, :n] = bar.note_mask
            vis_bar_frames[i, v, :n] = bar.frames
            vis_tok_pad[i, v, :n] = False
        n_bars = len(s.vision.bars)
        if n_bars:
            vis_frames[i, :n_bars] = s.vision.frames
            vis_pe[i, :n_bars] = s.vision.pe
            vis_pad[i, :n_bars] = False

    return Batch(
        inp_pitch=stack_stream(inp, t_max, "pitch", np.int64),
        inp_velocity=stack_stream(inp, t_max, "velocity", np.int64),
        inp_duration=stack_stream(inp, t_max, "duration", np.int64),
        inp_note=stack_stream(inp, t_max, "note_mask", bool),
        inp_frames=stack_stream(inp, t_max, "frames", np.int64),
        inp_pe=stack_stream(inp, t_max, "pe", np.float32).to(dtype),
        inp_pad=inp_pad,
        tgt_pitch=_pad_stack([s.target.target_pitch for s in samples], t_max, np.int64),
        tgt_velocity=_pad_stack([s.target.target_velocity for s in samples], t_max, np.int64),
        tgt_duration=_pad_stack([s.target.target_duration for s in samples], t_max, np.int64),
        tgt_note=_pad_stack([s.target.target_note_mask for s in samples], t_max, bool),
        ctx_pitch=stack_stream(ctx, c_max, "pitch", np.int64),
        ctx_velocity=stack_stream(ctx, c_max, "velocity", np.int64),
        ctx_duration=stack_stream(ctx, c_max, "duration", np.int64),
        ctx_note=stack_stream(ctx, c_max, "note_mask", bool),
        ctx_frames=stack_stream(ctx, c_max, "frames", np.int64),
        ctx_pe=stack_stream(ctx, c_max, "pe", np.float32).to(dtype),
        ctx_type=_pad_stack([s.context.type_ids for s in samples], c_max, np.int64),
        ctx_empty=_pad_stack([s.context.empty_mask for s in samples], c_max, bool),
        ctx_pad=ctx_pad,
        vis_pitch=torch.from_numpy(vis_pitch),
        vis_velocity=torch.from_numpy(vis_velocity),
        vis_duration=torch.from_numpy(vis_duration),
        vis_note=torch.from_numpy(vis_note),
        vis_bar_frames=torch.from_numpy(vis_bar_frames),
        vis_tok_pad=torch.from_numpy(vis_tok_pad),
        vis_frames=torch.from_numpy(vis_frames),
        vis_pe=torch.from_numpy(vis_pe).to(dtype),
        vis_pad=torch.from_numpy(vis_pad),
    )
