"""Neural components: bar autoencoder, global vision, and the generator.

The generator is a decoder-only transformer over the frame/note token
stream with three conditioning paths:

* a context encoder over the four selected context segments, reached by
  cross-attention;
* a global-vision encoder over bar latents of everything already
  generated, injected by adding its pooled projection to every decoder
  layer input (in-attention);
* rotary attention everywhere, with rotation angles taken from frame
  indices rather than sequence positions.

Output heads run sequentially: pitch from the hidden state, velocity
from hidden state + pitch, duration from hidden state + pitch +
velocity. During training the chained inputs are teacher-forced.

``flat_mode`` strips the context encoder, global vision, and
cross-attention, leaving a plain decoder trained on fragments.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import tokens as tk
from .features import Batch
from .posenc import TOKEN_PE_DIM
from .score import FRAMES_PER_BAR


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 128
    n_heads: int = 4
    n_decoder_layers: int = 4
    n_context_layers: int = 2
    n_vision_layers: int = 2
    latent_width: int = 64
    max_positions: int = 1024
    dropout: float = 0.1
    flat_mode: bool = False
    vision_per_bar: bool = False  # feed per-bar vision vectors into cross-attention memory

    pitch_vocab: int = tk.PITCH_VOCAB
    velocity_vocab: int = tk.VELOCITY_BINS
    duration_vocab: int = tk.DURATION_VOCAB

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must divide by n_heads")
        if (self.d_model // self.n_heads) % 2 != 0:
            raise ValueError("per-head width must be even for rotary pairs")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        return cls(**doc)


def rope(x: torch.Tensor, frames: torch.Tensor) -> torch.Tensor:
    """Rotate coordinate pairs of ``x`` [..., T, dh] by angles driven by
    ``frames`` [..., T]; pair c turns by frames / 10000^(2c/dh)."""
    dh = x.shape[-1]
    c = torch.arange(dh // 2, device=x.device, dtype=x.dtype)
    inv = torch.pow(torch.tensor(10000.0, device=x.device, dtype=x.dtype), -2.0 * c / dh)
    theta = frames.to(x.dtype)[..., None] * inv
    cos, sin = torch.cos(theta), torch.sin(theta)
    even, odd = x[..., 0::2], x[..., 1::2]
    out = torch.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


class RoPEAttention(nn.Module):
    """Multi-head attention with rotary frame positions on queries/keys."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.n_heads = cfg.n_heads
        self.d_head = cfg.d_model // cfg.n_heads
        self.wq = nn.Linear(cfg.d_model, cfg.d_model)
        self.wk = nn.Linear(cfg.d_model, cfg.d_model)
        self.wv = nn.Linear(cfg.d_model, cfg.d_model)
        self.wo = nn.Linear(cfg.d_model, cfg.d_model)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, t, _ = x.shape
        return x.view(b, t, self.n_heads, self.d_head).transpose(1, 2)

    def _merge(self, x: torch.Tensor) -> torch.Tensor:
        b, h, t, dh = x.shape
        return x.transpose(1, 2).reshape(b, t, h * dh)

    def project_kv(
        self, kv_x: torch.Tensor, kv_frames: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        k = rope(self._split(self.wk(kv_x)), kv_frames[:, None, :])
        v = self._split(self.wv(kv_x))
        return k, v

    def attend(
        self,
        q_x: torch.Tensor,
        q_frames: torch.Tensor,
        k: torch.Tensor,
        v: torch.Tensor,
        causal: bool = False,
        key_pad: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        q = rope(self._split(self.wq(q_x)), q_frames[:, None, :])
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        if causal:
            t, s = scores.shape[-2], scores.shape[-1]
            mask = torch.ones(t, s, device=scores.device, dtype=torch.bool).triu(s - t + 1)
            scores = scores.masked_fill(mask, float("-inf"))
        if key_pad is not None:
            # A fully masked row (all-padding batch entry) would softmax to
            # NaN and leak into pooled reductions; let it attend position 0,
            # the caller discards those rows anyway.
            dead = key_pad.all(dim=-1)
            if bool(dead.any()):
                key_pad = key_pad.clone()
                key_pad[dead, 0] = False
            scores = scores.masked_fill(key_pad[:, None, None, :], float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        return self.wo(self._merge(attn @ v))

    def forward(
        self,
        q_x: torch.Tensor,
        q_frames: torch.Tensor,
        kv_x: torch.Tensor,
        kv_frames: torch.Tensor,
        causal: bool = False,
        key_pad: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        k, v = self.project_kv(kv_x, kv_frames)
        return self.attend(q_x, q_frames, k, v, causal=causal, key_pad=key_pad)


class FeedForward(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(cfg.d_model, 4 * cfg.d_model),
            nn.GELU(),
            nn.Linear(4 * cfg.d_model, cfg.d_model),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class EncoderLayer(nn.Module):
    """Pre-norm bidirectional block."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.attn = RoPEAttention(cfg)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(
        self, x: torch.Tensor, frames: torch.Tensor, key_pad: Optional[torch.Tensor] = None
    ) -> torch.Tensor:
        h = self.ln1(x)
        x = x + self.drop(self.attn(h, frames, h, frames, key_pad=key_pad))
        x = x + self.drop(self.ff(self.ln2(x)))
        return x


class DecoderLayer(nn.Module):
    """Pre-norm causal block with optional cross-attention."""

    def __init__(self, cfg: ModelConfig, cross: bool):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.self_attn = RoPEAttention(cfg)
        self.cross_attn = RoPEAttention(cfg) if cross else None
        self.ln2 = nn.LayerNorm(cfg.d_model) if cross else None
        self.ln3 = nn.LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(
        self,
        x: torch.Tensor,
        frames: torch.Tensor,
        memory: Optional[torch.Tensor] = None,
        memory_frames: Optional[torch.Tensor] = None,
        memory_pad: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        h = self.ln1(x)
        x = x + self.drop(self.self_attn(h, frames, h, frames, causal=True))
        if self.cross_attn is not None and memory is not None:
            x = x + self.drop(
                self.cross_attn(self.ln2(x), frames, memory, memory_frames, key_pad=memory_pad)
            )
        x = x + self.drop(self.ff(self.ln3(x)))
        return x


class TokenEmbedding(nn.Module):
    """Sum of sub-token embeddings plus the projected position feature.

    Velocity/duration embeddings only contribute at note positions."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.pitch = nn.Embedding(cfg.pitch_vocab, cfg.d_model)
        self.velocity = nn.Embedding(cfg.velocity_vocab, cfg.d_model)
        self.duration = nn.Embedding(cfg.duration_vocab, cfg.d_model)
        self.pe_proj = nn.Linear(TOKEN_PE_DIM, cfg.d_model)

    def forward(
        self,
        pitch: torch.Tensor,
        velocity: torch.Tensor,
        duration: torch.Tensor,
        note: torch.Tensor,
        pe: torch.Tensor,
    ) -> torch.Tensor:
        x = self.pitch(pitch) + self.pe_proj(pe)
        x = x + (self.velocity(velocity) + self.duration(duration)) * note[..., None].to(x.dtype)
        return x


class Heads(nn.Module):
    """Sequential classifiers: pitch, then velocity given pitch, then
    duration given pitch and velocity."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d_model
        self.pitch_out = nn.Linear(d, cfg.pitch_vocab)
        self.chain_pitch = nn.Embedding(cfg.pitch_vocab, d)
        self.chain_velocity = nn.Embedding(cfg.velocity_vocab, d)
        self.velocity_mlp = nn.Sequential(
            nn.Linear(2 * d, d), nn.GELU(), nn.Linear(d, cfg.velocity_vocab)
        )
        self.duration_mlp = nn.Sequential(
            nn.Linear(3 * d, d), nn.GELU(), nn.Linear(d, cfg.duration_vocab)
        )

    def pitch_logits(self, h: torch.Tensor) -> torch.Tensor:
        return self.pitch_out(h)

    def velocity_logits(self, h: torch.Tensor, pitch: torch.Tensor) -> torch.Tensor:
        return self.velocity_mlp(torch.cat([h, self.chain_pitch(pitch)], dim=-1))

    def duration_logits(
        self, h: torch.Tensor, pitch: torch.Tensor, velocity: torch.Tensor
    ) -> torch.Tensor:
        return self.duration_mlp(
            torch.cat([h, self.chain_pitch(pitch), self.chain_velocity(velocity)], dim=-1)
        )

    def forward(
        self, h: torch.Tensor, pitch: torch.Tensor, velocity: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        return (
            self.pitch_logits(h),
            self.velocity_logits(h, pitch),
            self.duration_logits(h, pitch, velocity),
        )


def _subbeat_table() -> torch.Tensor:
    table = np.zeros((FRAMES_PER_BAR, FRAMES_PER_BAR + 5), dtype=np.float32)
    for f in range(FRAMES_PER_BAR):
        table[f, f] = 1.0
        for bit in range(5):
            table[f, FRAMES_PER_BAR + bit] = (f >> (4 - bit)) & 1
    return torch.from_numpy(table)


class BarVAE(nn.Module):
    """Variational autoencoder over single-bar token streams.

    The encoder mean-pools a bidirectional stack into a Gaussian
    posterior; the decoder is a small causal stack with the latent added
    to every layer input, sharing the output-head design."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        self.pitch = nn.Embedding(cfg.pitch_vocab, d)
        self.velocity = nn.Embedding(cfg.velocity_vocab, d)
        self.duration = nn.Embedding(cfg.duration_vocab, d)
        self.sub_proj = nn.Linear(FRAMES_PER_BAR + 5, d)
        self.register_buffer("subbeat", _subbeat_table(), persistent=False)
        self.enc_layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(2))
        self.enc_ln = nn.LayerNorm(d)
        self.to_mu = nn.Linear(d, cfg.latent_width)
        self.to_logvar = nn.Linear(d, cfg.latent_width)
        self.z_proj = nn.Linear(cfg.latent_width, d)
        self.dec_layers = nn.ModuleList(DecoderLayer(cfg, cross=False) for _ in range(2))
        self.dec_ln = nn.LayerNorm(d)
        self.heads = Heads(cfg)

    def embed(self, pitch, velocity, duration, note, frames) -> torch.Tensor:
        x = self.pitch(pitch) + self.sub_proj(self.subbeat.to(self.pitch.weight.dtype)[frames])
        x = x + (self.velocity(velocity) + self.duration(duration)) * note[..., None].to(x.dtype)
        return x

    def encode(
        self, pitch, velocity, duration, note, frames, tok_pad
    ) -> tuple[torch.Tensor, torch.Tensor]:
        x = self.embed(pitch, velocity, duration, note, frames)
        for layer in self.enc_layers:
            x = layer(x, frames, key_pad=tok_pad)
        x = self.enc_ln(x)
        keep = (~tok_pad)[..., None].to(x.dtype)
        pooled = (x * keep).sum(dim=1) / keep.sum(dim=1).clamp(min=1.0)
        return self.to_mu(pooled), self.to_logvar(pooled)

    def decode_logits(
        self, z, dec_pitch, dec_velocity, dec_duration, dec_note, dec_frames, chain_pitch, chain_velocity
    ):
        x = self.embed(dec_pitch, dec_velocity, dec_duration, dec_note, dec_frames)
        z_add = self.z_proj(z)[:, None, :]
        for layer in self.dec_layers:
            x = layer(x + z_add, dec_frames)
        h = self.dec_ln(x)
        return self.heads(h, chain_pitch, chain_velocity)


class GlobalVision(nn.Module):
    """Bidirectional stack over placed bar latents; outputs per-bar vectors
    and a pooled song vector (a learned null when nothing exists yet)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.z_proj = nn.Linear(cfg.latent_width, cfg.d_model)
        self.pe_proj = nn.Linear(TOKEN_PE_DIM, cfg.d_model)
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.n_vision_layers))
        self.ln = nn.LayerNorm(cfg.d_model)
        self.null = nn.Parameter(torch.zeros(cfg.d_model))

    def forward(
        self, latents: torch.Tensor, pe: torch.Tensor, frames: torch.Tensor, pad: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        x = self.z_proj(latents) + self.pe_proj(pe)
        any_bar = (~pad).any(dim=1)
        if bool(any_bar.any()):
            for layer in self.layers:
                x = layer(x, frames, key_pad=pad)
        x = self.ln(x)
        keep = (~pad)[..., None].to(x.dtype)
        pooled = (x * keep).sum(dim=1) / keep.sum(dim=1).clamp(min=1.0)
        pooled = torch.where(any_bar[:, None], pooled, self.null[None, :].to(pooled.dtype))
        return x, pooled


@dataclass
class DecoderCache:
    """Incremental decoding state for one segment."""

    memory: Optional[torch.Tensor]
    memory_frames: Optional[torch.Tensor]
    memory_pad: Optional[torch.Tensor]
    memory_kv: list  # per decoder layer: (k, v) over memory, or None
    g_add: Optional[torch.Tensor]
    self_kv: list = field(default_factory=list)  # per layer [k, v] growing
    length: int = 0


class Generator(nn.Module):
    """The segment generator (context encoder + conditioned decoder)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = TokenEmbedding(cfg)
        self.dec_layers = nn.ModuleList(
            DecoderLayer(cfg, cross=not cfg.flat_mode) for _ in range(cfg.n_decoder_layers)
        )
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.heads = Heads(cfg)
        if not cfg.flat_mode:
            self.type_emb = nn.Embedding(len(("left", "right", "seed", "ref")), cfg.d_model)
            self.empty_emb = nn.Parameter(torch.zeros(cfg.d_model))
            self.ctx_layers = nn.ModuleList(
                EncoderLayer(cfg) for _ in range(cfg.n_context_layers)
            )
            self.ctx_ln = nn.LayerNorm(cfg.d_model)
            self.vision = GlobalVision(cfg)
            self.in_proj = nn.Linear(cfg.d_model, cfg.d_model)

    def encode_context(self, batch: Batch) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        tok = self.embed(
            batch.ctx_pitch, batch.ctx_velocity, batch.ctx_duration, batch.ctx_note, batch.ctx_pe
        )
        empty = batch.ctx_empty[..., None].to(tok.dtype)
        x = tok * (1.0 - empty) + self.empty_emb[None, None, :].to(tok.dtype) * empty
        x = x + self.type_emb(batch.ctx_type)
        for layer in self.ctx_layers:
            x = layer(x, batch.ctx_frames, key_pad=batch.ctx_pad)
        return self.ctx_ln(x), batch.ctx_frames, batch.ctx_pad

    def encode_vision(self, vae: BarVAE, batch: Batch) -> tuple[torch.Tensor, torch.Tensor]:
        b, v, u = batch.vis_pitch.shape
        with torch.no_grad():
            mu, _ = vae.encode(
                batch.vis_pitch.reshape(b * v, u),
                batch.vis_velocity.reshape(b * v, u),
                batch.vis_duration.reshape(b * v, u),
                batch.vis_note.reshape(b * v, u),
                batch.vis_bar_frames.reshape(b * v, u),
                batch.vis_tok_pad.reshape(b * v, u),
            )
        latents = mu.reshape(b, v, -1).detach()
        return self.vision(latents, batch.vis_pe, batch.vis_frames, batch.vis_pad)

    def conditioning(
        self, vae: BarVAE, batch: Batch
    ) -> tuple[Optional[torch.Tensor], Optional[torch.Tensor], Optional[torch.Tensor], Optional[torch.Tensor]]:
        """(memory, memory_frames, memory_pad, g_add) for a batch."""
        if self.cfg.flat_mode:
            return None, None, None, None
        memory, memory_frames, memory_pad = self.encode_context(batch)
        per_bar, pooled = self.encode_vision(vae, batch)
        if self.cfg.vision_per_bar:
            memory = torch.cat([memory, per_bar], dim=1)
            memory_frames = torch.cat([memory_frames, batch.vis_frames], dim=1)
            memory_pad = torch.cat([memory_pad, batch.vis_pad], dim=1)
        g_add = self.in_proj(pooled)[:, None, :]
        return memory, memory_frames, memory_pad, g_add

    def decode_hidden(
        self,
        batch: Batch,
        memory: Optional[torch.Tensor],
        memory_frames: Optional[torch.Tensor],
        memory_pad: Optional[torch.Tensor],
        g_add: Optional[torch.Tensor],
    ) -> torch.Tensor:
        x = self.embed(
            batch.inp_pitch, batch.inp_velocity, batch.inp_duration, batch.inp_note, batch.inp_pe
        )
        for layer in self.dec_layers:
            if g_add is not None:
                x = x + g_add
            x = layer(x, batch.inp_frames, memory, memory_frames, memory_pad)
        return self.ln_f(x)

    def forward(self, vae: BarVAE, batch: Batch):
        if batch.inp_pitch.shape[1] > self.cfg.max_positions:
            raise ValueError(
                f"sequence of {batch.inp_pitch.shape[1]} exceeds max positions {self.cfg.max_positions}"
            )
        memory, memory_frames, memory_pad, g_add = self.conditioning(vae, batch)
        h = self.decode_hidden(batch, memory, memory_frames, memory_pad, g_add)
        return self.heads(h, batch.tgt_pitch, batch.tgt_velocity)

    # -- incremental decoding ------------------------------------------------

    def start_cache(self, vae: BarVAE, batch: Batch) -> DecoderCache:
        memory, memory_frames, memory_pad, g_add = self.conditioning(vae, batch)
        memory_kv = []
        for layer in self.dec_layers:
            if layer.cross_attn is not None and memory is not None:
                memory_kv.append(layer.cross_attn.project_kv(memory, memory_frames))
            else:
                memory_kv.append(None)
        return DecoderCache(
            memory=memory,
            memory_frames=memory_frames,
            memory_pad=memory_pad,
            memory_kv=memory_kv,
            g_add=g_add,
            self_kv=[None] * len(self.dec_layers),
        )

    def step(
        self,
        cache: DecoderCache,
        pitch: torch.Tensor,
        velocity: torch.Tensor,
        duration: torch.Tensor,
        note: torch.Tensor,
        frames: torch.Tensor,
        pe: torch.Tensor,
    ) -> torch.Tensor:
        """Advance one input token (shapes [1, 1, ...]); returns h [1, d]."""
        x = self.embed(pitch, velocity, duration, note, pe)
        for i, layer in enumerate(self.dec_layers):
            if cache.g_add is not None:
                x = x + cache.g_add
            h = layer.ln1(x)
            k_new, v_new = layer.self_attn.project_kv(h, frames)
            if cache.self_kv[i] is None:
                k, v = k_new, v_new
            else:
                k = torch.cat([cache.self_kv[i][0], k_new], dim=2)
                v = torch.cat([cache.self_kv[i][1], v_new], dim=2)
            cache.self_kv[i] = (k, v)
            x = x + layer.self_attn.attend(h, frames, k, v)
            if layer.cross_attn is not None and cache.memory is not None:
                mk, mv = cache.memory_kv[i]
                x = x + layer.cross_attn.attend(
                    layer.ln2(x), frames, mk, mv, key_pad=cache.memory_pad
                )
            x = x + layer.ff(layer.ln3(x))
        cache.length += 1
        return self.ln_f(x)[:, -1, :]


class SongModel(nn.Module):
    """Bundle of the bar autoencoder and the generator."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.vae = BarVAE(cfg)
        self.generator = Generator(cfg)

    def forward(self, batch: Batch):
        return self.generator(self.vae, batch)


def generator_loss(logits, batch: Batch) -> torch.Tensor:
    """Summed NLL: pitch at every real position, velocity/duration at notes."""
    pitch_logits, velocity_logits, duration_logits = logits
    valid = (~batch.inp_pad).reshape(-1)
    note = (batch.tgt_note & ~batch.inp_pad).reshape(-1)

    def nll(head_logits, targets, mask):
        flat = F.cross_entropy(
            head_logits.reshape(-1, head_logits.shape[-1]),
            targets.reshape(-1),
            reduction="none",
        )
        return (flat * mask.to(flat.dtype)).sum()

    return (
        nll(pitch_logits, batch.tgt_pitch, valid)
        + nll(velocity_logits, batch.tgt_velocity, note)
        + nll(duration_logits, batch.tgt_duration, note)
    )


def generator_token_count(batch: Batch) -> int:
    """Positions contributing pitch NLL (one per real token)."""
    return int((~batch.inp_pad).sum())


def vae_losses(logits, targets, mu, logvar, beta: float) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(total, reconstruction NLL, KL) for the bar autoencoder, all summed."""
    pitch_logits, velocity_logits, duration_logits = logits
    tgt_pitch, tgt_velocity, tgt_duration, note, valid = targets

    def nll(head_logits, tgt, mask):
        flat = F.cross_entropy(
            head_logits.reshape(-1, head_logits.shape[-1]), tgt.reshape(-1), reduction="none"
        )
        return (flat * mask.reshape(-1).to(flat.dtype)).sum()

    recon = (
        nll(pitch_logits, tgt_pitch, valid)
        + nll(velocity_logits, tgt_velocity, note & valid)
        + nll(duration_logits, tgt_duration, note & valid)
    )
    kl = -0.5 * (1.0 + logvar - mu.pow(2) - logvar.exp()).sum()
    return recon + beta * kl, recon, kl
