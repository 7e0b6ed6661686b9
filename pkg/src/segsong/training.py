"""Optimization: Adam with exponential learning-rate decay, training
loops for the bar autoencoder and the generator, and a finite-difference
gradient check.

The learning rate decays exponentially from ``lr_start`` at step 0 to
``lr_end`` at the final step; gradients are clipped to unit norm. Losses
are negative log-likelihoods summed over tokens, not averaged. All loops
are deterministic for a fixed seed when torch runs single-threaded.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
import torch

from .features import BarArrays, BarBatch, Batch, ModelSample, collate, collate_bars
from .model import (
    BarVAE,
    ModelConfig,
    SongModel,
    generator_loss,
    generator_token_count,
    vae_losses,
)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainSettings:
    steps: int
    batch_size: int = 4
    lr_start: float = 1e-4
    lr_end: float = 5e-6
    clip_norm: float = 1.0
    kl_beta: float = 0.1
    seed: int = 0


def lr_at(step: int, total_steps: int, lr_start: float = 1e-4, lr_end: float = 5e-6) -> float:
    """Exponential interpolation hitting ``lr_start`` at step 0 and
    ``lr_end`` at step ``total_steps - 1``."""
    if total_steps <= 1:
        return lr_start
    frac = step / (total_steps - 1)
    return lr_start * (lr_end / lr_start) ** frac


def make_optimizer(params, lr: float) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=lr, betas=ADAM_BETAS, eps=ADAM_EPS)


def train_step(
    loss_fn: Callable[[], torch.Tensor],
    optimizer: torch.optim.Optimizer,
    parameters,
    step: int,
    settings: TrainSettings,
) -> float:
    """One optimization step under the schedule; returns the loss value."""
    lr = lr_at(step, settings.steps, settings.lr_start, settings.lr_end)
    for group in optimizer.param_groups:
        group["lr"] = lr
    optimizer.zero_grad()
    loss = loss_fn()
    loss.backward()
    torch.nn.utils.clip_grad_norm_(parameters, settings.clip_norm)
    optimizer.step()
    return float(loss.detach())


def vae_forward(
    vae: BarVAE, batch: BarBatch, beta: float, eps: torch.Tensor | None = None
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(total, recon, kl). ``eps`` fixes the reparameterization noise;
    ``None`` means posterior mean (inference mode)."""
    mu, logvar = vae.encode(
        batch.pitch, batch.velocity, batch.duration, batch.note, batch.frames, batch.tok_pad
    )
    z = mu if eps is None else mu + torch.exp(0.5 * logvar) * eps
    logits = vae.decode_logits(
        z,
        batch.dec_pitch,
        batch.dec_velocity,
        batch.dec_duration,
        batch.dec_note,
        batch.dec_frames,
        batch.tgt_pitch,
        batch.tgt_velocity,
    )
    targets = (batch.tgt_pitch, batch.tgt_velocity, batch.tgt_duration, batch.tgt_note, batch.tgt_valid)
    return vae_losses(logits, targets, mu, logvar, beta)


def train_vae(vae: BarVAE, bars: Sequence[BarArrays], settings: TrainSettings) -> list[float]:
    """Train the bar autoencoder on a bar corpus; returns per-step losses."""
    if not bars:
        raise ValueError("empty bar corpus")
    torch.manual_seed(settings.seed)
    rng = np.random.default_rng(settings.seed)
    vae.train()
    optimizer = make_optimizer(vae.parameters(), settings.lr_start)
    losses = []
    for step in range(settings.steps):
        idx = rng.integers(len(bars), size=settings.batch_size)
        batch = collate_bars([bars[i] for i in idx])

        def loss_fn():
            mu_width = (settings.batch_size, vae.cfg.latent_width)
            eps = torch.randn(mu_width, dtype=vae.to_mu.weight.dtype)
            total, _, _ = vae_forward(vae, batch, settings.kl_beta, eps)
            return total

        losses.append(train_step(loss_fn, optimizer, vae.parameters(), step, settings))
    vae.eval()
    return losses


def vae_encode_bars(vae: BarVAE, bars: Sequence[BarArrays]) -> torch.Tensor:
    """Posterior means for a list of bars (inference mode)."""
    vae.eval()
    batch = collate_bars(list(bars))
    with torch.no_grad():
        mu, _ = vae.encode(
            batch.pitch, batch.velocity, batch.duration, batch.note, batch.frames, batch.tok_pad
        )
    return mu


def train_generator(
    model: SongModel,
    samples: Sequence[ModelSample],
    settings: TrainSettings,
    log_every: int = 0,
) -> list[float]:
    """Train the generator (bar autoencoder stays frozen). Returns
    per-step summed-NLL losses."""
    if not samples:
        raise ValueError("no training samples")
    torch.manual_seed(settings.seed)
    rng = np.random.default_rng(settings.seed)
    model.generator.train()
    model.vae.eval()
    params = list(model.generator.parameters())
    optimizer = make_optimizer(params, settings.lr_start)
    losses = []
    for step in range(settings.steps):
        idx = rng.integers(len(samples), size=settings.batch_size)
        batch = collate([samples[i] for i in idx])
        loss = train_step(
            lambda: generator_loss(model(batch), batch), optimizer, params, step, settings
        )
        losses.append(loss)
        if log_every and (step % log_every == 0 or step == settings.steps - 1):
            tokens = generator_token_count(batch)
            print(f"step {step}: loss {loss:.1f} ({loss / tokens:.3f}/token)")
    model.generator.eval()
    return losses


def nll_per_token(model: SongModel, samples: Sequence[ModelSample]) -> float:
    """Summed NLL over the samples divided by token count, no grads."""
    model.eval()
    total = 0.0
    tokens = 0
    with torch.no_grad():
        for sample in samples:
            batch = collate([sample])
            total += float(generator_loss(model(batch), batch))
            tokens += generator_token_count(batch)
    return total / max(1, tokens)


# -- gradient checking ------------------------------------------------------


def _tiny_config() -> ModelConfig:
    return ModelConfig(
        d_model=16,
        n_heads=2,
        n_decoder_layers=2,
        n_context_layers=1,
        n_vision_layers=1,
        latent_width=8,
        max_positions=64,
        dropout=0.0,
    )


def _tiny_sample(rng: np.random.Generator) -> ModelSample:
    """A synthetic short sample exercising every conditioning path."""
    from .context import ContextSegment, ContextSet, PlacedBars, TrainingSample
    from .features import featurize
    from .score import Note, make_bar

    def small_bar(index: int):
        notes = [
            Note(
                onset=int(rng.integers(0, 32)),
                pitch=int(rng.integers(40, 80)),
                duration=int(rng.integers(1, 16)),
                velocity=int(rng.integers(20, 100)),
            )
            for _ in range(3)
        ]
        unique = {(n.onset, n.pitch): n for n in notes}
        return make_bar(index, unique.values())

    sample = TrainingSample(
        song_bars=4,
        target_start=2,
        target_end=2,
        target=(small_bar(1),),
        context=ContextSet(
            left=ContextSegment("left", 1, 1, (small_bar(0),)),
            right=ContextSegment("right", 3, 3, (small_bar(2),)),
        ),
        existing=(PlacedBars(1, 1, (small_bar(0),)),),
    )
    return featurize(sample)


def grad_check(seed: int = 0, n_params: int = 220, h: float = 1e-3) -> float:
    """Compare autograd against central finite differences on a tiny model.

    Generator-path parameters are checked on the generator NLL; bar-VAE
    parameters on the VAE objective (the generator sees the VAE through a
    frozen, gradient-free path by design, so each group is measured on
    the loss that actually trains it). Relative error uses the gradient
    magnitude floored at 0.1 so near-zero gradients compare on an
    absolute scale. Returns the maximum relative error.
    """
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = SongModel(_tiny_config()).double().eval()

    batch = collate([_tiny_sample(rng)], dtype=torch.float64)
    from .features import encode_bar
    from .score import Note, make_bar

    bars = [
        encode_bar(
            make_bar(
                0,
                [
                    Note(onset=4 * i, pitch=50 + 3 * i, duration=4, velocity=60)
                    for i in range(int(rng.integers(2, 5)))
                ],
            )
        )
        for _ in range(2)
    ]
    bar_batch = collate_bars(bars)
    eps = torch.randn((2, model.cfg.latent_width), dtype=torch.float64)

    def gen_loss() -> torch.Tensor:
        return generator_loss(model(batch), batch)

    def vae_loss() -> torch.Tensor:
        total, _, _ = vae_forward(model.vae, bar_batch, beta=0.1, eps=eps)
        return total

    losses = {"generator": gen_loss, "vae": vae_loss}

    analytic: dict[str, torch.Tensor] = {}
    for which, fn in losses.items():
        model.zero_grad()
        fn().backward()
        for name, p in model.named_parameters():
            if (name.startswith("vae.")) == (which == "vae"):
                analytic[name] = (
                    p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
                )

    names = [name for name, _ in model.named_parameters()]
    params = dict(model.named_parameters())
    picks: list[tuple[str, int]] = []
    for name in names:
        numel = params[name].numel()
        for idx in rng.choice(numel, size=min(2, numel), replace=False):
            picks.append((name, int(idx)))
    while len(picks) < n_params:
        name = names[int(rng.integers(len(names)))]
        picks.append((name, int(rng.integers(params[name].numel()))))

    max_rel = 0.0
    with torch.no_grad():
        for name, idx in picks:
            p = params[name]
            fn = losses["vae"] if name.startswith("vae.") else losses["generator"]
            flat = p.view(-1)
            original = float(flat[idx])
            flat[idx] = original + h
            plus = float(fn())
            flat[idx] = original - h
            minus = float(fn())
            flat[idx] = original
            fd = (plus - minus) / (2.0 * h)
            an = float(analytic[name].view(-1)[idx])
            rel = abs(fd - an) / max(abs(fd), abs(an), 0.1)
            max_rel = max(max_rel, rel)
    return max_rel
