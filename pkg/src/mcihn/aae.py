"""Per-modality adversarial autoencoder.

Each modality owns an encoder mapping its (T_m, D_m) features to a shared
(T, d) latent code, a mirrored decoder, and a discriminator that pushes the
latent rows toward a standard normal prior. A training step runs three
phases in order: reconstruction (encoder + decoder), discriminator (encoder
frozen), and adversarial encoder (discriminator frozen).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .tensor import (
    Tape,
    Tensor,
    add,
    add_bias,
    add_scalar,
    backward,
    bias_param,
    clamped_log,
    matmul,
    mean_all,
    mul,
    relu,
    reshape,
    scale,
    sigmoid,
    sub,
    weight_param,
    zero_grads,
)


@dataclass
class AaeParams:
    """Weights of one modality's autoencoder and its latent discriminator.

    Encoder: per-timestep projection D_m -> d with ReLU, then a learned
    linear resampling of the time axis T_m -> T. The decoder mirrors it.
    The discriminator is a d -> hidden -> 1 MLP ending in a sigmoid, so it
    scores individual latent timesteps against prior draws.
    """

    modality: str
    enc_proj: Tensor  # D_m x d
    enc_bias: Tensor  # d
    enc_time: Tensor  # T x T_m
    dec_time: Tensor  # T_m x T
    dec_proj: Tensor  # d x D_m
    dec_bias: Tensor  # D_m
    disc_w1: Tensor  # d x h
    disc_b1: Tensor  # h
    disc_w2: Tensor  # h x 1
    disc_b2: Tensor  # 1

    @classmethod
    def init(
        cls,
        modality: str,
        in_len: int,
        in_dim: int,
        latent_len: int,
        latent_dim: int,
        rng: np.random.Generator,
        disc_hidden: Optional[int] = None,
    ) -> "AaeParams":
        h = 4 * latent_dim if disc_hidden is None else disc_hidden
        return cls(
            modality=modality,
            enc_proj=weight_param(rng, in_dim, latent_dim),
            enc_bias=bias_param(latent_dim),
            enc_time=weight_param(rng, latent_len, in_len),
            dec_time=weight_param(rng, in_len, latent_len),
            dec_proj=weight_param(rng, latent_dim, in_dim),
            dec_bias=bias_param(in_dim),
            disc_w1=weight_param(rng, latent_dim, h),
            disc_b1=bias_param(h),
            disc_w2=weight_param(rng, h, 1),
            disc_b2=bias_param(1),
        )

    def encoder_tensors(self) -> dict[str, Tensor]:
        return {"enc_proj": self.enc_proj, "enc_bias": self.enc_bias, "enc_time": self.enc_time}

    def decoder_tensors(self) -> dict[str, Tensor]:
        return {"dec_time": self.dec_time, "dec_proj": self.dec_proj, "dec_bias": self.dec_bias}

    def discriminator_tensors(self) -> dict[str, Tensor]:
        return {
            "disc_w1": self.disc_w1,
            "disc_b1": self.disc_b1,
            "disc_w2": self.disc_w2,
            "disc_b2": self.disc_b2,
        }

    def named_tensors(self) -> dict[str, Tensor]:
        out = {}
        out.update(self.encoder_tensors())
        out.update(self.decoder_tensors())
        out.update(self.discriminator_tensors())
        return out

    def in_shape(self) -> tuple[int, int]:
        return self.enc_time.shape[1], self.enc_proj.shape[0]

    def latent_shape(self) -> tuple[int, int]:
        return self.enc_time.shape[0], self.enc_proj.shape[1]


def _check_input(params: AaeParams, x: Tensor) -> None:
    want = params.in_shape()
    if tuple(x.shape[-2:]) != want:
        raise ValueError(
            f"modality {params.modality!r} expects trailing shape {want}, got {x.shape}"
        )


def encode(params: AaeParams, x: Tensor) -> Tensor:
    """Latent code of shape (..., T, d) for input of shape (..., T_m, D_m)."""
    _check_input(params, x)
    h = relu(add_bias(matmul(x, params.enc_proj), params.enc_bias))
    return matmul(params.enc_time, h)


def decode(params: AaeParams, s: Tensor) -> Tensor:
    """Reconstruction of shape (..., T_m, D_m) from a latent (..., T, d)."""
    want = params.latent_shape()
    if tuple(s.shape[-2:]) != want:
        raise ValueError(
            f"modality {params.modality!r} expects latent shape {want}, got {s.shape}"
        )
    h = relu(matmul(params.dec_time, s))
    return add_bias(matmul(h, params.dec_proj), params.dec_bias)


def reconstruction_loss(x: Tensor, x_hat: Tensor) -> Tensor:
    """Mean squared error between input and reconstruction."""
    d = sub(x, x_hat)
    return mean_all(mul(d, d))


def sample_prior(t: int, d: int, seed: int) -> Tensor:
    """Seed-deterministic draw of (t, d) i.i.d. standard normal entries."""
    return Tensor(np.random.default_rng(seed).standard_normal((t, d)))


def latent_rows(s: Tensor) -> Tensor:
    """Flatten a (..., T, d) latent so each timestep becomes one row."""
    d = s.shape[-1]
    return reshape(s, (s.data.size // d, d))


def discriminate(params: AaeParams, rows: Tensor) -> Tensor:
    """Per-row probability in (0, 1) that a d-vector came from the prior."""
    h = relu(add_bias(matmul(rows, params.disc_w1), params.disc_b1))
    return sigmoid(add_bias(matmul(h, params.disc_w2), params.disc_b2))


def discriminator_loss(params: AaeParams, prior_rows: Tensor, latent_rows_: Tensor) -> Tensor:
    """-[mean log D(prior) + mean log(1 - D(latent))], logs clamped."""
    d_prior = discriminate(params, prior_rows)
    d_latent = discriminate(params, latent_rows_)
    one_minus = add_scalar(scale(d_latent, -1.0), 1.0)
    term_prior = mean_all(clamped_log(d_prior))
    term_latent = mean_all(clamped_log(one_minus))
    return scale(add(term_prior, term_latent), -1.0)


def encoder_adversarial_loss(
    params: AaeParams, latent_rows_: Tensor, freeze_discriminator: bool = True
) -> Tensor:
    """Non-saturating generator loss -mean log D(latent).

    With ``freeze_discriminator`` the discriminator weights enter the graph
    as constants, so gradients reach the encoder only.
    """
    p = params
    if freeze_discriminator:
        p = _frozen_disc_view(params)
    d_latent = discriminate(p, latent_rows_)
    return scale(mean_all(clamped_log(d_latent)), -1.0)


def _frozen_disc_view(params: AaeParams) -> AaeParams:
    view = AaeParams.__new__(AaeParams)
    view.modality = params.modality
    view.enc_proj = params.enc_proj
    view.enc_bias = params.enc_bias
    view.enc_time = params.enc_time
    view.dec_time = params.dec_time
    view.dec_proj = params.dec_proj
    view.dec_bias = params.dec_bias
    view.disc_w1 = params.disc_w1.detach()
    view.disc_b1 = params.disc_b1.detach()
    view.disc_w2 = params.disc_w2.detach()
    view.disc_b2 = params.disc_b2.detach()
    return view


@dataclass
class AaeStepLosses:
    reconstruction: float
    discriminator: float
    adversarial: float


def aae_step(params: AaeParams, x_batch: Tensor, optimizer, seed: int) -> tuple[AaeParams, AaeStepLosses]:
    """One three-phase update on a batch of shape (B, T_m, D_m).

    Phase 1 updates encoder and decoder on reconstruction error. Phase 2
    updates the discriminator against prior draws with the encoder's output
    detached. Phase 3 updates the encoder adversarially with the
    discriminator held constant.
    """
    enc = list(params.encoder_tensors().values())
    dec = list(params.decoder_tensors().values())

    zero_grads(enc + dec)
    with Tape() as tape:
        s = encode(params, x_batch)
        x_hat = decode(params, s)
        loss_rec = reconstruction_loss(x_batch, x_hat)
    backward(loss_rec, tape)
    optimizer.step(enc + dec)

    loss_disc = discriminator_step(params, x_batch, optimizer, seed)

    zero_grads(enc)
    with Tape() as tape:
        s = encode(params, x_batch)
        loss_adv = encoder_adversarial_loss(params, latent_rows(s))
    backward(loss_adv, tape)
    optimizer.step(enc)

    return params, AaeStepLosses(loss_rec.item(), loss_disc, loss_adv.item())


def discriminator_step(params: AaeParams, x_batch: Tensor, optimizer, seed: int) -> float:
    """Phase-2 update alone: train the discriminator on prior draws versus
    detached latent rows, leaving encoder and decoder untouched."""
    latent_const = latent_rows(encode(params, x_batch)).detach()
    n_rows, d = latent_const.shape
    prior = sample_prior(n_rows, d, seed)
    disc = list(params.discriminator_tensors().values())
    zero_grads(disc)
    with Tape() as tape:
        loss_disc = discriminator_loss(params, prior, latent_const)
    backward(loss_disc, tape)
    optimizer.step(disc)
    return loss_disc.item()
