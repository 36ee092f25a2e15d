"""Adversarial, reconstruction and attention-mask losses for the refiner."""
from __future__ import annotations

import math

import torch
from torch.nn import functional as F

from ..errors import ValidationError

LAMBDA_L1 = 100.0
LAMBDA_MASK = 2.0
LAMBDA_TV = 1e-5


def mask_norm(attention: torch.Tensor) -> torch.Tensor:
    """L2 norm of each mask divided by sqrt(pixel count), averaged over the batch."""
    flat = attention.reshape(attention.shape[0], -1)
    return (torch.linalg.vector_norm(flat, dim=1) / math.sqrt(flat.shape[1])).mean()


def total_variation(attention: torch.Tensor) -> torch.Tensor:
    """Sum of squared horizontal and vertical neighbour differences, averaged over the batch."""
    dh = attention[..., 1:, :] - attention[..., :-1, :]
    dw = attention[..., :, 1:] - attention[..., :, :-1]
    return ((dh ** 2).flatten(1).sum(1) + (dw ** 2).flatten(1).sum(1)).mean()


def discriminator_loss(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    """-log D(real) - log(1 - D(fake)), averaged over patches."""
    return F.softplus(-real_logits).mean() + F.softplus(fake_logits).mean()


def generator_loss(fake_logits: torch.Tensor, refined: torch.Tensor, real: torch.Tensor,
                   attention: torch.Tensor, lambda1: float = LAMBDA_L1, lambda2: float = LAMBDA_MASK,
                   lambda3: float = LAMBDA_TV) -> torch.Tensor:
    """Saturating log(1 - D(o)) plus weighted L1, mask-norm and mask-TV terms."""
    if refined.shape != real.shape:
        raise ValidationError("refined and real frames differ in shape")
    adversarial = -F.softplus(fake_logits).mean()
    return (adversarial + lambda1 * (real - refined).abs().mean()
            + lambda2 * mask_norm(attention) + lambda3 * total_variation(attention))


def gan_loss(real_logits, fake_logits, refined, real, attention, lambda1: float = LAMBDA_L1,
             lambda2: float = LAMBDA_MASK, lambda3: float = LAMBDA_TV):
    """(generator loss, discriminator loss) from one pair of discriminator evaluations."""
    if real_logits.shape != fake_logits.shape:
        raise ValidationError("real and fake score maps differ in shape")
    return (generator_loss(fake_logits, refined, real, attention, lambda1, lambda2, lambda3),
            discriminator_loss(real_logits, fake_logits))
