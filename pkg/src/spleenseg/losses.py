"""Training objectives: soft Dice plus a weighted adversarial term.

The combined objective is ``dice + lambda * gan_g``; lambda multiplies
the adversarial term exactly as written, configurable, even though the
common image-to-image convention weights the reconstruction term instead.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F


def soft_dice_loss(probs: torch.Tensor, target: torch.Tensor, eps: float = 1.0) -> torch.Tensor:
    """Negative soft Dice on the foreground channel.

    ``probs`` are per-pixel softmax probabilities [2,S,S] or [B,2,S,S];
    ``target`` is one-hot with matching shape. Returns a scalar in
    (-1, 0], averaged over the batch.
    """
    if probs.shape != target.shape:
        raise ValueError(f"shape mismatch: probs {tuple(probs.shape)} vs target {tuple(target.shape)}")
    if probs.dim() == 3:
        probs, target = probs.unsqueeze(0), target.unsqueeze(0)
    if probs.dim() != 4 or probs.shape[1] != 2:
        raise ValueError(f"expected [B,2,S,S], got {tuple(probs.shape)}")
    p = probs[:, 1]
    g = target[:, 1]
    inter = (p * g).sum(dim=(1, 2))
    sums = p.sum(dim=(1, 2)) + g.sum(dim=(1, 2))
    return -((2.0 * inter + eps) / (sums + eps)).mean()


def gan_losses(d_real_logits: torch.Tensor, d_fake_logits: torch.Tensor):
    """(discriminator loss, non-saturating generator loss) from patch logits.

    loss_D = (BCE(sigma(real), 1) + BCE(sigma(fake), 0)) / 2
    loss_G_adv = BCE(sigma(fake), 1)
    averaged over the patch grid.
    """
    if d_real_logits.shape != d_fake_logits.shape:
        raise ValueError(
            f"logit shape mismatch: {tuple(d_real_logits.shape)} vs {tuple(d_fake_logits.shape)}"
        )
    if not (torch.isfinite(d_real_logits).all() and torch.isfinite(d_fake_logits).all()):
        raise ValueError("non-finite discriminator logits")
    ones_r = torch.ones_like(d_real_logits)
    zeros_f = torch.zeros_like(d_fake_logits)
    loss_d = 0.5 * (
        F.binary_cross_entropy_with_logits(d_real_logits, ones_r)
        + F.binary_cross_entropy_with_logits(d_fake_logits, zeros_f)
    )
    loss_g = F.binary_cross_entropy_with_logits(d_fake_logits, torch.ones_like(d_fake_logits))
    return loss_d, loss_g


def total_loss(dice: torch.Tensor | float, gan_g: torch.Tensor | float, lambda_gan: float):
    """Combined objective dice + lambda * gan_g."""
    if lambda_gan < 0:
        raise ValueError(f"lambda must be >= 0, got {lambda_gan}")
    return dice + lambda_gan * gan_g
