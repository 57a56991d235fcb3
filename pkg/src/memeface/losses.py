"""Adversarial objectives for generator and discriminators.

Probabilities come from a logistic transform of raw logits and are clamped
away from {0, 1} so every log stays finite. All expectations are batch means.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .damsm import DamsmBundle
from .generator import StageOutputs

DEFAULT_EPS = 1e-7


def _prob(logit: torch.Tensor, eps: float) -> torch.Tensor:
    return torch.sigmoid(logit).clamp(eps, 1.0 - eps)


@dataclass
class GeneratorLossBreakdown:
    total: torch.Tensor | None = None
    adversarial: torch.Tensor | None = None
    damsm: torch.Tensor | None = None
    kl: torch.Tensor | None = None
    per_stage: list[torch.Tensor] = field(default_factory=list)

    def scalars(self) -> dict:
        out = {
            "total": float(self.total.detach()),
            "adversarial": float(self.adversarial.detach()),
            "damsm": float(self.damsm.detach()),
            "kl": float(self.kl.detach()),
        }
        out["per_stage"] = [float(t.detach()) for t in self.per_stage]
        return out


def generator_loss(
    outputs: StageOutputs,
    sentence: torch.Tensor,
    mu: torch.Tensor,
    logvar: torch.Tensor,
    tokens: torch.Tensor,
    lengths: torch.Tensor,
    discriminators,
    damsm: DamsmBundle | None = None,
    lambda_damsm: float = 5.0,
    lambda_kl: float = 1.0,
    eps: float = DEFAULT_EPS,
) -> tuple[torch.Tensor, GeneratorLossBreakdown]:
    """Per-stage adversarial terms plus weighted matching and KL penalties.

    Each stage contributes -1/2 E[log D_i(fake)] - 1/2 E[log D_i(fake, s)].
    The matching term sees only the final edited image.
    """
    from .text_encoder import kl_regularizer

    if len(discriminators) != len(outputs.edited):
        raise ValueError("need one discriminator per stage")
    breakdown = GeneratorLossBreakdown()
    adv = None
    for i, (fake, disc) in enumerate(zip(outputs.edited, discriminators)):
        scored = disc(fake, sentence)
        p_u = _prob(scored.unconditional, eps)
        p_c = _prob(scored.conditional, eps)
        term = -0.5 * torch.log(p_u).mean() - 0.5 * torch.log(p_c).mean()
        if not torch.isfinite(term):
            raise ValueError(f"non-finite generator loss at stage {i}")
        breakdown.per_stage.append(term)
        adv = term if adv is None else adv + term

    zero = adv.new_zeros(())
    d_term = zero
    if damsm is not None and lambda_damsm != 0.0:
        d_term = damsm.loss(outputs.edited[-1], tokens, lengths)
        if not torch.isfinite(d_term):
            raise ValueError("non-finite matching loss on the final stage")
    k_term = kl_regularizer(mu, logvar) if lambda_kl != 0.0 else zero

    total = adv + lambda_damsm * d_term + lambda_kl * k_term
    breakdown.total = total
    breakdown.adversarial = adv
    breakdown.damsm = d_term
    breakdown.kl = k_term
    return total, breakdown


def discriminator_loss(
    disc,
    real: torch.Tensor,
    fake: torch.Tensor,
    sentence: torch.Tensor,
    mismatched_sentence: torch.Tensor | None = None,
    eps: float = DEFAULT_EPS,
) -> torch.Tensor:
    """Cross-entropy for one stage discriminator.

    Positive bracket: real image, matched sentence. Negative bracket: the
    fake image unconditionally, with the conditional weight split evenly
    between (fake, matched) and (real, mismatched) when a mismatched
    sentence is supplied, so a coin-flip discriminator scores 2 ln 2 either
    way.
    """
    real_out = disc(real, sentence)
    fake_out = disc(fake, sentence)
    pos = torch.log(_prob(real_out.unconditional, eps)).mean() + torch.log(
        _prob(real_out.conditional, eps)
    ).mean()
    neg_u = torch.log(1.0 - _prob(fake_out.unconditional, eps)).mean()
    neg_c = torch.log(1.0 - _prob(fake_out.conditional, eps)).mean()
    if mismatched_sentence is None:
        neg = neg_u + neg_c
    else:
        mis_out = disc(real, mismatched_sentence)
        neg_m = torch.log(1.0 - _prob(mis_out.conditional, eps)).mean()
        neg = neg_u + 0.5 * neg_c + 0.5 * neg_m
    loss = -0.5 * pos - 0.5 * neg
    if not torch.isfinite(loss):
        raise ValueError("non-finite discriminator loss")
    return loss
