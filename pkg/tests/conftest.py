"""Shared fixtures: tiny model configs and stub discriminators."""

import pytest
import torch

from memeface.config import ModelConfig, TrainConfig
from memeface.discriminator import DiscriminatorOutput


@pytest.fixture
def tiny_cfg() -> ModelConfig:
    """Two stages at 8x8 -> 16x16 with narrow feature widths."""
    return ModelConfig(
        vocab_size=12,
        d_text=8,
        d_cond=4,
        d_z=4,
        d_hidden=8,
        base_resolution=8,
        stages=2,
        damsm_grid=8,
        max_caption_len=6,
    )


@pytest.fixture
def tiny_train_cfg() -> TrainConfig:
    return TrainConfig(
        learning_rate=1e-3,
        batch_size=4,
        epochs=2,
        generator_update_period_epochs=1,
        checkpoint_period_epochs=1,
        seed=0,
    )


class FixedLogitDiscriminator(torch.nn.Module):
    """Stub stage discriminator emitting constant logits.

    logit=0 puts every probability at exactly 0.5 after the sigmoid, which
    the closed-form loss oracles rely on.
    """

    def __init__(self, uncond_logit: float = 0.0, cond_logit: float = 0.0):
        super().__init__()
        self.uncond_logit = uncond_logit
        self.cond_logit = cond_logit

    def forward(self, image, sentence=None):
        b = image.shape[0]
        uncond = torch.full((b,), self.uncond_logit, dtype=image.dtype)
        if sentence is None:
            return DiscriminatorOutput(unconditional=uncond, conditional=None)
        cond = torch.full((b,), self.cond_logit, dtype=image.dtype)
        return DiscriminatorOutput(unconditional=uncond, conditional=cond)


@pytest.fixture
def coin_flip_discriminators():
    """One all-0.5 stub per stage of the tiny two-stage config."""
    return [FixedLogitDiscriminator(), FixedLogitDiscriminator()]
