"""Configuration for the model stack and the training loop."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions and architectural knobs shared by every network.

    Desk-scale defaults: three stages starting at 16x16 for a 64x64 final
    image. The paper-scale layout (base 64, final 256) is expressible with
    the same fields.
    """

    vocab_size: int
    d_text: int = 64          # word/sentence feature width (even: two LSTM directions)
    d_cond: int = 32          # augmented condition width
    d_z: int = 16             # noise vector width
    d_hidden: int = 32        # generator feature-map channels
    base_resolution: int = 16
    stages: int = 3
    channels: int = 3
    damsm_grid: int = 8       # region grid side for the matching image encoder
    gamma1: float = 5.0       # region-attention temperature
    gamma2: float = 5.0       # word-relevance aggregation temperature
    gamma3: float = 10.0      # batch-posterior temperature
    noise_dist: str = "uniform"   # "uniform" on [-1, 1] or "gaussian"
    max_caption_len: int = 12

    def __post_init__(self) -> None:
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be at least 2 (unknown token plus content)")
        if self.d_text % 2 != 0 or self.d_text < 2:
            raise ValueError("d_text must be a positive even number")
        for name in ("d_cond", "d_z", "d_hidden", "channels", "stages", "max_caption_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not _is_power_of_two(self.base_resolution) or self.base_resolution < 4:
            raise ValueError("base_resolution must be a power of two >= 4")
        if self.noise_dist not in ("uniform", "gaussian"):
            raise ValueError(f"unknown noise_dist {self.noise_dist!r}")
        final = self.final_resolution
        if final % self.damsm_grid != 0 or not _is_power_of_two(final // self.damsm_grid):
            raise ValueError("damsm_grid must divide the final resolution by a power of two")

    @property
    def final_resolution(self) -> int:
        return self.base_resolution * 2 ** (self.stages - 1)

    def stage_resolutions(self) -> list[int]:
        return [self.base_resolution * 2 ** i for i in range(self.stages)]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrainConfig:
    """Adversarial training schedule and loss weights."""

    learning_rate: float = 2e-4
    batch_size: int = 14
    epochs: int = 200
    generator_update_period_epochs: int = 5
    checkpoint_period_epochs: int = 5
    lambda_kl: float = 1.0
    lambda_damsm: float = 5.0
    seed: int = 0
    # "epoch_period" updates the generator only every N-th epoch;
    # "per_batch_alternating" steps generator and discriminators on every batch.
    update_mode: str = "epoch_period"
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    mismatched_caption_term: bool = True
    share_text_encoder: bool = True
    logit_eps: float = 1e-7

    def __post_init__(self) -> None:
        for name in ("learning_rate", "batch_size", "epochs",
                     "generator_update_period_epochs", "checkpoint_period_epochs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lambda_kl < 0 or self.lambda_damsm < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.update_mode not in ("epoch_period", "per_batch_alternating"):
            raise ValueError(f"unknown update_mode {self.update_mode!r}")
        if not (0 < self.logit_eps < 0.5):
            raise ValueError("logit_eps must lie in (0, 0.5)")

    def to_dict(self) -> dict:
        return asdict(self)


def config_digest(config: dict) -> bytes:
    """Stable 32-byte digest of a JSON-serializable config snapshot."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).digest()
