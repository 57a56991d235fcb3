"""Adversarial training loop, checkpoint cadence, annotation aggregation.

Two update schedules are supported. "epoch_period" updates discriminators
every epoch and the generator only in epochs divisible by the configured
period. "per_batch_alternating" takes one discriminator step and one
generator step per batch, the usual desk-scale schedule.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import torch

from .checkpoint import (
    Checkpoint,
    group_digest,
    load_group_into,
    save_checkpoint,
    state_dict_to_group,
)
from .config import ModelConfig, TrainConfig
from .damsm import DamsmBundle
from .data import TrainingSet, batch_indices
from .discriminator import build_discriminators
from .generator import Generator, sample_noise
from .losses import discriminator_loss, generator_loss
from .text_encoder import ConditioningAugmenter, TextEncoder


@dataclass
class TrainedModels:
    text_encoder: TextEncoder
    augmenter: ConditioningAugmenter
    generator: Generator
    discriminators: torch.nn.ModuleList
    text_encoder_frozen: bool


def build_models(
    cfg: ModelConfig, damsm: DamsmBundle | None, share_text_encoder: bool
) -> TrainedModels:
    if share_text_encoder and damsm is None:
        raise ValueError("shared text encoder requested but no matcher supplied")
    if share_text_encoder:
        text_encoder = damsm.text_encoder
        frozen = True
    else:
        text_encoder = TextEncoder(cfg.vocab_size, cfg.d_text)
        frozen = False
    return TrainedModels(
        text_encoder=text_encoder,
        augmenter=ConditioningAugmenter(cfg.d_text, cfg.d_cond),
        generator=Generator(cfg),
        discriminators=build_discriminators(cfg),
        text_encoder_frozen=frozen,
    )


def _generator_params(models: TrainedModels):
    params = list(models.augmenter.parameters()) + list(models.generator.parameters())
    if not models.text_encoder_frozen:
        params += list(models.text_encoder.parameters())
    return params


def _split_generator_groups(generator: Generator) -> tuple[dict, dict]:
    """Split the generator state into core and editing-head groups."""
    full = state_dict_to_group(generator)
    core = {k: v for k, v in full.items() if not k.startswith("editors.")}
    editors = {k: v for k, v in full.items() if k.startswith("editors.")}
    return core, editors


def models_to_checkpoint(
    models: TrainedModels, model_cfg: ModelConfig, train_cfg: TrainConfig, epoch: int
) -> Checkpoint:
    core, editors = _split_generator_groups(models.generator)
    return Checkpoint(
        epoch=epoch,
        config={"model": model_cfg.to_dict(), "train": train_cfg.to_dict()},
        groups={
            "text_encoder": state_dict_to_group(models.text_encoder),
            "augmenter": state_dict_to_group(models.augmenter),
            "generator": core,
            "editors": editors,
            "discriminators": state_dict_to_group(models.discriminators),
        },
    )


def models_from_checkpoint(ckpt: Checkpoint) -> tuple[TrainedModels, ModelConfig, TrainConfig]:
    model_cfg = ModelConfig(**ckpt.config["model"])
    train_cfg = TrainConfig(**ckpt.config["train"])
    models = TrainedModels(
        text_encoder=TextEncoder(model_cfg.vocab_size, model_cfg.d_text),
        augmenter=ConditioningAugmenter(model_cfg.d_text, model_cfg.d_cond),
        generator=Generator(model_cfg),
        discriminators=build_discriminators(model_cfg),
        text_encoder_frozen=train_cfg.share_text_encoder,
    )
    load_group_into(models.text_encoder, ckpt.groups["text_encoder"])
    load_group_into(models.augmenter, ckpt.groups["augmenter"])
    merged = {**ckpt.groups["generator"], **ckpt.groups["editors"]}
    load_group_into(models.generator, merged)
    load_group_into(models.discriminators, ckpt.groups["discriminators"])
    return models, model_cfg, train_cfg


def checkpoint_epochs(epochs: int, period: int) -> list[int]:
    """Epochs at which checkpoints are written: every period, plus the end."""
    marks = [e for e in range(period, epochs + 1, period)]
    if not marks or marks[-1] != epochs:
        marks.append(epochs)
    return marks


def train(
    dataset: TrainingSet,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    damsm: DamsmBundle,
    checkpoint_dir: str | Path | None = None,
    log_path: str | Path | None = None,
    verify_isolation: bool = False,
) -> list[Checkpoint]:
    """Runs the full loop and returns the checkpoints in epoch order."""
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    torch.manual_seed(train_cfg.seed)
    damsm.freeze()
    models = build_models(model_cfg, damsm, train_cfg.share_text_encoder)
    g_opt = torch.optim.Adam(
        _generator_params(models),
        lr=train_cfg.learning_rate,
        betas=(train_cfg.adam_beta1, train_cfg.adam_beta2),
    )
    d_opt = torch.optim.Adam(
        models.discriminators.parameters(),
        lr=train_cfg.learning_rate,
        betas=(train_cfg.adam_beta1, train_cfg.adam_beta2),
    )
    data_gen = torch.Generator().manual_seed(train_cfg.seed + 1)
    noise_gen = torch.Generator().manual_seed(train_cfg.seed + 2)
    marks = set(checkpoint_epochs(train_cfg.epochs, train_cfg.checkpoint_period_epochs))
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    start = time.monotonic()
    damsm_digest = group_digest(state_dict_to_group(damsm.image_encoder))
    checkpoints: list[Checkpoint] = []

    try:
        for epoch in range(1, train_cfg.epochs + 1):
            g_epoch = (
                train_cfg.update_mode == "per_batch_alternating"
                or epoch % train_cfg.generator_update_period_epochs == 0
            )
            for b, idx in enumerate(
                batch_indices(len(dataset), train_cfg.batch_size, data_gen)
            ):
                record = _train_batch(
                    models, dataset, idx, model_cfg, train_cfg, damsm,
                    g_opt, d_opt, noise_gen, update_generator=g_epoch,
                    verify_isolation=verify_isolation,
                )
                if log_fh:
                    record.update(
                        epoch=epoch, batch=b,
                        wall_time=round(time.monotonic() - start, 4),
                    )
                    log_fh.write(json.dumps(record, sort_keys=True) + "\n")
            if epoch in marks:
                ckpt = models_to_checkpoint(models, model_cfg, train_cfg, epoch)
                checkpoints.append(ckpt)
                if checkpoint_dir is not None:
                    save_checkpoint(checkpoint_dir / f"epoch_{epoch:04d}.mfgc", ckpt)
    finally:
        if log_fh:
            log_fh.close()

    if group_digest(state_dict_to_group(damsm.image_encoder)) != damsm_digest:
        raise RuntimeError("frozen matcher parameters changed during training")
    return checkpoints


def _train_batch(
    models: TrainedModels,
    dataset: TrainingSet,
    idx: torch.Tensor,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    damsm: DamsmBundle,
    g_opt,
    d_opt,
    noise_gen: torch.Generator,
    update_generator: bool,
    verify_isolation: bool,
) -> dict:
    tokens = dataset.tokens[idx]
    lengths = dataset.lengths[idx]
    reals = [imgs[idx] for imgs in dataset.stage_images]
    patterns = dataset.pattern_batch(idx)

    if models.text_encoder_frozen:
        with torch.no_grad():
            words, sentence = models.text_encoder(tokens, lengths)
    else:
        words, sentence = models.text_encoder(tokens, lengths)

    ca_noise = torch.randn(
        len(idx), model_cfg.d_cond, generator=noise_gen,
        dtype=sentence.dtype,
    )
    aug = models.augmenter(sentence, noise=ca_noise)
    z = sample_noise(len(idx), model_cfg, generator=noise_gen, dtype=sentence.dtype)
    outputs = models.generator(aug.c, z, words, patterns, lengths)

    # rolling a singleton batch would pair each caption with itself
    mismatched = sentence.roll(1, dims=0) if (
        train_cfg.mismatched_caption_term and len(idx) > 1
    ) else None

    d_before = g_before = None
    if verify_isolation:
        d_before = group_digest(state_dict_to_group(models.discriminators))
        g_before = group_digest(state_dict_to_group(models.generator))

    d_total = None
    d_opt.zero_grad()
    for i, disc in enumerate(models.discriminators):
        loss = discriminator_loss(
            disc, reals[i], outputs.edited[i].detach(), sentence.detach(),
            None if mismatched is None else mismatched.detach(),
            eps=train_cfg.logit_eps,
        )
        d_total = loss if d_total is None else d_total + loss
    if not torch.isfinite(d_total):
        raise RuntimeError("non-finite discriminator loss")
    d_total.backward()
    d_opt.step()

    if verify_isolation and group_digest(state_dict_to_group(models.generator)) != g_before:
        raise RuntimeError("discriminator step mutated generator parameters")

    record = {"d_loss": float(d_total.detach()), "g_loss": None}
    if update_generator:
        g_opt.zero_grad()
        total, breakdown = generator_loss(
            outputs, sentence, aug.mu, aug.logvar, tokens, lengths,
            models.discriminators, damsm,
            lambda_damsm=train_cfg.lambda_damsm,
            lambda_kl=train_cfg.lambda_kl,
            eps=train_cfg.logit_eps,
        )
        if not torch.isfinite(total):
            raise RuntimeError("non-finite generator loss")
        if verify_isolation:
            d_mid = group_digest(state_dict_to_group(models.discriminators))
        total.backward()
        g_opt.step()
        if verify_isolation and group_digest(
            state_dict_to_group(models.discriminators)
        ) != d_mid:
            raise RuntimeError("generator step mutated discriminator parameters")
        record["g_loss"] = float(total.detach())
        record["g_terms"] = breakdown.scalars()
    return record


@dataclass
class AnnotationRecord:
    """Labels one sample received from its annotators (values in {0, 1, 2})."""

    sample_id: str
    labels: list[int]

    def __post_init__(self):
        if not self.labels:
            raise ValueError(f"sample {self.sample_id}: no labels")
        for v in self.labels:
            if v not in (0, 1, 2):
                raise ValueError(f"sample {self.sample_id}: label {v} outside {{0,1,2}}")

    def majority(self) -> int:
        counts = {v: self.labels.count(v) for v in set(self.labels)}
        best = max(counts.values())
        return min(v for v, c in counts.items() if c == best)


@dataclass
class AnnotationSummary:
    fractions: dict[int, float]
    at_least_one: float
    n: int


def aggregate_annotations(records: list[AnnotationRecord]) -> AnnotationSummary:
    """Per-label fractions after majority voting; ties go to the lower label."""
    if not records:
        raise ValueError("no annotation records")
    votes = [r.majority() for r in records]
    n = len(votes)
    fractions = {label: votes.count(label) / n for label in (0, 1, 2)}
    at_least_one = sum(1 for v in votes if v >= 1) / n
    return AnnotationSummary(fractions=fractions, at_least_one=at_least_one, n=n)
