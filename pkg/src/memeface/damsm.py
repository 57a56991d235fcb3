"""Text-image matching network: encoders, scores, contrastive loss, metric.

The matcher is pretrained on real pairs and then frozen; during GAN training
it only scores generated images. Word-level scores attend over image regions
per word, sentence-level scores compare pooled vectors directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelConfig, TrainConfig
from .generator import conv3x3, down_block
from .text_encoder import TextEncoder

NORM_FLOOR = 1e-8


@dataclass
class ImageEncoding:
    """region_features: [d_text, N_r]; global_feature: [d_text]."""

    region_features: torch.Tensor
    global_feature: torch.Tensor


class DamsmImageEncoder(nn.Module):
    """Small convolutional encoder; emits an 8x8 region grid by default."""

    def __init__(self, cfg: ModelConfig, input_resolution: int | None = None):
        super().__init__()
        self.input_resolution = input_resolution or cfg.final_resolution
        self.grid = cfg.damsm_grid
        if self.input_resolution % self.grid:
            raise ValueError("region grid must divide the input resolution")
        n_down = int(math.log2(self.input_resolution // self.grid))
        if 2 ** n_down * self.grid != self.input_resolution:
            raise ValueError("input resolution / grid must be a power of two")
        d = cfg.d_hidden
        layers: list[nn.Module] = [conv3x3(cfg.channels, d), nn.LeakyReLU(0.2, inplace=True)]
        for _ in range(n_down):
            nxt = min(2 * d, 8 * cfg.d_hidden)
            layers.append(down_block(d, nxt))
            d = nxt
        self.trunk = nn.Sequential(*layers)
        self.region_proj = nn.Conv2d(d, cfg.d_text, kernel_size=1)
        self.global_proj = nn.Linear(d, cfg.d_text)

    def forward(self, images: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """images: [B, C, R, R] -> (regions [B, d_text, grid*grid], global [B, d_text])."""
        if images.dim() != 4:
            raise ValueError("expected a batched [B, C, R, R] image tensor")
        if images.shape[-2:] != (self.input_resolution, self.input_resolution):
            raise ValueError(
                f"encoder built for {self.input_resolution}x{self.input_resolution} "
                f"input, got {tuple(images.shape[-2:])}"
            )
        feat = self.trunk(images)                      # [B, d, grid, grid]
        regions = self.region_proj(feat).flatten(2)    # [B, d_text, grid^2]
        pooled = feat.mean(dim=(2, 3))
        return regions, self.global_proj(pooled)

    def encode_image(self, image: torch.Tensor) -> ImageEncoding:
        regions, glob = self.forward(image.unsqueeze(0))
        return ImageEncoding(region_features=regions[0], global_feature=glob[0])


def _cosine(a: torch.Tensor, b: torch.Tensor, dim: int = -1) -> torch.Tensor:
    na = a.norm(dim=dim).clamp_min(NORM_FLOOR)
    nb = b.norm(dim=dim).clamp_min(NORM_FLOOR)
    return (a * b).sum(dim=dim) / (na * nb)


def matching_score(
    region_features: torch.Tensor,
    word_features: torch.Tensor,
    gamma1: float,
    gamma2: float,
) -> torch.Tensor:
    """Word-to-region attention score for one (image, caption) pair.

    region_features: [d_text, N_r]; word_features: [d_text, T] with no
    padding columns. Each word attends over regions (softmax at temperature
    gamma1 on cosine similarity), its relevance is the cosine between word
    and attended context, and relevances aggregate by log-sum-exp at gamma2.
    """
    if word_features.shape[-1] == 0:
        raise ValueError("matching requires at least one word")
    if region_features.shape[0] != word_features.shape[0]:
        raise ValueError("region and word features must share the text dimension")
    words = word_features.transpose(0, 1)                      # [T, d]
    regions = region_features.transpose(0, 1)                  # [N_r, d]
    wn = words / words.norm(dim=1, keepdim=True).clamp_min(NORM_FLOOR)
    rn = regions / regions.norm(dim=1, keepdim=True).clamp_min(NORM_FLOOR)
    sim = wn @ rn.transpose(0, 1)                              # [T, N_r]
    alpha = torch.softmax(gamma1 * sim, dim=1)
    context = alpha @ regions                                  # [T, d]
    relevance = _cosine(context, words)                        # [T]
    return torch.logsumexp(gamma2 * relevance, dim=0) / gamma2


def contrastive_terms(scores: torch.Tensor, gamma3: float) -> torch.Tensor:
    """Sum of negative log posteriors in both retrieval directions.

    scores: [B, B] with scores[i, j] = score(image i, caption j). Row
    softmax gives P(caption | image), column softmax P(image | caption);
    the matched pairs sit on the diagonal.
    """
    if scores.dim() != 2 or scores.shape[0] != scores.shape[1]:
        raise ValueError("score matrix must be square")
    if scores.shape[0] == 0:
        raise ValueError("empty batch")
    logits = gamma3 * scores
    img_to_cap = torch.log_softmax(logits, dim=1).diagonal()
    cap_to_img = torch.log_softmax(logits, dim=0).diagonal()
    return -(img_to_cap.sum() + cap_to_img.sum())


def batch_posteriors(scores: torch.Tensor, gamma3: float) -> tuple[torch.Tensor, torch.Tensor]:
    """(row posteriors, column posteriors); each distribution sums to one."""
    logits = gamma3 * scores
    return torch.softmax(logits, dim=1), torch.softmax(logits, dim=0)


def score_matrices(
    images: torch.Tensor,
    tokens: torch.Tensor,
    lengths: torch.Tensor,
    image_encoder: DamsmImageEncoder,
    text_encoder: TextEncoder,
    gamma1: float,
    gamma2: float,
) -> tuple[torch.Tensor, torch.Tensor]:
    """(word_scores [B, B], sentence_scores [B, B]) over all pairings."""
    b = images.shape[0]
    if tokens.shape[0] != b or lengths.shape[0] != b:
        raise ValueError("images and captions must pair one-to-one")
    regions, glob = image_encoder(images)
    words, sentences = text_encoder(tokens, lengths)
    word_rows = []
    for i in range(b):
        row = [
            matching_score(regions[i], words[j, :, : int(lengths[j])], gamma1, gamma2)
            for j in range(b)
        ]
        word_rows.append(torch.stack(row))
    word_scores = torch.stack(word_rows)
    sent_scores = _cosine(glob[:, None, :], sentences[None, :, :])
    return word_scores, sent_scores


def damsm_loss(
    images: torch.Tensor,
    tokens: torch.Tensor,
    lengths: torch.Tensor,
    image_encoder: DamsmImageEncoder,
    text_encoder: TextEncoder,
    gamma1: float = 5.0,
    gamma2: float = 5.0,
    gamma3: float = 10.0,
) -> torch.Tensor:
    """Word- plus sentence-level contrastive loss; image b matches caption b."""
    if images.shape[0] == 0:
        raise ValueError("empty batch")
    word_scores, sent_scores = score_matrices(
        images, tokens, lengths, image_encoder, text_encoder, gamma1, gamma2
    )
    return contrastive_terms(word_scores, gamma3) + contrastive_terms(sent_scores, gamma3)


@dataclass
class DamsmBundle:
    """Frozen matcher: both encoders plus the temperatures they were trained at."""

    image_encoder: DamsmImageEncoder
    text_encoder: TextEncoder
    gamma1: float = 5.0
    gamma2: float = 5.0
    gamma3: float = 10.0

    def freeze(self) -> "DamsmBundle":
        for p in self.image_encoder.parameters():
            p.requires_grad_(False)
        for p in self.text_encoder.parameters():
            p.requires_grad_(False)
        self.image_encoder.eval()
        self.text_encoder.eval()
        return self

    def loss(self, images: torch.Tensor, tokens: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        return damsm_loss(
            images, tokens, lengths, self.image_encoder, self.text_encoder,
            self.gamma1, self.gamma2, self.gamma3,
        )

    def mean_matching_score(
        self, images: torch.Tensor, tokens: torch.Tensor, lengths: torch.Tensor
    ) -> float:
        """Mean word-level score of the true pairings only."""
        with torch.no_grad():
            regions, _ = self.image_encoder(images)
            words, _ = self.text_encoder(tokens, lengths)
            scores = [
                matching_score(
                    regions[i], words[i, :, : int(lengths[i])], self.gamma1, self.gamma2
                )
                for i in range(images.shape[0])
            ]
        return float(torch.stack(scores).mean())


def r_precision(
    images: torch.Tensor,
    tokens: torch.Tensor,
    lengths: torch.Tensor,
    bundle: DamsmBundle,
    k: int,
    generator: torch.Generator | None = None,
) -> float:
    """Fraction of images whose true caption beats k-1 random distractors.

    Ranking uses sentence-level cosine; the true caption wins ties.
    """
    n = images.shape[0]
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the {n} available candidates")
    if k == 1:
        return 1.0
    with torch.no_grad():
        _, glob = bundle.image_encoder(images)
        _, sentences = bundle.text_encoder(tokens, lengths)
        hits = 0
        for i in range(n):
            others = torch.tensor(
                [j for j in range(n) if j != i], device=images.device
            )
            perm = torch.randperm(len(others), generator=generator)[: k - 1]
            candidates = torch.cat([torch.tensor([i]), others[perm]])
            sims = _cosine(glob[i][None, :], sentences[candidates])
            if int(torch.argmax(sims)) == 0:
                hits += 1
    return hits / n


@dataclass
class PairedTextImages:
    """Aligned (image, caption) tensors ready for matcher training."""

    images: torch.Tensor   # [N, C, R, R] in [-1, 1]
    tokens: torch.Tensor   # [N, T] int64, zero-padded
    lengths: torch.Tensor  # [N] int64, all >= 1

    def __post_init__(self):
        n = self.images.shape[0]
        if self.tokens.shape[0] != n or self.lengths.shape[0] != n:
            raise ValueError("images, tokens, lengths must align")
        if n and int(self.lengths.min()) < 1:
            raise ValueError("every caption needs at least one token")

    def __len__(self) -> int:
        return int(self.images.shape[0])


def pretrain_damsm(
    dataset: PairedTextImages,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    input_resolution: int | None = None,
    log: list | None = None,
) -> DamsmBundle:
    """Train both encoders on real pairs; returns the bundle still unfrozen.

    The caller decides whether to freeze and where to checkpoint.
    """
    if len(dataset) == 0:
        raise ValueError("cannot pretrain on an empty dataset")
    seed_gen = torch.Generator().manual_seed(train_cfg.seed)
    torch.manual_seed(train_cfg.seed)
    image_encoder = DamsmImageEncoder(model_cfg, input_resolution)
    text_encoder = TextEncoder(model_cfg.vocab_size, model_cfg.d_text)
    params = list(image_encoder.parameters()) + list(text_encoder.parameters())
    opt = torch.optim.Adam(
        params,
        lr=train_cfg.learning_rate,
        betas=(train_cfg.adam_beta1, train_cfg.adam_beta2),
    )
    n = len(dataset)
    bs = min(train_cfg.batch_size, n)
    for epoch in range(train_cfg.epochs):
        order = torch.randperm(n, generator=seed_gen)
        total = 0.0
        batches = 0
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            if len(idx) < 2:
                continue  # singleton batches carry no contrastive signal
            loss = damsm_loss(
                dataset.images[idx],
                dataset.tokens[idx],
                dataset.lengths[idx],
                image_encoder,
                text_encoder,
                model_cfg.gamma1,
                model_cfg.gamma2,
                model_cfg.gamma3,
            )
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach())
            batches += 1
        if log is not None:
            log.append({"epoch": epoch, "loss": total / max(batches, 1)})
    return DamsmBundle(
        image_encoder=image_encoder,
        text_encoder=text_encoder,
        gamma1=model_cfg.gamma1,
        gamma2=model_cfg.gamma2,
        gamma3=model_cfg.gamma3,
    )


def save_damsm(path, bundle: DamsmBundle, model_cfg: ModelConfig, epoch: int = 0) -> None:
    from .checkpoint import Checkpoint, save_checkpoint, state_dict_to_group

    ckpt = Checkpoint(
        epoch=epoch,
        config=model_cfg.to_dict(),
        groups={
            "damsm_image_encoder": state_dict_to_group(bundle.image_encoder),
            "damsm_text_encoder": state_dict_to_group(bundle.text_encoder),
        },
    )
    save_checkpoint(path, ckpt)


def load_damsm(path, input_resolution: int | None = None) -> tuple[DamsmBundle, ModelConfig]:
    from .checkpoint import load_checkpoint, load_group_into

    ckpt = load_checkpoint(path)
    cfg = ModelConfig(**ckpt.config)
    image_encoder = DamsmImageEncoder(cfg, input_resolution)
    text_encoder = TextEncoder(cfg.vocab_size, cfg.d_text)
    load_group_into(image_encoder, ckpt.groups["damsm_image_encoder"])
    load_group_into(text_encoder, ckpt.groups["damsm_text_encoder"])
    bundle = DamsmBundle(
        image_encoder=image_encoder,
        text_encoder=text_encoder,
        gamma1=cfg.gamma1,
        gamma2=cfg.gamma2,
        gamma3=cfg.gamma3,
    )
    return bundle.freeze(), cfg
