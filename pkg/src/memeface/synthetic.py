"""Deterministic synthetic corpora for tests, demos and the training probes.

Three builders:
  make_pipeline_corpus  raw images + caption TSV exercising every filter
  make_color_toyset     separable (color, position) pairs for matcher training
  make_overfit_corpus   8-sample two-template corpus the GAN can memorize
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig, TrainConfig
from .damsm import DamsmBundle, PairedTextImages, pretrain_damsm
from .data import (
    ClusterInfo,
    DatasetManifest,
    ManifestSample,
    load_training_set,
)
from .imageio import save_image
from .trainer import build_models, models_from_checkpoint, train
from .vocab import Vocabulary

_COLORS = {
    "red": (0.9, -0.6, -0.6),
    "green": (-0.6, 0.9, -0.6),
    "blue": (-0.6, -0.6, 0.9),
    "yellow": (0.9, 0.9, -0.6),
}
_POSITIONS = ["one", "two", "three", "four", "five", "six", "seven", "eight"]


def _block_origin(pos_index: int, size: int, block: int) -> tuple[int, int]:
    cols = 4
    r, c = divmod(pos_index, cols)
    ys = [1, size - block - 1]
    xs = np.linspace(1, size - block - 1, cols).astype(int)
    return int(ys[r]), int(xs[c])


def make_color_toyset(
    seed: int = 0, resolution: int = 32
) -> tuple[PairedTextImages, Vocabulary, ModelConfig]:
    """4 colors x 8 block positions; caption '<color> spot <position>'."""
    captions = []
    images = []
    block = resolution // 4
    for color, rgb in _COLORS.items():
        for p, pos in enumerate(_POSITIONS):
            img = np.zeros((3, resolution, resolution), dtype=np.float32)
            for ch, v in enumerate(rgb):
                img[ch] = v
            y, x = _block_origin(p, resolution, block)
            img[:, y : y + block, x : x + block] = 1.0
            images.append(img)
            captions.append(f"{color} spot {pos}")
    vocab = Vocabulary.from_corpus(captions)
    encoded = [vocab.encode(c) for c in captions]
    t_max = max(c.length for c in encoded)
    tokens = torch.zeros(len(encoded), t_max, dtype=torch.int64)
    for i, cap in enumerate(encoded):
        tokens[i, : cap.length] = torch.tensor(cap.tokens)
    lengths = torch.tensor([c.length for c in encoded], dtype=torch.int64)
    cfg = ModelConfig(
        vocab_size=len(vocab),
        d_text=32,
        d_cond=16,
        d_z=8,
        d_hidden=16,
        base_resolution=8,
        stages=3,
        damsm_grid=8,
        max_caption_len=8,
    )
    dataset = PairedTextImages(
        images=torch.tensor(np.stack(images)), tokens=tokens, lengths=lengths
    )
    return dataset, vocab, cfg


def _overfit_template(kind: str, resolution: int) -> np.ndarray:
    img = np.zeros((3, resolution, resolution), dtype=np.float64)
    if kind == "red":
        img[0] = 0.8
        img[1] = -0.7
        img[2] = -0.7
        img[:, ::4, :] = -0.9  # dark horizontal rules
    else:
        img[0] = -0.7
        img[1] = -0.3
        img[2] = 0.8
        img[:, :, ::4] = 0.9  # light vertical rules
    return img


def make_overfit_corpus(root: str | Path, resolution: int = 16) -> DatasetManifest:
    """2 templates x 4 captioned variants, everything in the train split."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "templates").mkdir(parents=True, exist_ok=True)
    samples = []
    clusters = []
    words = ["one", "two", "three", "four"]
    block = max(2, resolution // 4)
    corners = [
        (1, 1),
        (1, resolution - block - 1),
        (resolution - block - 1, 1),
        (resolution - block - 1, resolution - block - 1),
    ]
    for cid, kind in enumerate(["red", "blue"]):
        template = _overfit_template(kind, resolution)
        tpath = f"templates/template_{cid:03d}.png"
        save_image(template, root / tpath)
        clusters.append(
            ClusterInfo(cluster_id=cid, template_path=tpath, member_count=4)
        )
        for v in range(4):
            img = template.copy()
            y, x = corners[v]
            img[:, y : y + block, x : x + block] = 1.0
            rel = f"images/{cid}_{v}.png"
            save_image(img, root / rel)
            samples.append(
                ManifestSample(
                    image_path=rel,
                    caption=f"{kind} face {words[v]}",
                    cluster_id=cid,
                    split="train",
                    source_id=f"{kind}-{v}",
                )
            )
    manifest = DatasetManifest(
        samples=samples, clusters=clusters, canonical_resolution=resolution, root=root
    )
    manifest.save(root)
    return manifest


def overfit_model_config(vocab_size: int) -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab_size,
        d_text=16,
        d_cond=8,
        d_z=8,
        d_hidden=16,
        base_resolution=8,
        stages=2,
        damsm_grid=8,
        max_caption_len=8,
    )


@dataclass
class ProbeResult:
    score_start: float
    score_end: float
    margins: list[float]
    n_margin_positive: int


def _eval_generation(models, dataset, cfg: ModelConfig, z: torch.Tensor):
    with torch.no_grad():
        words, sentence = models.text_encoder(dataset.tokens, dataset.lengths)
        aug = models.augmenter(sentence, noise=torch.zeros(len(dataset), cfg.d_cond))
        idx = torch.arange(len(dataset))
        patterns = dataset.pattern_batch(idx)
        outputs = models.generator(aug.c, z, words, patterns, dataset.lengths)
    return outputs


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a.ravel().astype(np.float64)
    b = b.ravel().astype(np.float64)
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a * a).sum() * (b * b).sum())
    if denom == 0:
        return 0.0
    return float((a * b).sum() / denom)


def overfit_probe(
    workdir: str | Path,
    epochs: int = 300,
    seed: int = 0,
    damsm_epochs: int = 120,
) -> ProbeResult:
    """Trains on the 8-sample corpus and reports memorization evidence.

    Evidence: the matcher's word-level score on (generated, own caption)
    pairs rises over training, and each generated image correlates more
    with its own cluster template than with the other one.
    """
    workdir = Path(workdir)
    manifest = make_overfit_corpus(workdir / "corpus")
    vocab = Vocabulary.from_corpus(s.caption for s in manifest.samples)
    cfg = overfit_model_config(len(vocab))
    dataset = load_training_set(manifest, cfg, vocab=vocab)

    pre_cfg = TrainConfig(
        learning_rate=2e-3,
        batch_size=8,
        epochs=damsm_epochs,
        seed=seed,
        update_mode="per_batch_alternating",
    )
    bundle = pretrain_damsm(
        PairedTextImages(
            images=dataset.stage_images[-1], tokens=dataset.tokens, lengths=dataset.lengths
        ),
        cfg,
        pre_cfg,
    ).freeze()

    train_cfg = TrainConfig(
        batch_size=8,
        epochs=epochs,
        seed=seed,
        update_mode="per_batch_alternating",
        checkpoint_period_epochs=max(1, epochs // 4),
    )
    eval_z = torch.empty(len(dataset), cfg.d_z).uniform_(
        -1, 1, generator=torch.Generator().manual_seed(seed + 99)
    )

    torch.manual_seed(train_cfg.seed)
    models0 = build_models(cfg, bundle, train_cfg.share_text_encoder)
    out0 = _eval_generation(models0, dataset, cfg, eval_z)
    score_start = bundle.mean_matching_score(
        out0.edited[-1], dataset.tokens, dataset.lengths
    )

    checkpoints = train(dataset, cfg, train_cfg, bundle)
    models_end, _, _ = models_from_checkpoint(checkpoints[-1])
    out_end = _eval_generation(models_end, dataset, cfg, eval_z)
    score_end = bundle.mean_matching_score(
        out_end.edited[-1], dataset.tokens, dataset.lengths
    )

    final = out_end.edited[-1].numpy()
    margins = []
    for i in range(len(dataset)):
        own = int(dataset.cluster_ids[i])
        other = 1 - own
        own_t = dataset.pyramids[own].levels[-1]
        other_t = dataset.pyramids[other].levels[-1]
        margins.append(_pearson(final[i], own_t) - _pearson(final[i], other_t))
    return ProbeResult(
        score_start=score_start,
        score_end=score_end,
        margins=margins,
        n_margin_positive=sum(1 for m in margins if m > 0),
    )


_CAPTION_POOL = [
    "that awkward moment again",
    "me pretending to work hard",
    "when the code finally compiles",
    "my face during monday meetings",
    "this is fine everything is fine",
    "you said what to whom",
    "cannot believe this happened today",
    "笑 死 我 了 朋友",
    "我 不 想 上班 啊",
    "when you see the bill",
    "nobody asked but here we are",
    "one more episode then sleep",
]

_SHORT_CAPTIONS = ["yeap", "what now", "ok"]
_LONG_CAPTION = (
    "this caption rambles on and on with far too many words to ever pass the filter"
)


def _family_base(fam: int, size: int) -> np.ndarray:
    img = np.zeros((3, size, size), dtype=np.float64)
    yy = np.linspace(-1, 1, size)[None, :, None]
    xx = np.linspace(-1, 1, size)[None, None, :]
    if fam == 0:
        img[0] = 0.7
        img[1] = -0.2 + 0.5 * yy[0]
        img[2] = -0.6
    elif fam == 1:
        checker = ((np.arange(size)[:, None] // 8 + np.arange(size)[None, :] // 8) % 2)
        img[0] = -0.5
        img[1] = 0.8 * checker - 0.2
        img[2] = -0.1
    else:
        diag = np.sin(6.0 * (yy[0] + xx[0]))
        img[0] = -0.4
        img[1] = -0.4
        img[2] = 0.5 + 0.4 * diag
    return np.clip(img, -1, 1)


def make_pipeline_corpus(
    root: str | Path, n: int = 64, seed: int = 0, size: int = 96
) -> Path:
    """Raw input directory: images with a synthetic caption band + TSV."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    lines = []
    for i in range(n):
        fam = i % 3
        img = _family_base(fam, size)
        # distinguishing mark per sample
        y, x = rng.integers(4, size - 20, size=2)
        img[:, y : y + 12, x : x + 12] = rng.uniform(-1, 1, size=(3, 1, 1))
        # caption band: bright strip with dark speckle standing in for text
        band = int(size * 0.82)
        img[:, band:, :] = 0.95
        speckle = rng.uniform(0, 1, size=(size - band, size)) < 0.2
        for c in range(3):
            img[c, band:, :][speckle] = -0.8
        name = f"raw_{i:04d}.png"
        save_image(np.clip(img, -1, 1), root / name)
        if i < len(_SHORT_CAPTIONS):
            caption = _SHORT_CAPTIONS[i]          # dropped: too short
        elif i == len(_SHORT_CAPTIONS):
            caption = _LONG_CAPTION               # dropped: too long
        else:
            caption = _CAPTION_POOL[i % len(_CAPTION_POOL)]
        lines.append(f"{name}\t{caption}")
    # one record pointing at a file that does not decode
    (root / "broken.png").write_bytes(b"not a png")
    lines.append("broken.png\tthis one cannot be decoded at all")
    (root / "captions.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return root
