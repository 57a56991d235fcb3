"""Dataset manifest format and the tensors the trainer consumes.

The manifest is the handoff between the curation pipeline, the trainer and
the demo service: line-delimited sample records plus a clusters JSON file,
with image/template paths stored relative to the manifest directory.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig
from .generator import PatternPyramid, build_pattern_pyramid
from .imageio import load_image, resize_area
from .vocab import Vocabulary, tokenize

MANIFEST_NAME = "manifest.jsonl"
CLUSTERS_NAME = "clusters.json"


@dataclass
class ManifestSample:
    image_path: str
    caption: str
    cluster_id: int
    split: str = "train"
    source_id: str = ""

    def to_json(self) -> dict:
        return {
            "image_path": self.image_path,
            "caption": self.caption,
            "cluster_id": self.cluster_id,
            "split": self.split,
            "source_id": self.source_id,
        }


@dataclass
class ClusterInfo:
    cluster_id: int
    template_path: str
    member_count: int


@dataclass
class DatasetManifest:
    samples: list[ManifestSample]
    clusters: list[ClusterInfo]
    canonical_resolution: int
    root: Path = field(default_factory=Path)

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p

    def cluster_ids(self) -> list[int]:
        return sorted(c.cluster_id for c in self.clusters)

    def template_for(self, cluster_id: int) -> ClusterInfo:
        for c in self.clusters:
            if c.cluster_id == cluster_id:
                return c
        raise KeyError(f"unknown cluster id {cluster_id}")

    def validate(
        self,
        min_len: int | None = None,
        max_len: int | None = None,
        train_fraction: float | None = None,
    ) -> None:
        known = {c.cluster_id for c in self.clusters}
        for s in self.samples:
            if s.cluster_id not in known:
                raise ValueError(f"sample {s.image_path} references unknown cluster {s.cluster_id}")
            if s.split not in ("train", "test"):
                raise ValueError(f"sample {s.image_path} has invalid split {s.split!r}")
            if min_len is not None or max_len is not None:
                n = len(tokenize(s.caption))
                if min_len is not None and n < min_len:
                    raise ValueError(f"caption shorter than {min_len} tokens: {s.caption!r}")
                if max_len is not None and n > max_len:
                    raise ValueError(f"caption longer than {max_len} tokens: {s.caption!r}")
        counts: dict[int, int] = {c.cluster_id: 0 for c in self.clusters}
        for s in self.samples:
            counts[s.cluster_id] += 1
        for c in self.clusters:
            if counts[c.cluster_id] != c.member_count:
                raise ValueError(
                    f"cluster {c.cluster_id} lists {c.member_count} members, "
                    f"manifest has {counts[c.cluster_id]}"
                )
        if train_fraction is not None and self.samples:
            n_train = sum(1 for s in self.samples if s.split == "train")
            want = train_fraction * len(self.samples)
            if abs(n_train - want) > 1.0:
                raise ValueError(
                    f"train split {n_train}/{len(self.samples)} deviates from "
                    f"fraction {train_fraction} by more than one sample"
                )

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        lines = "".join(
            json.dumps(s.to_json(), ensure_ascii=False, sort_keys=True) + "\n"
            for s in self.samples
        )
        _atomic_write(directory / MANIFEST_NAME, lines.encode("utf-8"))
        clusters = {
            "canonical_resolution": self.canonical_resolution,
            "clusters": [
                {
                    "cluster_id": c.cluster_id,
                    "template_path": c.template_path,
                    "member_count": c.member_count,
                }
                for c in sorted(self.clusters, key=lambda c: c.cluster_id)
            ],
        }
        _atomic_write(
            directory / CLUSTERS_NAME,
            json.dumps(clusters, ensure_ascii=False, indent=2, sort_keys=True).encode("utf-8"),
        )

    @classmethod
    def load(cls, directory: str | Path) -> "DatasetManifest":
        directory = Path(directory)
        samples = []
        with open(directory / MANIFEST_NAME, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    samples.append(ManifestSample(**json.loads(line)))
        meta = json.loads((directory / CLUSTERS_NAME).read_text(encoding="utf-8"))
        clusters = [ClusterInfo(**c) for c in meta["clusters"]]
        return cls(
            samples=samples,
            clusters=clusters,
            canonical_resolution=meta["canonical_resolution"],
            root=directory,
        )


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


@dataclass
class TrainingSet:
    """Manifest materialized as tensors, one image stack per stage."""

    stage_images: list[torch.Tensor]      # stage i: [N, C, R_i, R_i]
    tokens: torch.Tensor                  # [N, T] int64, zero padded
    lengths: torch.Tensor                 # [N] int64
    cluster_ids: torch.Tensor             # [N] int64
    pyramids: dict[int, PatternPyramid]   # cluster id -> template pyramid
    vocab: Vocabulary
    captions: list[str]

    def __len__(self) -> int:
        return int(self.tokens.shape[0])

    def pattern_batch(
        self, idx: torch.Tensor, dtype=torch.float32, device=None
    ) -> list[torch.Tensor]:
        """Per-stage pattern tensors aligned with the sample batch `idx`."""
        stages = len(self.stage_images)
        out = []
        for s in range(stages):
            level = torch.stack(
                [
                    torch.as_tensor(
                        self.pyramids[int(self.cluster_ids[i])].levels[s], dtype=dtype
                    )
                    for i in idx
                ]
            )
            out.append(level.to(device) if device is not None else level)
        return out


def load_training_set(
    manifest: DatasetManifest,
    cfg: ModelConfig,
    vocab: Vocabulary | None = None,
    split: str = "train",
    dtype=torch.float32,
) -> TrainingSet:
    """Loads one split. Vocabulary defaults to one built from train captions."""
    chosen = [s for s in manifest.samples if s.split == split]
    if not chosen:
        raise ValueError(f"manifest has no samples in split {split!r}")
    if vocab is None:
        vocab = Vocabulary.from_corpus(
            s.caption for s in manifest.samples if s.split == "train"
        )
    if len(vocab) > cfg.vocab_size:
        raise ValueError(
            f"vocabulary size {len(vocab)} exceeds configured {cfg.vocab_size}"
        )
    resolutions = cfg.stage_resolutions()
    per_stage: list[list[np.ndarray]] = [[] for _ in resolutions]
    token_rows, lens, cids, caps = [], [], [], []
    for s in chosen:
        img = load_image(manifest.resolve(s.image_path))
        for si, r in enumerate(resolutions):
            per_stage[si].append(resize_area(img, r).astype(np.float32))
        cap = vocab.encode(s.caption, max_len=cfg.max_caption_len)
        token_rows.append(list(cap.tokens))
        lens.append(cap.length)
        cids.append(s.cluster_id)
        caps.append(s.caption)
    t_max = max(lens)
    tokens = torch.zeros(len(chosen), t_max, dtype=torch.int64)
    for i, row in enumerate(token_rows):
        tokens[i, : len(row)] = torch.tensor(row, dtype=torch.int64)
    pyramids = {
        c.cluster_id: build_pattern_pyramid(
            manifest.resolve(c.template_path),
            cfg.stages,
            cfg.base_resolution,
            cluster_id=c.cluster_id,
            source_path=c.template_path,
        )
        for c in manifest.clusters
    }
    return TrainingSet(
        stage_images=[
            torch.as_tensor(np.stack(stack), dtype=dtype) for stack in per_stage
        ],
        tokens=tokens,
        lengths=torch.tensor(lens, dtype=torch.int64),
        cluster_ids=torch.tensor(cids, dtype=torch.int64),
        pyramids=pyramids,
        vocab=vocab,
        captions=caps,
    )


def batch_indices(n: int, batch_size: int, generator: torch.Generator) -> list[torch.Tensor]:
    """Shuffled full batches plus a smaller remainder batch when needed."""
    if batch_size < 1:
        raise ValueError("batch size must be positive")
    order = torch.randperm(n, generator=generator)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]
