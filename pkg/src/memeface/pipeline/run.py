"""End-to-end curation: captions in a TSV sidecar, images in a directory,
out comes a validated manifest with clusters, templates and a split.

Every stage appends to a run log; the log and stage counts land in
report.json next to the manifest so re-runs can be diffed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..data import ClusterInfo, DatasetManifest, ManifestSample, _atomic_write
from ..imageio import load_image, save_image
from .cluster import kmeans_cluster, remove_outliers
from .features import TinyImageFeatures, extract_features
from .images import CaptionLayout, crop_caption_region
from .lm import CharNgramLM, caption_length, perplexity_filter
from .split import split_manifest


@dataclass
class RawSample:
    image_path: str
    caption_text: str
    source_id: str


class TsvCaptionSource:
    """File-based stand-in for an OCR engine: image path TAB caption."""

    def __init__(self, tsv_path: str | Path):
        self.tsv_path = Path(tsv_path)

    def samples(self, image_root: Path) -> list[RawSample]:
        out = []
        with open(self.tsv_path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh):
                line = line.rstrip("\n")
                if not line:
                    continue
                if "\t" not in line:
                    raise ValueError(
                        f"{self.tsv_path}:{lineno + 1}: expected 'path<TAB>caption'"
                    )
                rel, caption = line.split("\t", 1)
                out.append(
                    RawSample(
                        image_path=str(image_root / rel),
                        caption_text=caption,
                        source_id=rel,
                    )
                )
        return out


@dataclass(frozen=True)
class PipelineConfig:
    k: int = 40
    max_iters: int = 100
    z_threshold: float = 2.5
    min_cluster_size: int = 3
    ppl_low: float = 2.0
    ppl_high: float = 500.0
    min_len: int = 3
    max_len: int = 12
    bottom_fraction: float = 0.2
    canonical_resolution: int = 64
    train_fraction: float = 0.9
    ngram: int = 3
    alpha: float = 1.0
    feature_dim: int = 64
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def derive_template(member_indices: list[int], vectors: np.ndarray) -> int:
    """Medoid: the member minimizing summed feature distance to co-members."""
    if not member_indices:
        raise ValueError("cannot derive a template from an empty cluster")
    pts = vectors[member_indices]
    dist = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2))
    sums = dist.sum(axis=1)
    return member_indices[int(sums.argmin())]


def curate(
    input_dir: str | Path,
    output_dir: str | Path,
    config: PipelineConfig = PipelineConfig(),
) -> DatasetManifest:
    """input_dir holds images plus captions.tsv; output_dir gets the corpus."""
    input_dir = Path(input_dir)
    output_dir = Path(output_dir)
    (output_dir / "images").mkdir(parents=True, exist_ok=True)
    (output_dir / "templates").mkdir(parents=True, exist_ok=True)
    log: list[str] = []

    raw = TsvCaptionSource(input_dir / "captions.tsv").samples(input_dir)
    log.append(f"ingest: {len(raw)} caption records")

    decoded: list[tuple[RawSample, np.ndarray]] = []
    for sample in raw:
        try:
            decoded.append((sample, load_image(sample.image_path)))
        except Exception as exc:  # undecodable images are skipped, not fatal
            log.append(f"skip {sample.source_id}: {exc}")
    log.append(f"decode: {len(decoded)} images readable")

    in_length = [
        pair for pair in decoded
        if config.min_len <= caption_length(pair[0].caption_text) <= config.max_len
    ]
    log.append(f"length filter [{config.min_len}, {config.max_len}]: {len(in_length)} kept")
    if not in_length:
        raise ValueError("no captions survive the length filter")

    lm = CharNgramLM(n=config.ngram, alpha=config.alpha)
    lm.train(pair[0].caption_text for pair in in_length)
    kept_texts = set(
        perplexity_filter(
            [pair[0].caption_text for pair in in_length],
            lm, config.ppl_low, config.ppl_high,
        )
    )
    survivors = [pair for pair in in_length if pair[0].caption_text in kept_texts]
    log.append(f"perplexity filter [{config.ppl_low}, {config.ppl_high}]: {len(survivors)} kept")
    if not survivors:
        raise ValueError("no captions survive the perplexity filter")

    layout = CaptionLayout(bottom_fraction=config.bottom_fraction)
    cropped: list[tuple[RawSample, np.ndarray]] = []
    for sample, img in survivors:
        try:
            cropped.append(
                (sample, crop_caption_region(img, layout, config.canonical_resolution))
            )
        except ValueError as exc:
            log.append(f"skip {sample.source_id}: {exc}")
    log.append(f"caption crop: {len(cropped)} images at {config.canonical_resolution}px")

    extractor = TinyImageFeatures(dim=config.feature_dim)
    vectors = np.stack([extract_features(img, extractor) for _, img in cropped])

    k = min(config.k, len(cropped))
    km = kmeans_cluster(vectors, k=k, seed=config.seed, max_iters=config.max_iters)
    log.append(
        f"kmeans: k={k}, {km.iterations} iterations, inertia {km.inertia:.6f}"
    )
    assignments = remove_outliers(
        km.assignments, vectors, km.centroids,
        z_threshold=config.z_threshold,
        min_cluster_size=config.min_cluster_size,
        log=log,
    )
    kept_idx = np.flatnonzero(assignments >= 0)
    if len(kept_idx) == 0:
        raise ValueError("outlier removal dropped every sample")
    log.append(f"outlier removal: {len(kept_idx)} samples in surviving clusters")

    # dense, order-stable relabeling of the surviving clusters
    old_ids = sorted(set(int(assignments[i]) for i in kept_idx))
    relabel = {old: new for new, old in enumerate(old_ids)}

    samples: list[ManifestSample] = []
    members_by_cluster: dict[int, list[int]] = {}
    for out_idx, i in enumerate(kept_idx):
        sample, img = cropped[i]
        cid = relabel[int(assignments[i])]
        rel_path = f"images/{out_idx:05d}.png"
        save_image(img, output_dir / rel_path)
        samples.append(
            ManifestSample(
                image_path=rel_path,
                caption=sample.caption_text,
                cluster_id=cid,
                source_id=sample.source_id,
            )
        )
        members_by_cluster.setdefault(cid, []).append(int(i))

    clusters: list[ClusterInfo] = []
    for cid in sorted(members_by_cluster):
        members = members_by_cluster[cid]
        medoid = derive_template(members, vectors)
        rel_path = f"templates/template_{cid:03d}.png"
        save_image(cropped[medoid][1], output_dir / rel_path)
        clusters.append(
            ClusterInfo(
                cluster_id=cid,
                template_path=rel_path,
                member_count=len(members),
            )
        )
        log.append(f"cluster {cid}: {len(members)} members, template {cropped[medoid][0].source_id}")

    manifest = DatasetManifest(
        samples=samples,
        clusters=clusters,
        canonical_resolution=config.canonical_resolution,
        root=output_dir,
    )
    manifest.validate(min_len=config.min_len, max_len=config.max_len)
    split_manifest(manifest, train_fraction=config.train_fraction, seed=config.seed, log=log)
    manifest.validate(
        min_len=config.min_len,
        max_len=config.max_len,
        train_fraction=config.train_fraction,
    )
    manifest.save(output_dir)

    report = {
        "config": config.to_dict(),
        "log": log,
        "inertia_history": km.inertia_history,
        "n_samples": len(samples),
        "n_clusters": len(clusters),
    }
    _atomic_write(
        output_dir / "report.json",
        json.dumps(report, ensure_ascii=False, indent=2, sort_keys=True).encode("utf-8"),
    )
    return manifest
