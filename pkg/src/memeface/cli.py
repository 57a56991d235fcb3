"""Command line entry points: corpus synthesis, curation, training, serving."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ModelConfig, TrainConfig


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--learning-rate", type=float, default=2e-4)
    p.add_argument("--batch-size", type=int, default=14)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)


def _cmd_synth_corpus(args) -> int:
    from . import synthetic

    out = Path(args.out)
    if args.kind == "pipeline":
        synthetic.make_pipeline_corpus(out, n=args.n, seed=args.seed)
    else:
        synthetic.make_overfit_corpus(out)
    print(f"wrote {args.kind} corpus to {out}")
    return 0


def _cmd_curate(args) -> int:
    from .pipeline import PipelineConfig, curate

    cfg = PipelineConfig(
        k=args.k,
        z_threshold=args.z_threshold,
        min_cluster_size=args.min_cluster_size,
        ppl_low=args.ppl_low,
        ppl_high=args.ppl_high,
        canonical_resolution=args.resolution,
        train_fraction=args.train_fraction,
        seed=args.seed,
    )
    manifest = curate(args.input, args.output, cfg)
    n_train = sum(1 for s in manifest.samples if s.split == "train")
    print(
        f"curated {len(manifest.samples)} samples "
        f"({n_train} train) into {len(manifest.clusters)} clusters at {args.output}"
    )
    return 0


def _cmd_pretrain_damsm(args) -> int:
    from .damsm import PairedTextImages, pretrain_damsm, save_damsm
    from .data import DatasetManifest, load_training_set
    from .vocab import Vocabulary

    manifest = DatasetManifest.load(args.manifest)
    vocab = Vocabulary.from_corpus(
        s.caption for s in manifest.samples if s.split == "train"
    )
    model_cfg = ModelConfig(
        vocab_size=len(vocab),
        d_text=args.d_text,
        d_cond=args.d_cond,
        d_z=args.d_z,
        d_hidden=args.d_hidden,
        base_resolution=args.base_resolution,
        stages=args.stages,
    )
    dataset = load_training_set(manifest, model_cfg, vocab=vocab)
    train_cfg = TrainConfig(
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
    )
    history: list = []
    bundle = pretrain_damsm(
        PairedTextImages(
            images=dataset.stage_images[-1],
            tokens=dataset.tokens,
            lengths=dataset.lengths,
        ),
        model_cfg,
        train_cfg,
        log=history,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_damsm(out, bundle, model_cfg, epoch=train_cfg.epochs)
    vocab.save(out.parent / "vocab.txt")
    if history:
        print(f"matcher loss {history[0]['loss']:.4f} -> {history[-1]['loss']:.4f}")
    print(f"wrote matcher checkpoint to {out} and vocab to {out.parent / 'vocab.txt'}")
    return 0


def _cmd_train(args) -> int:
    from .damsm import load_damsm
    from .data import DatasetManifest, load_training_set
    from .trainer import train
    from .vocab import Vocabulary

    damsm_path = Path(args.damsm)
    bundle, model_cfg = load_damsm(damsm_path)
    vocab_path = Path(args.vocab) if args.vocab else damsm_path.parent / "vocab.txt"
    vocab = Vocabulary.load(vocab_path)
    manifest = DatasetManifest.load(args.manifest)
    dataset = load_training_set(manifest, model_cfg, vocab=vocab)
    train_cfg = TrainConfig(
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
        generator_update_period_epochs=args.generator_period,
        checkpoint_period_epochs=args.checkpoint_period,
        update_mode=args.update_mode,
    )
    ckpt_dir = Path(args.checkpoints)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    vocab.save(ckpt_dir / "vocab.txt")
    checkpoints = train(
        dataset, model_cfg, train_cfg, bundle,
        checkpoint_dir=ckpt_dir,
        log_path=ckpt_dir / "train_log.jsonl",
    )
    print(f"wrote {len(checkpoints)} checkpoints to {ckpt_dir}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceConfig, create_app

    app = create_app(
        ServiceConfig(
            checkpoint_dir=Path(args.checkpoints),
            manifest_dir=Path(args.manifest),
            vocab_path=Path(args.vocab) if args.vocab else None,
            cache_size=args.cache_size,
            output_resolution=args.resolution,
        )
    )
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def _cmd_aggregate(args) -> int:
    from .trainer import AnnotationRecord, aggregate_annotations

    records = []
    with open(args.records, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                obj = json.loads(line)
                records.append(
                    AnnotationRecord(sample_id=obj["sample_id"], labels=obj["labels"])
                )
    summary = aggregate_annotations(records)
    for label in (2, 1, 0):
        print(f"label {label}: {summary.fractions[label] * 100:.1f}%")
    print(f"label >= 1: {summary.at_least_one * 100:.1f}%")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memeface",
        description="Template-conditioned text-to-meme-face toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-corpus", help="write a synthetic corpus for demos/tests")
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=["pipeline", "overfit"], default="pipeline")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_synth_corpus)

    p = sub.add_parser("curate", help="run the curation pipeline over raw images + TSV")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--k", type=int, default=40)
    p.add_argument("--z-threshold", type=float, default=2.5)
    p.add_argument("--min-cluster-size", type=int, default=3)
    p.add_argument("--ppl-low", type=float, default=2.0)
    p.add_argument("--ppl-high", type=float, default=500.0)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--train-fraction", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_curate)

    p = sub.add_parser("pretrain-damsm", help="pretrain the text-image matcher")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--d-text", type=int, default=64)
    p.add_argument("--d-cond", type=int, default=32)
    p.add_argument("--d-z", type=int, default=16)
    p.add_argument("--d-hidden", type=int, default=32)
    p.add_argument("--base-resolution", type=int, default=16)
    p.add_argument("--stages", type=int, default=3)
    _add_train_flags(p)
    p.set_defaults(fn=_cmd_pretrain_damsm)

    p = sub.add_parser("train", help="adversarial training; writes checkpoints")
    p.add_argument("--manifest", required=True)
    p.add_argument("--damsm", required=True)
    p.add_argument("--checkpoints", required=True)
    p.add_argument("--vocab", default=None)
    p.add_argument("--generator-period", type=int, default=5)
    p.add_argument("--checkpoint-period", type=int, default=5)
    p.add_argument(
        "--update-mode",
        choices=["epoch_period", "per_batch_alternating"],
        default="epoch_period",
    )
    _add_train_flags(p)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("serve", help="serve the checkpoint-replay demo over HTTP")
    p.add_argument("--checkpoints", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--vocab", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--cache-size", type=int, default=4)
    p.add_argument("--resolution", type=int, default=None)
    p.set_defaults(fn=_cmd_serve)

    p = sub.add_parser(
        "aggregate-annotations", help="majority-vote summary of annotation records"
    )
    p.add_argument("--records", required=True, help="JSONL of {sample_id, labels}")
    p.set_defaults(fn=_cmd_aggregate)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
