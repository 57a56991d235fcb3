"""HTTP demo: a prompt is rendered through every saved checkpoint in epoch
order, so the client watches the model improve across training.

Endpoints: POST /generate (single JSON or NDJSON stream), GET /checkpoints,
GET /templates, GET /health. All images travel as base64 PNG.
"""

from __future__ import annotations

import hashlib
import json
import secrets
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import StreamingResponse
from pydantic import BaseModel, Field

from .checkpoint import CheckpointError, load_checkpoint
from .config import ModelConfig
from .data import DatasetManifest
from .generator import build_pattern_pyramid
from .imageio import load_image, png_base64, resize_area
from .trainer import TrainedModels, models_from_checkpoint
from .vocab import Vocabulary

MAX_TEXT_LEN = 200


@dataclass
class ServiceConfig:
    checkpoint_dir: Path
    manifest_dir: Path
    vocab_path: Path | None = None     # default: vocab.txt beside the checkpoints
    default_template_id: int | None = None
    cache_size: int = 4
    output_resolution: int | None = None  # None: the model's final resolution

    def __post_init__(self):
        self.checkpoint_dir = Path(self.checkpoint_dir)
        self.manifest_dir = Path(self.manifest_dir)
        if self.vocab_path is None:
            self.vocab_path = self.checkpoint_dir / "vocab.txt"
        else:
            self.vocab_path = Path(self.vocab_path)
        if self.cache_size < 1:
            raise ValueError("cache must hold at least one checkpoint")


class GenerateRequest(BaseModel):
    text: str
    template_id: int | None = None
    seed: int | None = Field(default=None, ge=0)


class _CheckpointCache:
    """LRU over loaded checkpoints, keyed by (path, mtime, size)."""

    def __init__(self, size: int):
        self.size = size
        self._lock = threading.Lock()
        self._entries: OrderedDict[tuple, tuple[TrainedModels, ModelConfig, int]] = (
            OrderedDict()
        )

    def get(self, path: Path) -> tuple[TrainedModels, ModelConfig, int]:
        stat = path.stat()
        key = (str(path), stat.st_mtime_ns, stat.st_size)
        with self._lock:
            if key in self._entries:
                self._entries.move_to_end(key)
                return self._entries[key]
        ckpt = load_checkpoint(path)
        models, model_cfg, _ = models_from_checkpoint(ckpt)
        for module in (
            models.text_encoder, models.augmenter, models.generator, models.discriminators
        ):
            module.eval()
            for p in module.parameters():
                p.requires_grad_(False)
        entry = (models, model_cfg, ckpt.epoch)
        with self._lock:
            self._entries[key] = entry
            self._entries.move_to_end(key)
            while len(self._entries) > self.size:
                self._entries.popitem(last=False)
        return entry


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def create_app(config: ServiceConfig) -> FastAPI:
    app = FastAPI(title="meme-face generation demo")
    cache = _CheckpointCache(config.cache_size)
    manifest = DatasetManifest.load(config.manifest_dir)
    vocab = Vocabulary.load(config.vocab_path) if config.vocab_path.exists() else None
    pyramid_cache: dict[tuple[int, int, int], object] = {}
    pyramid_lock = threading.Lock()

    def checkpoint_paths() -> list[tuple[int, Path]]:
        out = []
        for p in sorted(config.checkpoint_dir.glob("*.mfgc")):
            try:
                out.append((load_checkpoint(p).epoch, p))
            except CheckpointError:
                continue
        out.sort(key=lambda t: (t[0], t[1].name))
        return out

    def pyramid_for(template_id: int, cfg: ModelConfig):
        key = (template_id, cfg.stages, cfg.base_resolution)
        with pyramid_lock:
            if key not in pyramid_cache:
                info = manifest.template_for(template_id)
                pyramid_cache[key] = build_pattern_pyramid(
                    manifest.resolve(info.template_path),
                    cfg.stages,
                    cfg.base_resolution,
                    cluster_id=template_id,
                )
            return pyramid_cache[key]

    @app.get("/health")
    def health() -> dict:
        n = len(checkpoint_paths())
        status = "ok" if (vocab is not None and n > 0) else "degraded"
        return {"status": status, "loaded_vocab": vocab is not None, "n_checkpoints": n}

    @app.get("/checkpoints")
    def list_checkpoints() -> list[dict]:
        return [
            {"epoch": epoch, "path": p.name, "digest": _file_digest(p)}
            for epoch, p in checkpoint_paths()
        ]

    @app.get("/templates")
    def list_templates() -> list[dict]:
        out = []
        for c in sorted(manifest.clusters, key=lambda c: c.cluster_id):
            img = load_image(manifest.resolve(c.template_path))
            side = min(img.shape[-1], 64)
            out.append(
                {
                    "id": c.cluster_id,
                    "member_count": c.member_count,
                    "thumbnail_b64": png_base64(resize_area(img, side)),
                }
            )
        return out

    def _validated(req: GenerateRequest) -> tuple[str, int, int]:
        text = req.text.strip()
        if not text:
            raise HTTPException(status_code=400, detail="text must be nonempty")
        if len(text) > MAX_TEXT_LEN:
            raise HTTPException(
                status_code=400, detail=f"text longer than {MAX_TEXT_LEN} characters"
            )
        valid = manifest.cluster_ids()
        template_id = req.template_id
        if template_id is None:
            template_id = (
                config.default_template_id
                if config.default_template_id is not None
                else valid[0]
            )
        if template_id not in valid:
            raise HTTPException(
                status_code=400,
                detail=f"unknown template_id {template_id}; valid ids: {valid}",
            )
        seed = req.seed if req.seed is not None else secrets.randbits(31)
        return text, template_id, seed

    def _preflight(text: str) -> list[tuple[int, Path]]:
        """All failure modes are raised here, before any bytes stream out."""
        if vocab is None:
            raise HTTPException(status_code=503, detail="vocabulary file missing")
        if vocab.encode(text).length == 0:
            raise HTTPException(
                status_code=400, detail="text contains no recognizable tokens"
            )
        paths = checkpoint_paths()
        if not paths:
            raise HTTPException(status_code=503, detail="no checkpoints available")
        return paths

    def _frames(text: str, template_id: int, seed: int, paths: list):
        """Yields (frame dict, log line) per checkpoint, ascending epochs."""
        noise_cache: dict[tuple, tuple[torch.Tensor, torch.Tensor]] = {}
        start = time.monotonic()
        for epoch, path in paths:
            t0 = time.monotonic()
            models, cfg, _ = cache.get(path)
            caption = vocab.encode(text, max_len=cfg.max_caption_len)
            tokens = torch.tensor([list(caption.tokens)], dtype=torch.int64)
            lengths = torch.tensor([caption.length], dtype=torch.int64)
            # one draw per (request, shape): frames differ only by parameters
            nkey = (cfg.d_cond, cfg.d_z)
            if nkey not in noise_cache:
                gen = torch.Generator().manual_seed(seed)
                ca_noise = torch.randn(1, cfg.d_cond, generator=gen)
                z = torch.rand(1, cfg.d_z, generator=gen) * 2.0 - 1.0
                noise_cache[nkey] = (ca_noise, z)
            ca_noise, z = noise_cache[nkey]
            pyramid = pyramid_for(template_id, cfg)
            with torch.no_grad():
                words, sentence = models.text_encoder(tokens, lengths)
                aug = models.augmenter(sentence, noise=ca_noise)
                outputs = models.generator(
                    aug.c, z, words, pyramid.level_tensors(), lengths
                )
            image = outputs.edited[-1][0].numpy()
            out_res = config.output_resolution or cfg.final_resolution
            if out_res != image.shape[-1]:
                if out_res % image.shape[-1] == 0:
                    f = out_res // image.shape[-1]
                    image = image.repeat(f, axis=1).repeat(f, axis=2)
                else:
                    raise HTTPException(
                        status_code=500,
                        detail=f"cannot upscale {image.shape[-1]} to {out_res}",
                    )
            elapsed_ms = int(round((time.monotonic() - t0) * 1000))
            frame = {
                "epoch": epoch,
                "image_b64": png_base64(image),
                "elapsed_ms": elapsed_ms,
            }
            log_line = (
                f"checkpoint epoch {epoch} ({path.name}, "
                f"digest {_file_digest(path)[:12]}): {elapsed_ms} ms"
            )
            yield frame, log_line, out_res
        total_ms = int(round((time.monotonic() - start) * 1000))
        yield None, f"generated {len(paths)} frames in {total_ms} ms (seed {seed})", None

    @app.post("/generate")
    def generate(req: GenerateRequest, stream: bool = Query(default=False)):
        text, template_id, seed = _validated(req)
        paths = _preflight(text)
        if not stream:
            frames, log, resolution = [], [f"seed {seed}"], None
            for frame, line, res in _frames(text, template_id, seed, paths):
                log.append(line)
                if frame is not None:
                    frames.append(frame)
                    resolution = res
            return {"frames": frames, "log": log, "resolution": resolution}

        def event_stream():
            log = [f"seed {seed}"]
            resolution = None
            for frame, line, res in _frames(text, template_id, seed, paths):
                log.append(line)
                if frame is not None:
                    resolution = res
                    yield json.dumps({"frame": frame}, sort_keys=True) + "\n"
            yield json.dumps(
                {"done": True, "log": log, "resolution": resolution}, sort_keys=True
            ) + "\n"

        return StreamingResponse(event_stream(), media_type="application/x-ndjson")

    return app
