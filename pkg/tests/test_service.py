"""Demo HTTP service: endpoints, streaming, reproducibility, error classes."""

import base64
import hashlib
import io
import json

import pytest
import torch
from fastapi.testclient import TestClient
from PIL import Image

from memeface.config import TrainConfig
from memeface.damsm import DamsmBundle, DamsmImageEncoder
from memeface.service import MAX_TEXT_LEN, ServiceConfig, create_app
from memeface.synthetic import make_overfit_corpus, overfit_model_config
from memeface.text_encoder import TextEncoder
from memeface.trainer import train
from memeface.data import load_training_set
from memeface.vocab import Vocabulary


@pytest.fixture(scope="module")
def served(tmp_path_factory):
    """A 2-epoch training run exposed through the app."""
    root = tmp_path_factory.mktemp("corpus")
    manifest = make_overfit_corpus(root, resolution=16)
    vocab = Vocabulary.from_corpus(s.caption for s in manifest.samples)
    model_cfg = overfit_model_config(len(vocab))
    dataset = load_training_set(manifest, model_cfg, vocab=vocab)
    torch.manual_seed(0)
    bundle = DamsmBundle(
        image_encoder=DamsmImageEncoder(model_cfg),
        text_encoder=TextEncoder(model_cfg.vocab_size, model_cfg.d_text),
    ).freeze()
    ckpt_dir = tmp_path_factory.mktemp("ckpts")
    train_cfg = TrainConfig(
        learning_rate=1e-3, batch_size=4, epochs=2,
        generator_update_period_epochs=1, checkpoint_period_epochs=1,
        update_mode="per_batch_alternating", seed=0,
    )
    train(dataset, model_cfg, train_cfg, bundle, checkpoint_dir=ckpt_dir)
    vocab.save(ckpt_dir / "vocab.txt")
    config = ServiceConfig(checkpoint_dir=ckpt_dir, manifest_dir=root)
    app = create_app(config)
    return TestClient(app), ckpt_dir, root, manifest


def _decode_frame(frame, resolution):
    raw = base64.b64decode(frame["image_b64"])
    img = Image.open(io.BytesIO(raw))
    assert img.format == "PNG"
    assert img.size == (resolution, resolution)
    return raw


def test_health_reports_ready(served):
    client, *_ = served
    body = client.get("/health").json()
    assert body == {"status": "ok", "loaded_vocab": True, "n_checkpoints": 2}


def test_checkpoints_listing_ascends_with_digests(served):
    client, ckpt_dir, *_ = served
    listing = client.get("/checkpoints").json()
    assert [c["epoch"] for c in listing] == [1, 2]
    for entry in listing:
        on_disk = hashlib.sha256((ckpt_dir / entry["path"]).read_bytes()).hexdigest()
        assert entry["digest"] == on_disk


def test_templates_listing_carries_thumbnails(served):
    client, _, _, manifest = served
    listing = client.get("/templates").json()
    assert [t["id"] for t in listing] == [c.cluster_id for c in manifest.clusters]
    for t, info in zip(listing, manifest.clusters):
        assert t["member_count"] == info.member_count
        thumb = Image.open(io.BytesIO(base64.b64decode(t["thumbnail_b64"])))
        assert thumb.format == "PNG"
        assert max(thumb.size) <= 64


def test_generate_one_frame_per_checkpoint(served):
    client, *_ = served
    resp = client.post("/generate", json={"text": "red face one", "seed": 7})
    assert resp.status_code == 200
    body = resp.json()
    assert [f["epoch"] for f in body["frames"]] == [1, 2]
    for frame in body["frames"]:
        _decode_frame(frame, body["resolution"])
        assert frame["elapsed_ms"] >= 0
    assert body["log"][0].startswith("seed 7")


def test_generate_fixed_seed_is_bitwise_reproducible(served):
    client, *_ = served
    req = {"text": "red face one", "seed": 1234, "template_id": 0}
    a = client.post("/generate", json=req).json()
    b = client.post("/generate", json=req).json()
    assert [f["image_b64"] for f in a["frames"]] == [f["image_b64"] for f in b["frames"]]
    c = client.post("/generate", json={**req, "seed": 99}).json()
    assert [f["image_b64"] for f in a["frames"]] != [f["image_b64"] for f in c["frames"]]


def test_generate_template_changes_output(served):
    client, *_ = served
    req = {"text": "red face one", "seed": 5}
    a = client.post("/generate", json={**req, "template_id": 0}).json()
    b = client.post("/generate", json={**req, "template_id": 1}).json()
    assert [f["image_b64"] for f in a["frames"]] != [f["image_b64"] for f in b["frames"]]


def test_streaming_matches_single_response(served):
    client, *_ = served
    req = {"text": "blue face two", "seed": 11}
    single = client.post("/generate", json=req).json()
    with client.stream("POST", "/generate?stream=true", json=req) as resp:
        assert resp.status_code == 200
        assert resp.headers["content-type"].startswith("application/x-ndjson")
        lines = [json.loads(line) for line in resp.iter_lines() if line]
    frames = [rec["frame"] for rec in lines if "frame" in rec]
    done = [rec for rec in lines if rec.get("done")]
    assert len(done) == 1
    assert done[0]["resolution"] == single["resolution"]
    assert [f["image_b64"] for f in frames] == [
        f["image_b64"] for f in single["frames"]
    ]


def test_generate_validates_text(served):
    client, *_ = served
    assert client.post("/generate", json={"text": "   "}).status_code == 400
    long = "x " * MAX_TEXT_LEN
    assert client.post("/generate", json={"text": long}).status_code == 400


def test_generate_unknown_template_lists_valid_ids(served):
    client, *_ = served
    resp = client.post("/generate", json={"text": "red face", "template_id": 404})
    assert resp.status_code == 400
    assert "404" in resp.json()["detail"]
    assert "0" in resp.json()["detail"]


def test_generate_symbol_text_degrades_to_unknown_tokens(served):
    # every printable mark tokenizes, so pure-symbol text still renders
    client, *_ = served
    resp = client.post("/generate", json={"text": "@@ ##", "seed": 2})
    assert resp.status_code == 200
    assert len(resp.json()["frames"]) == 2


def test_serving_leaves_checkpoints_untouched(served):
    client, ckpt_dir, *_ = served
    before = {
        p.name: hashlib.sha256(p.read_bytes()).hexdigest()
        for p in ckpt_dir.glob("*.mfgc")
    }
    client.post("/generate", json={"text": "red face one", "seed": 1})
    after = {
        p.name: hashlib.sha256(p.read_bytes()).hexdigest()
        for p in ckpt_dir.glob("*.mfgc")
    }
    assert before == after


def test_small_cache_still_serves_every_checkpoint(served):
    _, ckpt_dir, root, _ = served
    config = ServiceConfig(checkpoint_dir=ckpt_dir, manifest_dir=root, cache_size=1)
    client = TestClient(create_app(config))
    body = client.post("/generate", json={"text": "red face one", "seed": 3}).json()
    assert [f["epoch"] for f in body["frames"]] == [1, 2]


def test_missing_vocab_returns_503(served, tmp_path):
    _, ckpt_dir, root, _ = served
    config = ServiceConfig(
        checkpoint_dir=ckpt_dir, manifest_dir=root, vocab_path=tmp_path / "absent.txt"
    )
    client = TestClient(create_app(config))
    resp = client.post("/generate", json={"text": "red face one"})
    assert resp.status_code == 503
    health = client.get("/health").json()
    assert health["status"] == "degraded"
    assert health["loaded_vocab"] is False


def test_empty_checkpoint_dir_returns_503(served, tmp_path):
    _, ckpt_dir, root, _ = served
    empty = tmp_path / "no_ckpts"
    empty.mkdir()
    vocab_path = ckpt_dir / "vocab.txt"
    config = ServiceConfig(
        checkpoint_dir=empty, manifest_dir=root, vocab_path=vocab_path
    )
    client = TestClient(create_app(config))
    assert client.post("/generate", json={"text": "red face one"}).status_code == 503
    assert client.get("/health").json()["n_checkpoints"] == 0
