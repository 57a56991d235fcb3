"""Checkpoint container: round trips, corruption detection, listing."""

import hashlib

import numpy as np
import pytest
import torch
from torch import nn

from memeface.checkpoint import (
    Checkpoint,
    CheckpointError,
    group_digest,
    list_checkpoints,
    load_checkpoint,
    load_group_into,
    save_checkpoint,
    state_dict_to_group,
)


def _sample_checkpoint(epoch=3):
    rng = np.random.default_rng(0)
    return Checkpoint(
        epoch=epoch,
        config={"model": {"d": 4}, "train": {"lr": 1e-3}},
        groups={
            "generator": {
                "w": rng.normal(size=(3, 2)).astype(np.float32),
                "b": rng.normal(size=(3,)).astype(np.float32),
            },
            "augmenter": {"fc": rng.normal(size=(4, 4)).astype(np.float32)},
        },
    )


def test_round_trip_preserves_everything(tmp_path):
    path = tmp_path / "ck.mfgc"
    ckpt = _sample_checkpoint()
    save_checkpoint(path, ckpt)
    loaded = load_checkpoint(path)
    assert loaded.epoch == ckpt.epoch
    assert loaded.config == ckpt.config
    assert set(loaded.groups) == set(ckpt.groups)
    for g in ckpt.groups:
        for k in ckpt.groups[g]:
            np.testing.assert_array_equal(loaded.groups[g][k], ckpt.groups[g][k])


def test_save_is_byte_deterministic(tmp_path):
    a, b = tmp_path / "a.mfgc", tmp_path / "b.mfgc"
    save_checkpoint(a, _sample_checkpoint())
    save_checkpoint(b, _sample_checkpoint())
    assert a.read_bytes() == b.read_bytes()


def test_truncation_reports_byte_offset(tmp_path):
    path = tmp_path / "ck.mfgc"
    save_checkpoint(path, _sample_checkpoint())
    blob = path.read_bytes()
    # files shorter than the fixed trailer cannot even be sliced
    tiny = tmp_path / "tiny.mfgc"
    tiny.write_bytes(blob[:2])
    with pytest.raises(CheckpointError, match="too short"):
        load_checkpoint(tiny)
    # anything longer reports where the structure ran out of bytes
    for cut in (40, len(blob) // 2, len(blob) - 1):
        clipped = tmp_path / f"cut{cut}.mfgc"
        clipped.write_bytes(blob[:cut])
        with pytest.raises(CheckpointError) as err:
            load_checkpoint(clipped)
        message = str(err.value)
        assert "offset" in message or "trailing" in message
        assert any(ch.isdigit() for ch in message)


def test_flipped_byte_fails_checksum(tmp_path):
    path = tmp_path / "ck.mfgc"
    save_checkpoint(path, _sample_checkpoint())
    blob = bytearray(path.read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    bad = tmp_path / "bad.mfgc"
    bad.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)


def test_wrong_magic_rejected(tmp_path):
    path = tmp_path / "ck.mfgc"
    save_checkpoint(path, _sample_checkpoint())
    blob = bytearray(path.read_bytes())
    blob[0:4] = b"XXXX"
    bad = tmp_path / "bad_magic.mfgc"
    bad.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)


def test_trailing_garbage_rejected(tmp_path):
    path = tmp_path / "ck.mfgc"
    save_checkpoint(path, _sample_checkpoint())
    bloated = tmp_path / "bloat.mfgc"
    bloated.write_bytes(path.read_bytes() + b"junk")
    with pytest.raises(CheckpointError):
        load_checkpoint(bloated)


def test_group_digest_order_independent():
    g1 = {"a": np.ones((2, 2), dtype=np.float32), "b": np.zeros(3, dtype=np.float32)}
    g2 = dict(reversed(list(g1.items())))
    assert group_digest(g1) == group_digest(g2)
    g3 = {"a": np.ones((2, 2), dtype=np.float32), "b": np.ones(3, dtype=np.float32)}
    assert group_digest(g3) != group_digest(g1)


def test_module_group_round_trip():
    src = nn.Linear(3, 2)
    dst = nn.Linear(3, 2)
    load_group_into(dst, state_dict_to_group(src))
    for a, b in zip(src.state_dict().values(), dst.state_dict().values()):
        assert torch.equal(a, b)


def test_list_checkpoints_sorted_by_epoch(tmp_path):
    for epoch, name in ((7, "late.mfgc"), (2, "early.mfgc"), (7, "alate.mfgc")):
        save_checkpoint(tmp_path / name, _sample_checkpoint(epoch=epoch))
    (tmp_path / "notes.txt").write_text("ignored")
    found = list_checkpoints(tmp_path)
    assert [p.name for p in found] == ["early.mfgc", "alate.mfgc", "late.mfgc"]
    assert [load_checkpoint(p).epoch for p in found] == [2, 7, 7]


def test_atomic_write_leaves_no_temp_files(tmp_path):
    save_checkpoint(tmp_path / "ck.mfgc", _sample_checkpoint())
    leftovers = [p.name for p in tmp_path.iterdir() if p.suffix != ".mfgc"]
    assert leftovers == []
