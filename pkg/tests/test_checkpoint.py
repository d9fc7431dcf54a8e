"""Checkpoint archive format: alignment, checksums, versioning and round trips."""

import json

import pytest
import torch

from core.errors import ChecksumError, FormatVersionError, ManifestError
from core.mllm import Tokenizer
from storage import CheckpointStore, checkpoint_store
from storage.checkpoint import MANIFEST_FILE, TENSORS_FILE


@pytest.fixture
def tensors(generator):
    return {
        "b.weight": torch.randn(3, 5, generator=generator),
        "a.bias": torch.randn(7, generator=generator),
        "c.scalar": torch.tensor(2.5),
    }


def test_round_trip(tmp_path, tensors):
    tokenizer = Tokenizer.from_texts(["small sphere"])
    checkpoint_store.save(tmp_path / "ckpt", tensors, kind="encoder", stage=1, config={"x": 1}, tokenizer=tokenizer)
    loaded = checkpoint_store.load(tmp_path / "ckpt")

    assert loaded.kind == "encoder" and loaded.stage == 1 and loaded.config == {"x": 1}
    assert loaded.tokenizer.words == tokenizer.words
    for name, tensor in tensors.items():
        assert torch.equal(loaded.tensors[name], tensor)


def test_blobs_are_sorted_and_aligned(tmp_path, tensors):
    checkpoint_store.save(tmp_path / "ckpt", tensors, kind="encoder", stage=1, config={})
    manifest = json.loads((tmp_path / "ckpt" / MANIFEST_FILE).read_text())
    entries = manifest["tensors"]
    assert list(entries) == sorted(tensors)
    offsets = [entries[name]["offset"] for name in sorted(tensors)]
    assert offsets == sorted(offsets)
    assert all(offset % 64 == 0 for offset in offsets)
    assert entries["b.weight"]["byte_len"] == 15 * 4


def test_save_load_save_is_byte_identical(tmp_path, tensors):
    state = {"step": 3, "trace": [{"step": 0, "l_reg": 1.5}]}
    checkpoint_store.save(tmp_path / "one", tensors, kind="model", stage=2, config={"k": [1, 2]}, train_state=state)
    loaded = checkpoint_store.load(tmp_path / "one")
    checkpoint_store.save(
        tmp_path / "two", loaded.tensors, kind=loaded.kind, stage=loaded.stage,
        config=loaded.config, train_state=loaded.train_state,
    )
    for name in (MANIFEST_FILE, TENSORS_FILE):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()


def test_corrupted_blob_fails_its_checksum(tmp_path, tensors):
    path = checkpoint_store.save(tmp_path / "ckpt", tensors, kind="encoder", stage=1, config={})
    blob = bytearray((path / TENSORS_FILE).read_bytes())
    blob[0] ^= 0xFF
    (path / TENSORS_FILE).write_bytes(bytes(blob))
    with pytest.raises(ChecksumError) as excinfo:
        checkpoint_store.load(path)
    assert excinfo.value.name == "a.bias"


def test_other_format_version_is_refused(tmp_path, tensors):
    path = CheckpointStore(format_version=2).save(tmp_path / "ckpt", tensors, kind="encoder", stage=1, config={})
    with pytest.raises(FormatVersionError) as excinfo:
        checkpoint_store.load(path)
    assert excinfo.value.found == 2


def test_missing_manifest(tmp_path):
    with pytest.raises(ManifestError):
        checkpoint_store.load(tmp_path)


def test_optimizer_tensors_are_split_off(tmp_path, tensors):
    tensors = dict(tensors, **{"optim.exp_avg.a.bias": torch.zeros(7)})
    path = checkpoint_store.save(tmp_path / "ckpt", tensors, kind="model", stage=1, config={})
    loaded = checkpoint_store.load(path)
    assert "optim.exp_avg.a.bias" not in loaded.model_tensors()
    assert list(loaded.optimizer_tensors()) == ["exp_avg.a.bias"]
