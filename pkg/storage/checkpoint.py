"""Checkpoint archives: manifest.json + tensors.bin (+ vocab.txt)."""

import base64
import json
import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import numpy as np
import torch
from loguru import logger

from config import settings
from core.errors import ChecksumError, FormatVersionError, ManifestError
from core.mllm.tokenizer import Tokenizer
from utils.helpers import stable_json_dumps

MANIFEST_FILE = "manifest.json"
TENSORS_FILE = "tensors.bin"
VOCAB_FILE = "vocab.txt"
ALIGNMENT = 64
OPTIM_PREFIX = "optim."


@dataclass
class Checkpoint:
    """Raw archive contents."""

    tensors: Dict[str, torch.Tensor]
    kind: str
    stage: int
    config: Dict[str, Any]
    train_state: Optional[Dict[str, Any]] = None
    tokenizer: Optional[Tokenizer] = None
    path: Optional[Path] = field(default=None, compare=False)

    def model_tensors(self) -> Dict[str, torch.Tensor]:
        return {k: v for k, v in self.tensors.items() if not k.startswith(OPTIM_PREFIX)}

    def optimizer_tensors(self) -> Dict[str, torch.Tensor]:
        return {k[len(OPTIM_PREFIX):]: v for k, v in self.tensors.items() if k.startswith(OPTIM_PREFIX)}


def encode_bytes(raw: bytes) -> str:
    return base64.b64encode(raw).decode("ascii")


def decode_bytes(text: str) -> bytes:
    return base64.b64decode(text.encode("ascii"))


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(f"{path.name}.tmp.{os.getpid()}")
    with open(tmp, "wb") as handle:
        handle.write(data)
        handle.flush()
    os.replace(tmp, path)


class CheckpointStore:
    """Reads and writes versioned, checksummed tensor archives."""

    def __init__(self, format_version: Optional[int] = None):
        self.format_version = format_version or settings.CHECKPOINT_FORMAT_VERSION

    def save(
        self,
        path: Union[str, Path],
        tensors: Mapping[str, torch.Tensor],
        kind: str,
        stage: int,
        config: Mapping[str, Any],
        train_state: Optional[Mapping[str, Any]] = None,
        tokenizer: Optional[Tokenizer] = None
    ) -> Path:
        """Write an archive directory; tensors are stored as little-endian f32 at 64-byte offsets."""
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)

        blob = bytearray()
        entries: Dict[str, Dict[str, Any]] = {}
        for name in sorted(tensors):
            tensor = tensors[name].detach().to("cpu", torch.float32).contiguous()
            raw = np.ascontiguousarray(tensor.numpy(), dtype="<f4").tobytes()
            blob.extend(b"\0" * (-len(blob) % ALIGNMENT))
            entries[name] = {
                "shape": list(tensor.shape),
                "dtype": "f32",
                "offset": len(blob),
                "byte_len": len(raw),
                "crc32": zlib.crc32(raw),
            }
            blob.extend(raw)

        manifest = {
            "format_version": self.format_version,
            "kind": kind,
            "stage": stage,
            "config": dict(config),
            "tensors": entries,
            "train_state": dict(train_state) if train_state is not None else None,
        }
        _atomic_write(path / TENSORS_FILE, bytes(blob))
        _atomic_write(path / MANIFEST_FILE, (stable_json_dumps(manifest) + "\n").encode("utf-8"))
        if tokenizer is not None:
            tokenizer.save(path / VOCAB_FILE)

        logger.info(f"Saved {kind} checkpoint with {len(entries)} tensors to {path}")
        return path

    def read_manifest(self, path: Union[str, Path]) -> Dict[str, Any]:
        manifest_path = Path(path) / MANIFEST_FILE
        if not manifest_path.exists():
            raise ManifestError(f"No {MANIFEST_FILE} in {path}")
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ManifestError(f"{manifest_path} is not valid JSON: {e}") from e
        found = manifest.get("format_version")
        if found != self.format_version:
            logger.error(f"Checkpoint {path} has format version {found}, expected {self.format_version}")
            raise FormatVersionError(found, self.format_version)
        return manifest

    def load(self, path: Union[str, Path]) -> Checkpoint:
        """Read and verify an archive directory."""
        path = Path(path)
        manifest = self.read_manifest(path)
        blob = (path / TENSORS_FILE).read_bytes()

        tensors: Dict[str, torch.Tensor] = {}
        for name in sorted(manifest["tensors"]):
            entry = manifest["tensors"][name]
            start, length = int(entry["offset"]), int(entry["byte_len"])
            raw = blob[start:start + length]
            if len(raw) != length:
                raise ManifestError(f"Tensor '{name}' runs past the end of {TENSORS_FILE}")
            crc = zlib.crc32(raw)
            if crc != int(entry["crc32"]):
                logger.error(f"Checksum mismatch for tensor '{name}' in {path}")
                raise ChecksumError(name, int(entry["crc32"]), crc)
            array = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"]).astype(np.float32)
            tensors[name] = torch.from_numpy(array)

        tokenizer = Tokenizer.load(path / VOCAB_FILE) if (path / VOCAB_FILE).exists() else None
        logger.debug(f"Loaded {len(tensors)} tensors from {path}")
        return Checkpoint(
            tensors=tensors,
            kind=manifest["kind"],
            stage=int(manifest["stage"]),
            config=manifest["config"],
            train_state=manifest.get("train_state"),
            tokenizer=tokenizer,
            path=path,
        )


# Global checkpoint store instance
checkpoint_store = CheckpointStore()
