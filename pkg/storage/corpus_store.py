"""On-disk layout of a synthetic corpus.

    <root>/train.jsonl, test.jsonl   one sample per line, sorted keys
    <root>/volumes/<id>.f32          little-endian f32 [D, H, W]
    <root>/vocab.txt                 tokenizer vocabulary
    <root>/corpus.json               counts and generation settings
"""

import json
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np
from loguru import logger

from core.errors import InvalidInputError
from core.mllm.tokenizer import Tokenizer
from core.synth.corpus import SPLIT_CODES, Corpus, Sample
from core.synth.text import vocabulary_texts
from utils.helpers import stable_json_dumps

VOLUME_DIR = "volumes"
VOCAB_FILE = "vocab.txt"
SUMMARY_FILE = "corpus.json"


def corpus_tokenizer(corpus: Corpus) -> Tokenizer:
    """Vocabulary closed over every template plus the corpus texts."""
    texts = list(vocabulary_texts())
    for split in SPLIT_CODES:
        for sample in corpus.split(split):
            texts.extend([sample.prompt, sample.answer])
    return Tokenizer.from_texts(texts)


class CorpusStore:
    """Writes and reads corpora on disk."""

    def _write_volume(self, root: Path, sample: Sample) -> str:
        relative = f"{VOLUME_DIR}/{sample.id}.f32"
        volume = sample.volume
        np.ascontiguousarray(volume, dtype="<f4").tofile(root / relative)
        return relative

    def write(self, corpus: Corpus, root: Union[str, Path], threads: int = 1) -> Tokenizer:
        """Render every volume and write manifests, vocabulary and summary."""
        root = Path(root)
        (root / VOLUME_DIR).mkdir(parents=True, exist_ok=True)
        tokenizer = corpus_tokenizer(corpus)

        for split in SPLIT_CODES:
            samples = corpus.split(split)
            with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
                paths = list(pool.map(lambda s: self._write_volume(root, s), samples))
            lines = []
            for sample, relative in zip(samples, paths):
                record = sample.to_dict()
                record["volume_path"] = relative
                lines.append(stable_json_dumps(record, indent=None))
            (root / f"{split}.jsonl").write_text("".join(line + "\n" for line in lines), encoding="utf-8")
            logger.info(f"Wrote {len(samples)} {split} samples to {root}")

        tokenizer.save(root / VOCAB_FILE)
        (root / SUMMARY_FILE).write_text(
            stable_json_dumps(self.summary(corpus, len(tokenizer))) + "\n",
            encoding="utf-8",
        )
        return tokenizer

    def summary(self, corpus: Corpus, vocab_size: int) -> Dict[str, Any]:
        out: Dict[str, Any] = {"seed": corpus.seed, "config": corpus.config.model_dump(mode="json"), "vocab_size": vocab_size}
        for split in SPLIT_CODES:
            samples = corpus.split(split)
            out[split] = {
                "count": len(samples),
                "tasks": dict(sorted(Counter(s.task for s in samples).items())),
                "topics": dict(sorted(Counter(s.topic for s in samples).items())),
                "closed": sum(1 for s in samples if s.closed),
            }
        return out

    def read_split(self, root: Union[str, Path], split: str) -> List[Sample]:
        root = Path(root)
        path = root / f"{split}.jsonl"
        if split not in SPLIT_CODES:
            raise InvalidInputError(f"Unknown split '{split}'")
        if not path.exists():
            raise FileNotFoundError(f"No {split} manifest at {path}")
        samples = []
        with path.open("r", encoding="utf-8") as handle:
            for line in handle:
                if line.strip():
                    samples.append(Sample.from_dict(json.loads(line), root=root))
        logger.debug(f"Read {len(samples)} {split} samples from {root}")
        return samples

    def read_tokenizer(self, root: Union[str, Path]) -> Tokenizer:
        path = Path(root) / VOCAB_FILE
        if not path.exists():
            raise FileNotFoundError(f"No vocabulary at {path}")
        return Tokenizer.load(path)


# Global corpus store instance
corpus_store = CorpusStore()
