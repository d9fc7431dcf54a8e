"""Storage package: checkpoint archives and the synthetic corpus layout."""

from storage.checkpoint import Checkpoint, CheckpointStore, checkpoint_store, encode_bytes, decode_bytes
from storage.corpus_store import CorpusStore, corpus_store, corpus_tokenizer

__all__ = [
    "Checkpoint",
    "CheckpointStore",
    "checkpoint_store",
    "encode_bytes",
    "decode_bytes",
    "CorpusStore",
    "corpus_store",
    "corpus_tokenizer"
]
