"""Synthetic volumes with known object inventories, reports and questions."""

from core.synth.scene import SceneObject, SceneSpec, gen_scene, render, object_mask, octant_center
from core.synth.text import (
    TOPICS,
    VQAItem,
    gen_report,
    gen_vqa,
    location_words,
    oracle_answer,
    vocabulary_texts
)
from core.synth.corpus import Corpus, CorpusBuilder, Sample, corpus_builder, read_volume

__all__ = [
    "SceneObject",
    "SceneSpec",
    "gen_scene",
    "render",
    "object_mask",
    "octant_center",
    "TOPICS",
    "VQAItem",
    "gen_report",
    "gen_vqa",
    "location_words",
    "oracle_answer",
    "vocabulary_texts",
    "Corpus",
    "CorpusBuilder",
    "Sample",
    "corpus_builder",
    "read_volume"
]
