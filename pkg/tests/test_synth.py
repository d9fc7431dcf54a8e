"""Synthetic scenes, templated text and the corpus build."""

import math
from collections import Counter

import numpy as np
import pytest

from config import DataConfig
from core.errors import CorpusExhaustedError, InvalidInputError
from core.synth import (
    TOPICS,
    SceneObject,
    SceneSpec,
    corpus_builder,
    gen_report,
    gen_scene,
    gen_vqa,
    location_words,
    object_mask,
    octant_center,
    oracle_answer,
    render
)
from core.synth.scene import SIZE_EXTENT
from storage import corpus_store


def _scene(*objects, plane="axial"):
    return SceneSpec(objects=tuple(objects), plane_tag=plane)


SPHERE = SceneObject("sphere", 0, "high", "large")
BOX = SceneObject("box", 7, "low", "small", hyperintense=True)


class TestScenes:
    @pytest.mark.parametrize("seed", range(20))
    def test_generated_scenes_are_well_formed(self, seed):
        scene = gen_scene(seed)
        octants = [obj.octant for obj in scene.objects]
        assert 1 <= len(octants) <= 3
        assert octants == sorted(set(octants))
        assert sum(obj.hyperintense for obj in scene.objects) <= 1

    def test_same_seed_same_scene(self):
        assert gen_scene(11) == gen_scene(11)

    def test_octant_centers(self):
        assert octant_center(0, (12, 64, 64)) == (3, 16, 16)
        assert octant_center(7, (12, 64, 64)) == (9, 48, 48)

    def test_render_is_deterministic_and_bounded(self):
        scene = _scene(SPHERE, BOX)
        a = render(scene, (12, 32, 32), noise_sigma=0.05, seed=4)
        b = render(scene, (12, 32, 32), noise_sigma=0.05, seed=4)
        assert a.dtype == np.float32 and a.shape == (12, 32, 32)
        assert np.array_equal(a, b)
        assert a.min() >= 0.0 and a.max() <= 1.0

    def test_object_intensity_at_its_center(self):
        volume = render(_scene(SPHERE), (12, 64, 64), noise_sigma=0.0)
        assert volume[3, 16, 16] == pytest.approx(0.85, abs=1e-6)
        assert volume[9, 48, 48] == 0.0

    def test_hyperintense_objects_are_brightest(self):
        volume = render(_scene(BOX), (12, 64, 64), noise_sigma=0.0)
        assert volume[9, 48, 48] == pytest.approx(1.0, abs=1e-6)

    def test_blur_follows_the_plane_tag(self):
        axial = render(_scene(SPHERE, plane="axial"), (12, 64, 64), noise_sigma=0.0)
        sagittal = render(_scene(SPHERE, plane="sagittal"), (12, 64, 64), noise_sigma=0.0)
        # one voxel past the sphere surface along depth only gets mass from a depth blur
        assert axial[7, 16, 16] > 0.0
        assert sagittal[7, 16, 16] == 0.0

    @pytest.mark.parametrize("size", ["small", "large"])
    def test_sphere_volume_matches_the_ball(self, size):
        sphere = SceneObject("sphere", 3, "mid", size)
        radius = SIZE_EXTENT[size]
        voxels = int(object_mask(sphere, (12, 64, 64)).sum())
        assert voxels == pytest.approx(4 / 3 * math.pi * radius**3, rel=0.10)

    def test_noise_only_scene_stays_dark(self):
        volume = render(_scene(), (12, 64, 64), noise_sigma=DataConfig().noise_sigma, seed=9)
        assert volume.max() < 0.15

    def test_bad_octant(self):
        with pytest.raises(InvalidInputError):
            octant_center(8, (12, 64, 64))


class TestText:
    def test_report_lists_objects_and_impression(self):
        report = gen_report(_scene(SPHERE, BOX, plane="coronal"))
        assert report == (
            "coronal view. findings: a large bright sphere in the upper anterior left octant; "
            "a small hyperintense box in the lower posterior right octant. "
            "impression: abnormal hyperintense box."
        )

    def test_normal_report(self):
        assert gen_report(_scene(SPHERE)).endswith("impression: no abnormality.")

    def test_location_words(self):
        assert location_words(0) == "upper anterior left"
        assert location_words(5) == "lower anterior right"

    def test_abnormality_question_needs_an_abnormal_scene(self):
        assert gen_vqa(_scene(SPHERE), "abnormality", seed=0) is None
        item = gen_vqa(_scene(SPHERE, BOX), "abnormality", seed=0)
        assert item.answer == "hyperintense box"

    def test_closed_question_lists_four_choices_with_the_answer(self):
        for seed in range(10):
            item = gen_vqa(_scene(SPHERE, BOX), "organ", seed=seed, closed=True)
            assert len(item.choices) == 4 and len(set(item.choices)) == 4
            letter, _, text = item.answer.partition(". ")
            assert item.choices["abcd".index(letter)] == text
            assert f"{letter}. {text}" in item.prompt

    @pytest.mark.parametrize("topic", TOPICS)
    @pytest.mark.parametrize("closed", [False, True])
    def test_oracle_recomputes_every_answer(self, topic, closed):
        scene = _scene(SPHERE, BOX, plane="sagittal")
        item = gen_vqa(scene, topic, seed=3, closed=closed)
        assert oracle_answer(scene, "MVQA", topic, item.target, item.choices) == item.answer

    def test_correct_choice_position_is_uniform(self):
        topics = ("plane", "phase", "organ", "location")
        positions = Counter()
        for seed in range(1000):
            scene = gen_scene(seed)
            item = None
            for topic in topics[seed % 4:] + topics[: seed % 4]:
                item = gen_vqa(scene, topic, seed=seed, closed=True)
                if item is not None:
                    break
            positions[item.answer[0]] += 1

        expected = sum(positions.values()) / 4
        chi2 = sum((positions[letter] - expected) ** 2 / expected for letter in "abcd")
        # 3 degrees of freedom, p = 0.01
        assert chi2 < 11.345, positions

    def test_unknown_topic(self):
        with pytest.raises(InvalidInputError):
            gen_vqa(_scene(SPHERE), "weather", seed=0)


class TestCorpus:
    def test_tasks_alternate_and_ids_are_stable(self, tiny_corpus):
        assert [s.task for s in tiny_corpus.train[:4]] == ["MRG", "MVQA", "MRG", "MVQA"]
        assert tiny_corpus.train[3].id == "train-00003"

    def test_no_test_scene_appears_in_train(self, tiny_corpus):
        train_keys = {s.scene.key() for s in tiny_corpus.train}
        assert not any(s.scene.key() in train_keys for s in tiny_corpus.test)

    def test_answers_match_the_oracle(self, tiny_corpus):
        for sample in tiny_corpus.train + tiny_corpus.test:
            assert oracle_answer(sample.scene, sample.task, sample.topic, sample.target, sample.choices) == sample.answer

    def test_vocabulary_covers_every_text(self, tiny_corpus, tiny_tokenizer):
        for sample in tiny_corpus.train + tiny_corpus.test:
            tiny_tokenizer.encode(sample.prompt)
            tiny_tokenizer.encode(sample.answer)

    def test_build_is_deterministic_across_threads(self, tiny_cfg):
        one = corpus_builder.build_corpus(10, 4, seed=5, cfg=tiny_cfg.data, threads=1)
        many = corpus_builder.build_corpus(10, 4, seed=5, cfg=tiny_cfg.data, threads=3)
        assert [s.to_dict() for s in one.train + one.test] == [s.to_dict() for s in many.train + many.test]

    def test_written_corpus_reads_back(self, corpus_dir, tiny_corpus):
        samples = corpus_store.read_split(corpus_dir, "test")
        assert [s.id for s in samples] == [s.id for s in tiny_corpus.test]
        assert np.array_equal(samples[0].volume, tiny_corpus.test[0].volume)
        assert (corpus_dir / "corpus.json").exists() and (corpus_dir / "vocab.txt").exists()

    def test_unknown_split(self, corpus_dir):
        with pytest.raises(InvalidInputError):
            corpus_store.read_split(corpus_dir, "valid")

    def test_default_corpus_counts(self):
        cfg = DataConfig()
        corpus = corpus_builder.build_corpus(cfg.n_train, cfg.n_test, seed=cfg.seed, cfg=cfg)
        summary = corpus_store.summary(corpus, vocab_size=0)
        assert summary["train"]["count"] == 2000
        assert summary["test"]["count"] == 200
        assert summary["train"]["tasks"] == {"MRG": 1000, "MVQA": 1000}
        assert summary["test"]["tasks"] == {"MRG": 100, "MVQA": 100}

    def test_exhausted_scene_space(self, monkeypatch):
        monkeypatch.setattr("core.synth.corpus.gen_scene", lambda seed, rate: _scene(SPHERE))
        with pytest.raises(CorpusExhaustedError):
            corpus_builder.build_corpus(2, 1, seed=0, cfg=DataConfig(depth=6, size=16))
