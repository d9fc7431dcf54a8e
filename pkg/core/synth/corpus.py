"""Sample generation and the train/test corpus build."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Set, Tuple

import numpy as np
from loguru import logger

from config.run_config import DataConfig
from core.errors import CorpusExhaustedError, InvalidInputError
from core.synth.scene import SceneSpec, gen_scene, render
from core.synth.text import REPORT_PROMPTS, REPORT_TOPIC, TOPICS, gen_report, gen_vqa
from utils.helpers import derive_seed

SPLIT_CODES = {"train": 0, "test": 1}
MAX_SCENE_ATTEMPTS = 64
MAX_TOPIC_ATTEMPTS = 32


@dataclass
class Sample:
    """One training/eval instance; the volume is rendered or loaded on demand."""

    id: str
    task: str
    topic: str
    prompt: str
    answer: str
    scene: SceneSpec
    noise_seed: int
    shape: Tuple[int, int, int]
    choices: Optional[List[str]] = None
    target: Optional[int] = None
    noise_sigma: float = 0.02
    volume_path: Optional[str] = None
    volume_data: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def closed(self) -> bool:
        return self.choices is not None

    @property
    def volume(self) -> np.ndarray:
        """[D, H, W] float32 intensities, read from disk when a path is known."""
        if self.volume_data is not None:
            return self.volume_data
        if self.volume_path is not None:
            return read_volume(self.volume_path, self.shape)
        return render(self.scene, self.shape, self.noise_sigma, self.noise_seed)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "task": self.task,
            "topic": self.topic,
            "prompt": self.prompt,
            "answer": self.answer,
            "choices": self.choices,
            "target": self.target,
            "scene": self.scene.to_dict(),
            "noise_seed": self.noise_seed,
            "noise_sigma": self.noise_sigma,
            "shape": list(self.shape),
            "volume_path": self.volume_path,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], root: Optional[Path] = None) -> "Sample":
        path = data.get("volume_path")
        if path is not None and root is not None:
            path = str(Path(root) / path)
        return cls(
            id=data["id"],
            task=data["task"],
            topic=data["topic"],
            prompt=data["prompt"],
            answer=data["answer"],
            scene=SceneSpec.from_dict(data["scene"]),
            noise_seed=int(data["noise_seed"]),
            shape=tuple(data["shape"]),  # type: ignore[arg-type]
            choices=data.get("choices"),
            target=data.get("target"),
            noise_sigma=float(data.get("noise_sigma", 0.02)),
            volume_path=path,
        )


def read_volume(path: str, shape: Tuple[int, int, int]) -> np.ndarray:
    """Load a little-endian f32 blob of the given shape."""
    data = np.fromfile(path, dtype="<f4")
    expected = int(np.prod(shape))
    if data.size != expected:
        raise InvalidInputError(f"Volume file {path} holds {data.size} values, expected {expected}")
    return data.reshape(shape).astype(np.float32)


def make_sample(
    split: str,
    index: int,
    scene: SceneSpec,
    seed: int,
    cfg: DataConfig
) -> Sample:
    """Build the text side of a sample; even indices are reports, odd ones questions."""
    rng = np.random.default_rng(derive_seed(seed, SPLIT_CODES[split], index, 1))
    sample_id = f"{split}-{index:05d}"
    shape = (cfg.depth, cfg.size, cfg.size)
    noise_seed = derive_seed(seed, SPLIT_CODES[split], index, 2)
    common = dict(id=sample_id, scene=scene, noise_seed=noise_seed, shape=shape, noise_sigma=cfg.noise_sigma)

    if index % 2 == 0:
        prompt = REPORT_PROMPTS[int(rng.integers(len(REPORT_PROMPTS)))]
        return Sample(task="MRG", topic=REPORT_TOPIC, prompt=prompt, answer=gen_report(scene), **common)

    closed = bool(rng.random() < cfg.closed_fraction)
    for attempt in range(MAX_TOPIC_ATTEMPTS):
        topic = TOPICS[int(rng.integers(len(TOPICS)))]
        item = gen_vqa(scene, topic, derive_seed(seed, SPLIT_CODES[split], index, 3, attempt), closed=closed)
        if item is not None:
            return Sample(
                task="MVQA",
                topic=topic,
                prompt=item.prompt,
                answer=item.answer,
                choices=item.choices,
                target=item.target,
                **common,
            )
        logger.debug(f"{sample_id}: topic '{topic}' does not apply, resampling")
    # Plane questions always apply
    item = gen_vqa(scene, "plane", derive_seed(seed, SPLIT_CODES[split], index, 4), closed=closed)
    return Sample(task="MVQA", topic="plane", prompt=item.prompt, answer=item.answer, choices=item.choices, **common)


@dataclass
class Corpus:
    train: List[Sample]
    test: List[Sample]
    seed: int
    config: DataConfig

    def split(self, name: str) -> List[Sample]:
        if name not in SPLIT_CODES:
            raise InvalidInputError(f"Unknown split '{name}'")
        return getattr(self, name)


class CorpusBuilder:
    """Builds disjoint train/test corpora from seeded scenes."""

    def _scene_for(self, split: str, index: int, seed: int, cfg: DataConfig, banned: Set[Tuple]) -> SceneSpec:
        for attempt in range(MAX_SCENE_ATTEMPTS):
            scene = gen_scene(derive_seed(seed, SPLIT_CODES[split], index, 0, attempt), cfg.abnormal_rate)
            if scene.key() not in banned:
                if attempt:
                    logger.warning(f"{split}-{index:05d}: redrew scene {attempt} times to avoid train overlap")
                return scene
        logger.error(f"No unused scene found for {split}-{index:05d} after {MAX_SCENE_ATTEMPTS} draws")
        raise CorpusExhaustedError(
            f"Could not find a test scene unseen in train for sample {index}; reduce n_test or n_train"
        )

    def _build_split(
        self,
        split: str,
        count: int,
        seed: int,
        cfg: DataConfig,
        banned: Set[Tuple],
        threads: int
    ) -> List[Sample]:
        def one(index: int) -> Sample:
            scene = self._scene_for(split, index, seed, cfg, banned)
            return make_sample(split, index, scene, seed, cfg)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                return list(pool.map(one, range(count)))
        return [one(index) for index in range(count)]

    def build_corpus(
        self,
        n_train: int,
        n_test: int,
        seed: int = 0,
        cfg: Optional[DataConfig] = None,
        threads: int = 1
    ) -> Corpus:
        """Generate both splits; no test scene equals any train scene."""
        cfg = cfg or DataConfig()
        if n_train < 0 or n_test < 0:
            raise InvalidInputError("Sample counts must be non-negative")
        train = self._build_split("train", n_train, seed, cfg, set(), threads)
        train_keys = {sample.scene.key() for sample in train}
        test = self._build_split("test", n_test, seed, cfg, train_keys, threads)
        logger.info(f"Built corpus with {len(train)} train and {len(test)} test samples (seed {seed})")
        return Corpus(train=train, test=test, seed=seed, config=cfg)


# Global builder instance
corpus_builder = CorpusBuilder()
