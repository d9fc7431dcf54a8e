"""Shared fixtures: configs, seeded generators and a tiny on-disk corpus."""

import json

import pytest
import torch

from config import RunConfig, desk_config, parse_run_config, settings
from core.synth import corpus_builder
from storage import corpus_store, corpus_tokenizer
from utils import seed_everything

CONFIGS_DIR = settings.BASE_DIR / "configs"

TINY = {
    "encoder": {
        "layers_total": 3,
        "n_2d": 1,
        "n_3d": 2,
        "n_moe": 1,
        "patch": 8,
        "embed_dim": 16,
        "heads": 2,
        "mlp_ratio": 2,
        "image_size": 16,
        "merge_schedule": [1],
        "depth_pool_kernel": 2,
    },
    "lm": {"n_layers": 2, "d_model": 16, "heads": 2, "mlp_ratio": 2, "max_len": 160, "lora_rank": 2},
    "moe": {"n_experts": 3, "top_k": 2, "text_layers": 2},
    "stage1": {"lr": 0.003, "total_steps": 4, "batch_size": 4, "save_interval": 2, "log_interval": 2},
    "stage2": {"lr": 0.003, "total_steps": 4, "batch_size": 4, "save_interval": 2, "log_interval": 2, "seed": 1},
    "data": {"n_train": 24, "n_test": 8, "depth": 6, "size": 16},
    "eval": {"max_new_tokens": 8},
}


@pytest.fixture(autouse=True)
def _deterministic():
    seed_everything(0, threads=1)
    yield


@pytest.fixture
def desk_cfg() -> RunConfig:
    return desk_config()


@pytest.fixture
def tiny_cfg() -> RunConfig:
    return parse_run_config(TINY)


@pytest.fixture
def tiny_2d_cfg(tiny_cfg):
    """Tiny encoder without MoE layers, used by the 2D reference checks."""
    return tiny_cfg.encoder.model_copy(update={"n_moe": 0})


@pytest.fixture
def generator() -> torch.Generator:
    return torch.Generator().manual_seed(1234)


@pytest.fixture(scope="session")
def tiny_corpus():
    cfg = parse_run_config(TINY)
    return corpus_builder.build_corpus(cfg.data.n_train, cfg.data.n_test, seed=0, cfg=cfg.data)


@pytest.fixture(scope="session")
def tiny_tokenizer(tiny_corpus):
    return corpus_tokenizer(tiny_corpus)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory, tiny_corpus):
    root = tmp_path_factory.mktemp("corpus")
    corpus_store.write(tiny_corpus, root)
    return root


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY), encoding="utf-8")
    return path


@pytest.fixture
def configs_dir():
    return CONFIGS_DIR
