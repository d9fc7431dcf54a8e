"""Two-stage training: schedules, freezing, determinism and resume."""

import pandas as pd
import pytest
import torch

from config import load_run_config
from core.errors import ConfigError, TrainingAbortedError
from core.mllm import build_model
from core.services import load_checkpoint, training_service
from core.services.training_service import cosine_factor
from utils import seed_everything


def _model(cfg, tokenizer, seed=0):
    seed_everything(seed)
    model, _ = build_model(cfg, tokenizer, seed=seed)
    return model


def _snapshot(module):
    return {name: tensor.detach().clone() for name, tensor in module.state_dict().items()}


def test_cosine_schedule():
    assert cosine_factor(0, 100) == 1.0
    assert cosine_factor(50, 100) == pytest.approx(0.5)
    assert cosine_factor(100, 100) == pytest.approx(0.0)
    values = [cosine_factor(step, 10) for step in range(11)]
    assert values == sorted(values, reverse=True)


def test_stage1_trains_adapters_but_not_the_base_lm(tiny_cfg, tiny_tokenizer, tiny_corpus):
    model = _model(tiny_cfg, tiny_tokenizer)
    before = _snapshot(model.lm)
    _, state = training_service.run_stage1(tiny_corpus.train, model, tiny_cfg)

    assert state.step == tiny_cfg.stage1.total_steps
    after = model.lm.state_dict()
    changed = {name for name in before if not torch.equal(before[name], after[name])}
    assert changed and all(".lora_" in name for name in changed)


def test_stage2_leaves_the_language_model_bit_identical(tiny_cfg, tiny_tokenizer, tiny_corpus):
    model = _model(tiny_cfg, tiny_tokenizer)
    training_service.run_stage1(tiny_corpus.train, model, tiny_cfg)
    before = _snapshot(model.lm)
    _, state = training_service.run_stage2(tiny_corpus.train, model, tiny_cfg)

    assert model.stage == 2
    for name, tensor in model.lm.state_dict().items():
        assert torch.equal(tensor, before[name]), name
    trace = state.trace_frame()
    assert trace["router_acc"].notna().all()
    assert (trace["l_total"] >= trace["l_reg"]).all()


def test_frozen_encoder_variant_only_trains_router_and_connector(tiny_cfg, tiny_tokenizer):
    model = _model(tiny_cfg, tiny_tokenizer)
    model.to_stage2()
    names = model.configure_trainable(tiny_cfg.stage2.model_copy(update={"encoder_trainable": False}))
    assert all(name.startswith("connector.") or name.endswith("task_router_weight") for name in names)


def test_runs_are_deterministic(tiny_cfg, tiny_tokenizer, tiny_corpus):
    results = []
    for _ in range(2):
        model = _model(tiny_cfg, tiny_tokenizer)
        _, state = training_service.run_stage1(tiny_corpus.train, model, tiny_cfg)
        results.append((_snapshot(model), state.trace))
    (weights_a, trace_a), (weights_b, trace_b) = results
    assert trace_a == trace_b
    for name in weights_a:
        assert torch.equal(weights_a[name], weights_b[name]), name


def test_resume_matches_an_uninterrupted_run(tmp_path, tiny_cfg, tiny_tokenizer, tiny_corpus):
    full = _model(tiny_cfg, tiny_tokenizer)
    _, full_state = training_service.run_stage1(tiny_corpus.train, full, tiny_cfg, tmp_path / "full")

    resumed, state = training_service.resume(tiny_corpus.train, tmp_path / "full" / "step_000002", tmp_path / "resumed")

    assert state.step == full_state.step
    assert state.trace == full_state.trace
    expected = full.state_dict()
    for name, tensor in resumed.state_dict().items():
        assert torch.equal(tensor, expected[name]), name


def test_run_directory_layout(tmp_path, tiny_cfg, tiny_tokenizer, tiny_corpus):
    model = _model(tiny_cfg, tiny_tokenizer)
    training_service.run_stage1(tiny_corpus.train, model, tiny_cfg, tmp_path)

    assert (tmp_path / "step_000002" / "manifest.json").exists()
    assert (tmp_path / "final" / "tensors.bin").exists()
    trace = pd.read_csv(tmp_path / "loss_trace.csv")
    assert list(trace["step"]) == list(range(tiny_cfg.stage1.total_steps))

    reloaded, state = load_checkpoint(tmp_path / "final")
    assert state.step == tiny_cfg.stage1.total_steps
    for name, tensor in model.state_dict().items():
        assert torch.equal(reloaded.state_dict()[name], tensor), name


def test_non_finite_loss_aborts_with_the_step(tiny_cfg, tiny_tokenizer, tiny_corpus):
    model = _model(tiny_cfg, tiny_tokenizer)
    with torch.no_grad():
        model.connector.fc1.weight.fill_(float("nan"))
    with pytest.raises(TrainingAbortedError) as excinfo:
        training_service.run_stage1(tiny_corpus.train, model, tiny_cfg)
    assert excinfo.value.step == 0


def test_stage1_refuses_a_task_routed_model(tiny_cfg, tiny_tokenizer, tiny_corpus):
    model = _model(tiny_cfg, tiny_tokenizer)
    model.to_stage2()
    with pytest.raises(ConfigError):
        training_service.run_stage1(tiny_corpus.train, model, tiny_cfg)


@pytest.mark.slow
def test_desk_two_stage_run(tmp_path, configs_dir):
    from core.services import evaluation_service
    from core.synth import corpus_builder
    from storage import corpus_tokenizer

    cfg = load_run_config(configs_dir / "desk.json")
    corpus = corpus_builder.build_corpus(cfg.data.n_train, cfg.data.n_test, cfg.data.seed, cfg.data)
    tokenizer = corpus_tokenizer(corpus)
    model = _model(cfg, tokenizer)

    _, stage1 = training_service.run_stage1(corpus.train, model, cfg, tmp_path / "stage1")
    _, stage2 = training_service.run_stage2(corpus.train, model, cfg, tmp_path / "stage2")

    trace1, trace2 = stage1.trace_frame(), stage2.trace_frame()
    assert trace1["l_reg"].tail(20).mean() < trace1["l_reg"].head(20).mean()
    perfect = trace2.loc[trace2["router_acc"] == 1.0, "step"]
    assert not perfect.empty and perfect.iloc[0] < 200
    assert trace2["l_reg"].tail(25).mean() <= trace1["l_reg"].tail(25).mean() + 0.05

    report, _ = evaluation_service.evaluate(model, corpus.test, "test", cfg.eval)
    assert report.router_accuracy == 1.0
    assert report.closed_vqa.count > 0
    assert report.closed_vqa.accuracy >= 0.90
