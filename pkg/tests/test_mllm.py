"""Tokenizer, toy LM, LoRA, connector and the assembled multimodal model."""

import pytest
import torch
from torch.autograd import gradcheck

from config import LMConfig
from core.errors import ConfigError, InvalidInputError, TokenizerError
from core.mllm import (
    BOS,
    EOS,
    IMG,
    PAD,
    Connector,
    LoRALinear,
    ToyLM,
    Tokenizer,
    assemble_context,
    autoregressive_loss,
    build_model,
    collate,
    connect,
    generate,
    greedy_decode,
    lora_merge,
    lora_targets,
    lora_wrap,
    sequence_losses,
    total_loss
)
from core.moe import text_indicator


@pytest.fixture
def small_lm():
    return ToyLM(40, LMConfig(n_layers=2, d_model=16, heads=2, max_len=64))


class TestTokenizer:
    def test_specials_come_first_and_words_are_sorted(self):
        tokenizer = Tokenizer.from_texts(["zeta alpha.", "beta"])
        assert tokenizer.words == [".", "alpha", "beta", "zeta"]
        assert len(tokenizer) == 8

    def test_round_trip_keeps_punctuation_attached(self):
        tokenizer = Tokenizer.from_texts(["axial view. findings: a small sphere."])
        text = "axial view. findings: a small sphere."
        assert tokenizer.decode(tokenizer.encode(text)) == text

    def test_decode_skips_special_tokens(self):
        tokenizer = Tokenizer.from_texts(["small sphere"])
        ids = [BOS] + tokenizer.encode("small sphere") + [IMG, PAD, EOS]
        assert tokenizer.decode(ids) == "small sphere"

    def test_unknown_word(self):
        tokenizer = Tokenizer.from_texts(["small sphere"])
        with pytest.raises(TokenizerError) as excinfo:
            tokenizer.encode("large sphere")
        assert excinfo.value.word == "large"

    def test_save_and_load(self, tmp_path):
        tokenizer = Tokenizer.from_texts(["what object is in the octant?"])
        tokenizer.save(tmp_path / "vocab.txt")
        assert Tokenizer.load(tmp_path / "vocab.txt").words == tokenizer.words


class TestToyLM:
    def test_causal_outputs_ignore_later_positions(self, small_lm, generator):
        x = torch.randn(1, 6, 16, generator=generator)
        changed = x.clone()
        changed[0, 4:] = torch.randn(2, 16, generator=generator)
        with torch.no_grad():
            a, b = small_lm(x), small_lm(changed)
        assert torch.allclose(a[0, :4], b[0, :4], atol=1e-6)

    def test_too_long_sequence(self, small_lm):
        with pytest.raises(InvalidInputError):
            small_lm(torch.zeros(1, 65, 16))

    def test_prompt_indicator_is_detached_mean(self, small_lm):
        indicator = text_indicator([5, 6, 7], small_lm, text_layers=1)
        assert indicator.values.shape == (16,)
        assert not indicator.values.requires_grad

    def test_text_layers_cannot_exceed_depth(self, small_lm):
        with pytest.raises(ConfigError):
            text_indicator([5], small_lm, text_layers=3)


class TestLoRA:
    def test_fresh_adapter_leaves_the_output_unchanged(self, generator):
        base = torch.nn.Linear(6, 4)
        wrapped = LoRALinear(base, r=2)
        x = torch.randn(3, 6, generator=generator)
        assert torch.equal(wrapped(x), base(x))
        assert not base.weight.requires_grad

    def test_merge_folds_the_delta(self, generator):
        wrapped = LoRALinear(torch.nn.Linear(6, 4), r=2, scale=0.5)
        with torch.no_grad():
            wrapped.lora_B.normal_(generator=generator)
        x = torch.randn(3, 6, generator=generator)
        assert torch.allclose(wrapped.merged()(x), wrapped(x), atol=1e-5)

    def test_wrap_freezes_all_but_adapters(self, small_lm):
        lora_wrap(small_lm, ["blocks.*.attn.q_proj", "blocks.*.attn.v_proj"], r=2)
        trainable = sorted(n for n, p in small_lm.named_parameters() if p.requires_grad)
        assert trainable == [
            f"blocks.{i}.attn.{proj}.lora_{ab}" for i in range(2) for proj in ("q_proj", "v_proj") for ab in "AB"
        ]

    def test_merge_removes_adapters(self, small_lm):
        lora_wrap(small_lm, ["blocks.0.attn.q_proj"], r=2)
        lora_merge(small_lm)
        assert not any(isinstance(m, LoRALinear) for m in small_lm.modules())

    def test_unmatched_target(self, small_lm):
        with pytest.raises(ConfigError):
            lora_targets(small_lm, ["blocks.*.attn.nowhere"])


class TestConnector:
    def test_width_mismatch(self):
        with pytest.raises(ConfigError):
            connect(torch.zeros(4, 8), Connector(16, 32))

    def test_gradient(self, generator):
        connector = Connector(4, 6).double()
        x = torch.randn(3, 4, generator=generator, dtype=torch.float64, requires_grad=True)
        assert gradcheck(connector, (x,), eps=1e-6, atol=1e-6, rtol=1e-4)


class TestContext:
    def test_layout_and_loss_mask(self, small_lm):
        ctx = assemble_context([5, 6], torch.zeros(3, 16), [7, 8, 9], small_lm)
        assert len(ctx) == 1 + 2 + 1 + 3 + 3 + 1
        assert ctx.token_ids.tolist() == [BOS, 5, 6, IMG, PAD, PAD, PAD, 7, 8, 9, EOS]
        assert ctx.loss_mask.tolist() == [False] * 7 + [True] * 4
        assert ctx.image_span == (4, 7)

    def test_generation_mode_has_no_targets(self, small_lm):
        ctx = assemble_context([5], torch.zeros(2, 16), None, small_lm)
        assert ctx.token_ids.tolist() == [BOS, 5, IMG, PAD, PAD]
        assert not bool(ctx.loss_mask.any())

    def test_empty_loss_mask(self):
        logits = torch.zeros(1, 4, 10)
        with pytest.raises(InvalidInputError):
            sequence_losses(logits, torch.zeros(1, 4, dtype=torch.long), torch.zeros(1, 4, dtype=torch.bool))

    def test_uniform_logits_give_log_vocab(self):
        logits = torch.zeros(2, 5, 10)
        mask = torch.tensor([[False, False, True, True, True], [False, True, True, False, False]])
        mean, per_sample = sequence_losses(logits, torch.ones(2, 5, dtype=torch.long), mask)
        assert float(mean) == pytest.approx(torch.log(torch.tensor(10.0)).item())
        assert per_sample.shape == (2,)

    def test_autoregressive_loss_gradient_on_image_tokens(self, small_lm, generator):
        lm = small_lm.double()
        image = torch.randn(2, 16, generator=generator, dtype=torch.float64, requires_grad=True)

        def loss(tokens):
            return autoregressive_loss(assemble_context([5, 6], tokens, [7, 8], lm), lm)

        assert gradcheck(loss, (image,), eps=1e-6, atol=1e-6, rtol=1e-4)

    def test_total_loss(self):
        assert total_loss(2.0, 0.5, 0.1) == pytest.approx(2.05)
        with pytest.raises(ConfigError):
            total_loss(2.0, 0.5, -0.1)


class TestMultimodalModel:
    def test_stage1_forward_has_no_router_loss(self, tiny_cfg, tiny_tokenizer, tiny_corpus):
        model, report = build_model(tiny_cfg, tiny_tokenizer, seed=0)
        assert report is not None and report.counts()["added"] == tiny_cfg.encoder.n_moe
        output = model(collate(tiny_corpus.train[:3], tiny_tokenizer))
        assert torch.isfinite(output.l_reg)
        assert output.l_r is None and output.router_acc is None
        assert output.sample_losses.shape == (3,)

    def test_stage2_forward_reports_router_loss(self, tiny_cfg, tiny_tokenizer, tiny_corpus):
        model, _ = build_model(tiny_cfg, tiny_tokenizer, seed=0)
        model.to_stage2()
        output = model(collate(tiny_corpus.train[:4], tiny_tokenizer))
        assert output.l_r is not None and torch.isfinite(output.l_r)
        assert 0.0 <= output.router_acc <= 1.0

    def test_stage2_replication_preserves_the_loss(self, tiny_cfg, tiny_tokenizer, tiny_corpus):
        model, _ = build_model(tiny_cfg, tiny_tokenizer, seed=0)
        model.eval()
        batch = collate(tiny_corpus.train[:4], tiny_tokenizer)
        with torch.no_grad():
            before = float(model(batch).l_reg)
            model.to_stage2()
            after = float(model(batch).l_reg)
        assert after == pytest.approx(before, abs=1e-6)

    def test_router_loss_leaves_the_language_model_untouched(self, tiny_cfg, tiny_tokenizer, tiny_corpus):
        model, _ = build_model(tiny_cfg, tiny_tokenizer, seed=0)
        model.to_stage2()
        for param in model.parameters():
            param.requires_grad_(True)
        model(collate(tiny_corpus.train[:4], tiny_tokenizer)).l_r.backward()
        for name, param in model.lm.named_parameters():
            assert param.grad is None or float(param.grad.abs().sum()) == 0.0, name
        assert all(p.grad is not None for p in model.encoder.task_router_parameters())

    def test_stage2_needs_moe_layers(self, tiny_cfg, tiny_tokenizer):
        cfg = tiny_cfg.model_copy(update={"encoder": tiny_cfg.encoder.model_copy(update={"n_moe": 0})})
        model, _ = build_model(cfg, tiny_tokenizer, seed=0)
        with pytest.raises(ConfigError):
            model.to_stage2()

    def test_greedy_decode_respects_budget_and_banned_tokens(self, tiny_cfg, tiny_tokenizer, tiny_corpus):
        model, _ = build_model(tiny_cfg, tiny_tokenizer, seed=0)
        model.eval()
        sample = tiny_corpus.test[0]
        batch = collate([sample], tiny_tokenizer, with_answers=False)
        with torch.no_grad():
            image_tokens, _ = model.encode_images(batch.volumes, batch.prompts)
        ids = greedy_decode(model, batch.prompts[0], image_tokens[0], max_new_tokens=5)
        assert len(ids) <= 5
        assert not {PAD, IMG, BOS, EOS} & set(ids)

    def test_generate_is_deterministic(self, tiny_cfg, tiny_tokenizer, tiny_corpus):
        model, _ = build_model(tiny_cfg, tiny_tokenizer, seed=0)
        sample = tiny_corpus.test[1]
        volume = torch.as_tensor(sample.volume)
        first = generate(sample.prompt, volume, model, max_new_tokens=6)
        assert isinstance(first, str)
        assert generate(sample.prompt, volume, model, max_new_tokens=6) == first
