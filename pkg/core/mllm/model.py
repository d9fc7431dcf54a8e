"""Vision encoder + connector + toy LM assembled into one multimodal model."""

from dataclasses import dataclass
from typing import List, Mapping, Optional, Sequence, Tuple, Union

import torch
import torch.nn as nn
import torch.nn.functional as F
from loguru import logger

from config.run_config import RunConfig, StageConfig
from core.errors import ConfigError, InvalidInputError
from core.moe import TaskType, router_loss
from core.mllm.connector import Connector, connect
from core.mllm.lora import lora_parameters, lora_wrap
from core.mllm.tokenizer import BOS, EOS, IMG, PAD, Tokenizer
from core.mllm.toy_lm import ToyLM
from core.vision import (
    EncoderOutput,
    SurgeryReport,
    VisionEncoder3D,
    VolumeTensor,
    adapt_checkpoint,
    build_encoder,
    init_source_weights
)


@dataclass
class MultimodalContext:
    """One assembled sequence [BOS, prompt, IMG, image tokens, answer, EOS].

    token_ids holds PAD at image positions; loss_mask is True where the token
    at that position is a prediction target (answer and EOS only).
    """

    embeddings: torch.Tensor
    token_ids: torch.Tensor
    loss_mask: torch.Tensor
    n_prompt: int
    n_image: int

    def __len__(self) -> int:
        return self.embeddings.shape[0]

    @property
    def image_span(self) -> Tuple[int, int]:
        start = 2 + self.n_prompt
        return start, start + self.n_image


@dataclass
class Batch:
    """Collated training/eval samples."""

    volumes: torch.Tensor
    prompts: List[List[int]]
    answers: List[Optional[List[int]]]
    tasks: torch.Tensor
    sample_ids: List[str]

    def __len__(self) -> int:
        return len(self.sample_ids)


@dataclass
class ModelOutput:
    """Losses and diagnostics of one forward pass."""

    l_reg: torch.Tensor
    sample_losses: torch.Tensor
    encoder_output: EncoderOutput
    l_r: Optional[torch.Tensor] = None
    router_acc: Optional[float] = None
    logits: Optional[torch.Tensor] = None


def assemble_context(
    prompt_ids: Sequence[int],
    image_tokens: torch.Tensor,
    answer_ids: Optional[Sequence[int]],
    lm: ToyLM
) -> MultimodalContext:
    """Build the embedded sequence; answer_ids None means generation mode (no EOS)."""
    device = image_tokens.device
    n_image = image_tokens.shape[0]
    if n_image < 1:
        raise InvalidInputError("At least one image token is required")
    answer = list(answer_ids) if answer_ids is not None else []
    head = [BOS, *prompt_ids, IMG]
    tail = answer + [EOS] if answer_ids is not None else []

    head_ids = torch.tensor(head, dtype=torch.long, device=device)
    tail_ids = torch.tensor(tail, dtype=torch.long, device=device)
    parts = [lm.embed_tokens(head_ids).to(image_tokens.dtype), image_tokens]
    if tail:
        parts.append(lm.embed_tokens(tail_ids).to(image_tokens.dtype))
    embeddings = torch.cat(parts, dim=0)

    token_ids = torch.cat([head_ids, torch.full((n_image,), PAD, dtype=torch.long, device=device), tail_ids])
    loss_mask = torch.zeros(token_ids.shape[0], dtype=torch.bool, device=device)
    if tail:
        loss_mask[len(head) + n_image:] = True
    return MultimodalContext(embeddings, token_ids, loss_mask, len(prompt_ids), n_image)


def pad_contexts(contexts: Sequence[MultimodalContext]) -> Tuple[torch.Tensor, ...]:
    """Right-pad contexts to [B, L, d] embeddings, [B, L] ids, loss masks and validity."""
    length = max(len(ctx) for ctx in contexts)
    first = contexts[0].embeddings
    batch = len(contexts)
    embeddings = first.new_zeros(batch, length, first.shape[-1])
    ids = torch.full((batch, length), PAD, dtype=torch.long, device=first.device)
    loss_mask = torch.zeros(batch, length, dtype=torch.bool, device=first.device)
    valid = torch.zeros(batch, length, dtype=torch.bool, device=first.device)
    for row, ctx in enumerate(contexts):
        n = len(ctx)
        embeddings[row, :n] = ctx.embeddings
        ids[row, :n] = ctx.token_ids
        loss_mask[row, :n] = ctx.loss_mask
        valid[row, :n] = True
    return embeddings, ids, loss_mask, valid


def sequence_losses(
    logits: torch.Tensor,
    token_ids: torch.Tensor,
    loss_mask: torch.Tensor
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Next-token cross-entropy over masked targets.

    Returns (mean over all masked positions, per-sample means [B]).
    """
    targets = token_ids[:, 1:]
    mask = loss_mask[:, 1:].to(logits.dtype)
    if float(mask.sum()) == 0:
        raise InvalidInputError("Loss mask selects no target tokens")
    ce = F.cross_entropy(
        logits[:, :-1].reshape(-1, logits.shape[-1]),
        targets.reshape(-1),
        reduction="none",
    ).view_as(mask)
    masked = ce * mask
    per_sample = masked.sum(dim=1) / mask.sum(dim=1).clamp_min(1.0)
    return masked.sum() / mask.sum(), per_sample


def autoregressive_loss(ctx: MultimodalContext, lm: ToyLM) -> torch.Tensor:
    """Mean next-token cross-entropy over the context's answer and EOS positions."""
    logits = lm(ctx.embeddings.unsqueeze(0))
    return sequence_losses(logits, ctx.token_ids.unsqueeze(0), ctx.loss_mask.unsqueeze(0))[0]


def total_loss(l_reg, l_r, alpha: float):
    """L_total = L_reg + alpha * L_r; works on tensors and floats alike."""
    if alpha < 0:
        raise ConfigError(f"alpha must be >= 0, got {alpha}")
    return l_reg + alpha * l_r


class MultimodalModel(nn.Module):
    """Encoder, connector and LoRA-wrapped LM for one training stage."""

    def __init__(
        self,
        cfg: RunConfig,
        tokenizer: Tokenizer,
        encoder: VisionEncoder3D,
        connector: Connector,
        lm: ToyLM
    ):
        super().__init__()
        self.cfg = cfg
        self.tokenizer = tokenizer
        self.encoder = encoder
        self.connector = connector
        self.lm = lm
        self.stage = 2 if encoder.routes_by_task else 1

    @classmethod
    def skeleton(cls, cfg: RunConfig, tokenizer: Tokenizer, stage: int = 1) -> "MultimodalModel":
        """Architecture for a stage with freshly initialised weights, ready for load_state_dict."""
        encoder = VisionEncoder3D(cfg.encoder, cfg.moe)
        connector = Connector(cfg.encoder.output_dim, cfg.lm.d_model)
        lm = lora_wrap(ToyLM(len(tokenizer), cfg.lm), cfg.lm.lora_targets, cfg.lm.lora_rank, cfg.lm.lora_scale)
        model = cls(cfg, tokenizer, encoder, connector, lm)
        if stage == 2:
            model.to_stage2()
        return model

    def to_stage2(self) -> None:
        """Replicate every token-level MoE into the two task experts."""
        if self.cfg.encoder.n_moe == 0:
            raise ConfigError("Stage 2 needs at least one MoE layer (encoder.n_moe > 0)")
        self.encoder.to_stage2(self.lm.d_model, self.cfg.moe.task_routing)
        self.stage = 2

    def configure_trainable(self, stage_cfg: StageConfig) -> List[str]:
        """Set requires_grad per stage and return the sorted trainable names."""
        for param in self.parameters():
            param.requires_grad_(False)
        if stage_cfg.encoder_trainable:
            for param in self.encoder.parameters():
                param.requires_grad_(True)
        else:
            for param in self.encoder.task_router_parameters():
                param.requires_grad_(True)
        for param in self.connector.parameters():
            param.requires_grad_(True)
        if stage_cfg.train_lora:
            for param in lora_parameters(self.lm):
                param.requires_grad_(True)
        names = sorted(name for name, param in self.named_parameters() if param.requires_grad)
        logger.info(f"Stage {self.stage}: {len(names)} trainable tensors")
        return names

    def prompt_indicators(self, prompts: Sequence[Sequence[int]]) -> torch.Tensor:
        """Pooled first-layers LM states h_T [B, d_LM] for each prompt (gradient-blocked)."""
        if any(len(p) == 0 for p in prompts):
            raise InvalidInputError("Prompt must contain at least one token")
        length = max(len(p) for p in prompts)
        device = self.lm.tok_embed.weight.device
        ids = torch.full((len(prompts), length), PAD, dtype=torch.long, device=device)
        valid = torch.zeros(len(prompts), length, dtype=torch.bool, device=device)
        for row, prompt in enumerate(prompts):
            ids[row, : len(prompt)] = torch.tensor(list(prompt), dtype=torch.long)
            valid[row, : len(prompt)] = True
        return self.lm.encode_prompt(ids, valid, self.cfg.moe.text_layers)

    def encode_images(self, volumes: torch.Tensor, prompts: Sequence[Sequence[int]]) -> Tuple[torch.Tensor, EncoderOutput]:
        """Image embeddings T_I [B, N_img, d_LM] and the raw encoder output."""
        h_T = self.prompt_indicators(prompts) if self.encoder.routes_by_task else None
        encoded = self.encoder(volumes, h_T)
        return connect(encoded.tokens, self.connector), encoded

    def forward(self, batch: Batch, keep_logits: bool = False) -> ModelOutput:
        image_tokens, encoded = self.encode_images(batch.volumes, batch.prompts)
        contexts = [
            assemble_context(prompt, image_tokens[row], answer, self.lm)
            for row, (prompt, answer) in enumerate(zip(batch.prompts, batch.answers))
        ]
        embeddings, ids, loss_mask, valid = pad_contexts(contexts)
        logits = self.lm(embeddings, valid)
        l_reg, per_sample = sequence_losses(logits, ids, loss_mask)

        output = ModelOutput(
            l_reg=l_reg,
            sample_losses=per_sample.detach(),
            encoder_output=encoded,
            logits=logits if keep_logits else None,
        )
        task_probs = encoded.task_probs()
        if task_probs:
            output.l_r = torch.stack([
                router_loss(wt, batch.tasks, self.cfg.moe.loss_eps) for wt in task_probs
            ]).mean()
            hits = [(wt.argmax(dim=-1) == batch.tasks).to(torch.float64).mean() for wt in task_probs]
            output.router_acc = float(torch.stack(hits).mean())
        return output


def collate(
    samples: Sequence,
    tokenizer: Tokenizer,
    with_answers: bool = True,
    dtype: torch.dtype = torch.float32
) -> Batch:
    """Stack corpus samples (id, task, prompt, answer, volume) into a Batch."""
    volumes = torch.stack([torch.as_tensor(s.volume, dtype=dtype) for s in samples])
    return Batch(
        volumes=volumes,
        prompts=[tokenizer.encode(s.prompt) for s in samples],
        answers=[tokenizer.encode(s.answer) if with_answers else None for s in samples],
        tasks=torch.tensor([int(TaskType.parse(s.task)) for s in samples], dtype=torch.long),
        sample_ids=[s.id for s in samples],
    )


def build_model(
    cfg: RunConfig,
    tokenizer: Tokenizer,
    seed: int = 0,
    source_weights: Optional[Mapping[str, torch.Tensor]] = None,
    adapted_weights: Optional[Mapping[str, torch.Tensor]] = None
) -> Tuple[MultimodalModel, Optional[SurgeryReport]]:
    """Fresh stage-1 model: adapt 2D encoder weights, add connector and LoRA-wrapped LM.

    adapted_weights skips the surgery; otherwise source_weights (or a seeded
    random 2D encoder) are run through adapt_checkpoint.
    """
    report = None
    generator = torch.Generator().manual_seed(seed)
    if adapted_weights is None:
        source = source_weights if source_weights is not None else init_source_weights(cfg.encoder, seed)
        adapted_weights, report = adapt_checkpoint(source, cfg.encoder, cfg.moe, generator)
    encoder = build_encoder(cfg.encoder, cfg.moe, adapted_weights)

    with torch.random.fork_rng():
        torch.manual_seed(seed + 1)
        connector = Connector(cfg.encoder.output_dim, cfg.lm.d_model)
        lm = ToyLM(len(tokenizer), cfg.lm)
        lm = lora_wrap(lm, cfg.lm.lora_targets, cfg.lm.lora_rank, cfg.lm.lora_scale)
    return MultimodalModel(cfg, tokenizer, encoder, connector, lm), report


@torch.no_grad()
def greedy_decode(
    model: MultimodalModel,
    prompt_ids: Sequence[int],
    image_tokens: torch.Tensor,
    max_new_tokens: int = 64
) -> List[int]:
    """Greedy continuation of [BOS, prompt, IMG, T_I]; PAD, IMG and BOS are never emitted."""
    base = assemble_context(prompt_ids, image_tokens, None, model.lm).embeddings
    generated: List[int] = []
    banned = torch.tensor([PAD, IMG, BOS], device=base.device)
    max_len = model.cfg.lm.max_len
    for _ in range(max_new_tokens):
        if base.shape[0] + len(generated) >= max_len:
            break
        if generated:
            ids = torch.tensor(generated, dtype=torch.long, device=base.device)
            seq = torch.cat([base, model.lm.embed_tokens(ids).to(base.dtype)], dim=0)
        else:
            seq = base
        logits = model.lm(seq.unsqueeze(0))[0, -1]
        logits[banned] = float("-inf")
        token = int(logits.argmax())
        if token == EOS:
            break
        generated.append(token)
    return generated


@torch.no_grad()
def generate(
    prompt: str,
    volume: Union[VolumeTensor, torch.Tensor],
    model: MultimodalModel,
    max_new_tokens: Optional[int] = None
) -> str:
    """Greedy answer for one prompt and volume; the image is encoded once."""
    was_training = model.training
    model.eval()
    data = volume.data if isinstance(volume, VolumeTensor) else volume
    prompt_ids = model.tokenizer.encode(prompt)
    dtype = model.connector.fc1.weight.dtype
    image_tokens, _ = model.encode_images(data.unsqueeze(0).to(dtype), [prompt_ids])
    ids = greedy_decode(model, prompt_ids, image_tokens[0], max_new_tokens or model.cfg.lm.max_new_tokens)
    model.train(was_training)
    return model.tokenizer.decode(ids)

