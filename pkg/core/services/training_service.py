"""Two-stage training: stage 1 learns shared token-level experts, stage 2 adds task routing."""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd
import torch
from loguru import logger

from config.run_config import RunConfig, StageConfig, parse_run_config
from core.errors import ConfigError, ManifestError, TrainingAbortedError
from core.mllm import MultimodalModel, collate, total_loss
from core.moe import TaskType
from storage.checkpoint import Checkpoint, checkpoint_store, decode_bytes, encode_bytes

TRACE_COLUMNS = ["step", "l_reg", "l_r", "l_total", "router_acc", "lr"]
MOMENTS = ("step", "exp_avg", "exp_avg_sq")


def cosine_factor(step: int, total_steps: int) -> float:
    """Multiplier on the peak lr: 1 at step 0, 0 at total_steps, non-increasing."""
    progress = min(max(step, 0), total_steps) / total_steps
    return 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class TrainState:
    """Resumable bookkeeping of one stage."""

    stage: int
    step: int = 0
    seed: int = 0
    rng_state: Optional[bytes] = None
    trace: List[Dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "stage": self.stage,
            "step": self.step,
            "seed": self.seed,
            "rng": encode_bytes(self.rng_state) if self.rng_state is not None else None,
            "trace": [dict(row) for row in self.trace],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainState":
        rng = data.get("rng")
        return cls(
            stage=int(data["stage"]),
            step=int(data["step"]),
            seed=int(data.get("seed", 0)),
            rng_state=decode_bytes(rng) if rng else None,
            trace=[dict(row) for row in data.get("trace", [])],
        )

    def trace_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.trace, columns=TRACE_COLUMNS)


def optimizer_tensors(optimizer: torch.optim.Optimizer, names: Sequence[str]) -> Dict[str, torch.Tensor]:
    """AdamW state keyed '<entry>.<param name>'.

    Parameters that never received a gradient have no state and are left out.
    """
    tensors: Dict[str, torch.Tensor] = {}
    params = optimizer.param_groups[0]["params"]
    for name, param in zip(names, params):
        state = optimizer.state.get(param)
        if not state:
            continue
        for entry in MOMENTS:
            tensors[f"{entry}.{name}"] = torch.as_tensor(state[entry], dtype=torch.float32)
    return tensors


def restore_optimizer(
    optimizer: torch.optim.Optimizer,
    names: Sequence[str],
    tensors: Dict[str, torch.Tensor]
) -> None:
    """Load saved per-parameter state back into a freshly built optimizer."""
    if not tensors:
        return
    known = set(names)
    stray = sorted({key.split(".", 1)[1] for key in tensors} - known)
    if stray:
        raise ManifestError("Checkpoint has optimizer state for unknown parameters", extra=stray)
    state = {}
    for index, name in enumerate(names):
        if f"step.{name}" not in tensors:
            continue
        state[index] = {entry: tensors[f"{entry}.{name}"].clone() for entry in MOMENTS}
    optimizer.load_state_dict({"state": state, "param_groups": optimizer.state_dict()["param_groups"]})


def save_checkpoint(
    model: MultimodalModel,
    state: Optional[TrainState],
    path: Union[str, Path],
    optimizer: Optional[torch.optim.Optimizer] = None,
    trainable: Optional[Sequence[str]] = None
) -> Path:
    """Write the model, its config and (optionally) the resumable training state."""
    tensors = {name: tensor for name, tensor in model.state_dict().items()}
    if state is not None and optimizer is not None and trainable is not None:
        moments = optimizer_tensors(optimizer, trainable)
        tensors.update({f"optim.{name}": tensor for name, tensor in moments.items()})
    return checkpoint_store.save(
        path,
        tensors,
        kind="model",
        stage=model.stage,
        config=model.cfg.model_dump(mode="json"),
        train_state=state.to_dict() if state is not None else None,
        tokenizer=model.tokenizer,
    )


def model_from_checkpoint(ckpt: Checkpoint) -> MultimodalModel:
    if ckpt.kind != "model":
        raise ManifestError(f"Checkpoint {ckpt.path} holds '{ckpt.kind}' weights, not a full model")
    if ckpt.tokenizer is None:
        raise ManifestError(f"Checkpoint {ckpt.path} has no vocabulary file")
    cfg = parse_run_config(ckpt.config)
    model = MultimodalModel.skeleton(cfg, ckpt.tokenizer, stage=ckpt.stage)
    weights = ckpt.model_tensors()
    expected = set(model.state_dict())
    if expected != set(weights):
        raise ManifestError(
            "Checkpoint tensors do not match the model",
            missing=expected - set(weights),
            extra=set(weights) - expected,
        )
    model.load_state_dict(weights, strict=True)
    return model


def load_checkpoint(path: Union[str, Path]) -> Tuple[MultimodalModel, Optional[TrainState]]:
    """Rebuild a model (and its training state, if saved) from an archive."""
    ckpt = checkpoint_store.load(path)
    model = model_from_checkpoint(ckpt)
    state = TrainState.from_dict(ckpt.train_state) if ckpt.train_state else None
    return model, state


class TrainingService:
    """Runs a training stage over an in-memory sample list."""

    def _task_pools(self, dataset: Sequence) -> List[List[int]]:
        pools: List[List[int]] = [[], []]
        for index, sample in enumerate(dataset):
            pools[int(TaskType.parse(sample.task))].append(index)
        if not pools[0] and not pools[1]:
            raise ConfigError("Training needs at least one sample")
        return pools

    def sample_batch(self, pools: List[List[int]], batch_size: int, generator: torch.Generator) -> List[int]:
        """Pick a task uniformly per element, then a sample uniformly within it."""
        indices = []
        for _ in range(batch_size):
            task = int(torch.randint(2, (1,), generator=generator))
            pool = pools[task] or pools[1 - task]
            indices.append(pool[int(torch.randint(len(pool), (1,), generator=generator))])
        return indices

    def run_stage(
        self,
        dataset: Sequence,
        model: MultimodalModel,
        stage_cfg: StageConfig,
        out_dir: Optional[Union[str, Path]] = None,
        state: Optional[TrainState] = None,
        optimizer_state: Optional[Dict[str, torch.Tensor]] = None
    ) -> Tuple[MultimodalModel, TrainState]:
        stage = model.stage
        state = state or TrainState(stage=stage, seed=stage_cfg.seed)
        if state.stage != stage:
            raise ConfigError(f"Cannot resume a stage-{state.stage} state on a stage-{stage} model")

        trainable = model.configure_trainable(stage_cfg)
        named = dict(model.named_parameters())
        optimizer = torch.optim.AdamW(
            [named[name] for name in trainable],
            lr=stage_cfg.lr,
            betas=tuple(stage_cfg.betas),
            weight_decay=stage_cfg.weight_decay,
        )
        restore_optimizer(optimizer, trainable, optimizer_state or {})
        for group in optimizer.param_groups:
            group["initial_lr"] = stage_cfg.lr
        scheduler = torch.optim.lr_scheduler.LambdaLR(
            optimizer,
            lambda step: cosine_factor(step, stage_cfg.total_steps),
            last_epoch=state.step - 1,
        )

        generator = torch.Generator().manual_seed(state.seed)
        if state.rng_state is not None:
            generator.set_state(torch.frombuffer(bytearray(state.rng_state), dtype=torch.uint8))

        pools = self._task_pools(dataset)
        alpha = stage_cfg.alpha if stage == 2 else 0.0
        out_dir = Path(out_dir) if out_dir is not None else None
        logger.info(f"Stage {stage}: training from step {state.step} to {stage_cfg.total_steps}")

        model.train()
        while state.step < stage_cfg.total_steps:
            picked = self.sample_batch(pools, stage_cfg.batch_size, generator)
            batch = collate([dataset[i] for i in picked], model.tokenizer)

            optimizer.zero_grad(set_to_none=True)
            output = model(batch)
            self._check_finite(output, batch.sample_ids, state.step)

            if stage == 2 and output.l_r is not None:
                loss = total_loss(output.l_reg, output.l_r, alpha)
            else:
                loss = output.l_reg
            loss.backward()
            lr = optimizer.param_groups[0]["lr"]
            optimizer.step()
            scheduler.step()

            l_reg = float(output.l_reg)
            l_r = float(output.l_r) if output.l_r is not None else 0.0
            state.trace.append({
                "step": state.step,
                "l_reg": l_reg,
                "l_r": l_r,
                "l_total": total_loss(l_reg, l_r, alpha),
                "router_acc": output.router_acc,
                "lr": lr,
            })
            state.step += 1
            state.rng_state = bytes(generator.get_state().tolist())

            logger.debug(f"stage {stage} step {state.step}: l_reg={l_reg:.4f} l_r={l_r:.4f} lr={lr:.3e}")
            if state.step % stage_cfg.log_interval == 0:
                recent = state.trace_frame().tail(stage_cfg.log_interval)
                acc = recent["router_acc"].dropna()
                acc_text = f" router_acc={acc.mean():.3f}" if len(acc) else ""
                logger.info(
                    f"Stage {stage} step {state.step}/{stage_cfg.total_steps}: "
                    f"l_reg={recent['l_reg'].mean():.4f} l_total={recent['l_total'].mean():.4f}{acc_text}"
                )
            if out_dir is not None and state.step % stage_cfg.save_interval == 0 and state.step < stage_cfg.total_steps:
                save_checkpoint(model, state, out_dir / f"step_{state.step:06d}", optimizer, trainable)

        if out_dir is not None:
            save_checkpoint(model, state, out_dir / "final", optimizer, trainable)
            self.write_trace(state, out_dir / "loss_trace.csv")
        logger.info(f"Stage {stage} finished after {state.step} steps")
        return model, state

    def _check_finite(self, output, sample_ids: Sequence[str], step: int) -> None:
        losses = [output.l_reg] + ([output.l_r] if output.l_r is not None else [])
        if all(bool(torch.isfinite(loss)) for loss in losses):
            return
        bad = (~torch.isfinite(output.sample_losses)).nonzero(as_tuple=True)[0]
        sample_id = sample_ids[int(bad[0])] if bad.numel() else sample_ids[0]
        logger.error(f"Non-finite loss at step {step} on sample {sample_id}")
        raise TrainingAbortedError(step, sample_id)

    def write_trace(self, state: TrainState, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        state.trace_frame().to_csv(path, index=False)
        logger.info(f"Wrote loss trace to {path}")
        return path

    def run_stage1(
        self,
        dataset: Sequence,
        model: MultimodalModel,
        cfg: RunConfig,
        out_dir: Optional[Union[str, Path]] = None,
        state: Optional[TrainState] = None,
        optimizer_state: Optional[Dict[str, torch.Tensor]] = None
    ) -> Tuple[MultimodalModel, TrainState]:
        """Train encoder, connector and LoRA adapters on mixed tasks with L_reg only."""
        if model.stage != 1:
            raise ConfigError("Stage 1 expects token-level MoE layers")
        return self.run_stage(dataset, model, cfg.stage1, out_dir, state, optimizer_state)

    def run_stage2(
        self,
        dataset: Sequence,
        model: MultimodalModel,
        cfg: RunConfig,
        out_dir: Optional[Union[str, Path]] = None,
        state: Optional[TrainState] = None,
        optimizer_state: Optional[Dict[str, torch.Tensor]] = None
    ) -> Tuple[MultimodalModel, TrainState]:
        """Replicate the shared experts per task, freeze the LM, train with L_reg + alpha * L_r."""
        if model.stage == 1:
            if state is not None:
                raise ConfigError("A stage-2 state cannot resume on a stage-1 model")
            model.to_stage2()
        return self.run_stage(dataset, model, cfg.stage2, out_dir, state, optimizer_state)

    def resume(
        self,
        dataset: Sequence,
        path: Union[str, Path],
        out_dir: Optional[Union[str, Path]] = None,
        stage: Optional[int] = None
    ) -> Tuple[MultimodalModel, TrainState]:
        """Continue the run saved at path with its own config and optimizer moments.

        When stage is given it must match the stage the checkpoint was saved in.
        """
        ckpt = checkpoint_store.load(path)
        if not ckpt.train_state:
            raise ManifestError(f"Checkpoint {path} has no training state to resume from")
        model = model_from_checkpoint(ckpt)
        state = TrainState.from_dict(ckpt.train_state)
        if stage is not None and stage != state.stage:
            logger.error(f"Asked to resume stage {stage} from a stage-{state.stage} checkpoint")
            raise ConfigError(f"{path} holds a stage-{state.stage} run; it cannot resume stage {stage}")
        logger.info(f"Resuming stage {state.stage} at step {state.step} from {path}")
        return self.run_stage(
            dataset, model, model.cfg.stage(state.stage), out_dir, state, ckpt.optimizer_tensors()
        )


# Global training service instance
training_service = TrainingService()
