"""The ``volmate`` command: synth, adapt, train, eval, inspect-routing and flops."""

import argparse
import sys
from typing import Optional, Sequence

from loguru import logger

from config import RunConfig, load_run_config, settings
from core.errors import ConfigError, ManifestError, VolMateError
from core.metrics import flops_report, inspect_routing
from core.mllm import build_model
from core.moe import read_records, write_records
from core.services import evaluation_service, load_checkpoint, training_service
from core.synth import corpus_builder
from core.vision import adapt_checkpoint, init_source_weights
from storage import checkpoint_store, corpus_store
from utils import parse_shape, seed_everything, setup_logging

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

SAME_ARCHITECTURE = ("encoder", "lm", "moe")


class ArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common_options() -> argparse.ArgumentParser:
    common = ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="RNG seed (default: settings.DEFAULT_SEED)")
    common.add_argument("--threads", type=int, default=None, help="Worker threads (default: settings.THREADS)")
    common.add_argument("--log-level", default=None, help="Log level (default: settings.LOG_LEVEL)")
    return common


def build_parser() -> ArgumentParser:
    common = _common_options()
    parser = ArgumentParser(prog="volmate", description="3D-adapted ViT with text-guided MoE on synthetic volumes")
    parser.add_argument(
        "--version",
        action="version",
        version=(
            f"{settings.APP_NAME} {settings.APP_VERSION} "
            f"(checkpoint format {settings.CHECKPOINT_FORMAT_VERSION})"
        ),
    )
    commands = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    synth = commands.add_parser("synth", parents=[common], help="Generate the synthetic corpus")
    synth.add_argument("--out", default=None, help="Corpus directory (default: settings.DATA_DIR)")
    synth.add_argument("--train", type=int, default=None, help="Training samples (default: data.n_train)")
    synth.add_argument("--test", type=int, default=None, help="Test samples (default: data.n_test)")
    synth.add_argument("--config", default=None, help="Run config JSON")

    adapt = commands.add_parser("adapt", parents=[common], help="Adapt 2D encoder weights to the 3D encoder")
    adapt.add_argument("--in", dest="source", default=None, help="2D encoder archive (default: seeded random)")
    adapt.add_argument("--config", default=None, help="Run config JSON")
    adapt.add_argument("--out", required=True, help="Adapted encoder archive")

    train = commands.add_parser("train", parents=[common], help="Run a training stage")
    train.add_argument("--stage", type=int, choices=(1, 2), required=True)
    train.add_argument("--config", default=None, help="Run config JSON")
    train.add_argument("--data", default=None, help="Corpus directory (default: settings.DATA_DIR)")
    train.add_argument("--out", required=True, help="Run directory for checkpoints and the loss trace")
    train.add_argument("--resume", default=None, help="Checkpoint to continue from")
    train.add_argument("--init", default=None, help="Stage-1 model or adapted encoder archive")
    train.add_argument(
        "--from-scratch",
        action="store_true",
        help="Allow stage 2 without a stage-1 checkpoint (task-specific only run)",
    )

    evaluate = commands.add_parser("eval", parents=[common], help="Evaluate a checkpoint on a corpus split")
    evaluate.add_argument("--ckpt", required=True)
    evaluate.add_argument("--data", default=None, help="Corpus directory (default: settings.DATA_DIR)")
    evaluate.add_argument("--split", default="test")
    evaluate.add_argument("--report", required=True, help="JSON report path (table is written next to it)")
    evaluate.add_argument("--records", default=None, help="Routing-record JSON-lines output")
    evaluate.add_argument("--limit", type=int, default=None, help="Evaluate only the first N samples")

    routing = commands.add_parser("inspect-routing", parents=[common], help="Summarise routing records")
    routing.add_argument("--records", required=True)
    routing.add_argument("--collapse-threshold", type=float, default=0.05)

    flops = commands.add_parser("flops", parents=[common], help="Attention cost of the layer split")
    flops.add_argument("--config", default=None, help="Run config JSON")
    flops.add_argument("--shape", required=True, help="Volume shape DxHxW")
    return parser


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_run_config(args.config or settings.RUN_CONFIG)
    logger.info(f"Resolved config:\n{cfg.to_json()}")
    return cfg


def _seed(args: argparse.Namespace) -> int:
    return settings.DEFAULT_SEED if args.seed is None else args.seed


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    seed = args.seed if args.seed is not None else cfg.data.seed
    n_train = args.train if args.train is not None else cfg.data.n_train
    n_test = args.test if args.test is not None else cfg.data.n_test
    corpus = corpus_builder.build_corpus(n_train, n_test, seed, cfg.data, args.threads)
    tokenizer = corpus_store.write(corpus, args.out, args.threads)
    print(f"wrote {n_train} train / {n_test} test samples to {args.out} (vocabulary {len(tokenizer)})")
    return EXIT_OK


def cmd_adapt(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    seed = _seed(args)
    if args.source:
        source = checkpoint_store.load(args.source).tensors
    else:
        logger.info(f"No --in archive given; using a random 2D encoder (seed {seed})")
        source = init_source_weights(cfg.encoder, seed)
    weights, report = adapt_checkpoint(source, cfg.encoder, cfg.moe, seed_everything(seed, args.threads))
    checkpoint_store.save(args.out, weights, kind="encoder", stage=1, config=cfg.model_dump(mode="json"))
    print(report.render())
    return EXIT_OK


def _check_same_architecture(ckpt_cfg: RunConfig, cfg: RunConfig) -> None:
    for section in SAME_ARCHITECTURE:
        if getattr(ckpt_cfg, section) != getattr(cfg, section):
            raise ConfigError(f"--config section '{section}' differs from the checkpoint's")


def cmd_train(args: argparse.Namespace) -> int:
    dataset = corpus_store.read_split(args.data, "train")
    if args.resume:
        logger.info(f"Resuming from {args.resume}; the checkpoint's own config is used")
        model, state = training_service.resume(dataset, args.resume, args.out, stage=args.stage)
        print(f"stage {state.stage} finished at step {state.step}; checkpoints in {args.out}")
        return EXIT_OK

    cfg = _resolve_config(args)
    tokenizer = corpus_store.read_tokenizer(args.data)
    seed = _seed(args)
    seed_everything(seed, args.threads)

    init = checkpoint_store.load(args.init) if args.init else None
    if args.stage == 2 and not args.from_scratch and (init is None or init.kind != "model"):
        logger.error("Stage 2 needs a stage-1 checkpoint")
        raise ConfigError("train --stage 2 needs a stage-1 model checkpoint via --init (or pass --from-scratch)")

    if init is not None and init.kind == "model":
        model, _ = load_checkpoint(args.init)
        if args.config or settings.RUN_CONFIG:
            _check_same_architecture(model.cfg, cfg)
            model.cfg = cfg
        if args.stage == 1 and model.stage != 1:
            raise ConfigError(f"{args.init} is a stage-{model.stage} model; stage 1 cannot continue it")
    else:
        if init is not None and init.kind != "encoder":
            raise ManifestError(f"{args.init} holds '{init.kind}' weights")
        adapted = init.tensors if init is not None else None
        model, report = build_model(cfg, tokenizer, seed, adapted_weights=adapted)
        if report is not None:
            logger.info(f"Adapted a random 2D encoder: {report.counts()}")

    if model.tokenizer.words != tokenizer.words:
        raise ConfigError(f"Vocabulary of {args.data} does not match the model's")

    run = training_service.run_stage1 if args.stage == 1 else training_service.run_stage2
    _, state = run(dataset, model, model.cfg, args.out)
    print(f"stage {args.stage} finished at step {state.step}; checkpoints in {args.out}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    seed_everything(_seed(args), args.threads)
    model, _ = load_checkpoint(args.ckpt)
    logger.info(f"Resolved config:\n{model.cfg.to_json()}")
    samples = corpus_store.read_split(args.data, args.split)
    limit = args.limit if args.limit is not None else model.cfg.eval.limit
    eval_cfg = model.cfg.eval.model_copy(update={"split": args.split, "limit": limit})
    report, records = evaluation_service.evaluate(model, samples, args.split, eval_cfg, args.threads)
    evaluation_service.write_report(report, args.report)
    if args.records:
        write_records(records, args.records)
    print(report.render_table())
    return EXIT_OK


def cmd_inspect_routing(args: argparse.Namespace) -> int:
    logger.info(f"Inspecting {args.records} (collapse threshold {args.collapse_threshold})")
    report = inspect_routing(read_records(args.records), args.collapse_threshold)
    print(report.render())
    return EXIT_OK


def cmd_flops(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    report = flops_report(cfg.encoder, parse_shape(args.shape))
    print(report.render())
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "adapt": cmd_adapt,
    "train": cmd_train,
    "eval": cmd_eval,
    "inspect-routing": cmd_inspect_routing,
    "flops": cmd_flops,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
    except SystemExit as e:
        return int(e.code or 0)

    setup_logging(args.log_level)
    args.threads = settings.THREADS if args.threads is None else max(1, args.threads)
    if hasattr(args, "data") and args.data is None:
        args.data = str(settings.get_data_dir())
    if args.command == "synth" and args.out is None:
        args.out = str(settings.get_data_dir())
    logger.debug(f"Arguments: {vars(args)}")

    try:
        return COMMANDS[args.command](args)
    except (VolMateError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
