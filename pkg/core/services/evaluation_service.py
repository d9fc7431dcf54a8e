"""Held-out evaluation: generation, text metrics, closed accuracy and routing."""

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd
import torch
from loguru import logger
from pydantic import BaseModel, ConfigDict, field_serializer

from config.run_config import EvalConfig
from core.metrics import (
    RoutingReport,
    bleu1,
    choice_extract,
    closed_accuracy,
    flops_report,
    gold_letter,
    inspect_routing,
    rouge1
)
from core.mllm import MultimodalModel, collate, greedy_decode
from core.moe import RoutingRecord, TaskType
from core.synth.text import REPORT_TOPIC, TOPICS


class TextScores(BaseModel):
    count: int = 0
    bleu1: float = 0.0
    rouge1: float = 0.0


class ClosedScores(BaseModel):
    count: int = 0
    accuracy: float = 0.0


class Prediction(BaseModel):
    sample_id: str
    task: str
    topic: str
    closed: bool
    prediction: str
    reference: str


class EvalReport(BaseModel):
    """Scores per task and topic plus routing and the per-layer attention-cost table."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    split: str
    n_samples: int
    mrg: TextScores
    open_vqa: TextScores
    closed_vqa: ClosedScores
    open_by_topic: Dict[str, TextScores]
    closed_by_topic: Dict[str, ClosedScores]
    router_accuracy: Optional[float] = None
    routing: RoutingReport
    flops: Optional[pd.DataFrame] = None

    @field_serializer("flops")
    def _flops_rows(self, table: Optional[pd.DataFrame]) -> Optional[List[Dict]]:
        return None if table is None else table.to_dict(orient="records")

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)

    def render_table(self) -> str:
        """Aligned text table with B-1, R-1 and Accuracy columns."""
        rows = [{"task": "MRG", "topic": "all", "n": self.mrg.count, "B-1": self.mrg.bleu1, "R-1": self.mrg.rouge1, "Accuracy": None}]
        for topic in TOPICS:
            scores = self.open_by_topic.get(topic)
            if scores and scores.count:
                rows.append({"task": "VQA open", "topic": topic, "n": scores.count, "B-1": scores.bleu1, "R-1": scores.rouge1, "Accuracy": None})
        rows.append({"task": "VQA open", "topic": "all", "n": self.open_vqa.count, "B-1": self.open_vqa.bleu1, "R-1": self.open_vqa.rouge1, "Accuracy": None})
        for topic in TOPICS:
            scores = self.closed_by_topic.get(topic)
            if scores and scores.count:
                rows.append({"task": "VQA closed", "topic": topic, "n": scores.count, "B-1": None, "R-1": None, "Accuracy": scores.accuracy})
        rows.append({"task": "VQA closed", "topic": "all", "n": self.closed_vqa.count, "B-1": None, "R-1": None, "Accuracy": self.closed_vqa.accuracy})

        frame = pd.DataFrame(rows)
        for column in ("B-1", "R-1", "Accuracy"):
            frame[column] = frame[column].map(lambda v: "-" if v is None or pd.isna(v) else f"{100 * v:.2f}")
        lines = [f"evaluation on '{self.split}' ({self.n_samples} samples)", frame.to_string(index=False)]
        if self.router_accuracy is not None:
            lines.append(f"task router accuracy: {100 * self.router_accuracy:.2f}")
        if self.flops is not None:
            mixed, full = int(self.flops["mixed_scores"].sum()), int(self.flops["full3d_scores"].sum())
            lines.append(f"attention scores: mixed {mixed:,} vs full-3D {full:,} ({full / mixed:.2f}x)")
        return "\n".join(lines)


def _text_scores(pairs: Sequence[Tuple[str, str]]) -> TextScores:
    if not pairs:
        return TextScores()
    return TextScores(
        count=len(pairs),
        bleu1=sum(bleu1(p, r) for p, r in pairs) / len(pairs),
        rouge1=sum(rouge1(p, r) for p, r in pairs) / len(pairs),
    )


class EvaluationService:
    """Generates answers for a split and scores them."""

    def predict(
        self,
        model: MultimodalModel,
        samples: Sequence,
        max_new_tokens: int = 64,
        threads: int = 1
    ) -> Tuple[List[Prediction], List[RoutingRecord]]:
        """Greedy answers for every sample, plus their routing records."""
        model.eval()
        dtype = model.connector.fc1.weight.dtype

        def one(sample) -> Tuple[Prediction, List[RoutingRecord]]:
            batch = collate([sample], model.tokenizer, with_answers=False, dtype=dtype)
            with torch.no_grad():
                image_tokens, encoded = model.encode_images(batch.volumes, batch.prompts)
                ids = greedy_decode(model, batch.prompts[0], image_tokens[0], max_new_tokens)
            records = encoded.records([sample.id], [TaskType.parse(sample.task)])
            prediction = Prediction(
                sample_id=sample.id,
                task=sample.task,
                topic=sample.topic,
                closed=sample.choices is not None,
                prediction=model.tokenizer.decode(ids),
                reference=sample.answer,
            )
            return prediction, records

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(one, samples))
        else:
            results = [one(sample) for sample in samples]
        predictions = [p for p, _ in results]
        records = [r for _, rs in results for r in rs]
        return predictions, records

    def score(
        self,
        predictions: Sequence[Prediction],
        samples: Sequence,
        records: Sequence[RoutingRecord],
        split: str,
        cfg: Optional[EvalConfig] = None
    ) -> EvalReport:
        cfg = cfg or EvalConfig()
        by_id = {s.id: s for s in samples}
        mrg, open_all, closed_preds, closed_golds = [], [], [], []
        open_topics: Dict[str, list] = {t: [] for t in TOPICS}
        closed_topics: Dict[str, Tuple[list, list]] = {t: ([], []) for t in TOPICS}

        for pred in predictions:
            sample = by_id[pred.sample_id]
            if pred.topic == REPORT_TOPIC:
                mrg.append((pred.prediction, pred.reference))
            elif pred.closed:
                letter = choice_extract(pred.prediction, sample.choices)
                gold = gold_letter(pred.reference)
                closed_preds.append(letter)
                closed_golds.append(gold)
                closed_topics[pred.topic][0].append(letter)
                closed_topics[pred.topic][1].append(gold)
            else:
                open_all.append((pred.prediction, pred.reference))
                open_topics[pred.topic].append((pred.prediction, pred.reference))

        routing = inspect_routing((r.to_dict() for r in records), cfg.collapse_threshold)
        return EvalReport(
            split=split,
            n_samples=len(predictions),
            mrg=_text_scores(mrg),
            open_vqa=_text_scores(open_all),
            closed_vqa=ClosedScores(count=len(closed_golds), accuracy=closed_accuracy(closed_preds, closed_golds)),
            open_by_topic={t: _text_scores(p) for t, p in open_topics.items()},
            closed_by_topic={
                t: ClosedScores(count=len(g), accuracy=closed_accuracy(p, g)) for t, (p, g) in closed_topics.items()
            },
            router_accuracy=routing.router_accuracy,
            routing=routing,
        )

    def evaluate(
        self,
        model: MultimodalModel,
        samples: Sequence,
        split: str = "test",
        cfg: Optional[EvalConfig] = None,
        threads: int = 1
    ) -> Tuple[EvalReport, List[RoutingRecord]]:
        cfg = cfg or EvalConfig()
        if cfg.limit is not None:
            samples = list(samples)[: cfg.limit]
        logger.info(f"Evaluating {len(samples)} '{split}' samples")
        predictions, records = self.predict(model, samples, cfg.max_new_tokens, threads)
        report = self.score(predictions, samples, records, split, cfg)
        if samples:
            report.flops = flops_report(model.cfg.encoder, tuple(samples[0].shape)).table
        logger.info(
            f"Closed accuracy {report.closed_vqa.accuracy:.4f}, MRG R-1 {report.mrg.rouge1:.4f}, "
            f"open R-1 {report.open_vqa.rouge1:.4f}"
        )
        return report, records

    def write_report(self, report: EvalReport, path: Union[str, Path]) -> Path:
        """JSON report at path and the aligned table next to it (.txt)."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(report.to_json() + "\n", encoding="utf-8")
        path.with_suffix(".txt").write_text(report.render_table() + "\n", encoding="utf-8")
        logger.info(f"Wrote evaluation report to {path}")
        return path


# Global evaluation service instance
evaluation_service = EvaluationService()
