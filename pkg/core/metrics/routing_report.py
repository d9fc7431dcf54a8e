"""Task-router confusion and per-expert utilisation from routing records."""

from typing import Any, Dict, Iterable, List, Optional

import pandas as pd
from loguru import logger
from pydantic import BaseModel

from core.moe.router import TaskType

TASK_NAMES = [task.name for task in TaskType]


class ExpertShare(BaseModel):
    layer: int
    task_expert: Optional[int] = None
    expert: int
    selections: int
    tokens: int
    share: float
    collapsed: bool


class RoutingReport(BaseModel):
    """Summary of a routing-record stream."""

    n_records: int
    confusion: Optional[List[List[int]]] = None
    router_accuracy: Optional[float] = None
    experts: List[ExpertShare] = []
    collapse_threshold: float = 0.05

    @property
    def collapsed(self) -> List[ExpertShare]:
        return [e for e in self.experts if e.collapsed]

    def render(self) -> str:
        lines = [f"routing records: {self.n_records}"]
        if self.confusion is None:
            lines.append("task router: absent (token-level MoE only)")
        else:
            frame = pd.DataFrame(
                self.confusion,
                index=[f"true {n}" for n in TASK_NAMES],
                columns=[f"routed {n}" for n in TASK_NAMES],
            )
            lines.append("task router confusion (per sample, deepest MoE layer):")
            lines.append(frame.to_string())
            lines.append(f"task router accuracy: {self.router_accuracy:.4f}")
        if self.experts:
            frame = pd.DataFrame([e.model_dump() for e in self.experts])
            frame["task_expert"] = frame["task_expert"].map(lambda v: "-" if v is None or pd.isna(v) else int(v))
            frame["share"] = frame["share"].map(lambda v: f"{v:.4f}")
            lines.append("expert utilisation (share = selections / tokens):")
            lines.append(frame.to_string(index=False))
        for expert in self.collapsed:
            lines.append(
                f"WARNING: layer {expert.layer} expert {expert.expert} share {expert.share:.4f} "
                f"is below {self.collapse_threshold}"
            )
        return "\n".join(lines)


def _last_layer_decisions(rows: List[Dict[str, Any]]) -> List[Dict[str, Any]]:
    """One task-routed record per sample: the one from its deepest MoE layer.

    Records without a sample id count as samples of their own.
    """
    latest: Dict[Any, Dict[str, Any]] = {}
    for position, record in enumerate(rows):
        if record.get("wt") is None or record.get("yt") is None:
            continue
        key = record.get("sample_id")
        key = ("#", position) if key is None else key
        if key not in latest or record["layer"] >= latest[key]["layer"]:
            latest[key] = record
    return list(latest.values())


def inspect_routing(records: Iterable[Dict[str, Any]], collapse_threshold: float = 0.05) -> RoutingReport:
    """Aggregate exported records (dicts as written by write_records).

    The confusion matrix counts samples, taking each sample's decision at its
    deepest task-routed layer; utilisation counts every (sample, layer) record.
    """
    rows = list(records)
    if not rows:
        return RoutingReport(n_records=0, collapse_threshold=collapse_threshold)

    confusion = None
    accuracy = None
    routed = _last_layer_decisions(rows)
    if routed:
        confusion = [[0] * len(TASK_NAMES) for _ in TASK_NAMES]
        for record in routed:
            confusion[int(TaskType.parse(record["yt"]))][int(record["task_expert"])] += 1
        accuracy = sum(confusion[i][i] for i in range(len(TASK_NAMES))) / len(routed)

    exploded = []
    for record in rows:
        for expert, count in enumerate(record["expert_histogram"]):
            exploded.append({
                "layer": record["layer"],
                "task_expert": -1 if record.get("task_expert") is None else record["task_expert"],
                "expert": expert,
                "selections": count,
                "tokens": record["n_tokens"],
            })
    frame = pd.DataFrame(exploded).groupby(["layer", "task_expert", "expert"], as_index=False).sum()

    experts = []
    for row in frame.itertuples(index=False):
        share = row.selections / row.tokens if row.tokens else 0.0
        collapsed = share < collapse_threshold
        experts.append(ExpertShare(
            layer=int(row.layer),
            task_expert=None if row.task_expert < 0 else int(row.task_expert),
            expert=int(row.expert),
            selections=int(row.selections),
            tokens=int(row.tokens),
            share=float(share),
            collapsed=collapsed,
        ))
        if collapsed:
            logger.warning(f"Expert {row.expert} of layer {row.layer} has share {share:.4f} (possible collapse)")

    return RoutingReport(
        n_records=len(rows),
        confusion=confusion,
        router_accuracy=accuracy,
        experts=experts,
        collapse_threshold=collapse_threshold,
    )
