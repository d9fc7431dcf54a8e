"""Routing records emitted by MoE layers and their JSON-lines export."""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Union

import torch
from loguru import logger

from core.moe.router import TaskType
from utils.helpers import stable_json_dumps


@dataclass
class RoutingRecord:
    """Routing decisions of one MoE layer for one sample."""

    expert_weights: torch.Tensor
    task_probs: Optional[torch.Tensor] = None
    task_onehot: Optional[torch.Tensor] = None
    task_label: Optional[TaskType] = None
    layer: Optional[int] = None
    sample_id: Optional[str] = None

    @property
    def selected_task(self) -> Optional[int]:
        if self.task_onehot is None:
            return None
        return int(self.task_onehot.argmax())

    @property
    def n_tokens(self) -> int:
        return int(self.expert_weights.shape[0])

    def expert_histogram(self) -> List[int]:
        """Number of tokens that selected each expert."""
        return [int(c) for c in (self.expert_weights > 0).sum(dim=0)]

    def to_dict(self) -> Dict[str, Any]:
        """Convert to a JSON-ready dictionary."""
        return {
            "sample_id": self.sample_id,
            "layer": self.layer,
            "yt": self.task_label.name if self.task_label is not None else None,
            "wt": [float(p) for p in self.task_probs] if self.task_probs is not None else None,
            "wt_prime": [int(p) for p in self.task_onehot] if self.task_onehot is not None else None,
            "task_expert": self.selected_task,
            "n_tokens": self.n_tokens,
            "expert_histogram": self.expert_histogram(),
        }


def write_records(records: Iterable[RoutingRecord], path: Union[str, Path]) -> int:
    """Write records as JSON lines; returns the number written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(stable_json_dumps(record.to_dict(), indent=None) + "\n")
            count += 1
    logger.info(f"Wrote {count} routing records to {path}")
    return count


def read_records(path: Union[str, Path]) -> Iterator[Dict[str, Any]]:
    """Stream routing records from a JSON-lines file."""
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                yield json.loads(line)
