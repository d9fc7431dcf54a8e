"""Text metrics, attention-cost analysis and routing diagnostics."""

from core.metrics.text_metrics import bleu1, rouge1, choice_extract, closed_accuracy, gold_letter, tokenize
from core.metrics.flops import FlopsReport, flops_report, pairwise_scores
from core.metrics.routing_report import ExpertShare, RoutingReport, inspect_routing

__all__ = [
    "bleu1",
    "rouge1",
    "choice_extract",
    "closed_accuracy",
    "gold_letter",
    "tokenize",
    "FlopsReport",
    "flops_report",
    "pairwise_scores",
    "ExpertShare",
    "RoutingReport",
    "inspect_routing"
]
