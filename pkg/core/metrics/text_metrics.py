"""BLEU-1, ROUGE-1 and closed-choice scoring.

All text is tokenized by lowercasing and splitting on whitespace, so scores
are reproducible bit for bit.
"""

import re
import warnings
from typing import List, Optional, Sequence

from nltk.translate.bleu_score import sentence_bleu
from rouge_score import rouge_scorer

_LETTER_RE = re.compile(r"^\s*\(?([a-z])\s*[\.\):]")


def tokenize(text: str) -> List[str]:
    return (text or "").lower().split()


class WhitespaceTokenizer:
    """rouge-score tokenizer hook using the same tokenization as bleu1."""

    def tokenize(self, text: str) -> List[str]:
        return tokenize(text)


_scorer = rouge_scorer.RougeScorer(["rouge1"], use_stemmer=False, tokenizer=WhitespaceTokenizer())


def bleu1(pred: str, ref: str) -> float:
    """Clipped unigram precision times exp(min(0, 1 - |ref| / |pred|)); 0 for empty pred."""
    hypothesis = tokenize(pred)
    if not hypothesis:
        return 0.0
    with warnings.catch_warnings():
        # nltk warns when there is no overlap and returns 0
        warnings.simplefilter("ignore")
        return float(sentence_bleu([tokenize(ref)], hypothesis, weights=(1.0,)))


def rouge1(pred: str, ref: str) -> float:
    """Unigram-overlap F1; 0 when either side is empty."""
    if not tokenize(pred) or not tokenize(ref):
        return 0.0
    return float(_scorer.score(ref, pred)["rouge1"].fmeasure)


def choice_extract(generated_text: str, choices: Sequence[str]) -> Optional[str]:
    """Choice letter named by a generated answer, or None if it names none.

    Accepts a leading letter ("b. axial", "(b)") or the exact text of a choice.
    """
    letters = [chr(ord("a") + i) for i in range(len(choices))]
    text = (generated_text or "").strip().lower()
    match = _LETTER_RE.match(text) or re.fullmatch(r"\s*\(?([a-z])\)?\s*", text)
    if match and match.group(1) in letters:
        return match.group(1)
    for letter, choice in zip(letters, choices):
        if text == choice.strip().lower():
            return letter
    return None


def gold_letter(answer: str) -> str:
    """Letter of a closed-ended reference answer such as "b. axial"."""
    match = _LETTER_RE.match(answer.lower())
    return match.group(1) if match else answer.strip().lower()


def closed_accuracy(preds: Sequence[Optional[str]], golds: Sequence[str]) -> float:
    """Fraction of predictions equal to the gold letter; unparseable ones count as wrong."""
    if not golds:
        return 0.0
    hits = sum(1 for p, g in zip(preds, golds) if p is not None and p.lower() == g.lower())
    return hits / len(golds)
