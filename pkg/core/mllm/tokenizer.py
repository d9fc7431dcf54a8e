"""Word-level tokenizer over the closed synthetic vocabulary."""

import re
from pathlib import Path
from typing import Iterable, List, Sequence, Union

from core.errors import InvalidInputError, TokenizerError

PAD, BOS, EOS, IMG = 0, 1, 2, 3
SPECIAL_TOKENS = ["<pad>", "<bos>", "<eos>", "<img>"]

_WORD_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")
_NO_SPACE_BEFORE = {".", ",", ";", ":", "?", "!"}


def split_words(text: str) -> List[str]:
    """Lowercase and split into words and single punctuation marks."""
    return _WORD_RE.findall(text.lower())


class Tokenizer:
    """Maps words to ids; ids 0-3 are the special tokens."""

    def __init__(self, words: Iterable[str]):
        vocab = sorted(set(words) - set(SPECIAL_TOKENS))
        self.itos: List[str] = SPECIAL_TOKENS + vocab
        self.stoi = {word: index for index, word in enumerate(self.itos)}

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Tokenizer":
        words = set()
        for text in texts:
            words.update(split_words(text))
        return cls(words)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Tokenizer":
        """Read a vocabulary file: one word per line, specials excluded."""
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(line.strip() for line in lines if line.strip())

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(self.itos[len(SPECIAL_TOKENS):]) + "\n", encoding="utf-8")

    def __len__(self) -> int:
        return len(self.itos)

    @property
    def words(self) -> List[str]:
        return self.itos[len(SPECIAL_TOKENS):]

    def encode(self, text: str) -> List[int]:
        ids = []
        for word in split_words(text):
            if word not in self.stoi:
                raise TokenizerError(word)
            ids.append(self.stoi[word])
        return ids

    def decode(self, ids: Sequence[int]) -> str:
        """Join word ids back into text; special tokens are dropped."""
        pieces = []
        for token in ids:
            token = int(token)
            if token < 0 or token >= len(self.itos):
                raise InvalidInputError(f"Token id {token} is outside the vocabulary")
            if token < len(SPECIAL_TOKENS):
                continue
            word = self.itos[token]
            if pieces and word in _NO_SPACE_BEFORE:
                pieces[-1] += word
            else:
                pieces.append(word)
        return " ".join(pieces)
