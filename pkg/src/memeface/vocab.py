"""Caption tokenization and the vocabulary file format.

Vocabulary files hold one token per line; the line number is the token id.
Tokenization splits CJK text per character and Latin/digit runs on
whitespace; any other printable mark becomes its own token.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

UNK_TOKEN = "<unk>"

# CJK unified ideographs (+ extension A and compatibility block).
_TOKEN_RE = re.compile(
    r"[A-Za-z0-9]+"
    r"|[㐀-䶿一-鿿豈-﫿]"
    r"|[^\sA-Za-z0-9㐀-䶿一-鿿豈-﫿]"
)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


@dataclass(frozen=True)
class Caption:
    """Tokenized text: vocabulary indices plus the original string."""

    tokens: tuple[int, ...]
    raw: str

    def __post_init__(self) -> None:
        if any(t < 0 for t in self.tokens):
            raise ValueError("caption token ids must be nonnegative")

    @property
    def length(self) -> int:
        return len(self.tokens)


def validate_caption(caption: Caption, vocab_size: int, max_caption_len: int) -> None:
    """Raise ValueError unless the caption satisfies its invariants."""
    if caption.length == 0:
        raise ValueError("empty caption")
    if caption.length > max_caption_len:
        raise ValueError(
            f"caption length {caption.length} exceeds maximum {max_caption_len}"
        )
    for t in caption.tokens:
        if t >= vocab_size:
            raise ValueError(f"token id {t} out of vocabulary (size {vocab_size})")


class Vocabulary:
    """Token <-> id mapping with a reserved unknown token at id 0."""

    def __init__(self, tokens: Sequence[str]):
        if UNK_TOKEN not in tokens:
            raise ValueError(f"vocabulary must contain the reserved {UNK_TOKEN} token")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        self._tokens = list(tokens)
        self._index = {tok: i for i, tok in enumerate(self._tokens)}

    def __len__(self) -> int:
        return len(self._tokens)

    @property
    def unk_id(self) -> int:
        return self._index[UNK_TOKEN]

    def id_for(self, token: str) -> int:
        return self._index.get(token, self.unk_id)

    def token_for(self, token_id: int) -> str:
        return self._tokens[token_id]

    @classmethod
    def from_corpus(cls, texts: Iterable[str], min_count: int = 1) -> "Vocabulary":
        counts: Counter[str] = Counter()
        for text in texts:
            counts.update(tokenize(text))
        kept = sorted(
            (tok for tok, c in counts.items() if c >= min_count),
            key=lambda tok: (-counts[tok], tok),
        )
        return cls([UNK_TOKEN] + kept)

    def encode(self, text: str, max_len: int | None = None) -> Caption:
        """Tokenize text into a Caption, truncating to max_len when given."""
        toks = tokenize(text)
        if max_len is not None:
            toks = toks[:max_len]
        return Caption(tokens=tuple(self.id_for(t) for t in toks), raw=text)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self._tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(lines)
