"""Character n-gram language model with additive smoothing, plus the
perplexity and length caption filters.

The model is the smallest one adequate for flagging low-information
captions: p(c | ctx) = (count(ctx, c) + alpha) / (count(ctx) + alpha * V)
over a fixed character vocabulary V.
"""

from __future__ import annotations

import math
from collections import Counter
from collections.abc import Iterable, Sequence

from ..vocab import tokenize

BOS = "\x02"


class CharNgramLM:
    def __init__(self, n: int = 3, alpha: float = 1.0, vocab: set[str] | None = None):
        if n < 1:
            raise ValueError("n must be at least 1")
        if alpha <= 0:
            raise ValueError("additive smoothing needs alpha > 0")
        self.n = n
        self.alpha = alpha
        self.vocab: set[str] = set(vocab) if vocab else set()
        self.ngram_counts: Counter = Counter()
        self.context_counts: Counter = Counter()
        self.trained = vocab is not None

    @classmethod
    def uniform(cls, vocab: Iterable[str]) -> "CharNgramLM":
        """A trained-but-empty unigram model: every character gets p = 1/V."""
        return cls(n=1, alpha=1.0, vocab=set(vocab))

    def train(self, corpus: Iterable[str]) -> "CharNgramLM":
        for text in corpus:
            chars = list(text)
            self.vocab.update(chars)
            padded = [BOS] * (self.n - 1) + chars
            for i in range(self.n - 1, len(padded)):
                ctx = tuple(padded[i - self.n + 1 : i])
                self.ngram_counts[(ctx, padded[i])] += 1
                self.context_counts[ctx] += 1
        if not self.vocab:
            raise ValueError("training corpus contained no characters")
        self.trained = True
        return self

    def log_prob(self, text: str) -> float:
        if not self.trained:
            raise ValueError("language model not trained")
        if not text:
            raise ValueError("cannot score an empty string")
        v = len(self.vocab)
        padded = [BOS] * (self.n - 1) + list(text)
        total = 0.0
        for i in range(self.n - 1, len(padded)):
            ctx = tuple(padded[i - self.n + 1 : i])
            num = self.ngram_counts.get((ctx, padded[i]), 0) + self.alpha
            den = self.context_counts.get(ctx, 0) + self.alpha * v
            total += math.log(num / den)
        return total

    def perplexity(self, text: str) -> float:
        return math.exp(-self.log_prob(text) / len(text))


def perplexity(text: str, model: CharNgramLM) -> float:
    return model.perplexity(text)


def perplexity_filter(
    captions: Sequence[str],
    model: CharNgramLM,
    ppl_low: float = 2.0,
    ppl_high: float = 500.0,
) -> list[str]:
    """Keep captions whose perplexity lies in [ppl_low, ppl_high]."""
    if not model.trained:
        raise ValueError("language model not trained")
    return [c for c in captions if ppl_low <= model.perplexity(c) <= ppl_high]


def caption_length(text: str) -> int:
    return len(tokenize(text))


def length_filter(
    captions: Sequence[str], min_len: int = 3, max_len: int = 12
) -> list[str]:
    """Keep captions whose token count lies in [min_len, max_len], inclusive."""
    return [c for c in captions if min_len <= caption_length(c) <= max_len]
