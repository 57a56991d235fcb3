"""Caption encoding and stochastic conditioning.

A bidirectional LSTM turns a caption into per-word features and a sentence
vector; the conditioning head resamples the sentence vector through a
reparameterized Gaussian, regularized toward the standard normal.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .vocab import Caption


@dataclass(frozen=True)
class TextEncoding:
    """word_features: [d_text, T]; sentence_vector: [d_text]."""

    word_features: torch.Tensor
    sentence_vector: torch.Tensor


@dataclass(frozen=True)
class AugmentedCondition:
    """Reparameterized condition: c = mu + exp(logvar / 2) * noise_used."""

    c: torch.Tensor
    mu: torch.Tensor
    logvar: torch.Tensor
    noise_used: torch.Tensor


class TextEncoder(nn.Module):
    """Embedding + biLSTM over caption tokens.

    Word features concatenate both recurrence directions per timestep, so
    d_text must be even; the sentence vector concatenates the two final
    hidden states.
    """

    def __init__(self, vocab_size: int, d_text: int, emb_dim: int | None = None):
        super().__init__()
        if d_text % 2 != 0:
            raise ValueError("d_text must be even (two recurrence directions)")
        self.vocab_size = vocab_size
        self.d_text = d_text
        emb_dim = emb_dim or d_text
        self.embedding = nn.Embedding(vocab_size, emb_dim)
        self.rnn = nn.LSTM(emb_dim, d_text // 2, batch_first=True, bidirectional=True)

    def forward(self, tokens: torch.Tensor, lengths: torch.Tensor):
        """tokens: [B, T_max] int64; lengths: [B] valid token counts.

        Returns (word_features [B, d_text, T_max], sentence_vector [B, d_text]).
        Padded timesteps come back as zero columns.
        """
        if tokens.ndim != 2:
            raise ValueError(f"tokens must be [B, T], got shape {tuple(tokens.shape)}")
        if int(lengths.min()) < 1:
            raise ValueError("empty caption")
        if int(tokens.max()) >= self.vocab_size:
            raise ValueError(
                f"token id {int(tokens.max())} out of vocabulary (size {self.vocab_size})"
            )
        if int(tokens.min()) < 0:
            raise ValueError("token ids must be nonnegative")
        emb = self.embedding(tokens)
        packed = pack_padded_sequence(
            emb, lengths.cpu(), batch_first=True, enforce_sorted=False
        )
        out, (h_n, _) = self.rnn(packed)
        out, _ = pad_packed_sequence(out, batch_first=True, total_length=tokens.shape[1])
        word_features = out.transpose(1, 2)
        sentence = torch.cat([h_n[0], h_n[1]], dim=1)
        return word_features, sentence

    def encode(self, caption: Caption) -> TextEncoding:
        """Encode a single caption; word_features has exactly caption.length columns."""
        if caption.length == 0:
            raise ValueError("empty caption")
        device = self.embedding.weight.device
        tokens = torch.tensor([caption.tokens], dtype=torch.int64, device=device)
        lengths = torch.tensor([caption.length], dtype=torch.int64)
        words, sent = self.forward(tokens, lengths)
        return TextEncoding(word_features=words[0], sentence_vector=sent[0])


class ConditioningAugmenter(nn.Module):
    """Projects a sentence vector to (mu, logvar) and samples the condition."""

    def __init__(self, d_text: int, d_cond: int):
        super().__init__()
        self.d_cond = d_cond
        self.fc = nn.Linear(d_text, d_cond * 4)

    def forward(
        self,
        sentence: torch.Tensor,
        noise: torch.Tensor | None = None,
        generator: torch.Generator | None = None,
    ) -> AugmentedCondition:
        """sentence: [B, d_text] (or [d_text]). Noise defaults to standard normal."""
        if not torch.isfinite(sentence).all():
            raise ValueError("sentence vector contains non-finite entries")
        squeeze = sentence.ndim == 1
        if squeeze:
            sentence = sentence.unsqueeze(0)
        x = F.glu(self.fc(sentence), dim=-1)
        mu, logvar = x[:, : self.d_cond], x[:, self.d_cond:]
        if noise is None:
            noise = torch.randn(
                mu.shape, generator=generator, dtype=mu.dtype, device=mu.device
            )
        elif noise.ndim == 1:
            noise = noise.unsqueeze(0)
        if noise.shape != mu.shape:
            raise ValueError(f"noise shape {tuple(noise.shape)} != {tuple(mu.shape)}")
        c = mu + torch.exp(0.5 * logvar) * noise
        if squeeze:
            c, mu, logvar, noise = c[0], mu[0], logvar[0], noise[0]
        return AugmentedCondition(c=c, mu=mu, logvar=logvar, noise_used=noise)


def kl_regularizer(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, diag(exp(logvar))) || N(0, I)), summed over dimensions.

    For batched [B, d] inputs the per-sample sums are averaged over the
    batch. Written via expm1 so the result stays nonnegative under
    floating-point rounding: per dimension the value is
    (mu^2 + expm1(logvar) - logvar) / 2.
    """
    if mu.shape != logvar.shape:
        raise ValueError(
            f"mu shape {tuple(mu.shape)} != logvar shape {tuple(logvar.shape)}"
        )
    per_dim = 0.5 * (mu * mu + torch.expm1(logvar) - logvar)
    if mu.ndim <= 1:
        return per_dim.sum()
    return per_dim.sum(dim=-1).mean()
