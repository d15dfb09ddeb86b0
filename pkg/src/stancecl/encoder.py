"""Text encoders for the two pipeline branches.

The same contract serves both branches: joint target+text encoding that
returns a pooled sentence vector plus per-token states of the text, and
masked-sentence encoding whose stochastic (dropout) forward passes supply
the contrastive view pairs. A small self-contained transformer covers
desk-scale runs; ``PretrainedEncoderAdapter`` exposes the same contract on
top of an externally loaded contextual encoder.

All tensors are float64 on CPU so runs are bit-reproducible and gradient
checks against finite differences are meaningful.
"""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import torch
from torch import nn

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
RESERVED_TOKENS = (PAD, UNK, CLS, SEP, MASK)

_TOKEN_RE = re.compile(r"\[MASK\]|[A-Za-z0-9_']+|[^A-Za-z0-9_'\s]")


def tokenize(text: str) -> list:
    """Lowercased whitespace+punctuation tokenization; [MASK] stays atomic."""
    return [t if t == MASK else t.lower() for t in _TOKEN_RE.findall(text)]


class Vocabulary:
    """Token-to-id table; index 0..4 are the reserved tokens."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            tokens = list(RESERVED_TOKENS) + [t for t in tokens if t not in RESERVED_TOKENS]
        self.tokens = list(tokens)
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("vocabulary contains duplicate tokens")

    @classmethod
    def build(cls, texts: Sequence[str], min_count: int = 1) -> "Vocabulary":
        counts: dict = {}
        for text in texts:
            for tok in tokenize(text):
                counts[tok] = counts.get(tok, 0) + 1
        kept = sorted(tok for tok, c in counts.items()
                      if c >= min_count and tok not in RESERVED_TOKENS)
        return cls(list(RESERVED_TOKENS) + kept)

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, tokens: Sequence[str]) -> list:
        unk = self.index[UNK]
        return [self.index.get(tok, unk) for tok in tokens]

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


class EncodeMode(str, Enum):
    DETERMINISTIC = "DETERMINISTIC"
    STOCHASTIC = "STOCHASTIC"


@dataclass(frozen=True)
class EncoderConfig:
    hidden_dim: int = 32
    vocab_size: int = 0  # 0 -> taken from the vocabulary at construction
    max_sequence_length: int = 64
    dropout_rate: float = 0.1
    n_layers: int = 2
    n_heads: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.hidden_dim % self.n_heads != 0:
            raise ValueError(f"hidden_dim {self.hidden_dim} not divisible by "
                             f"n_heads {self.n_heads}")
        if self.max_sequence_length < 8:
            raise ValueError("max_sequence_length must be >= 8")
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")


@dataclass
class EncodedText:
    """Pooled [CLS] vector plus the final hidden states of the text tokens."""

    pooled: torch.Tensor   # (hidden_dim,)
    tokens: torch.Tensor   # (token_count, hidden_dim)
    token_count: int


@dataclass
class ViewPair:
    """Two stochastic embeddings of the same masked sentence."""

    first: torch.Tensor
    second: torch.Tensor


@dataclass
class JointEncoding:
    """Batched joint encodings with a validity mask over padded tokens."""

    pooled: torch.Tensor      # (batch, hidden_dim)
    tokens: torch.Tensor      # (batch, max_text_len, hidden_dim)
    token_mask: torch.Tensor  # (batch, max_text_len) bool

    def __getitem__(self, i: int) -> EncodedText:
        count = int(self.token_mask[i].sum())
        return EncodedText(pooled=self.pooled[i], tokens=self.tokens[i, :count],
                           token_count=count)


def _sinusoidal_positions(length: int, dim: int) -> torch.Tensor:
    position = torch.arange(length, dtype=torch.float64)[:, None]
    half = torch.arange(0, dim, 2, dtype=torch.float64)
    angle = position / torch.pow(10000.0, half / dim)
    table = torch.zeros(length, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(angle)
    table[:, 1::2] = torch.cos(angle[:, : table[:, 1::2].shape[1]])
    return table


def _dropout(x: torch.Tensor, rate: float, generator: torch.Generator) -> torch.Tensor:
    if rate == 0.0:
        return x
    keep = (torch.rand(x.shape, generator=generator, dtype=x.dtype) >= rate).to(x.dtype)
    return x * keep / (1.0 - rate)


class _EncoderLayer(nn.Module):
    """Post-norm transformer block: self-attention then feed-forward."""

    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)
        self.ffn_in = nn.Linear(dim, 4 * dim)
        self.ffn_out = nn.Linear(4 * dim, dim)
        self.attn_norm = nn.LayerNorm(dim)
        self.ffn_norm = nn.LayerNorm(dim)

    def forward(self, x: torch.Tensor, key_mask: torch.Tensor,
                rate: float, generator: Optional[torch.Generator]) -> torch.Tensor:
        batch, length, dim = x.shape

        def split(t):
            return t.view(batch, length, self.n_heads, self.head_dim).transpose(1, 2)

        q, k, v = split(self.q_proj(x)), split(self.k_proj(x)), split(self.v_proj(x))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        context = torch.softmax(scores, dim=-1) @ v
        context = context.transpose(1, 2).reshape(batch, length, dim)
        attn_out = self.out_proj(context)
        if generator is not None:
            attn_out = _dropout(attn_out, rate, generator)
        x = self.attn_norm(x + attn_out)

        ffn_out = self.ffn_out(torch.relu(self.ffn_in(x)))
        if generator is not None:
            ffn_out = _dropout(ffn_out, rate, generator)
        return self.ffn_norm(x + ffn_out)


class TextEncoder(nn.Module):
    """Word embeddings + sinusoidal positions + self-attention blocks.

    DETERMINISTIC mode disables dropout entirely; STOCHASTIC mode draws
    dropout masks from the encoder's own seeded generator (or a caller
    supplied one), so repeated runs are reproducible from the seed.
    """

    def __init__(self, config: EncoderConfig, vocab: Vocabulary):
        super().__init__()
        if config.vocab_size and config.vocab_size != len(vocab):
            raise ValueError(f"config.vocab_size {config.vocab_size} does not match "
                             f"vocabulary size {len(vocab)}")
        if config.vocab_size == 0:
            config = EncoderConfig(**{**config.__dict__, "vocab_size": len(vocab)})
        self.config = config
        self.vocab = vocab
        self.embedding = nn.Embedding(len(vocab), config.hidden_dim, padding_idx=0)
        self.embed_norm = nn.LayerNorm(config.hidden_dim)
        self.layers = nn.ModuleList(
            _EncoderLayer(config.hidden_dim, config.n_heads) for _ in range(config.n_layers))
        self.register_buffer(
            "positions", _sinusoidal_positions(config.max_sequence_length, config.hidden_dim))
        self.double()
        self.generator = torch.Generator()
        self.generator.manual_seed(config.seed)
        self._init_parameters()

    def _init_parameters(self) -> None:
        gen = torch.Generator()
        gen.manual_seed(self.config.seed)
        with torch.no_grad():
            for name, param in self.named_parameters():
                if "norm" in name:
                    continue  # LayerNorm keeps (1, 0)
                if name == "embedding.weight":
                    param.copy_(torch.randn(param.shape, generator=gen,
                                            dtype=torch.float64) * 0.1)
                    param[0].zero_()
                elif param.dim() >= 2:
                    bound = 1.0 / math.sqrt(param.shape[1])
                    param.copy_((torch.rand(param.shape, generator=gen,
                                            dtype=torch.float64) * 2 - 1) * bound)
                else:
                    param.zero_()

    def reseed(self, seed: int) -> None:
        self.generator.manual_seed(seed)

    # ------------------------------------------------------------------
    # sequence assembly

    def _encode_tokens(self, text: str) -> list:
        ids = self.vocab.encode(tokenize(text))
        return ids

    def _joint_ids(self, target: str, text: str):
        text_ids = self._encode_tokens(text)
        if not text_ids:
            raise ValueError("cannot encode an empty text")
        target_ids = self._encode_tokens(target)
        budget = self.config.max_sequence_length - 3 - len(target_ids)
        if budget < 1:
            # Degenerate oversized target: keep at least one text token.
            target_ids = target_ids[: self.config.max_sequence_length - 4]
            budget = self.config.max_sequence_length - 3 - len(target_ids)
        text_ids = text_ids[:budget]
        cls_id, sep_id = self.vocab.index[CLS], self.vocab.index[SEP]
        ids = [cls_id] + target_ids + [sep_id] + text_ids + [sep_id]
        text_start = len(target_ids) + 2
        return ids, text_start, len(text_ids)

    def _masked_ids(self, masked_text: str) -> list:
        ids = self._encode_tokens(masked_text)
        if not ids:
            raise ValueError("cannot encode an empty masked text")
        ids = ids[: self.config.max_sequence_length - 2]
        return [self.vocab.index[CLS]] + ids + [self.vocab.index[SEP]]

    # ------------------------------------------------------------------
    # forward

    def hidden_states(self, ids: torch.Tensor, mask: torch.Tensor,
                      stochastic: bool, generator: Optional[torch.Generator] = None
                      ) -> torch.Tensor:
        """Run the stack over padded id batches; returns (B, L, hidden)."""
        gen = None
        if stochastic:
            gen = generator if generator is not None else self.generator
        x = self.embedding(ids) * math.sqrt(self.config.hidden_dim)
        x = x + self.positions[: ids.shape[1]]
        x = self.embed_norm(x)
        for layer in self.layers:
            x = layer(x, mask, self.config.dropout_rate, gen)
        return x

    @staticmethod
    def _pad(id_lists: Sequence[list]):
        if not id_lists:
            raise ValueError("cannot encode an empty batch")
        length = max(len(ids) for ids in id_lists)
        batch = torch.zeros(len(id_lists), length, dtype=torch.long)
        mask = torch.zeros(len(id_lists), length, dtype=torch.bool)
        for i, ids in enumerate(id_lists):
            batch[i, : len(ids)] = torch.tensor(ids, dtype=torch.long)
            mask[i, : len(ids)] = True
        return batch, mask

    def encode_joint_batch(self, targets: Sequence[str], texts: Sequence[str],
                           mode: EncodeMode = EncodeMode.DETERMINISTIC,
                           generator: Optional[torch.Generator] = None) -> JointEncoding:
        mode = EncodeMode(mode)
        parts = [self._joint_ids(t, r) for t, r in zip(targets, texts)]
        ids, mask = self._pad([p[0] for p in parts])
        hidden = self.hidden_states(ids, mask, mode == EncodeMode.STOCHASTIC, generator)
        pooled = hidden[:, 0]
        max_text = max(p[2] for p in parts)
        tokens = hidden.new_zeros(len(parts), max_text, self.config.hidden_dim)
        token_mask = torch.zeros(len(parts), max_text, dtype=torch.bool)
        for i, (_, start, count) in enumerate(parts):
            tokens[i, :count] = hidden[i, start: start + count]
            token_mask[i, :count] = True
        return JointEncoding(pooled=pooled, tokens=tokens, token_mask=token_mask)

    def encode_joint(self, target: str, text: str,
                     mode: EncodeMode = EncodeMode.DETERMINISTIC) -> EncodedText:
        return self.encode_joint_batch([target], [text], mode)[0]

    def encode_masked_batch(self, masked_texts: Sequence[str],
                            mode: EncodeMode = EncodeMode.DETERMINISTIC,
                            generator: Optional[torch.Generator] = None) -> torch.Tensor:
        mode = EncodeMode(mode)
        ids, mask = self._pad([self._masked_ids(t) for t in masked_texts])
        hidden = self.hidden_states(ids, mask, mode == EncodeMode.STOCHASTIC, generator)
        return hidden[:, 0]

    def encode_masked(self, masked_text: str,
                      mode: EncodeMode = EncodeMode.DETERMINISTIC) -> torch.Tensor:
        return self.encode_masked_batch([masked_text], mode)[0]

    def view_pairs(self, masked_texts: Sequence[str],
                   generator: Optional[torch.Generator] = None):
        """Two independent stochastic encodings of each masked sentence."""
        if self.config.dropout_rate == 0.0:
            warnings.warn("dropout_rate is 0: view pairs are identical and the "
                          "contrastive loss degenerates to a constant")
        first = self.encode_masked_batch(masked_texts, EncodeMode.STOCHASTIC, generator)
        second = self.encode_masked_batch(masked_texts, EncodeMode.STOCHASTIC, generator)
        return first, second

    def make_view_pair(self, masked_text: str) -> ViewPair:
        first, second = self.view_pairs([masked_text])
        return ViewPair(first=first[0], second=second[0])


class PretrainedEncoderAdapter:
    """Same encode contract on top of an externally loaded encoder.

    Expects a huggingface-style ``model`` (returning ``last_hidden_state``)
    and ``tokenizer`` (callable returning ``input_ids``/``attention_mask``
    tensors). Stochastic mode simply switches the wrapped model into train
    mode so its own dropout provides the view noise. Not used by any
    default configuration; selected explicitly via ``encoder_backend``.
    """

    def __init__(self, model, tokenizer, max_sequence_length: int = 128):
        self.model = model
        self.tokenizer = tokenizer
        self.max_sequence_length = max_sequence_length

    def _run(self, first_texts, second_texts, stochastic: bool):
        if stochastic:
            self.model.train()
        else:
            self.model.eval()
        encoded = self.tokenizer(
            first_texts, second_texts, padding=True, truncation=True,
            max_length=self.max_sequence_length, return_tensors="pt")
        if stochastic:
            output = self.model(**encoded)
        else:
            with torch.no_grad():
                output = self.model(**encoded)
        return encoded, output.last_hidden_state

    def encode_joint_batch(self, targets, texts, mode=EncodeMode.DETERMINISTIC,
                           generator=None) -> JointEncoding:
        stochastic = EncodeMode(mode) == EncodeMode.STOCHASTIC
        encoded, hidden = self._run(list(targets), list(texts), stochastic)
        pooled = hidden[:, 0]
        # Text tokens are the ones in the second segment (token_type == 1),
        # excluding special tokens.
        type_ids = encoded["token_type_ids"]
        special = encoded.get("special_tokens_mask")
        keep = (type_ids == 1) & (encoded["attention_mask"] == 1)
        if special is not None:
            keep &= special == 0
        max_text = int(keep.sum(dim=1).max())
        tokens = hidden.new_zeros(hidden.shape[0], max_text, hidden.shape[2])
        token_mask = torch.zeros(hidden.shape[0], max_text, dtype=torch.bool)
        for i in range(hidden.shape[0]):
            rows = hidden[i][keep[i]]
            tokens[i, : rows.shape[0]] = rows
            token_mask[i, : rows.shape[0]] = True
        return JointEncoding(pooled=pooled, tokens=tokens, token_mask=token_mask)

    def encode_joint(self, target, text, mode=EncodeMode.DETERMINISTIC) -> EncodedText:
        return self.encode_joint_batch([target], [text], mode)[0]

    def encode_masked_batch(self, masked_texts, mode=EncodeMode.DETERMINISTIC,
                            generator=None) -> torch.Tensor:
        stochastic = EncodeMode(mode) == EncodeMode.STOCHASTIC
        _, hidden = self._run(list(masked_texts), None, stochastic)
        return hidden[:, 0]

    def encode_masked(self, masked_text, mode=EncodeMode.DETERMINISTIC) -> torch.Tensor:
        return self.encode_masked_batch([masked_text], mode)[0]

    def view_pairs(self, masked_texts, generator=None):
        first = self.encode_masked_batch(masked_texts, EncodeMode.STOCHASTIC)
        second = self.encode_masked_batch(masked_texts, EncodeMode.STOCHASTIC)
        return first, second

    def make_view_pair(self, masked_text) -> ViewPair:
        first, second = self.view_pairs([masked_text])
        return ViewPair(first=first[0], second=second[0])
