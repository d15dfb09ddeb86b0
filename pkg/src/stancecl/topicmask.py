"""Topic-word masking augmentation.

Per-target topic keywords are extracted with a collapsed-Gibbs LDA fit on
that target's texts alone (no stance labels involved, so unseen evaluation
targets can be masked too). Masking replaces keyword tokens with the
literal ``[MASK]`` while keeping punctuation and every other token in
place, which erases topical content but preserves the sentence's
syntactic expression pattern.
"""

from __future__ import annotations

import math
import random
import string
import warnings
import zlib
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .corpus import Instance

MASK_TOKEN = "[MASK]"

# Function words excluded from the LDA vocabulary so they can never become
# topic keywords: masking should erase content, not the grammatical frame.
# Single-letter words are deliberately kept maskable.
BUILTIN_STOP_WORDS = frozenset("""
    the an and or but if then than of to in on at by for with from into onto
    over under about against between through during before after above below
    up down out off again once is are was were be been being am do does did
    done have has had having it its this that these those not no nor so too
    very can could will would shall should may might must he she they we you
    his her hers their our your my me him them us who whom whose what which
    when where why how all any both each few more most other some such only
    own same as there here because until while among anyone much never now
    none without ever always yet even
""".split())

_PUNCT_CHARS = set(string.punctuation)


def _split_affixes(chunk: str):
    """Split a whitespace chunk into (leading punct, core, trailing punct).

    A literal ``[MASK]`` inside the chunk is treated as an atomic core so
    re-masking already-masked text is a no-op.
    """
    pos = chunk.find(MASK_TOKEN)
    if pos != -1:
        return chunk[:pos], MASK_TOKEN, chunk[pos + len(MASK_TOKEN):]
    start, end = 0, len(chunk)
    while start < end and chunk[start] in _PUNCT_CHARS:
        start += 1
    while end > start and chunk[end - 1] in _PUNCT_CHARS:
        end -= 1
    return chunk[:start], chunk[start:end], chunk[end:]


def core_tokens(text: str, stop_words: Optional[frozenset] = None) -> list:
    """Lowercased punctuation-stripped word tokens, minus stop words.

    This is the tokenization the topic model and the keyword matcher share.
    """
    stop = BUILTIN_STOP_WORDS if stop_words is None else frozenset(stop_words)
    tokens = []
    for chunk in text.split():
        _, core, _ = _split_affixes(chunk)
        if not core or core == MASK_TOKEN:
            continue
        word = core.lower()
        if word in stop:
            continue
        tokens.append(word)
    return tokens


def mask_sentence(text: str, keywords: Iterable[str]) -> str:
    """Replace keyword tokens with [MASK], collapsing consecutive masks.

    Tokens match case-insensitively after stripping surrounding
    punctuation; punctuation and non-matching tokens survive in order.
    Maximal runs of bare [MASK] tokens collapse to a single [MASK]
    (punctuation interrupts a run). Returns the input unchanged when
    nothing matches.
    """
    keyword_set = {k.lower() for k in keywords}
    keyword_set.discard(MASK_TOKEN.lower())
    if not keyword_set:
        return text

    pieces = []  # (lead, core, trail, was_masked)
    any_masked = False
    for chunk in text.split():
        lead, core, trail = _split_affixes(chunk)
        if core and core != MASK_TOKEN and core.lower() in keyword_set:
            pieces.append([lead, MASK_TOKEN, trail, True])
            any_masked = True
        else:
            pieces.append([lead, core, trail, False])
    if not any_masked:
        return text

    collapsed = []
    for lead, core, trail, masked in pieces:
        if (masked and collapsed and collapsed[-1][3]
                and collapsed[-1][2] == "" and lead == ""):
            collapsed[-1][2] = trail
            continue
        collapsed.append([lead, core, trail, masked])
    return " ".join(lead + core + trail for lead, core, trail, _ in collapsed)


def mask_random(text: str, fraction: float, seed: int = 0) -> str:
    """Mask ceil(fraction * n_tokens) uniformly chosen tokens; no collapsing.

    Tokens are whitespace chunks; a chosen chunk keeps its surrounding
    punctuation. Pure-punctuation chunks stay unchanged even when chosen.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    chunks = text.split()
    # The epsilon guards against float noise promoting an exact product
    # (e.g. 0.15 * 20) past the next integer.
    n_mask = math.ceil(fraction * len(chunks) - 1e-9)
    if n_mask <= 0:
        return text
    positions = random.Random(seed).sample(range(len(chunks)), n_mask)
    out = list(chunks)
    for pos in positions:
        lead, core, trail = _split_affixes(chunks[pos])
        if core:
            out[pos] = lead + MASK_TOKEN + trail
    return " ".join(out)


@dataclass(frozen=True)
class TopicModelParams:
    """Collapsed-Gibbs LDA settings: T topics, K keywords per topic."""

    n_topics: int = 6
    n_keywords: int = 5
    doc_topic_prior: Optional[float] = None  # None -> 50 / n_topics
    topic_word_prior: float = 0.01
    gibbs_iterations: int = 1000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_topics < 1:
            raise ValueError(f"n_topics must be >= 1, got {self.n_topics}")
        if self.n_keywords < 1:
            raise ValueError(f"n_keywords must be >= 1, got {self.n_keywords}")
        if self.doc_topic_prior is not None and self.doc_topic_prior <= 0:
            raise ValueError("doc_topic_prior must be positive")
        if self.topic_word_prior <= 0:
            raise ValueError("topic_word_prior must be positive")
        if self.gibbs_iterations < 1:
            raise ValueError("gibbs_iterations must be >= 1")

    @property
    def alpha(self) -> float:
        if self.doc_topic_prior is not None:
            return self.doc_topic_prior
        return 50.0 / self.n_topics


@dataclass(frozen=True)
class TopicLexicon:
    """Ordered, deduplicated topic keywords per target."""

    per_target: Mapping[str, tuple]

    def keywords(self, target: str) -> tuple:
        if target not in self.per_target:
            raise KeyError(f"no topic lexicon for target {target!r}; "
                           f"known targets: {sorted(self.per_target)}")
        return self.per_target[target]

    def save(self, path) -> None:
        lines = [f"{target}\t{','.join(words)}" for target, words in self.per_target.items()]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "TopicLexicon":
        per_target = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            target, _, joined = line.partition("\t")
            per_target[target] = tuple(w for w in joined.split(",") if w)
        return cls(per_target=per_target)


@dataclass(frozen=True)
class MaskedInstance:
    instance_id: str
    masked_text: str


def _gibbs_topic_word(docs: Sequence[np.ndarray], n_words: int,
                      params: TopicModelParams, rng: np.random.Generator) -> np.ndarray:
    """Run collapsed Gibbs sampling; return the smoothed topic-word matrix."""
    n_topics = params.n_topics
    alpha = params.alpha
    beta = params.topic_word_prior

    topic_word = np.zeros((n_topics, n_words), dtype=np.int64)
    topic_total = np.zeros(n_topics, dtype=np.int64)
    doc_topic = np.zeros((len(docs), n_topics), dtype=np.int64)
    assignments = []
    for d, doc in enumerate(docs):
        z = rng.integers(0, n_topics, size=len(doc))
        assignments.append(z)
        for w, k in zip(doc, z):
            topic_word[k, w] += 1
            topic_total[k] += 1
            doc_topic[d, k] += 1

    beta_total = beta * n_words
    for _ in range(params.gibbs_iterations):
        for d, doc in enumerate(docs):
            z = assignments[d]
            for i, w in enumerate(doc):
                k = z[i]
                topic_word[k, w] -= 1
                topic_total[k] -= 1
                doc_topic[d, k] -= 1
                weights = ((topic_word[:, w] + beta) / (topic_total + beta_total)
                           * (doc_topic[d] + alpha))
                cdf = np.cumsum(weights)
                k = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
                k = min(k, n_topics - 1)
                z[i] = k
                topic_word[k, w] += 1
                topic_total[k] += 1
                doc_topic[d, k] += 1

    return (topic_word + beta) / (topic_total + beta_total)[:, None]


def _target_rng(seed: int, target: str) -> np.random.Generator:
    # Independent per-target streams: targets can be fit in any order (or in
    # parallel) without changing each other's lexicons.
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([seed & 0x7FFFFFFF, zlib.crc32(target.encode("utf-8"))])))


def fit_target_keywords(texts: Sequence[str], target: str, params: TopicModelParams,
                        stop_words: Optional[frozenset] = None) -> tuple:
    """Fit LDA on one target's texts and collect its topic keywords.

    Per topic, the top-K words by smoothed topic-word probability are taken
    (ties broken by vocabulary order), concatenated across topics, and
    deduplicated preserving first occurrence.
    """
    if not texts:
        raise ValueError(f"target {target!r} has zero documents")
    docs_tokens = [core_tokens(text, stop_words) for text in texts]
    vocab = sorted({tok for doc in docs_tokens for tok in doc})
    if not vocab:
        raise ValueError(f"target {target!r} has no usable tokens after stop-word "
                         "filtering; cannot fit a topic model")
    if len(vocab) < params.n_keywords:
        warnings.warn(f"target {target!r}: vocabulary ({len(vocab)} words) is smaller "
                      f"than n_keywords={params.n_keywords}; returning all words")
    index = {tok: i for i, tok in enumerate(vocab)}
    docs = [np.array([index[tok] for tok in doc], dtype=np.int64)
            for doc in docs_tokens if doc]

    phi = _gibbs_topic_word(docs, len(vocab), params, _target_rng(params.seed, target))

    top_k = min(params.n_keywords, len(vocab))
    ordered = []
    for k in range(params.n_topics):
        ranks = np.argsort(-phi[k], kind="stable")[:top_k]
        ordered.extend(vocab[i] for i in ranks)
    seen = set()
    keywords = []
    for word in ordered:
        if word not in seen:
            seen.add(word)
            keywords.append(word)
    return tuple(keywords)


def fit_topic_lexicon(instances: Sequence[Instance], params: TopicModelParams = TopicModelParams(),
                      stop_words: Optional[frozenset] = None) -> TopicLexicon:
    """Fit one topic model per target over that target's texts only."""
    if not instances:
        raise ValueError("cannot fit a topic lexicon on zero instances")
    grouped: dict = {}
    for inst in instances:
        grouped.setdefault(inst.target, []).append(inst.text)
    per_target = {target: fit_target_keywords(texts, target, params, stop_words)
                  for target, texts in grouped.items()}
    return TopicLexicon(per_target=per_target)


class MaskStrategy(str, Enum):
    TOPIC = "TOPIC"
    RANDOM = "RANDOM"


def augment_corpus(instances: Sequence[Instance], lexicon: Optional[TopicLexicon] = None,
                   strategy: MaskStrategy = MaskStrategy.TOPIC,
                   fraction: float = 0.15, seed: int = 0) -> list:
    """Produce one MaskedInstance per input instance.

    TOPIC masks each instance with its own target's lexicon; RANDOM masks
    ``fraction`` of tokens with a per-instance seed derived from ``seed``.
    """
    strategy = MaskStrategy(strategy)
    masked = []
    if strategy == MaskStrategy.TOPIC:
        if lexicon is None:
            raise ValueError("TOPIC strategy requires a fitted lexicon")
        for inst in instances:
            keywords = lexicon.keywords(inst.target)
            masked.append(MaskedInstance(inst.id, mask_sentence(inst.text, keywords)))
    else:
        for i, inst in enumerate(instances):
            masked.append(MaskedInstance(inst.id, mask_random(inst.text, fraction,
                                                              seed=seed * 1000003 + i)))
    return masked


def attach_masks(instances: Sequence[Instance], masked: Sequence[MaskedInstance]) -> list:
    """Copy masked texts back onto instances (by position, ids must agree)."""
    if len(instances) != len(masked):
        raise ValueError("instances and masked lists differ in length")
    out = []
    for inst, m in zip(instances, masked):
        if inst.id != m.instance_id:
            raise ValueError(f"masked instance id {m.instance_id!r} does not match {inst.id!r}")
        out.append(inst.with_masked_text(m.masked_text))
    return out


class TopicMasker(BaseEstimator, TransformerMixin):
    """Estimator wrapper: fit learns per-target keywords, transform masks.

    ``fit`` accepts a sequence of Instances (stance labels are never used);
    ``transform`` returns the same instances with ``masked_text`` filled.
    """

    def __init__(self, n_topics=6, n_keywords=5, doc_topic_prior=None,
                 topic_word_prior=0.01, gibbs_iterations=1000,
                 strategy="TOPIC", fraction=0.15, stop_words=None, seed=0):
        self.n_topics = n_topics
        self.n_keywords = n_keywords
        self.doc_topic_prior = doc_topic_prior
        self.topic_word_prior = topic_word_prior
        self.gibbs_iterations = gibbs_iterations
        self.strategy = strategy
        self.fraction = fraction
        self.stop_words = stop_words
        self.seed = seed

    def _params(self) -> TopicModelParams:
        return TopicModelParams(
            n_topics=self.n_topics,
            n_keywords=self.n_keywords,
            doc_topic_prior=self.doc_topic_prior,
            topic_word_prior=self.topic_word_prior,
            gibbs_iterations=self.gibbs_iterations,
            seed=self.seed,
        )

    def fit(self, X, y=None):
        if MaskStrategy(self.strategy) == MaskStrategy.TOPIC:
            self.lexicon_ = fit_topic_lexicon(list(X), self._params(), self.stop_words)
        else:
            self.lexicon_ = None
        return self

    def transform(self, X):
        instances = list(X)
        if MaskStrategy(self.strategy) == MaskStrategy.TOPIC and not hasattr(self, "lexicon_"):
            raise RuntimeError("TopicMasker.transform called before fit")
        masked = augment_corpus(instances, getattr(self, "lexicon_", None),
                                strategy=self.strategy, fraction=self.fraction,
                                seed=self.seed)
        return attach_masks(instances, masked)
