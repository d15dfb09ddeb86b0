"""Built-in data generators for desk-scale experiments and tests.

Two generators live here:

- a synthetic zero-shot transfer task whose labels are carried purely by
  the syntactic shape of the sentence (rhetorical question vs flat
  declarative) while the topical content words differ between training
  and evaluation targets, and
- benchmark-shaped fixture files that reproduce the published per-target
  label counts of SEM16, WT-WT, COVID-19, and VAST, for exercising the
  ingestion and split machinery without redistributing the corpora.
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .corpus import Instance, Stance
from .topicmask import BUILTIN_STOP_WORDS

# Sentences are composed opener + middle + terminal from glue that is all
# on the stop list, so topic masking erases the slot fillers and leaves
# the syntactic frame intact. Each question opener (FAVOR) is an exact
# word-level permutation of its declarative twin (AGAINST): subject and
# auxiliary swap places. Middles and terminals are shared between the
# classes, so no single token carries the label; only the word order
# does. Train and test additionally use disjoint opener-middle
# combinations, ruling out whole-string memorization.
QUESTION_OPENERS = (
    "should we not be",
    "are they not all",
    "is it not so",
    "must we not all be",
    "could they not once be",
    "was it not more",
    "are we not now",
    "will they not be",
    "can we not all be",
    "were they not once",
    "would it not be",
    "do we not now",
    "may they not be",
    "has it not been",
    "shall we not be",
    "might we not be",
)
DECLARATIVE_OPENERS = (
    "we should not be",
    "they are not all",
    "it is not so",
    "we must not all be",
    "they could not once be",
    "it was not more",
    "we are not now",
    "they will not be",
    "we can not all be",
    "they were not once",
    "it would not be",
    "we do not now",
    "they may not be",
    "it has not been",
    "we shall not be",
    "we might not be",
)
SHARED_MIDDLES = (
    "for {a} and {b} over {c} with {d} and {e}",
    "with {a} or {b} through {c} and {d} over {e}",
    "about {a} and {b} with {c} or {d} and {e}",
    "for {a} with {b} and {c} through {d} or {e}",
)
SHARED_TAILS = ("as it may be", "as we do", "all the same", "as such")
# Mixed-length label-independent prefixes keep the subject/auxiliary pair
# away from any fixed position, so no word-at-position feature separates
# the classes either.
SHARED_PREFIXES = ("so", "and yet", "but then", "for once", "even so",
                   "and then", "yet so", "so then")
SHARED_TERMINALS = ("?", ".")

_ONSETS = ("br", "cl", "dr", "fl", "gr", "pl", "sk", "tr", "v", "z",
           "m", "n", "qu", "sp", "st")
_NUCLEI = ("a", "e", "i", "o", "u", "ar", "el", "in", "or", "ul")
_CODAS = ("ck", "ld", "rn", "st", "x", "m", "p", "th", "nd", "sh")


def _pseudo_words(count: int, rng: random.Random, taken: set) -> list:
    """Deterministic invented nouns; guaranteed outside the stop list."""
    words = []
    while len(words) < count:
        word = rng.choice(_ONSETS) + rng.choice(_NUCLEI) + rng.choice(_CODAS)
        if word not in taken and word not in BUILTIN_STOP_WORDS:
            taken.add(word)
            words.append(word)
    return words


@dataclass(frozen=True)
class SyntheticTask:
    """Generated splits plus the target layout of the transfer task."""

    train: tuple
    dev: tuple
    test: tuple
    train_targets: tuple
    test_target: str
    noun_pools: Mapping[str, tuple]

    def bundle(self):
        from .corpus import DatasetBundle, SplitProtocol

        return DatasetBundle(train=self.train, dev=self.dev, test=self.test,
                             protocol=SplitProtocol.ZERO_SHOT)


def make_synthetic_task(seed: int = 0, n_train: int = 500, n_dev: int = 90,
                        n_test: int = 250, correlation: float = 0.9,
                        label_noise: float = 0.0,
                        nouns_per_target: int = 24) -> SyntheticTask:
    """Generate the syntactic-template zero-shot transfer task.

    Training targets use disjoint invented noun pools whose halves are
    spuriously correlated with the label (strength ``correlation``), so a
    model leaning on raw content words learns a shortcut that dies on the
    evaluation target, whose nouns are new words entirely. Train and test
    draw from disjoint opener-middle combinations and the terminal
    punctuation is label-independent: the only transferable label signal
    is the compositional syntactic shape of the sentence.

    The dev instances come from the training targets but with neutral
    noun-label coupling and clean labels, so the per-epoch dev metric
    measures the transferable signal rather than the shortcut.
    ``label_noise`` flips that fraction of training labels (train only).
    """
    if not 0.5 <= correlation <= 1.0:
        raise ValueError(f"correlation must be in [0.5, 1], got {correlation}")
    if not 0.0 <= label_noise < 0.5:
        raise ValueError(f"label_noise must be in [0, 0.5), got {label_noise}")
    rng = random.Random(seed)
    taken: set = set()
    targets = _pseudo_words(3, rng, taken)
    train_targets, test_target = targets[:2], targets[2]
    noun_pools = {t: tuple(_pseudo_words(nouns_per_target, rng, taken)) for t in targets}

    combos = [(i, j) for i in range(len(QUESTION_OPENERS))
              for j in range(len(SHARED_MIDDLES))]
    train_combos = [c for c in combos if (c[0] + c[1]) % 2 == 0]
    test_combos = [c for c in combos if (c[0] + c[1]) % 2 == 1]

    def build(tag: str, target: str, index: int, spurious: bool,
              noise: float) -> Instance:
        label = rng.choice((Stance.FAVOR, Stance.AGAINST))
        opener_index, middle_index = rng.choice(
            train_combos if target != test_target else test_combos)
        openers = (QUESTION_OPENERS if label == Stance.FAVOR
                   else DECLARATIVE_OPENERS)
        pool = noun_pools[target]
        half = len(pool) // 2
        favor_half, against_half = pool[:half], pool[half:]
        if spurious:
            matched = favor_half if label == Stance.FAVOR else against_half
            other = against_half if label == Stance.FAVOR else favor_half
            source = matched if rng.random() < correlation else other
        else:
            source = pool
        a, b, c, d, e = rng.sample(source, 5)
        text = " ".join([rng.choice(SHARED_PREFIXES),
                         openers[opener_index],
                         SHARED_MIDDLES[middle_index].format(a=a, b=b, c=c, d=d, e=e),
                         rng.choice(SHARED_TAILS),
                         rng.choice(SHARED_TERMINALS)])
        if noise > 0 and rng.random() < noise:
            label = Stance.AGAINST if label == Stance.FAVOR else Stance.FAVOR
        return Instance(id=f"syn-{tag}-{target}-{index}", text=text, target=target,
                        label=label)

    def spread(tag: str, total: int, spurious: bool, noise: float) -> list:
        made = []
        per_target = total // len(train_targets)
        remainder = total - per_target * len(train_targets)
        for t_index, target in enumerate(train_targets):
            count = per_target + (1 if t_index < remainder else 0)
            made.extend(build(tag, target, i, spurious, noise)
                        for i in range(count))
        return made

    train = spread("train", n_train, spurious=True, noise=label_noise)
    dev = spread("dev", n_dev, spurious=False, noise=0.0)
    test = [build("test", test_target, i, spurious=False, noise=0.0)
            for i in range(n_test)]

    return SyntheticTask(train=tuple(train), dev=tuple(dev), test=tuple(test),
                         train_targets=tuple(train_targets),
                         test_target=test_target,
                         noun_pools=noun_pools)


# ---------------------------------------------------------------------------
# Benchmark-shaped fixtures (published per-target label distributions).

SEM16_TARGET_COUNTS = {
    "DT": (148, 299, 260),
    "HC": (163, 565, 256),
    "FM": (268, 511, 170),
    "LA": (167, 544, 222),
    "AT": (124, 464, 145),
    "CC": (335, 26, 203),
    "TP": (333, 452, 460),
}
# The TP rows exist in the corpus but are not part of the standard
# six-target evaluation; callers opt in explicitly.
SEM16_DEFAULT_TARGETS = ("DT", "HC", "FM", "LA", "AT", "CC")

WTWT_TARGET_COUNTS = {
    "CA": (2469, 518, 5520),
    "CE": (773, 253, 947),
    "AC": (970, 1969, 3098),
    "AH": (1038, 1106, 2804),
}

COVID_TARGET_COUNTS = {
    "WA": (515, 220, 172),
    "SC": (430, 102, 85),
    "AF": (384, 266, 307),
    "SH": (151, 201, 396),
}

VAST_SPLIT_SIZES = {"train": 13477, "dev": 2062, "test": 3006}

_FILLER_WORDS = ("points", "record", "debate", "report", "voices", "figures",
                 "moment", "stories", "numbers", "changes")


def _filler_text(target: str, index: int) -> str:
    a = _FILLER_WORDS[index % len(_FILLER_WORDS)]
    b = _FILLER_WORDS[(index // len(_FILLER_WORDS) + 3) % len(_FILLER_WORDS)]
    return f"sample {a} and {b} about {target} number {index}"


def write_benchmark_fixture(path, target_counts: Mapping[str, tuple],
                            label_names: Sequence[str] = ("FAVOR", "AGAINST", "NONE"),
                            extra_label: Optional[str] = None,
                            extra_per_target: int = 0,
                            targets: Optional[Sequence[str]] = None,
                            delimiter: str = ",") -> Path:
    """Write one delimited dataset file with the given per-target counts.

    ``target_counts`` maps target -> (favor, against, neutral) row counts;
    ``label_names`` gives the raw strings for those three classes.
    ``extra_label`` rows (e.g. WT-WT "unrelated") are appended per target
    to exercise drop-list handling.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    selected = targets if targets is not None else list(target_counts)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, delimiter=delimiter)
        writer.writerow(["id", "text", "target", "label"])
        row_index = 0
        for target in selected:
            counts = target_counts[target]
            for label_name, count in zip(label_names, counts):
                for _ in range(count):
                    writer.writerow([f"r{row_index}", _filler_text(target, row_index),
                                     target, label_name])
                    row_index += 1
            for _ in range(extra_per_target if extra_label else 0):
                writer.writerow([f"r{row_index}", _filler_text(target, row_index),
                                 target, extra_label])
                row_index += 1
    return path


def write_vast_fixture(directory, seed: int = 0,
                       zero_shot_test_rows: int = 1845) -> dict:
    """Write VAST-shaped train/dev/test files with a seen/unseen marker.

    Split sizes follow the published statistics; the test file mixes
    ``zero_shot_test_rows`` unseen-target rows with seen-target rows, and
    unseen test targets never occur in train or dev.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    train_topics = [f"shared topic {i}" for i in range(300)]
    unseen_topics = [f"unseen topic {i}" for i in range(120)]
    labels = ("0", "1", "2")
    paths = {}
    for split, size in VAST_SPLIT_SIZES.items():
        path = directory / f"vast_{split}.csv"
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["id", "text", "target", "label", "seen"])
            for i in range(size):
                if split == "test" and i < zero_shot_test_rows:
                    target = rng.choice(unseen_topics)
                    seen = "0"
                else:
                    target = rng.choice(train_topics)
                    seen = "1" if split == "test" else "0"
                writer.writerow([f"{split}-{i}", _filler_text(target, i), target,
                                 rng.choice(labels), seen])
        paths[split] = path
    return paths
