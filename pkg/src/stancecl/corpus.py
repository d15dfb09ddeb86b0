"""Dataset ingestion, label normalization, and train/dev/test split construction.

Supports the four common stance benchmarks (SEM16, WT-WT, COVID-19, VAST) as
delimited text files with a header row, plus three split protocols:

- zero-shot: hold out every instance of one target, split the rest into
  train/dev,
- cross-target: train on one source target, split a destination target
  3:7 into dev/test,
- VAST-style: pre-defined train/dev/test files with a seen/unseen marker
  used to select the zero-shot, few-shot, or full test subset.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence


class SchemaError(ValueError):
    """A dataset file does not expose the expected columns."""


class DataError(ValueError):
    """A dataset row carries a value that cannot be normalized."""


class Stance(str, Enum):
    FAVOR = "FAVOR"
    AGAINST = "AGAINST"
    NEUTRAL = "NEUTRAL"


class SplitProtocol(str, Enum):
    ZERO_SHOT = "ZERO_SHOT"
    FEW_SHOT = "FEW_SHOT"
    CROSS_TARGET = "CROSS_TARGET"


class VastSubset(str, Enum):
    ZERO = "ZERO"
    FEW = "FEW"
    ALL = "ALL"


@dataclass(frozen=True)
class Instance:
    """One example: a text, the target it addresses, and (optionally) a label.

    ``masked_text`` is filled in by the augmentation stage; ``seen_flag``
    marks few-shot test instances whose target also occurs in training.
    """

    id: str
    text: str
    target: str
    label: Optional[Stance] = None
    masked_text: Optional[str] = None
    seen_flag: Optional[bool] = None

    def __post_init__(self) -> None:
        if not self.text or not self.text.strip():
            raise DataError(f"instance {self.id!r}: empty text")
        if not self.target or not self.target.strip():
            raise DataError(f"instance {self.id!r}: empty target")

    def with_masked_text(self, masked_text: str) -> "Instance":
        return replace(self, masked_text=masked_text)


@dataclass(frozen=True)
class LabelScheme:
    """Mapping from raw label strings (lowercased) to the 3-class scheme.

    Labels in ``drop_list`` discard the whole row; anything else that is
    not in ``mapping`` is a data error.
    """

    mapping: Mapping[str, Stance]
    drop_list: frozenset = frozenset()

    def __post_init__(self) -> None:
        overlap = set(self.mapping) & set(self.drop_list)
        if overlap:
            raise ValueError(f"labels both mapped and dropped: {sorted(overlap)}")
        for key, value in self.mapping.items():
            if not isinstance(value, Stance):
                raise ValueError(f"mapping for {key!r} is not a Stance: {value!r}")

    def resolve(self, raw: str, row_index: int) -> Optional[Stance]:
        """Return the mapped stance, or None when the row should be dropped."""
        key = raw.strip().lower()
        if key in self.drop_list:
            return None
        if key not in self.mapping:
            raise DataError(f"row {row_index}: unmappable label {raw!r}")
        return self.mapping[key]


_FAVOR_ALIASES = ("favor", "favour", "pro", "support", "in-favor", "in favor", "1")
_AGAINST_ALIASES = ("against", "con", "refute", "anti", "0")
_NEUTRAL_ALIASES = ("neutral", "none", "neither", "comment", "observing", "2")


def _scheme(favor: Iterable[str], against: Iterable[str], neutral: Iterable[str],
            drop: Iterable[str] = ()) -> LabelScheme:
    mapping = {}
    for alias in favor:
        mapping[alias] = Stance.FAVOR
    for alias in against:
        mapping[alias] = Stance.AGAINST
    for alias in neutral:
        mapping[alias] = Stance.NEUTRAL
    return LabelScheme(mapping=mapping, drop_list=frozenset(drop))


GENERIC_SCHEME = _scheme(_FAVOR_ALIASES, _AGAINST_ALIASES, _NEUTRAL_ALIASES)
SEM16_SCHEME = _scheme(("favor",), ("against",), ("none", "neutral"))
WTWT_SCHEME = _scheme(("support",), ("refute",), ("comment",), drop=("unrelated",))
COVID_SCHEME = _scheme(("in-favor", "in favor", "favor"), ("against",),
                       ("neither", "none", "neutral"))
VAST_SCHEME = _scheme(("1", "pro"), ("0", "con"), ("2", "neutral"))

SCHEMES = {
    "generic": GENERIC_SCHEME,
    "sem16": SEM16_SCHEME,
    "wtwt": WTWT_SCHEME,
    "covid19": COVID_SCHEME,
    "vast": VAST_SCHEME,
}


@dataclass(frozen=True)
class ColumnSpec:
    """Names of the relevant columns in a delimited dataset file."""

    text: str = "text"
    target: str = "target"
    label: Optional[str] = "label"
    id: Optional[str] = None
    seen: Optional[str] = None
    delimiter: str = ","


_TRUE_MARKERS = {"1", "true", "yes", "few", "seen"}
_FALSE_MARKERS = {"0", "false", "no", "zero", "unseen"}


def _parse_seen(raw: str, row_index: int) -> bool:
    key = raw.strip().lower()
    if key in _TRUE_MARKERS:
        return True
    if key in _FALSE_MARKERS:
        return False
    raise DataError(f"row {row_index}: unreadable seen/unseen marker {raw!r}")


def load_dataset(path, columns: ColumnSpec = ColumnSpec(),
                 scheme: LabelScheme = GENERIC_SCHEME) -> list:
    """Load one delimited dataset file into a list of Instances.

    Rows whose label is in the scheme's drop list are discarded; any other
    unmappable label raises DataError with the row index. Text and target
    are stripped of surrounding whitespace only.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle, delimiter=columns.delimiter)
        header = reader.fieldnames or []
        required = [columns.text, columns.target]
        if columns.label is not None:
            required.append(columns.label)
        if columns.seen is not None:
            required.append(columns.seen)
        if columns.id is not None:
            required.append(columns.id)
        missing = [name for name in required if name not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}; header is {header}")

        instances = []
        for index, row in enumerate(reader):
            label = None
            if columns.label is not None:
                label = scheme.resolve(row[columns.label] or "", index)
                if label is None:
                    continue
            seen_flag = None
            if columns.seen is not None:
                seen_flag = _parse_seen(row[columns.seen] or "", index)
            identifier = row[columns.id] if columns.id else f"{path.stem}-{index}"
            text = (row[columns.text] or "").strip()
            target = (row[columns.target] or "").strip()
            if not text:
                raise DataError(f"row {index}: empty text")
            if not target:
                raise DataError(f"row {index}: empty target")
            instances.append(Instance(id=identifier, text=text, target=target,
                                      label=label, seen_flag=seen_flag))
    return instances


@dataclass(frozen=True)
class DatasetBundle:
    """A train/dev/test split under one of the three protocols.

    Zero-shot bundles assert that no test target leaks into train or dev;
    cross-target bundles assert disjoint singleton target sets.
    """

    train: tuple
    dev: tuple
    test: tuple
    protocol: SplitProtocol

    def __init__(self, train: Sequence[Instance], dev: Sequence[Instance],
                 test: Sequence[Instance], protocol: SplitProtocol):
        object.__setattr__(self, "train", tuple(train))
        object.__setattr__(self, "dev", tuple(dev))
        object.__setattr__(self, "test", tuple(test))
        object.__setattr__(self, "protocol", SplitProtocol(protocol))
        self._validate()

    def _validate(self) -> None:
        if self.protocol == SplitProtocol.ZERO_SHOT:
            leaked = self.targets("train") | self.targets("dev")
            leaked &= self.targets("test")
            if leaked:
                raise ValueError(f"zero-shot target leakage: {sorted(leaked)}")
        elif self.protocol == SplitProtocol.CROSS_TARGET:
            train_targets = self.targets("train")
            test_targets = self.targets("test")
            if len(train_targets) != 1 or len(test_targets) != 1:
                raise ValueError("cross-target bundles hold one target per side, got "
                                 f"train={sorted(train_targets)} test={sorted(test_targets)}")
            if train_targets & test_targets:
                raise ValueError(f"cross-target bundle reuses target {train_targets}")

    def split(self, name: str) -> tuple:
        try:
            return getattr(self, name)
        except AttributeError:
            raise ValueError(f"unknown split {name!r}") from None

    def targets(self, name: str) -> set:
        return {inst.target for inst in self.split(name)}

    def counts(self) -> dict:
        return {"train": len(self.train), "dev": len(self.dev), "test": len(self.test)}

    def map_instances(self, fn) -> "DatasetBundle":
        """Apply ``fn`` to every instance, preserving splits and protocol."""
        return DatasetBundle(
            train=[fn(i) for i in self.train],
            dev=[fn(i) for i in self.dev],
            test=[fn(i) for i in self.test],
            protocol=self.protocol,
        )

    def all_instances(self) -> list:
        return list(self.train) + list(self.dev) + list(self.test)


def _shuffled(instances: Sequence[Instance], seed: int) -> list:
    import random

    pool = list(instances)
    random.Random(seed).shuffle(pool)
    return pool


def make_zero_shot_split(instances: Sequence[Instance], held_out_target: str,
                         dev_fraction: float = 0.15, seed: int = 0) -> DatasetBundle:
    """Leave-one-target-out split.

    All instances of ``held_out_target`` form the test set; the rest are
    shuffled by ``seed`` and the first floor(dev_fraction * N) become dev.
    """
    if not 0.0 < dev_fraction < 1.0:
        raise ValueError(f"dev_fraction must be in (0, 1), got {dev_fraction}")
    test = [inst for inst in instances if inst.target == held_out_target]
    if not test:
        available = sorted({inst.target for inst in instances})
        raise ValueError(f"target {held_out_target!r} not found; available: {available}")
    rest = _shuffled([i for i in instances if i.target != held_out_target], seed)
    n_dev = int(dev_fraction * len(rest))
    return DatasetBundle(train=rest[n_dev:], dev=rest[:n_dev], test=test,
                         protocol=SplitProtocol.ZERO_SHOT)


def make_cross_target_split(instances: Sequence[Instance], source_target: str,
                            dest_target: str, dev_fraction: float = 0.3,
                            seed: int = 0) -> DatasetBundle:
    """Train on the source target; split the destination target dev:test.

    The default 0.3 dev fraction realizes the 3:7 destination split.
    """
    if source_target == dest_target:
        raise ValueError("source and destination targets are identical; "
                         "use the zero-shot protocol for in-target evaluation")
    if not 0.0 < dev_fraction < 1.0:
        raise ValueError(f"dev_fraction must be in (0, 1), got {dev_fraction}")
    available = sorted({inst.target for inst in instances})
    train = [inst for inst in instances if inst.target == source_target]
    dest = [inst for inst in instances if inst.target == dest_target]
    if not train:
        raise ValueError(f"source target {source_target!r} not found; available: {available}")
    if not dest:
        raise ValueError(f"destination target {dest_target!r} not found; available: {available}")
    dest = _shuffled(dest, seed)
    n_dev = int(dev_fraction * len(dest))
    return DatasetBundle(train=train, dev=dest[:n_dev], test=dest[n_dev:],
                         protocol=SplitProtocol.CROSS_TARGET)


def make_vast_split(train_path, dev_path, test_path,
                    subset: VastSubset = VastSubset.ALL,
                    columns: ColumnSpec = ColumnSpec(seen="seen"),
                    scheme: LabelScheme = VAST_SCHEME) -> DatasetBundle:
    """Load pre-defined VAST-style splits and filter test by the seen marker."""
    subset = VastSubset(subset)
    if columns.seen is None:
        raise SchemaError("VAST-style loading requires a seen/unseen marker column")
    train = load_dataset(train_path, columns, scheme)
    dev = load_dataset(dev_path, columns, scheme)
    test = load_dataset(test_path, columns, scheme)
    if subset == VastSubset.ZERO:
        test = [inst for inst in test if inst.seen_flag is False]
        protocol = SplitProtocol.ZERO_SHOT
    elif subset == VastSubset.FEW:
        test = [inst for inst in test if inst.seen_flag is True]
        protocol = SplitProtocol.FEW_SHOT
        if not test:
            warnings.warn("few-shot subset requested but the test set has no "
                          "seen-target rows; test split is empty")
    else:
        protocol = SplitProtocol.FEW_SHOT
    return DatasetBundle(train=train, dev=dev, test=test, protocol=protocol)


_BUNDLE_COLUMNS = ("id", "text", "target", "label", "masked_text", "seen")


def save_bundle(bundle: DatasetBundle, directory, seed: Optional[int] = None,
                extra: Optional[Mapping] = None) -> Path:
    """Write train/dev/test CSVs plus a manifest into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in ("train", "dev", "test"):
        with (directory / f"{name}.csv").open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(_BUNDLE_COLUMNS)
            for inst in bundle.split(name):
                writer.writerow([
                    inst.id,
                    inst.text,
                    inst.target,
                    inst.label.value if inst.label is not None else "",
                    inst.masked_text if inst.masked_text is not None else "",
                    "" if inst.seen_flag is None else ("1" if inst.seen_flag else "0"),
                ])
    manifest = {
        "format_version": 1,
        "protocol": bundle.protocol.value,
        "seed": seed,
        "counts": bundle.counts(),
        "targets": {name: sorted(bundle.targets(name)) for name in ("train", "dev", "test")},
    }
    if extra:
        manifest.update(dict(extra))
    manifest_path = directory / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest_path


def load_bundle(directory):
    """Load a bundle saved by :func:`save_bundle`; returns (bundle, manifest)."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    splits = {}
    for name in ("train", "dev", "test"):
        instances = []
        with (directory / f"{name}.csv").open(newline="", encoding="utf-8") as handle:
            for index, row in enumerate(csv.DictReader(handle)):
                missing = [c for c in _BUNDLE_COLUMNS if c not in row]
                if missing:
                    raise SchemaError(f"{directory / name}.csv: missing columns {missing}")
                instances.append(Instance(
                    id=row["id"] or f"{name}-{index}",
                    text=row["text"],
                    target=row["target"],
                    label=Stance(row["label"]) if row["label"] else None,
                    masked_text=row["masked_text"] or None,
                    seen_flag=None if row["seen"] == "" else row["seen"] == "1",
                ))
        splits[name] = instances
    bundle = DatasetBundle(train=splits["train"], dev=splits["dev"], test=splits["test"],
                           protocol=SplitProtocol(manifest["protocol"]))
    return bundle, manifest
