"""Experiment orchestration: end-to-end runs, diagnostics, embedding export.

A run is: build the split -> fit per-target topic keywords -> mask ->
train -> evaluate, repeated over consecutive seeds with a mean/stdev
summary. Ablation variants plug in here: ``concat`` swaps the fusion,
``no_topicmask`` switches to random masking, ``no_cl`` zeroes the
contrastive weight.
"""

from __future__ import annotations

import dataclasses
import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .contrastive import alignment_metric, uniformity_metric
from .corpus import (ColumnSpec, DatasetBundle, Instance, SCHEMES, SplitProtocol,
                     VastSubset, load_dataset, make_cross_target_split,
                     make_zero_shot_split, make_vast_split)
from .encoder import EncodeMode, EncoderConfig
from .metrics import ConfusionTable, EvalStyle, MetricReport, style_for_protocol
from .synthetic import make_synthetic_task
from .topicmask import (MaskStrategy, TopicLexicon, TopicModelParams, attach_masks,
                        augment_corpus, fit_topic_lexicon)
from .training import Checkpoint, StanceModel, TrainConfig, Variant, fit


@dataclass
class RunConfig:
    """Flat configuration for one experiment; every field has a default
    except the dataset paths needed by file-backed runs."""

    # data source
    dataset_kind: str = "synthetic"            # synthetic | delimited | vast
    data_path: Optional[str] = None
    train_path: Optional[str] = None
    dev_path: Optional[str] = None
    test_path: Optional[str] = None
    text_column: str = "text"
    target_column: str = "target"
    label_column: str = "label"
    id_column: Optional[str] = None
    seen_column: Optional[str] = None
    delimiter: str = ","
    scheme: str = "generic"
    # split
    protocol: str = "zero_shot"                # zero_shot | cross_target
    held_out_target: Optional[str] = None
    source_target: Optional[str] = None
    dest_target: Optional[str] = None
    subset: str = "ALL"                        # VAST subset
    dev_fraction: float = 0.15
    cross_target_dev_fraction: float = 0.3
    # synthetic task
    synthetic_train: int = 500
    synthetic_dev: int = 90
    synthetic_test: int = 250
    synthetic_correlation: float = 0.9
    synthetic_label_noise: float = 0.0
    synthetic_nouns: int = 24
    # topic model
    n_topics: int = 6
    n_keywords: int = 5
    doc_topic_prior: Optional[float] = None
    topic_word_prior: float = 0.01
    gibbs_iterations: int = 1000
    random_mask_fraction: float = 0.15
    # encoder
    hidden_dim: int = 32
    n_layers: int = 2
    n_heads: int = 4
    max_sequence_length: int = 64
    dropout_rate: float = 0.1
    encoder_backend: str = "toy"
    # optimization
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    eta: float = 0.1
    l2_coefficient: float = 1e-5
    temperature: float = 0.07
    patience: Optional[int] = 5
    clip_norm: Optional[float] = 1.0
    share_encoders: bool = False
    projection_hidden_dim: Optional[int] = None
    projection_dim: int = 128
    fusion_dim: int = 128
    # run
    variant: str = "full"
    repeats: int = 1
    seed: int = 0
    eval_style: Optional[str] = None
    cross_target_micro: str = "binary"
    output_dir: Optional[str] = None

    def column_spec(self) -> ColumnSpec:
        return ColumnSpec(text=self.text_column, target=self.target_column,
                          label=self.label_column, id=self.id_column,
                          seen=self.seen_column, delimiter=self.delimiter)

    def topic_params(self, seed: int) -> TopicModelParams:
        return TopicModelParams(n_topics=self.n_topics, n_keywords=self.n_keywords,
                                doc_topic_prior=self.doc_topic_prior,
                                topic_word_prior=self.topic_word_prior,
                                gibbs_iterations=self.gibbs_iterations, seed=seed)

    def encoder_config(self, seed: int) -> EncoderConfig:
        if self.encoder_backend != "toy":
            raise NotImplementedError(
                f"encoder_backend {self.encoder_backend!r}: only the built-in 'toy' "
                "encoder is wired into run_experiment; plug a PretrainedEncoderAdapter "
                "into StanceModel directly for pretrained runs")
        return EncoderConfig(hidden_dim=self.hidden_dim, n_layers=self.n_layers,
                             n_heads=self.n_heads,
                             max_sequence_length=self.max_sequence_length,
                             dropout_rate=self.dropout_rate, seed=seed)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                           epochs=self.epochs, eta=self.eta,
                           l2_coefficient=self.l2_coefficient,
                           temperature=self.temperature, seed=seed,
                           variant=Variant(self.variant), patience=self.patience,
                           clip_norm=self.clip_norm, share_encoders=self.share_encoders,
                           projection_hidden_dim=self.projection_hidden_dim,
                           projection_dim=self.projection_dim,
                           fusion_dim=self.fusion_dim)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "RunConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = [k for k in mapping if k not in known]
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}; "
                             f"known keys: {sorted(known)}")
        coerced = {key: _coerce(known[key], value) for key, value in mapping.items()}
        return cls(**coerced)

    @classmethod
    def from_file(cls, path, overrides: Optional[dict] = None) -> "RunConfig":
        mapping = parse_flat_config(Path(path).read_text(encoding="utf-8"))
        if overrides:
            mapping.update(overrides)
        return cls.from_mapping(mapping)


_NONE_WORDS = {"", "none", "null"}
_TRUE_WORDS = {"true", "1", "yes", "on"}
_FALSE_WORDS = {"false", "0", "no", "off"}


def _coerce(field_spec, value):
    if not isinstance(value, str):
        return value
    text = value.strip()
    hint = str(field_spec.type)
    optional = "Optional" in hint or "None" in hint
    if optional and text.lower() in _NONE_WORDS:
        return None
    if "bool" in hint:
        lowered = text.lower()
        if lowered in _TRUE_WORDS:
            return True
        if lowered in _FALSE_WORDS:
            return False
        raise ValueError(f"cannot read boolean {field_spec.name}={value!r}")
    if "int" in hint and "point" not in hint:
        return int(text)
    if "float" in hint:
        return float(text)
    return text


def parse_flat_config(text: str) -> dict:
    """Parse KEY=VALUE lines; '#' starts a comment, blank lines ignored."""
    mapping = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected KEY=VALUE, got {raw!r}")
        key, _, value = line.partition("=")
        mapping[key.strip()] = value.strip()
    return mapping


def build_bundle(config: RunConfig, seed: int) -> DatasetBundle:
    """Construct the split for one repeat according to the config."""
    if config.dataset_kind == "synthetic":
        task = make_synthetic_task(seed=seed, n_train=config.synthetic_train,
                                   n_dev=config.synthetic_dev,
                                   n_test=config.synthetic_test,
                                   correlation=config.synthetic_correlation,
                                   label_noise=config.synthetic_label_noise,
                                   nouns_per_target=config.synthetic_nouns)
        return task.bundle()
    if config.dataset_kind == "vast":
        if not (config.train_path and config.dev_path and config.test_path):
            raise ValueError("vast runs need train_path, dev_path, and test_path")
        return make_vast_split(config.train_path, config.dev_path, config.test_path,
                               subset=VastSubset(config.subset),
                               columns=config.column_spec(),
                               scheme=SCHEMES[config.scheme])
    if config.dataset_kind == "delimited":
        if not config.data_path:
            raise ValueError("delimited runs need data_path")
        instances = load_dataset(config.data_path, config.column_spec(),
                                 SCHEMES[config.scheme])
        if config.protocol == "zero_shot":
            if not config.held_out_target:
                raise ValueError("zero_shot protocol needs held_out_target")
            return make_zero_shot_split(instances, config.held_out_target,
                                        dev_fraction=config.dev_fraction, seed=seed)
        if config.protocol == "cross_target":
            if not (config.source_target and config.dest_target):
                raise ValueError("cross_target protocol needs source_target and "
                                 "dest_target")
            return make_cross_target_split(instances, config.source_target,
                                           config.dest_target,
                                           dev_fraction=config.cross_target_dev_fraction,
                                           seed=seed)
        raise ValueError(f"unknown protocol {config.protocol!r}")
    raise ValueError(f"unknown dataset_kind {config.dataset_kind!r}")


def mask_bundle(bundle: DatasetBundle, config: RunConfig, seed: int):
    """Fit the lexicon (unless the variant randomizes masking) and mask all
    splits; evaluation targets are masked with keywords fit on their own
    unlabeled texts."""
    variant = Variant(config.variant)
    lexicon = None
    if variant == Variant.NO_TOPICMASK:
        strategy = MaskStrategy.RANDOM
    else:
        strategy = MaskStrategy.TOPIC
        lexicon = fit_topic_lexicon(bundle.all_instances(), config.topic_params(seed))

    def mask_split(instances):
        masked = augment_corpus(list(instances), lexicon, strategy=strategy,
                                fraction=config.random_mask_fraction, seed=seed)
        return attach_masks(list(instances), masked)

    masked_bundle = DatasetBundle(train=mask_split(bundle.train),
                                  dev=mask_split(bundle.dev),
                                  test=mask_split(bundle.test),
                                  protocol=bundle.protocol)
    return masked_bundle, lexicon


def resolve_eval_style(config: RunConfig, bundle: DatasetBundle) -> EvalStyle:
    if config.eval_style:
        return EvalStyle(config.eval_style)
    return style_for_protocol(bundle.protocol)


def evaluate(checkpoint, bundle: DatasetBundle, style: Optional[EvalStyle] = None,
             run_seed: int = 0, cross_target_micro: str = "binary",
             split: str = "test") -> MetricReport:
    """Deterministic inference over a labeled split -> MetricReport."""
    model = checkpoint.build_model() if isinstance(checkpoint, Checkpoint) else checkpoint
    if style is None:
        style = checkpoint.eval_style if isinstance(checkpoint, Checkpoint) \
            else style_for_protocol(bundle.protocol)
    instances = list(bundle.split(split))
    if not instances:
        raise ValueError(f"split {split!r} is empty")
    gold = [inst.label for inst in instances]
    if any(label is None for label in gold):
        raise ValueError("evaluation split contains unlabeled instances")
    predicted = model.predict(instances)
    table = ConfusionTable.from_labels(gold, predicted)
    return MetricReport.from_table(table, style, run_seed=run_seed,
                                   cross_target_micro=cross_target_micro)


@dataclass
class ExperimentResult:
    reports: list
    summary: dict
    checkpoints: list = field(default_factory=list)


def summarize(reports: Sequence[MetricReport], errors: Sequence[dict] = ()) -> dict:
    headlines = [r.headline for r in reports]
    per_class = {}
    if reports:
        for stance in reports[0].per_class_f1:
            per_class[stance.value] = float(np.mean([r.per_class_f1[stance]
                                                     for r in reports]))
    return {
        "repeats": len(reports),
        "headline_mean": float(np.mean(headlines)) if headlines else None,
        "headline_stdev": float(statistics.stdev(headlines)) if len(headlines) > 1 else 0.0,
        "per_class_f1_mean": per_class,
        "seeds": [r.run_seed for r in reports],
        "errors": list(errors),
    }


def run_experiment(config: RunConfig, keep_checkpoints: bool = False) -> ExperimentResult:
    """Run ``config.repeats`` seeded end-to-end repeats and summarize."""
    reports = []
    checkpoints = []
    errors = []
    for repeat in range(config.repeats):
        seed = config.seed + repeat
        try:
            bundle = build_bundle(config, seed)
            masked_bundle, _ = mask_bundle(bundle, config, seed)
            style = resolve_eval_style(config, masked_bundle)
            checkpoint = fit(masked_bundle, config.train_config(seed),
                             config.encoder_config(seed), eval_style=style)
            report = evaluate(checkpoint, masked_bundle, style, run_seed=seed,
                              cross_target_micro=config.cross_target_micro)
            reports.append(report)
            if keep_checkpoints:
                checkpoints.append(checkpoint)
        except Exception as exc:  # noqa: BLE001 - recorded, not swallowed silently
            errors.append({"seed": seed, "error": f"{type(exc).__name__}: {exc}"})
    if not reports:
        detail = "; ".join(e["error"] for e in errors)
        raise RuntimeError(f"all {config.repeats} repeats failed: {detail}")
    summary = summarize(reports, errors)
    if config.output_dir:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "reports.jsonl").open("w", encoding="utf-8") as handle:
            for report in reports:
                handle.write(json.dumps(report.to_dict()) + "\n")
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n",
                                          encoding="utf-8")
    return ExperimentResult(reports=reports, summary=summary, checkpoints=checkpoints)


class TraceRecorder:
    """Alignment/uniformity probe evaluated on a fixed set of masked texts.

    Uses its own generator per step so enabling tracing never perturbs the
    training run's random stream.
    """

    def __init__(self, probe_texts: Sequence[str], every: int = 5, seed: int = 0):
        probe = [t for t in probe_texts if t and t.strip()]
        if len(probe) < 2:
            raise ValueError("trace probe set needs at least two masked texts "
                             "(uniformity is a pairwise statistic)")
        if every < 1:
            raise ValueError("trace interval must be >= 1")
        self.probe = probe
        self.every = every
        self.seed = seed
        self.records = []

    @torch.no_grad()
    def record(self, model: StanceModel, step: int) -> None:
        generator = torch.Generator()
        generator.manual_seed(self.seed * 100003 + step)
        first = model.masked_encoder.encode_masked_batch(
            self.probe, EncodeMode.STOCHASTIC, generator=generator)
        second = model.masked_encoder.encode_masked_batch(
            self.probe, EncodeMode.STOCHASTIC, generator=generator)
        self.records.append({
            "step": step,
            "alignment": alignment_metric(list(zip(first, second))),
            "uniformity": uniformity_metric(first),
        })

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as handle:
            for record in self.records:
                handle.write(json.dumps(record) + "\n")
        return path


def diagnostics_trace(config: RunConfig, probe_size: int = 32, every: int = 5,
                      path=None):
    """Train once under the config while tracing alignment/uniformity.

    Returns (records, checkpoint); records go to ``path`` as JSONL when
    given. The probe is the first ``probe_size`` masked training texts.
    """
    seed = config.seed
    bundle = build_bundle(config, seed)
    masked_bundle, _ = mask_bundle(bundle, config, seed)
    probe = [inst.masked_text for inst in masked_bundle.train[:probe_size]]
    recorder = TraceRecorder(probe, every=every, seed=seed)
    checkpoint = fit(masked_bundle, config.train_config(seed),
                     config.encoder_config(seed),
                     eval_style=resolve_eval_style(config, masked_bundle),
                     trace=recorder)
    if path is not None:
        recorder.save(path)
    return recorder.records, checkpoint


def _pca_2d(matrix: np.ndarray) -> np.ndarray:
    centered = matrix - matrix.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:2].copy()
    for i in range(components.shape[0]):
        anchor = int(np.argmax(np.abs(components[i])))
        if components[i, anchor] < 0:
            components[i] = -components[i]
    return centered @ components.T


def export_embeddings(checkpoint, instances: Sequence[Instance],
                      projector: str = "none", path=None,
                      tags: Optional[Sequence[str]] = None) -> np.ndarray:
    """Deterministic masked-sentence embeddings, optionally PCA-projected.

    Writes a TSV with id/target/label/tag metadata columns followed by the
    coordinates; returns the coordinate matrix.
    """
    if projector not in ("none", "pca2d"):
        raise ValueError(f"unknown projector {projector!r}")
    model = checkpoint.build_model() if isinstance(checkpoint, Checkpoint) else checkpoint
    instances = list(instances)
    masked = []
    for inst in instances:
        if inst.masked_text is None:
            raise ValueError(f"instance {inst.id!r} has no masked_text")
        masked.append(inst.masked_text)
    with torch.no_grad():
        rows = []
        for start in range(0, len(masked), 64):
            rows.append(model.masked_encoder.encode_masked_batch(
                masked[start: start + 64], EncodeMode.DETERMINISTIC).numpy())
    vectors = np.concatenate(rows, axis=0) if rows else np.zeros((0, 0))
    coordinates = _pca_2d(vectors) if projector == "pca2d" else vectors

    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as handle:
            width = coordinates.shape[1] if coordinates.size else 0
            header = ["id", "target", "label", "tag"] + [f"dim{i}" for i in range(width)]
            handle.write("\t".join(header) + "\n")
            for i, inst in enumerate(instances):
                tag = tags[i] if tags is not None else ""
                label = inst.label.value if inst.label is not None else ""
                cells = [inst.id, inst.target, label, tag]
                cells += [f"{value:.10g}" for value in coordinates[i]]
                handle.write("\t".join(cells) + "\n")
    return coordinates
