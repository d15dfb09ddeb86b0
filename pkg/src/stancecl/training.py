"""Joint training of the supervised stance loss and the contrastive loss.

Each step runs both branches on the same mini-batch: the joint encoder
sees raw target+text pairs, the masked-sentence encoder produces two
dropout views of every masked text (doubling the contrastive batch), the
first view feeds the fusion/classifier path, and the total objective is

    L = L_cls + eta * L_contrastive + l2 * ||all parameters||^2

optimized with Adam under a global-norm gradient clip. Dev headline F1 is
evaluated after each epoch; the returned checkpoint is the best dev epoch.
All math runs in float64 on CPU, so a fixed seed reproduces runs bit for
bit.
"""

from __future__ import annotations

import dataclasses
import json
import random
import warnings
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from torch import nn

from .contrastive import ProjectionHead, nt_xent_loss
from .corpus import DatasetBundle, Instance, SplitProtocol, Stance
from .encoder import EncodeMode, EncoderConfig, TextEncoder, Vocabulary
from .fusion import AttentionFusion, StanceHead, classify, fuse_batch
from .metrics import (CLASS_ORDER, ConfusionTable, EvalStyle, MetricReport,
                      headline_metric, style_for_protocol)

_CLASS_INDEX = {stance: i for i, stance in enumerate(CLASS_ORDER)}

LOSS_EPSILON = 1e-12


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss or an unusable batch)."""


class Variant(str, Enum):
    FULL = "full"
    CONCAT = "concat"
    NO_TOPICMASK = "no_topicmask"
    NO_CL = "no_cl"


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; defaults follow the reported recipe where one
    exists (learning rate aside, nothing here is model-size specific)."""

    learning_rate: float = 2e-5
    batch_size: int = 32
    epochs: int = 30
    eta: float = 0.1
    l2_coefficient: float = 1e-5
    temperature: float = 0.07
    seed: int = 0
    variant: Variant = Variant.FULL
    patience: Optional[int] = 5
    clip_norm: Optional[float] = 1.0
    share_encoders: bool = False
    projection_hidden_dim: Optional[int] = None  # None -> hidden_dim
    projection_dim: int = 128
    fusion_dim: int = 128

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if self.l2_coefficient < 0:
            raise ValueError("l2_coefficient must be nonnegative")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        object.__setattr__(self, "variant", Variant(self.variant))

    @property
    def effective_eta(self) -> float:
        return 0.0 if self.variant == Variant.NO_CL else self.eta


def cls_loss(predicted: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Cross entropy summed over the batch: -sum_i sum_j y_ij log p_ij.

    ``predicted`` rows must be probability distributions and ``labels``
    one-hot rows. A zero probability at a true label is clamped to 1e-12
    with a warning instead of producing -inf.
    """
    predicted = torch.as_tensor(predicted, dtype=torch.float64)
    labels = torch.as_tensor(labels, dtype=torch.float64)
    if predicted.shape != labels.shape:
        raise ValueError(f"shape mismatch: predicted {tuple(predicted.shape)} vs "
                         f"labels {tuple(labels.shape)}")
    if not torch.allclose(predicted.sum(dim=-1),
                          torch.ones(predicted.shape[0], dtype=torch.float64), atol=1e-6):
        raise ValueError("predicted rows must sum to 1")
    if not (torch.all(labels.sum(dim=-1) == 1)
            and torch.all((labels == 0) | (labels == 1))):
        raise ValueError("labels must be one-hot rows")
    true_probability = (predicted * labels).sum(dim=-1)
    if bool((true_probability.detach() <= LOSS_EPSILON).any()):
        warnings.warn("predicted probability at a true label underflowed; "
                      f"clamping to {LOSS_EPSILON}")
    return -torch.log(true_probability.clamp_min(LOSS_EPSILON)).sum()


def total_loss(cls: float, cl: float, params_sq_norm: float, config: TrainConfig):
    """Joint objective: classification + eta * contrastive + l2 * ||theta||^2."""
    return cls + config.effective_eta * cl + config.l2_coefficient * params_sq_norm


def one_hot_labels(instances: Sequence[Instance]) -> torch.Tensor:
    labels = torch.zeros(len(instances), len(CLASS_ORDER), dtype=torch.float64)
    for i, inst in enumerate(instances):
        if inst.label is None:
            raise ValueError(f"instance {inst.id!r} has no label")
        labels[i, _CLASS_INDEX[inst.label]] = 1.0
    return labels


class StanceModel(nn.Module):
    """All trainable pieces: two encoders, projection head, fusion, classifier.

    By default the joint and masked-sentence encoders hold separate
    parameters; ``share_encoders`` makes them one module.
    """

    def __init__(self, encoder_config: EncoderConfig, train_config: TrainConfig,
                 vocab: Vocabulary, joint_encoder=None, masked_encoder=None):
        super().__init__()
        self.encoder_config = encoder_config
        self.train_config = train_config
        seed = encoder_config.seed
        self.joint_encoder = joint_encoder or TextEncoder(encoder_config, vocab)
        if masked_encoder is not None:
            self.masked_encoder = masked_encoder
        elif train_config.share_encoders:
            self.masked_encoder = self.joint_encoder
        else:
            masked_config = EncoderConfig(**{**encoder_config.__dict__, "seed": seed + 1})
            self.masked_encoder = TextEncoder(masked_config, vocab)
        dim = encoder_config.hidden_dim
        self.projection = ProjectionHead(dim, train_config.projection_hidden_dim,
                                         train_config.projection_dim, seed=seed + 2)
        self.fusion = AttentionFusion(dim, train_config.fusion_dim, seed=seed + 3)
        self.head = StanceHead(2 * dim + train_config.fusion_dim,
                               len(CLASS_ORDER), seed=seed + 4)

    @property
    def vocab(self) -> Vocabulary:
        return self.joint_encoder.vocab

    def parameters_sq_norm(self) -> torch.Tensor:
        return sum((p ** 2).sum() for p in self.parameters())

    def training_losses(self, instances: Sequence[Instance]) -> dict:
        """One stochastic forward pass of both branches over a mini-batch."""
        texts = [inst.text for inst in instances]
        targets = [inst.target for inst in instances]
        masked = []
        for inst in instances:
            if inst.masked_text is None:
                raise ValueError(f"instance {inst.id!r} has no masked_text; run the "
                                 "masking stage before training")
            masked.append(inst.masked_text)
        labels = one_hot_labels(instances)

        first, second = self.masked_encoder.view_pairs(masked)
        views = torch.stack([first, second], dim=1).reshape(2 * len(instances), -1)
        projections = self.projection(views)
        contrastive = nt_xent_loss(projections, self.train_config.temperature)

        joint = self.joint_encoder.encode_joint_batch(targets, texts,
                                                      EncodeMode.STOCHASTIC)
        fused = fuse_batch(first, joint.pooled, joint.tokens, joint.token_mask,
                           self.fusion,
                           uniform=self.train_config.variant == Variant.CONCAT)
        probabilities = classify(fused, self.head)
        classification = cls_loss(probabilities, labels)
        sq_norm = self.parameters_sq_norm()
        total = total_loss(classification, contrastive, sq_norm, self.train_config)
        return {
            "cls_loss": classification,
            "cl_loss": contrastive,
            "sq_norm": sq_norm,
            "total_loss": total,
            "probabilities": probabilities,
        }

    @torch.no_grad()
    def predict_proba(self, instances: Sequence[Instance],
                      batch_size: int = 64) -> np.ndarray:
        """Deterministic inference probabilities, dropout off."""
        chunks = []
        for start in range(0, len(instances), batch_size):
            batch = instances[start: start + batch_size]
            masked = []
            for inst in batch:
                if inst.masked_text is None:
                    raise ValueError(f"instance {inst.id!r} has no masked_text")
                masked.append(inst.masked_text)
            h = self.masked_encoder.encode_masked_batch(masked, EncodeMode.DETERMINISTIC)
            joint = self.joint_encoder.encode_joint_batch(
                [i.target for i in batch], [i.text for i in batch],
                EncodeMode.DETERMINISTIC)
            fused = fuse_batch(h, joint.pooled, joint.tokens, joint.token_mask,
                               self.fusion,
                               uniform=self.train_config.variant == Variant.CONCAT)
            chunks.append(classify(fused, self.head).numpy())
        if not chunks:
            return np.zeros((0, len(CLASS_ORDER)))
        return np.concatenate(chunks, axis=0)

    def predict(self, instances: Sequence[Instance], batch_size: int = 64) -> list:
        probabilities = self.predict_proba(instances, batch_size)
        return [CLASS_ORDER[i] for i in probabilities.argmax(axis=1)]


def train_step(batch: Sequence[Instance], model: StanceModel,
               optimizer: torch.optim.Optimizer, config: TrainConfig) -> dict:
    """One forward/backward/update; returns the step's loss components."""
    losses = model.training_losses(batch)
    total = losses["total_loss"]
    if not torch.isfinite(total):
        detail = {name: float(losses[name].detach())
                  for name in ("cls_loss", "cl_loss", "sq_norm")}
        ids = [inst.id for inst in batch]
        raise TrainingError(f"non-finite loss {float(total.detach())} on batch {ids}; "
                            f"components: {detail}")
    optimizer.zero_grad()
    total.backward()
    if config.clip_norm is not None:
        torch.nn.utils.clip_grad_norm_(model.parameters(), config.clip_norm)
    optimizer.step()
    return {
        "cls_loss": float(losses["cls_loss"].detach()),
        "cl_loss": float(losses["cl_loss"].detach()),
        "total_loss": float(total.detach()),
    }


def make_optimizer(model: StanceModel, config: TrainConfig) -> torch.optim.Optimizer:
    # L2 regularization lives in the loss itself, so no decoupled weight decay.
    return torch.optim.Adam(model.parameters(), lr=config.learning_rate,
                            betas=(0.9, 0.999), eps=1e-8)


def evaluate_split(model: StanceModel, instances: Sequence[Instance],
                   style: EvalStyle) -> float:
    gold = [inst.label for inst in instances]
    if any(label is None for label in gold):
        raise ValueError("evaluation split contains unlabeled instances")
    predicted = model.predict(instances)
    table = ConfusionTable.from_labels(gold, predicted)
    return headline_metric(table, style)


def build_vocabulary(instances: Sequence[Instance]) -> Vocabulary:
    texts = []
    for inst in instances:
        texts.append(inst.text)
        texts.append(inst.target)
        if inst.masked_text is not None:
            texts.append(inst.masked_text)
    return Vocabulary.build(texts)


def fit(bundle: DatasetBundle, config: TrainConfig = TrainConfig(),
        encoder_config: EncoderConfig = EncoderConfig(),
        eval_style: Optional[EvalStyle] = None,
        trace=None) -> "Checkpoint":
    """Train on bundle.train, select the best epoch on bundle.dev.

    ``trace``, if given, must expose ``every`` (int) and ``record(model,
    step)``; it is invoked before the first update (step 0), every
    ``every`` updates, and after the final update.
    """
    if not bundle.train or not bundle.dev:
        raise ValueError("training needs non-empty train and dev splits")
    style = eval_style or style_for_protocol(bundle.protocol)

    vocab = build_vocabulary(list(bundle.train))
    encoder_config = EncoderConfig(**{**encoder_config.__dict__,
                                      "vocab_size": len(vocab), "seed": config.seed})
    model = StanceModel(encoder_config, config, vocab)
    optimizer = make_optimizer(model, config)
    shuffler = random.Random(config.seed)

    train = list(bundle.train)
    history = []
    best_metric = float("-inf")
    best_state = None
    best_epoch = -1
    epochs_since_best = 0
    step = 0
    if trace is not None:
        trace.record(model, step)

    for epoch in range(config.epochs):
        order = list(range(len(train)))
        shuffler.shuffle(order)
        sums = {"cls_loss": 0.0, "cl_loss": 0.0, "total_loss": 0.0}
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = [train[i] for i in order[start: start + config.batch_size]]
            step_metrics = train_step(batch, model, optimizer, config)
            step += 1
            n_batches += 1
            for key in sums:
                sums[key] += step_metrics[key]
            if trace is not None and step % trace.every == 0:
                trace.record(model, step)

        dev_metric = evaluate_split(model, list(bundle.dev), style)
        if not np.isfinite(dev_metric):
            raise TrainingError(f"dev metric is not finite at epoch {epoch}")
        history.append({
            "epoch": epoch,
            "cls_loss": sums["cls_loss"] / n_batches,
            "cl_loss": sums["cl_loss"] / n_batches,
            "total_loss": sums["total_loss"] / n_batches,
            "dev_metric": dev_metric,
        })
        if dev_metric > best_metric:
            best_metric = dev_metric
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if config.patience is not None and epochs_since_best >= config.patience:
                break

    if trace is not None and step % trace.every != 0:
        trace.record(model, step)

    model.load_state_dict(best_state)
    return Checkpoint.from_model(model, epoch=best_epoch, history=history,
                                 eval_style=style)


@dataclass
class Checkpoint:
    """Serializable snapshot: parameter tensors, configs, vocab, history."""

    tensors: dict
    config: dict
    vocab_tokens: list
    epoch: int
    history: list = field(default_factory=list)

    @classmethod
    def from_model(cls, model: StanceModel, epoch: int, history: list,
                   eval_style: EvalStyle) -> "Checkpoint":
        tensors = {name: param.detach().numpy().copy()
                   for name, param in model.named_parameters()}
        config = {
            "encoder": asdict(model.encoder_config),
            "train": _train_config_dict(model.train_config),
            "eval_style": EvalStyle(eval_style).value,
            "classes": [stance.value for stance in CLASS_ORDER],
        }
        return cls(tensors=tensors, config=config,
                   vocab_tokens=list(model.vocab.tokens), epoch=epoch,
                   history=list(history))

    def build_model(self) -> StanceModel:
        vocab = Vocabulary(self.vocab_tokens)
        encoder_config = EncoderConfig(**self.config["encoder"])
        train_config = TrainConfig(**self.config["train"])
        model = StanceModel(encoder_config, train_config, vocab)
        with torch.no_grad():
            params = dict(model.named_parameters())
            missing = set(self.tensors) ^ set(params)
            if missing:
                raise ValueError(f"checkpoint/model parameter mismatch: {sorted(missing)}")
            for name, array in self.tensors.items():
                params[name].copy_(torch.from_numpy(np.asarray(array, dtype=np.float64)))
        return model

    @property
    def eval_style(self) -> EvalStyle:
        return EvalStyle(self.config["eval_style"])

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest_tensors = {}
        for index, (name, array) in enumerate(sorted(self.tensors.items())):
            filename = f"tensor{index:04d}.npy"
            array = np.ascontiguousarray(array).astype("<f8")
            np.save(directory / filename, array)
            manifest_tensors[name] = {
                "file": filename,
                "shape": list(array.shape),
                "dtype": "<f8",
            }
        manifest = {
            "format_version": 1,
            "seed": self.config["train"]["seed"],
            "epoch": self.epoch,
            "config": self.config,
            "tensors": manifest_tensors,
        }
        (directory / "manifest.json").write_text(
            json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
        with (directory / "history.jsonl").open("w", encoding="utf-8") as handle:
            for record in self.history:
                handle.write(json.dumps(record) + "\n")
        Vocabulary(self.vocab_tokens).save(directory / "vocab.txt")
        return directory / "manifest.json"

    @classmethod
    def load(cls, directory) -> "Checkpoint":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
        tensors = {}
        for name, meta in manifest["tensors"].items():
            array = np.load(directory / meta["file"])
            if list(array.shape) != meta["shape"]:
                raise ValueError(f"tensor {name}: shape {array.shape} does not match "
                                 f"manifest {meta['shape']}")
            tensors[name] = array
        history = []
        history_path = directory / "history.jsonl"
        if history_path.exists():
            for line in history_path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    history.append(json.loads(line))
        vocab = Vocabulary.load(directory / "vocab.txt")
        return cls(tensors=tensors, config=manifest["config"],
                   vocab_tokens=list(vocab.tokens), epoch=manifest["epoch"],
                   history=history)


def _train_config_dict(config: TrainConfig) -> dict:
    payload = asdict(config)
    payload["variant"] = config.variant.value
    return payload


class StanceClassifier(BaseEstimator, ClassifierMixin):
    """Scikit-learn style front end over the stance model.

    ``fit`` expects instances that already carry ``masked_text`` (see
    TopicMasker); labels ride on the instances or are passed as ``y``.
    Hyperparameter defaults are sized for the built-in small encoder.
    """

    def __init__(self, hidden_dim=32, n_layers=2, n_heads=4,
                 max_sequence_length=64, dropout_rate=0.1,
                 learning_rate=1e-3, batch_size=32, epochs=30, eta=0.1,
                 l2_coefficient=1e-5, temperature=0.07, variant="full",
                 patience=5, clip_norm=1.0, share_encoders=False,
                 projection_hidden_dim=None, projection_dim=128,
                 fusion_dim=128, dev_fraction=0.15, seed=0):
        self.hidden_dim = hidden_dim
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.max_sequence_length = max_sequence_length
        self.dropout_rate = dropout_rate
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.eta = eta
        self.l2_coefficient = l2_coefficient
        self.temperature = temperature
        self.variant = variant
        self.patience = patience
        self.clip_norm = clip_norm
        self.share_encoders = share_encoders
        self.projection_hidden_dim = projection_hidden_dim
        self.projection_dim = projection_dim
        self.fusion_dim = fusion_dim
        self.dev_fraction = dev_fraction
        self.seed = seed

    def _configs(self):
        encoder_config = EncoderConfig(
            hidden_dim=self.hidden_dim,
            max_sequence_length=self.max_sequence_length,
            dropout_rate=self.dropout_rate,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            seed=self.seed,
        )
        train_config = TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            eta=self.eta,
            l2_coefficient=self.l2_coefficient,
            temperature=self.temperature,
            seed=self.seed,
            variant=self.variant,
            patience=self.patience,
            clip_norm=self.clip_norm,
            share_encoders=self.share_encoders,
            projection_hidden_dim=self.projection_hidden_dim,
            projection_dim=self.projection_dim,
            fusion_dim=self.fusion_dim,
        )
        return encoder_config, train_config

    def fit(self, X, y=None, dev=None):
        instances = list(X)
        if y is not None:
            if len(y) != len(instances):
                raise ValueError("X and y differ in length")
            instances = [dataclasses.replace(inst, label=Stance(label))
                         for inst, label in zip(instances, y)]
        if dev is None:
            pool = list(instances)
            random.Random(self.seed).shuffle(pool)
            n_dev = max(1, int(self.dev_fraction * len(pool)))
            dev, instances = pool[:n_dev], pool[n_dev:]
        bundle = DatasetBundle(train=instances, dev=list(dev), test=[],
                               protocol=SplitProtocol.FEW_SHOT)
        encoder_config, train_config = self._configs()
        self.checkpoint_ = fit(bundle, train_config, encoder_config)
        self.model_ = self.checkpoint_.build_model()
        self.classes_ = np.array([stance.value for stance in CLASS_ORDER])
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("this StanceClassifier instance is not fitted yet")

    def predict_proba(self, X) -> np.ndarray:
        self._require_fitted()
        return self.model_.predict_proba(list(X))

    def predict(self, X) -> np.ndarray:
        self._require_fitted()
        return np.array([stance.value for stance in self.model_.predict(list(X))])

    def score(self, X, y=None) -> float:
        instances = list(X)
        if y is None:
            y = [inst.label.value for inst in instances]
        predicted = self.predict(instances)
        return float(np.mean([p == Stance(g).value for p, g in zip(predicted, y)]))

    def save(self, directory) -> Path:
        self._require_fitted()
        return self.checkpoint_.save(directory)

    @classmethod
    def load(cls, directory) -> "StanceClassifier":
        checkpoint = Checkpoint.load(directory)
        train = checkpoint.config["train"]
        encoder = checkpoint.config["encoder"]
        estimator = cls(
            hidden_dim=encoder["hidden_dim"], n_layers=encoder["n_layers"],
            n_heads=encoder["n_heads"],
            max_sequence_length=encoder["max_sequence_length"],
            dropout_rate=encoder["dropout_rate"],
            learning_rate=train["learning_rate"], batch_size=train["batch_size"],
            epochs=train["epochs"], eta=train["eta"],
            l2_coefficient=train["l2_coefficient"], temperature=train["temperature"],
            variant=train["variant"], patience=train["patience"],
            clip_norm=train["clip_norm"], share_encoders=train["share_encoders"],
            projection_hidden_dim=train["projection_hidden_dim"],
            projection_dim=train["projection_dim"], fusion_dim=train["fusion_dim"],
            seed=train["seed"],
        )
        estimator.checkpoint_ = checkpoint
        estimator.model_ = checkpoint.build_model()
        estimator.classes_ = np.array([stance.value for stance in CLASS_ORDER])
        return estimator
