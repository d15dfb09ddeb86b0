"""End-to-end acceptance checks.

Each test covers one numbered acceptance criterion and prints a PASS line
with its headline numbers (run pytest with -s to see them inline).
"""

import math
import random
import time

import numpy as np
import pytest
import torch

import stancecl
from stancecl import (AttentionFusion, ColumnSpec, EncoderConfig, RunConfig,
                      SCHEMES, StanceHead, Stance, TextEncoder, Vocabulary,
                      attend_fuse, attention_weights, classify, cls_loss,
                      concat_fuse, diagnostics_trace, f1_per_class,
                      headline_metric, load_dataset, make_zero_shot_split,
                      mask_sentence, nt_xent_loss, run_experiment, vast_headline)
from stancecl.encoder import EncodeMode
from stancecl.metrics import CLASS_ORDER, ConfusionTable, EvalStyle
from stancecl.synthetic import (COVID_TARGET_COUNTS, SEM16_TARGET_COUNTS,
                                WTWT_TARGET_COUNTS, write_benchmark_fixture)

torch.set_num_threads(1)

# Frozen configuration of the synthetic transfer benchmark (criteria 7-8).
# Thresholds were validated against the no-contrastive baseline before
# freezing; see the run config below.
SYNTHETIC_RUN = dict(
    dataset_kind="synthetic",
    synthetic_train=500,
    synthetic_dev=90,
    synthetic_test=250,
    synthetic_correlation=0.94,
    gibbs_iterations=60,
    epochs=16,
    learning_rate=2e-3,
    batch_size=32,
    hidden_dim=32,
    n_heads=4,
    n_layers=2,
    projection_dim=32,
    projection_hidden_dim=32,
    fusion_dim=32,
    max_sequence_length=32,
    dropout_rate=0.1,
    eta=0.5,
    patience=None,
    repeats=5,
    seed=0,
)
FULL_F1_THRESHOLD = 0.85
CL_GAP_THRESHOLD = 0.05


def report(number, message):
    print(f"\n[criterion {number}] PASS - {message}")


def max_relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.abs(numeric).max()), float(np.abs(analytic).max()), 1e-10)
    return float(np.abs(analytic - numeric).max()) / scale


class TestCriterion1NtXentOracle:
    def brute_force(self, rows, temperature):
        n = len(rows)

        def cosine(u, v):
            return float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))

        total = 0.0
        for i in range(n):
            partner = i + 1 if i % 2 == 0 else i - 1
            numerator = math.exp(cosine(rows[i], rows[partner]) / temperature)
            denominator = sum(math.exp(cosine(rows[i], rows[j]) / temperature)
                              for j in range(n) if j != i)
            total += -math.log(numerator / denominator)
        return total / n

    def test_oracle_equivalence(self):
        start = time.monotonic()
        rng = np.random.default_rng(1001)
        worst = 0.0
        for _ in range(100):
            pairs = int(rng.integers(1, 9))
            dim = int(rng.integers(2, 17))
            temperature = float(rng.uniform(0.05, 1.0))
            batch = rng.normal(size=(2 * pairs, dim))
            ours = float(nt_xent_loss(torch.tensor(batch), temperature))
            if pairs == 1:
                assert ours == 0.0
                continue
            reference = self.brute_force(batch, temperature)
            relative = abs(ours - reference) / max(abs(reference), 1e-300)
            worst = max(worst, relative)
            assert relative <= 1e-10
        # the single-pair case returns exactly zero, always
        for _ in range(10):
            batch = rng.normal(size=(2, int(rng.integers(2, 9))))
            assert float(nt_xent_loss(torch.tensor(batch), 0.07)) == 0.0
        elapsed = time.monotonic() - start
        assert elapsed < 10.0
        report(1, f"contrastive loss matches direct summation on 100 batches "
                  f"(worst rel err {worst:.2e}, {elapsed:.1f}s)")


class TestCriterion2GradientChecks:
    def test_nt_xent_gradients(self):
        start = time.monotonic()
        rng = np.random.default_rng(2002)
        worst = 0.0
        for _ in range(20):
            pairs = int(rng.integers(2, 5))
            dim = int(rng.integers(2, 7))
            temperature = float(rng.uniform(0.05, 1.0))
            batch = torch.tensor(rng.normal(size=(2 * pairs, dim)),
                                 requires_grad=True)
            loss = nt_xent_loss(batch, temperature)
            (analytic,) = torch.autograd.grad(loss, batch)
            values = batch.detach().clone()
            numeric = torch.zeros_like(values)
            step = 1e-6
            for i in range(values.shape[0]):
                for j in range(values.shape[1]):
                    upper, lower = values.clone(), values.clone()
                    upper[i, j] += step
                    lower[i, j] -= step
                    numeric[i, j] = (float(nt_xent_loss(upper, temperature))
                                     - float(nt_xent_loss(lower, temperature))) / (2 * step)
            error = max_relative_error(analytic.numpy(), numeric.numpy())
            worst = max(worst, error)
            assert error <= 1e-4
        self.ntxent_elapsed = time.monotonic() - start
        report("2a", f"contrastive-loss gradients match finite differences on 20 "
                     f"configurations (worst rel err {worst:.2e})")

    def test_supervised_path_gradients(self):
        start = time.monotonic()
        rng = np.random.default_rng(2003)
        vocab = Vocabulary.build(["red blue green word token list small test"])
        worst = 0.0
        for trial in range(20):
            hidden = int(rng.choice([4, 8]))
            encoder = TextEncoder(
                EncoderConfig(hidden_dim=hidden, n_heads=2, n_layers=1,
                              max_sequence_length=16, dropout_rate=0.0,
                              seed=trial), vocab)
            fusion = AttentionFusion(hidden, 3, seed=trial + 50)
            head = StanceHead(2 * hidden + 3, 3, seed=trial + 90)
            words = ["red", "blue", "green", "word", "token", "list"]
            text = " ".join(rng.choice(words, size=int(rng.integers(2, 6))))
            target = str(rng.choice(words))
            label = torch.zeros(1, 3, dtype=torch.float64)
            label[0, int(rng.integers(0, 3))] = 1.0

            def loss_value():
                encoded = encoder.encode_joint(target, text, EncodeMode.DETERMINISTIC)
                fused = attend_fuse(encoded.pooled, encoded.pooled, encoded.tokens,
                                    fusion)
                probabilities = classify(fused, head)
                return cls_loss(probabilities[None, :], label)

            loss = loss_value()
            tensors = [fusion.w_q, fusion.w_k, fusion.w_v, head.w_o, head.b_o,
                       encoder.embedding.weight]
            analytic = torch.autograd.grad(loss, tensors)
            step = 1e-6
            for tensor, gradient in zip(tensors, analytic):
                flat = tensor.detach().reshape(-1)
                numeric = torch.zeros_like(flat)
                for index in range(flat.numel()):
                    with torch.no_grad():
                        original = float(flat[index])
                        flat[index] = original + step
                        upper = float(loss_value())
                        flat[index] = original - step
                        lower = float(loss_value())
                        flat[index] = original
                    numeric[index] = (upper - lower) / (2 * step)
                error = max_relative_error(gradient.numpy(),
                                           numeric.reshape(tensor.shape).numpy())
                worst = max(worst, error)
                assert error <= 1e-4
        elapsed = time.monotonic() - start
        assert elapsed < 60.0
        report("2b", f"supervised-path gradients (fusion, classifier, embeddings) "
                     f"match finite differences on 20 configurations "
                     f"(worst rel err {worst:.2e}, {elapsed:.1f}s)")


class TestCriterion3FusionInvariants:
    def test_fusion_invariants(self):
        rng = np.random.default_rng(3003)
        for _ in range(1000):
            dim = int(rng.integers(2, 8))
            fusion_dim = int(rng.integers(2, 8))
            params = AttentionFusion(dim, fusion_dim, seed=int(rng.integers(10000)))
            n = int(rng.integers(1, 7))
            h = torch.tensor(rng.normal(size=dim))
            tokens = torch.tensor(rng.normal(size=(n, dim)))
            alpha = attention_weights(h, tokens, params).detach()
            assert abs(float(alpha.sum()) - 1.0) <= 1e-9
            assert bool((alpha > 0).all())
        # softmax shift invariance on scores and logits
        for _ in range(200):
            scores = torch.tensor(rng.normal(size=int(rng.integers(2, 9))))
            shift = float(rng.normal() * 10)
            assert torch.allclose(torch.softmax(scores, 0),
                                  torch.softmax(scores + shift, 0), atol=1e-9)
        head = StanceHead(4, 3, seed=7)
        f = torch.tensor(rng.normal(size=4))
        base = classify(f, head).detach()
        with torch.no_grad():
            head.b_o += 5.4321
        assert torch.allclose(base, classify(f, head).detach(), atol=1e-9)
        # exact coincidence cases
        for _ in range(100):
            dim = int(rng.integers(2, 6))
            params = AttentionFusion(dim, dim, seed=int(rng.integers(10000)))
            h = torch.tensor(rng.normal(size=dim))
            z = torch.tensor(rng.normal(size=dim))
            single = torch.tensor(rng.normal(size=(1, dim)))
            assert torch.equal(attend_fuse(h, z, single, params).detach(),
                               concat_fuse(h, z, single, params).detach())
            n = int(rng.integers(2, 7))
            identical = torch.tensor(np.tile(rng.normal(size=dim), (n, 1)))
            assert torch.equal(attend_fuse(h, z, identical, params).detach(),
                               concat_fuse(h, z, identical, params).detach())
        report(3, "attention weights normalized, shift invariance holds, and the "
                  "two fusion variants coincide exactly on singleton/identical tokens")


class TestCriterion4MaskingFidelity:
    REFERENCE_TEXT = ("Today Europe is breaking heat records, while Asia is "
                      "breaking the lowest temperature records! Should we not "
                      "be concerned?")
    REFERENCE_KEYWORDS = ["breaking", "heat", "records", "the", "lowest",
                          "temperature", "concerned"]
    REFERENCE_MASKED = ("Today Europe is [MASK], while Asia is [MASK]! Should "
                        "we not be [MASK]?")

    def test_masking_fidelity(self):
        assert mask_sentence(self.REFERENCE_TEXT,
                             self.REFERENCE_KEYWORDS) == self.REFERENCE_MASKED
        rng = random.Random(4004)
        words = ["storm", "tax", "the", "ою", "vote", "is", "rally", "mask",
                 "x2", "co-op", "heat", "we"]
        puncts = ["", ",", "!", "?", "...", "(", ")", '"', ";"]
        for _ in range(500):
            chunks = []
            for _ in range(rng.randint(1, 18)):
                word = rng.choice(words)
                if rng.random() < 0.25:
                    word = word.capitalize()
                chunks.append(rng.choice(puncts) + word + rng.choice(puncts))
            sentence = " ".join(chunks)
            keywords = rng.sample(words, rng.randint(0, 5))
            once = mask_sentence(sentence, keywords)
            assert mask_sentence(once, keywords) == once
        report(4, "reference masked sentence reproduced; idempotence holds on a "
                  "500-sentence fuzz corpus")


class TestCriterion5SplitArithmetic:
    def test_split_arithmetic(self, tmp_path):
        checks = []

        sem16 = write_benchmark_fixture(
            tmp_path / "sem16.csv", SEM16_TARGET_COUNTS,
            label_names=("FAVOR", "AGAINST", "NONE"),
            targets=("DT", "HC", "FM", "LA", "AT", "CC"))
        instances = load_dataset(sem16, ColumnSpec(id="id"), SCHEMES["sem16"])
        bundle = make_zero_shot_split(instances, "DT", dev_fraction=0.15, seed=0)
        assert len(bundle.test) == 707
        assert not (bundle.targets("train") | bundle.targets("dev")) & {"DT"}
        assert len(bundle.train) + len(bundle.dev) + len(bundle.test) == len(instances)
        checks.append("SEM16 DT test=707")

        wtwt = write_benchmark_fixture(
            tmp_path / "wtwt.csv", WTWT_TARGET_COUNTS,
            label_names=("support", "refute", "comment"),
            extra_label="unrelated", extra_per_target=41)
        instances = load_dataset(wtwt, ColumnSpec(id="id"), SCHEMES["wtwt"])
        bundle = make_zero_shot_split(instances, "CA", dev_fraction=0.15, seed=1)
        assert len(bundle.test) == 8507
        assert not (bundle.targets("train") | bundle.targets("dev")) & {"CA"}
        checks.append("WT-WT CA test=8507 (unrelated rows dropped)")

        covid = write_benchmark_fixture(
            tmp_path / "covid.csv", COVID_TARGET_COUNTS,
            label_names=("In-Favor", "Against", "Neither"))
        instances = load_dataset(covid, ColumnSpec(id="id"), SCHEMES["covid19"])
        bundle = make_zero_shot_split(instances, "WA", dev_fraction=0.15, seed=2)
        assert len(bundle.test) == 907
        assert not (bundle.targets("train") | bundle.targets("dev")) & {"WA"}
        checks.append("COVID-19 WA test=907")

        report(5, "; ".join(checks) + "; zero target leakage on every bundle")


class TestCriterion6MetricOracle:
    def brute_force_report(self, gold, predicted):
        per_class = {}
        for stance in CLASS_ORDER:
            tp = sum(1 for g, p in zip(gold, predicted)
                     if g == stance and p == stance)
            fp = sum(1 for g, p in zip(gold, predicted)
                     if g != stance and p == stance)
            fn = sum(1 for g, p in zip(gold, predicted)
                     if g == stance and p != stance)
            if tp == 0:
                per_class[stance] = 0.0
            else:
                precision = tp / (tp + fp)
                recall = tp / (tp + fn)
                per_class[stance] = 2 * precision * recall / (precision + recall)
        return per_class

    def test_metric_oracle(self):
        rng = np.random.default_rng(6006)
        classes = list(CLASS_ORDER)
        for _ in range(200):
            n = int(rng.integers(1, 40))
            gold = [classes[i] for i in rng.integers(0, 3, size=n)]
            predicted = [classes[i] for i in rng.integers(0, 3, size=n)]
            table = ConfusionTable.from_labels(gold, predicted)
            ours = f1_per_class(table)
            reference = self.brute_force_report(gold, predicted)
            assert ours == reference
            expected_fa = (reference[Stance.FAVOR] + reference[Stance.AGAINST]) / 2
            assert headline_metric(table, EvalStyle.FAVOR_AGAINST) == expected_fa
            expected_all = (reference[Stance.FAVOR] + reference[Stance.AGAINST]
                            + reference[Stance.NEUTRAL]) / 3
            assert headline_metric(table, EvalStyle.ALL_CLASS) == pytest.approx(
                expected_all, abs=1e-15)
        reported = vast_headline([0.606, 0.673, 0.898])
        assert abs(reported - 0.725) < 0.05
        report(6, f"per-class F1 and headlines match the brute-force oracle on 200 "
                  f"cases; VAST all-class mean {reported:.4f} consistent with the "
                  f"reported 0.725")


class TestCriterion7SyntheticTransfer:
    def test_zero_shot_transfer_with_contrastive_gain(self):
        start = time.monotonic()
        full = run_experiment(RunConfig(variant="full", **SYNTHETIC_RUN))
        baseline = run_experiment(RunConfig(variant="no_cl", **SYNTHETIC_RUN))
        elapsed = time.monotonic() - start
        full_mean = full.summary["headline_mean"]
        baseline_mean = baseline.summary["headline_mean"]
        gap = full_mean - baseline_mean
        assert not full.summary["errors"] and not baseline.summary["errors"]
        assert full_mean >= FULL_F1_THRESHOLD
        assert gap >= CL_GAP_THRESHOLD
        assert elapsed < 300.0
        report(7, f"synthetic zero-shot transfer: full={full_mean:.3f} "
                  f"(threshold {FULL_F1_THRESHOLD}), no-contrastive="
                  f"{baseline_mean:.3f}, gap={gap:+.3f} (threshold "
                  f"{CL_GAP_THRESHOLD}), {elapsed:.0f}s for 10 runs")


class TestCriterion8DiagnosticsTrend:
    def test_uniformity_improves_alignment_steady(self):
        # Traced at the default contrastive weight (0.1), the reported
        # training recipe, rather than the transfer benchmark's tuned value.
        config = RunConfig(variant="full", **{**SYNTHETIC_RUN, "repeats": 1,
                                              "epochs": 8, "eta": 0.1})
        records, _ = diagnostics_trace(config, probe_size=32, every=5)
        first, last = records[0], records[-1]
        assert first["step"] == 0
        assert last["uniformity"] < first["uniformity"]
        assert last["alignment"] <= 2.0 * max(first["alignment"], 1e-12)
        report(8, f"uniformity improved {first['uniformity']:.3f} -> "
                  f"{last['uniformity']:.3f}; alignment {first['alignment']:.4f} "
                  f"-> {last['alignment']:.4f} stays within 2x of its start")


class TestCriterion9PaperScaleOutOfScope:
    def test_extended_run_is_documented_non_gating(self):
        # Full-benchmark F1 levels need a pretrained contextual encoder and
        # full datasets; the package ships the adapter seam and an extended
        # run config, but nothing gates on them.
        assert hasattr(stancecl, "PretrainedEncoderAdapter")
        from pathlib import Path

        package_root = Path(stancecl.__file__).resolve().parents[2]
        readme = (package_root / "README.md")
        config = package_root / "configs" / "extended_pretrained.cfg"
        assert readme.exists()
        text = readme.read_text(encoding="utf-8").lower()
        assert "non-gating" in text
        assert config.exists()
        report(9, "pretrained-encoder adapter seam present; extended run config "
                  "documented as non-gating")
