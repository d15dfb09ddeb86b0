"""Command-line surface.

Commands mirror the pipeline stages: ``prepare`` ingests and splits,
``fit-topics`` learns per-target keywords, ``augment`` masks, ``train``
fits a model, ``evaluate`` scores a checkpoint, ``run`` does the whole
experiment with repeats, ``trace`` records alignment/uniformity during
training, and ``export-embeddings`` dumps masked-sentence vectors.

A flat KEY=VALUE config file (--config) supplies defaults for ``run`` and
``trace``; --set KEY=VALUE overrides individual entries.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .corpus import (ColumnSpec, SCHEMES, VastSubset, load_bundle, load_dataset,
                     make_cross_target_split, make_vast_split, make_zero_shot_split,
                     save_bundle)
from .experiment import (RunConfig, build_bundle, diagnostics_trace, evaluate,
                         export_embeddings, mask_bundle, parse_flat_config,
                         run_experiment)
from .metrics import EvalStyle
from .topicmask import (MaskStrategy, TopicLexicon, TopicModelParams, attach_masks,
                        augment_corpus, fit_topic_lexicon, mask_sentence)
from .training import Checkpoint, EncoderConfig, TrainConfig, Variant, fit


def _column_spec(args) -> ColumnSpec:
    return ColumnSpec(text=args.text_column, target=args.target_column,
                      label=args.label_column, id=args.id_column,
                      seen=args.seen_column, delimiter=args.delimiter)


def _add_column_args(parser) -> None:
    parser.add_argument("--text-column", default="text")
    parser.add_argument("--target-column", default="target")
    parser.add_argument("--label-column", default="label")
    parser.add_argument("--id-column", default=None)
    parser.add_argument("--seen-column", default=None)
    parser.add_argument("--delimiter", default=",")
    parser.add_argument("--scheme", default="generic", choices=sorted(SCHEMES))


def cmd_prepare(args) -> int:
    columns = _column_spec(args)
    scheme = SCHEMES[args.scheme]
    if args.protocol == "vast":
        if not (args.train and args.dev and args.test):
            raise ValueError("vast protocol needs --train/--dev/--test files")
        if columns.seen is None:
            columns = ColumnSpec(**{**columns.__dict__, "seen": "seen"})
        bundle = make_vast_split(args.train, args.dev, args.test,
                                 subset=VastSubset(args.subset),
                                 columns=columns, scheme=scheme)
    else:
        if not args.data:
            raise ValueError(f"{args.protocol} protocol needs --data")
        instances = load_dataset(args.data, columns, scheme)
        if args.protocol == "zero_shot":
            if not args.held_out:
                raise ValueError("zero_shot protocol needs --held-out")
            bundle = make_zero_shot_split(instances, args.held_out,
                                          dev_fraction=args.dev_fraction,
                                          seed=args.seed)
        else:
            if not (args.source and args.dest):
                raise ValueError("cross_target protocol needs --source and --dest")
            bundle = make_cross_target_split(instances, args.source, args.dest,
                                             dev_fraction=args.dev_fraction,
                                             seed=args.seed)
    manifest = save_bundle(bundle, args.out, seed=args.seed)
    counts = bundle.counts()
    print(f"wrote bundle to {args.out} "
          f"(train={counts['train']} dev={counts['dev']} test={counts['test']})")
    print(f"manifest: {manifest}")
    return 0


def cmd_fit_topics(args) -> int:
    bundle, _ = load_bundle(args.bundle)
    params = TopicModelParams(n_topics=args.topics, n_keywords=args.keywords,
                              doc_topic_prior=args.doc_topic_prior,
                              topic_word_prior=args.topic_word_prior,
                              gibbs_iterations=args.iterations, seed=args.seed)
    lexicon = fit_topic_lexicon(bundle.all_instances(), params)
    lexicon.save(args.out)
    print(f"wrote lexicon for {len(lexicon.per_target)} targets to {args.out}")
    return 0


def _augment_single_file(args) -> int:
    columns = _column_spec(args)
    instances = load_dataset(args.data, columns, SCHEMES[args.scheme])
    lexicon = TopicLexicon.load(args.lexicon) if args.lexicon else None
    masked = augment_corpus(instances, lexicon, strategy=MaskStrategy(args.strategy.upper()),
                            fraction=args.fraction, seed=args.seed)
    by_id = {m.instance_id: m.masked_text for m in masked}
    source = Path(args.data)
    out_path = Path(args.out) if args.out else source.with_name(
        source.stem + "_masked" + source.suffix)
    masked_column = f"{columns.text}_masked"
    with source.open(newline="", encoding="utf-8") as src:
        reader = csv.DictReader(src, delimiter=columns.delimiter)
        fieldnames = list(reader.fieldnames) + [masked_column]
        with out_path.open("w", newline="", encoding="utf-8") as dst:
            writer = csv.DictWriter(dst, fieldnames=fieldnames,
                                    delimiter=columns.delimiter)
            writer.writeheader()
            index = 0
            for row in reader:
                identifier = row[columns.id] if columns.id else f"{source.stem}-{index}"
                row[masked_column] = by_id.get(identifier, "")
                writer.writerow(row)
                index += 1
    print(f"wrote masked file to {out_path}")
    return 0


def cmd_augment(args) -> int:
    if args.data:
        return _augment_single_file(args)
    bundle, manifest = load_bundle(args.bundle)
    strategy = MaskStrategy(args.strategy.upper())
    lexicon = None
    if strategy == MaskStrategy.TOPIC:
        if not args.lexicon:
            raise ValueError("topic strategy needs --lexicon (see fit-topics)")
        lexicon = TopicLexicon.load(args.lexicon)

    def mask_split(instances):
        masked = augment_corpus(list(instances), lexicon, strategy=strategy,
                                fraction=args.fraction, seed=args.seed)
        return attach_masks(list(instances), masked)

    from .corpus import DatasetBundle
    masked_bundle = DatasetBundle(train=mask_split(bundle.train),
                                  dev=mask_split(bundle.dev),
                                  test=mask_split(bundle.test),
                                  protocol=bundle.protocol)
    out = args.out or args.bundle
    save_bundle(masked_bundle, out, seed=args.seed,
                extra={"masking": args.strategy, "source_manifest": manifest})
    print(f"wrote masked bundle to {out}")
    return 0


def cmd_train(args) -> int:
    bundle, _ = load_bundle(args.bundle)
    encoder_config = EncoderConfig(hidden_dim=args.hidden_dim, n_layers=args.n_layers,
                                   n_heads=args.n_heads,
                                   max_sequence_length=args.max_sequence_length,
                                   dropout_rate=args.dropout_rate, seed=args.seed)
    train_config = TrainConfig(learning_rate=args.learning_rate,
                               batch_size=args.batch_size, epochs=args.epochs,
                               eta=args.eta, l2_coefficient=args.l2_coefficient,
                               temperature=args.temperature, seed=args.seed,
                               variant=Variant(args.variant), patience=args.patience,
                               clip_norm=args.clip_norm,
                               share_encoders=args.share_encoders,
                               projection_dim=args.projection_dim,
                               fusion_dim=args.fusion_dim)
    style = EvalStyle(args.eval_style) if args.eval_style else None
    checkpoint = fit(bundle, train_config, encoder_config, eval_style=style)
    checkpoint.save(args.out)
    best = checkpoint.history[checkpoint.epoch]
    print(f"wrote checkpoint to {args.out} (best epoch {checkpoint.epoch}, "
          f"dev metric {best['dev_metric']:.4f})")
    return 0


def _print_report(report) -> None:
    print(f"{'class':<10}{'F1':>8}{'support':>9}")
    for stance, value in report.per_class_f1.items():
        print(f"{stance.value:<10}{value:>8.4f}{report.support[stance]:>9}")
    print(f"headline ({report.style.value}): {report.headline:.4f}")


def cmd_evaluate(args) -> int:
    checkpoint = Checkpoint.load(args.checkpoint)
    bundle, _ = load_bundle(args.bundle)
    style = EvalStyle(args.eval_style) if args.eval_style else None
    report = evaluate(checkpoint, bundle, style, run_seed=args.seed,
                      cross_target_micro=args.cross_target_micro, split=args.split)
    _print_report(report)
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2) + "\n",
                                  encoding="utf-8")
        print(f"wrote report to {args.out}")
    return 0


def _run_config(args) -> RunConfig:
    mapping = {}
    if args.config:
        mapping.update(parse_flat_config(Path(args.config).read_text(encoding="utf-8")))
    for entry in args.set or []:
        if "=" not in entry:
            raise ValueError(f"--set expects KEY=VALUE, got {entry!r}")
        key, _, value = entry.partition("=")
        mapping[key.strip()] = value.strip()
    if args.seed is not None:
        mapping["seed"] = str(args.seed)
    if getattr(args, "repeats", None) is not None:
        mapping["repeats"] = str(args.repeats)
    if getattr(args, "variant", None):
        mapping["variant"] = args.variant
    if getattr(args, "out", None):
        mapping["output_dir"] = args.out
    return RunConfig.from_mapping(mapping)


def cmd_run(args) -> int:
    config = _run_config(args)
    result = run_experiment(config)
    summary = result.summary
    print(f"variant={config.variant} repeats={summary['repeats']} "
          f"headline={summary['headline_mean']:.4f} "
          f"(stdev {summary['headline_stdev']:.4f})")
    for report in result.reports:
        print(f"  seed {report.run_seed}: headline {report.headline:.4f}")
    if summary["errors"]:
        for error in summary["errors"]:
            print(f"  seed {error['seed']} FAILED: {error['error']}", file=sys.stderr)
        return 1
    if config.output_dir:
        print(f"wrote reports and summary to {config.output_dir}")
    return 0


def cmd_trace(args) -> int:
    config = _run_config(args)
    records, _ = diagnostics_trace(config, probe_size=args.probe_size,
                                   every=args.every, path=args.trace_out)
    first, last = records[0], records[-1]
    print(f"recorded {len(records)} probes (steps {first['step']}..{last['step']})")
    print(f"alignment  {first['alignment']:.4f} -> {last['alignment']:.4f}")
    print(f"uniformity {first['uniformity']:.4f} -> {last['uniformity']:.4f}")
    if args.trace_out:
        print(f"wrote trace to {args.trace_out}")
    return 0


def cmd_export_embeddings(args) -> int:
    checkpoint = Checkpoint.load(args.checkpoint)
    bundle, _ = load_bundle(args.bundle)
    instances = []
    tags = []
    for split in args.splits.split(","):
        split = split.strip()
        for inst in bundle.split(split):
            instances.append(inst)
            tags.append(split)
    coordinates = export_embeddings(checkpoint, instances, projector=args.projector,
                                    path=args.out, tags=tags)
    print(f"wrote {coordinates.shape[0]} x {coordinates.shape[1]} embeddings to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stancecl",
        description="Topic-masked contrastive stance detection pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="ingest dataset files and build a split bundle")
    p.add_argument("--data")
    p.add_argument("--train")
    p.add_argument("--dev")
    p.add_argument("--test")
    p.add_argument("--protocol", default="zero_shot",
                   choices=("zero_shot", "cross_target", "vast"))
    p.add_argument("--subset", default="ALL", choices=("ZERO", "FEW", "ALL"))
    p.add_argument("--held-out")
    p.add_argument("--source")
    p.add_argument("--dest")
    p.add_argument("--dev-fraction", type=float, default=0.15)
    _add_column_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("fit-topics", help="fit per-target topic keywords")
    p.add_argument("--bundle", required=True)
    p.add_argument("--topics", type=int, default=6)
    p.add_argument("--keywords", type=int, default=5)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--doc-topic-prior", type=float, default=None)
    p.add_argument("--topic-word-prior", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_topics)

    p = sub.add_parser("augment", help="mask a bundle or a single dataset file")
    p.add_argument("--bundle")
    p.add_argument("--data")
    p.add_argument("--lexicon")
    p.add_argument("--strategy", default="topic", choices=("topic", "random"))
    p.add_argument("--fraction", type=float, default=0.15)
    _add_column_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train on an augmented bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--hidden-dim", type=int, default=32)
    p.add_argument("--n-layers", type=int, default=2)
    p.add_argument("--n-heads", type=int, default=4)
    p.add_argument("--max-sequence-length", type=int, default=64)
    p.add_argument("--dropout-rate", type=float, default=0.1)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--eta", type=float, default=0.1)
    p.add_argument("--l2-coefficient", type=float, default=1e-5)
    p.add_argument("--temperature", type=float, default=0.07)
    p.add_argument("--variant", default="full",
                   choices=[v.value for v in Variant])
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--clip-norm", type=float, default=1.0)
    p.add_argument("--share-encoders", action="store_true")
    p.add_argument("--projection-dim", type=int, default=128)
    p.add_argument("--fusion-dim", type=int, default=128)
    p.add_argument("--eval-style", default=None,
                   choices=[s.value for s in EvalStyle])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a bundle split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--split", default="test", choices=("train", "dev", "test"))
    p.add_argument("--eval-style", default=None,
                   choices=[s.value for s in EvalStyle])
    p.add_argument("--cross-target-micro", default="binary",
                   choices=("binary", "three_class"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="full experiment with seeded repeats")
    p.add_argument("--config", help="flat KEY=VALUE config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--repeats", type=int, default=None)
    p.add_argument("--variant", default=None, choices=[v.value for v in Variant])
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("trace", help="train once, recording alignment/uniformity")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--probe-size", type=int, default=32)
    p.add_argument("--every", type=int, default=5)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--trace-out", default=None)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("export-embeddings", help="dump masked-sentence embeddings")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--splits", default="train,test")
    p.add_argument("--projector", default="none", choices=("none", "pca2d"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_embeddings)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
