"""Zero-shot stance detection with topic-masked contrastive sentence features.

Pipeline: mask each sentence's topic words (LDA keywords per target), learn
target-invariant syntactic features by contrasting dropout views of the
masked sentences, fuse them with joint target+text encodings through a
retrieval attention, and classify. Ships corpus/split tooling for the
standard benchmarks, an end-to-end experiment harness, and a CLI.
"""

from .contrastive import (ProjectionHead, alignment_metric, nt_xent_loss, project,
                          uniformity_metric)
from .corpus import (ColumnSpec, DataError, DatasetBundle, Instance, LabelScheme,
                     SCHEMES, SchemaError, SplitProtocol, Stance, VastSubset,
                     load_bundle, load_dataset, make_cross_target_split,
                     make_vast_split, make_zero_shot_split, save_bundle)
from .encoder import (EncodeMode, EncodedText, EncoderConfig, JointEncoding,
                      PretrainedEncoderAdapter, TextEncoder, ViewPair, Vocabulary,
                      tokenize)
from .experiment import (ExperimentResult, RunConfig, TraceRecorder, build_bundle,
                         diagnostics_trace, evaluate, export_embeddings, mask_bundle,
                         run_experiment, summarize)
from .fusion import (AttentionFusion, StanceHead, attend_fuse, attention_weights,
                     classify, concat_fuse, fuse_batch)
from .metrics import (CLASS_ORDER, ConfusionTable, EvalStyle, MetricReport,
                      f1_per_class, headline_metric, style_for_protocol,
                      vast_headline)
from .synthetic import (COVID_TARGET_COUNTS, SEM16_DEFAULT_TARGETS,
                        SEM16_TARGET_COUNTS, SyntheticTask, VAST_SPLIT_SIZES,
                        WTWT_TARGET_COUNTS, make_synthetic_task,
                        write_benchmark_fixture, write_vast_fixture)
from .topicmask import (BUILTIN_STOP_WORDS, MASK_TOKEN, MaskStrategy, MaskedInstance,
                        TopicLexicon, TopicMasker, TopicModelParams, attach_masks,
                        augment_corpus, fit_target_keywords, fit_topic_lexicon,
                        mask_random, mask_sentence)
from .training import (Checkpoint, StanceClassifier, StanceModel, TrainConfig,
                       TrainingError, Variant, cls_loss, fit, make_optimizer,
                       one_hot_labels, total_loss, train_step)

__version__ = "0.1.0"
