import random

import pytest
import torch

from stancecl import EncoderConfig, Instance, Stance, TextEncoder, Vocabulary

torch.set_num_threads(1)


@pytest.fixture
def small_vocab():
    return Vocabulary.build([
        "the cat sat on the mat today",
        "dogs run fast and far",
        "should we not be for cats ?",
        "there is no more to dogs .",
        "[MASK] words appear here",
    ])


@pytest.fixture
def small_encoder(small_vocab):
    config = EncoderConfig(hidden_dim=16, n_heads=4, n_layers=2,
                           max_sequence_length=32, dropout_rate=0.1, seed=11)
    return TextEncoder(config, small_vocab)


def make_instances(n, targets=("alpha", "beta"), with_masks=False, seed=0):
    rng = random.Random(seed)
    instances = []
    for i in range(n):
        target = targets[i % len(targets)]
        if i % 2 == 0:
            text = f"should we not be for item{i} and thing{i} ?"
            label = Stance.FAVOR
        else:
            text = f"there is no more to item{i} than thing{i} ."
            label = Stance.AGAINST
        masked = None
        if with_masks:
            masked = text.replace(f"item{i}", "[MASK]").replace(f"thing{i}", "[MASK]")
        instances.append(Instance(id=f"inst-{i}", text=text, target=target,
                                  label=label, masked_text=masked,
                                  seen_flag=bool(rng.random() < 0.5) if False else None))
    return instances


@pytest.fixture
def labeled_instances():
    return make_instances(12)
