import random

import pytest
import torch

from pginflect.data import InflectionExample, Vocabulary
from pginflect.model import InflectionTransformer, ModelConfig


def tiny_config(vocab_size: int, **overrides) -> ModelConfig:
    defaults = dict(
        vocab_size=vocab_size,
        embedding_dim=16,
        encoder_layers=1,
        decoder_layers=1,
        feed_forward_dim=32,
        attention_heads=2,
        dropout=0.0,
    )
    defaults.update(overrides)
    return ModelConfig(**defaults)


def tiny_model(examples, seed=0, **overrides) -> InflectionTransformer:
    vocab = Vocabulary.build(examples)
    torch.manual_seed(seed)
    return InflectionTransformer(tiny_config(len(vocab), **overrides), vocab)


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def toy_examples():
    return [
        InflectionExample("hug", "hugged", ("V", "PST")),
        InflectionExample("seel", "seels", ("V", "3", "SG", "PRS")),
        InflectionExample("walk", "walked", ("V", "PST")),
        InflectionExample("walk", "walks", ("V", "3", "SG", "PRS")),
    ]
