import numpy as np
import pytest
from hypothesis import settings

from hydraheads.ingest import Vocabulary, split_words
from hydraheads.model import ModelConfig, init_model
from hydraheads.synthetic import generate_treebank, shortcut_examples

settings.register_profile("ci", max_examples=50, deadline=None)
settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def treebank():
    return generate_treebank(1000, seed=0)


@pytest.fixture(scope="session")
def desk_vocab(treebank):
    words = [w.lower() for s in treebank for w in s.tokens]
    words += [w for ex in shortcut_examples() for w in split_words(ex.text)]
    return Vocabulary.build(words, min_freq=2)


@pytest.fixture
def tiny_cfg():
    return ModelConfig(vocab_size=30, d_model=8, n_heads=2, n_body_layers=2, d_ff=16, max_len=12)


@pytest.fixture
def tiny_body(tiny_cfg):
    return init_model(tiny_cfg, seed=0)
