import numpy as np
import pytest
import torch

from semrelay import textpipe as tp
from semrelay.channel import ChannelParams
from semrelay.semnet import ModelConfig, SemanticRelayModel

CORPUS_PATH = "data/sample_corpus.txt"


@pytest.fixture(scope="session")
def corpus_lines():
    return tp.preprocess_corpus(tp.read_corpus(CORPUS_PATH))


@pytest.fixture(scope="session")
def vocab(corpus_lines):
    return tp.build_vocabulary(corpus_lines, 512)


@pytest.fixture(scope="session")
def sentences(corpus_lines, vocab):
    return [tp.tokenize(line, vocab) for line in corpus_lines]


@pytest.fixture(scope="session")
def toy_model(vocab):
    torch.manual_seed(0)
    return SemanticRelayModel(ModelConfig.toy(vocab.size, seed=5))


@pytest.fixture()
def awgn_params():
    return ChannelParams()


@pytest.fixture()
def quiet_params():
    # effectively noiseless channel for identity checks
    return ChannelParams(n0_dbm_hz=-400.0)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
