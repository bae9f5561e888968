import numpy as np
import pytest

from spacecode.runtime import tune_allocator
from spacecode.alignment import build_identifier_map
from spacecode.bpe import encode, train_bpe
from spacecode.lexer import MINILANG, lex
from spacecode.minilang import generate_corpus
from spacecode.training import EncodedSample

tune_allocator()


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(42, 120)


@pytest.fixture(scope="session")
def small_bpe(small_corpus):
    return train_bpe([s.program.source for s in small_corpus], 400, MINILANG)


@pytest.fixture(scope="session")
def encode_sample(small_bpe):
    def _encode(sample, max_len=256):
        tokens = lex(sample.program.source, MINILANG)
        seq = encode(small_bpe, tokens, max_len)
        idmap = build_identifier_map(seq, tokens, MINILANG)
        return EncodedSample(seq.ids, idmap, sample.label, sample.sample_id)
    return _encode


@pytest.fixture(scope="session")
def encoded_corpus(small_corpus, encode_sample):
    return [encode_sample(s) for s in small_corpus]
