"""Byte-pair encoding over lexical pre-tokens.

Pre-tokenization happens at lexer boundaries: merges are learned and applied
inside one lexical token at a time, so a sub-word can never straddle two
tokens and every occurrence of an identifier name segments identically.
Comments and whitespace are not encoded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .lexer import LanguageProfile, LexToken, content_tokens, lex

SENTINEL = "<s>"
UNKNOWN = "<unk>"
BPE_FORMAT_VERSION = 1


class BpeError(ValueError):
    pass


@dataclass
class BpeModel:
    base_alphabet: tuple
    merges: tuple          # ((left, right), ...) in training order
    specials: tuple = (SENTINEL, UNKNOWN)
    symbol_to_id: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.symbol_to_id:
            symbols = list(self.specials) + list(self.base_alphabet) \
                + [a + b for a, b in self.merges]
            self.symbol_to_id = {s: i for i, s in enumerate(symbols)}
        self.id_to_symbol = {i: s for s, i in self.symbol_to_id.items()}

    @property
    def vocab_size(self) -> int:
        return len(self.symbol_to_id)

    @property
    def sentinel_id(self) -> int:
        return self.symbol_to_id[SENTINEL]

    @property
    def unknown_id(self) -> int:
        return self.symbol_to_id[UNKNOWN]

    def segment(self, text: str) -> list:
        """Split one pre-token into sub-word symbols, merges in training order."""
        cached = self._cache.get(text)
        if cached is not None:
            return cached
        alphabet = set(self.base_alphabet)
        symbols = [c if c in alphabet else UNKNOWN for c in text]
        for left, right in self.merges:
            if len(symbols) < 2:
                break
            merged = left + right
            out = []
            i = 0
            while i < len(symbols):
                if i + 1 < len(symbols) and symbols[i] == left and symbols[i + 1] == right:
                    out.append(merged)
                    i += 2
                else:
                    out.append(symbols[i])
                    i += 1
            symbols = out
        self._cache[text] = symbols
        return symbols

    def encode_token(self, text: str) -> list:
        return [self.symbol_to_id[s] for s in self.segment(text)]

    def decode(self, ids) -> str:
        return "".join(self.id_to_symbol[int(i)] for i in ids)

    def to_dict(self) -> dict:
        return {"version": BPE_FORMAT_VERSION,
                "base_alphabet": list(self.base_alphabet),
                "merges": [list(m) for m in self.merges],
                "specials": list(self.specials)}

    @classmethod
    def from_dict(cls, d: dict) -> "BpeModel":
        if d.get("version") != BPE_FORMAT_VERSION:
            raise BpeError(f"unsupported BPE model version: {d.get('version')!r}")
        return cls(base_alphabet=tuple(d["base_alphabet"]),
                   merges=tuple((a, b) for a, b in d["merges"]),
                   specials=tuple(d["specials"]))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "BpeModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def pre_tokenize(corpus, profile: LanguageProfile) -> list:
    """Lexical pre-tokens of every source in `corpus` (content tokens only)."""
    out = []
    for source in corpus:
        out.extend(t.text for t in content_tokens(lex(source, profile)))
    return out


def train_bpe(corpus, num_merges: int, profile: LanguageProfile) -> BpeModel:
    """Learn `num_merges` merges by descending pair frequency over pre-tokens.

    Frequency ties break on lexicographic pair order, which makes training
    deterministic for a fixed corpus.
    """
    if not corpus:
        raise BpeError("train_bpe: corpus is empty")
    if num_merges < 0:
        raise BpeError("train_bpe: num_merges must be >= 0")

    pre_tokens = pre_tokenize(corpus, profile)
    counts: dict = {}
    for tok in pre_tokens:
        counts[tok] = counts.get(tok, 0) + 1
    alphabet = tuple(sorted({c for tok in counts for c in tok}))

    words = {tok: list(tok) for tok in counts}
    merges = []
    for _ in range(num_merges):
        pair_counts: dict = {}
        for tok, symbols in words.items():
            freq = counts[tok]
            for pair in zip(symbols, symbols[1:]):
                pair_counts[pair] = pair_counts.get(pair, 0) + freq
        if not pair_counts:
            break
        best = min(pair_counts, key=lambda p: (-pair_counts[p], p))
        merges.append(best)
        left, right = best
        merged = left + right
        for tok, symbols in words.items():
            if len(symbols) < 2:
                continue
            out = []
            i = 0
            while i < len(symbols):
                if i + 1 < len(symbols) and symbols[i] == left and symbols[i + 1] == right:
                    out.append(merged)
                    i += 2
                else:
                    out.append(symbols[i])
                    i += 1
            words[tok] = out

    return BpeModel(base_alphabet=alphabet, merges=tuple(merges))


@dataclass(frozen=True)
class SubwordSeq:
    """Sub-word ids plus their character spans in the original source.

    Position 0 holds the classification sentinel (span (0, 0)); sub-word
    spans never cross a lexical token boundary.
    """
    ids: np.ndarray          # int32, shape (n,)
    spans: tuple             # (start, end) per position
    token_index: tuple       # index into the lexed content tokens, -1 for sentinel

    @property
    def n(self) -> int:
        return int(self.ids.shape[0])

    def __len__(self) -> int:
        return self.n


def encode(model: BpeModel, tokens, max_len: int, add_sentinel: bool = True) -> SubwordSeq:
    """Encode lexed tokens into a SubwordSeq, truncated to `max_len`.

    Whole trailing sub-words are dropped on truncation; characters outside
    the base alphabet map to the unknown symbol.
    """
    if max_len < 2:
        raise BpeError("encode: max_len must be >= 2")
    ids = []
    spans = []
    token_index = []
    if add_sentinel:
        ids.append(model.sentinel_id)
        spans.append((0, 0))
        token_index.append(-1)
    content = [t for t in tokens if t.kind not in ("whitespace", "comment")]
    for ti, tok in enumerate(content):
        symbols = model.segment(tok.text)
        offset = tok.start
        for sym in symbols:
            if len(ids) >= max_len:
                break
            width = 1 if sym == UNKNOWN else len(sym)
            ids.append(model.symbol_to_id[sym])
            spans.append((offset, offset + width))
            token_index.append(ti)
            offset += width
        if len(ids) >= max_len:
            break
    return SubwordSeq(ids=np.asarray(ids, dtype=np.int32),
                      spans=tuple(spans), token_index=tuple(token_index))
