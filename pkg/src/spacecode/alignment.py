"""Identifier-to-subword alignment.

Maps every renameable identifier name to the sub-word positions of all its
occurrences inside the encoded window. All occurrences of one name share a
single sub-word id sequence, which is what lets a perturbation matrix be
tied across them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bpe import SubwordSeq
from .lexer import LanguageProfile, content_tokens


class AlignmentError(AssertionError):
    """Sub-word spans intersected a non-identifier token; impossible by
    construction unless the encoder and lexer disagree."""


@dataclass(frozen=True)
class IdentifierEntry:
    name: str
    subword_ids: tuple          # shared by every occurrence, length k
    occurrence_starts: tuple    # positions p; each occurrence covers [p, p + k)

    @property
    def k(self) -> int:
        return len(self.subword_ids)

    def ranges(self) -> list:
        return [(p, p + self.k) for p in self.occurrence_starts]


@dataclass(frozen=True)
class IdentifierMap:
    entries: tuple

    @property
    def m(self) -> int:
        return len(self.entries)

    def names(self) -> list:
        return [e.name for e in self.entries]

    def positions(self) -> set:
        out = set()
        for e in self.entries:
            for p, q in e.ranges():
                out.update(range(p, q))
        return out


EMPTY_MAP = IdentifierMap(entries=())


def build_identifier_map(seq: SubwordSeq, tokens, profile: LanguageProfile) -> IdentifierMap:
    """Alignment for `seq`, which must have been produced from `tokens`.

    Occurrences that are cut by the truncation window are omitted; builtin
    names are excluded along with keywords.
    """
    content = content_tokens(tokens)

    # positions per content-token index, in sequence order
    per_token: dict = {}
    for pos, ti in enumerate(seq.token_index):
        if ti >= 0:
            per_token.setdefault(ti, []).append(pos)

    found: dict = {}
    order: list = []
    for ti, positions in per_token.items():
        tok = content[ti]
        if tok.kind != "identifier" or tok.text in profile.builtins:
            continue
        start, end = positions[0], positions[-1] + 1
        if end - start != len(positions):
            raise AlignmentError(f"non-contiguous sub-words for identifier {tok.text!r}")
        ids = tuple(int(i) for i in seq.ids[start:end])
        expected_chars = sum(b - a for a, b in seq.spans[start:end])
        if expected_chars != len(tok.text):
            continue  # occurrence truncated mid-token
        if tok.text not in found:
            found[tok.text] = (ids, [start])
            order.append(tok.text)
        else:
            prev_ids, starts = found[tok.text]
            if prev_ids != ids:
                raise AlignmentError(
                    f"identifier {tok.text!r} segmented inconsistently: "
                    f"{prev_ids} vs {ids}")
            starts.append(start)

    entries = tuple(IdentifierEntry(name, found[name][0], tuple(found[name][1]))
                    for name in order)
    return IdentifierMap(entries=entries)
