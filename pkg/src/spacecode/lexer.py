"""Scanner for small C-like languages.

Tokens tile the source exactly (whitespace and comments included), so every
later stage can reason in original character spans. Identifier-shaped text
inside strings or comments never becomes an identifier token.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

TOKEN_KINDS = ("keyword", "identifier", "literal", "punct", "comment", "whitespace")

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")

# longest match first
_PUNCT = ("<=", ">=", "==", "!=", "&&", "||", "+", "-", "*", "/", "%",
          "=", "<", ">", "(", ")", "{", "}", ",", ";", "!", "[", "]")


class LexError(ValueError):
    """Malformed source; carries the character position of the problem."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


@dataclass(frozen=True)
class LanguageProfile:
    name: str
    keywords: frozenset
    builtins: frozenset
    line_comment: str = "//"
    block_comment: tuple = ("/*", "*/")
    string_quote: str = '"'

    def is_identifier(self, text: str) -> bool:
        return bool(_IDENT_RE.fullmatch(text)) and text not in self.keywords

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "keywords": sorted(self.keywords),
            "builtins": sorted(self.builtins),
            "line_comment": self.line_comment,
            "block_comment": list(self.block_comment),
            "string_quote": self.string_quote,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LanguageProfile":
        return cls(
            name=d["name"],
            keywords=frozenset(d["keywords"]),
            builtins=frozenset(d["builtins"]),
            line_comment=d.get("line_comment", "//"),
            block_comment=tuple(d.get("block_comment", ("/*", "*/"))),
            string_quote=d.get("string_quote", '"'),
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "LanguageProfile":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


MINILANG = LanguageProfile(
    name="minilang",
    keywords=frozenset({"int", "if", "else", "for", "while", "return", "true", "false"}),
    builtins=frozenset({"alloc", "release", "use", "print"}),
)


@dataclass(frozen=True)
class LexToken:
    kind: str
    start: int
    end: int
    text: str

    @property
    def span(self) -> tuple:
        return (self.start, self.end)


def lex(source: str, profile: LanguageProfile) -> list:
    """Scan `source` into tokens whose spans tile it exactly."""
    tokens = []
    i = 0
    n = len(source)
    lc = profile.line_comment
    bc_open, bc_close = profile.block_comment
    quote = profile.string_quote

    while i < n:
        c = source[i]
        if c.isspace():
            j = i + 1
            while j < n and source[j].isspace():
                j += 1
            tokens.append(LexToken("whitespace", i, j, source[i:j]))
        elif lc and source.startswith(lc, i):
            j = source.find("\n", i)
            j = n if j < 0 else j
            tokens.append(LexToken("comment", i, j, source[i:j]))
        elif bc_open and source.startswith(bc_open, i):
            j = source.find(bc_close, i + len(bc_open))
            if j < 0:
                raise LexError("unterminated block comment", i)
            j += len(bc_close)
            tokens.append(LexToken("comment", i, j, source[i:j]))
        elif c == quote:
            j = source.find(quote, i + 1)
            if j < 0:
                raise LexError("unterminated string literal", i)
            j += 1
            tokens.append(LexToken("literal", i, j, source[i:j]))
        elif c.isalpha() or c == "_":
            m = _IDENT_RE.match(source, i)
            text = m.group(0)
            kind = "keyword" if text in profile.keywords else "identifier"
            tokens.append(LexToken(kind, i, m.end(), text))
            j = m.end()
        elif c.isdigit():
            j = i + 1
            while j < n and source[j].isdigit():
                j += 1
            tokens.append(LexToken("literal", i, j, source[i:j]))
        else:
            j = i + 1
            for p in _PUNCT:
                if source.startswith(p, i):
                    j = i + len(p)
                    break
            tokens.append(LexToken("punct", i, j, source[i:j]))
        i = tokens[-1].end

    return tokens


def content_tokens(tokens: list) -> list:
    """Tokens that carry program text (comments and whitespace dropped)."""
    return [t for t in tokens if t.kind not in ("whitespace", "comment")]


def identifier_names(tokens: list, profile: LanguageProfile) -> list:
    """Distinct renameable names in first-appearance order (builtins excluded)."""
    seen = []
    for t in tokens:
        if t.kind == "identifier" and t.text not in profile.builtins and t.text not in seen:
            seen.append(t.text)
    return seen
