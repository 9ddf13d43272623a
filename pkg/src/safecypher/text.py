"""Question tokenizer shared by the catalog and the masker.

Tokens are runs of word characters; everything else separates them.  A
``[...]`` annotation is kept whole as one *bracketed* token whose span covers
the brackets but whose text does not.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import AnnotationError

WORD_RE = re.compile(r"\w+")
_SCAN_RE = re.compile(r"\[([^\[\]]*)\]|\w+|[\[\]]")


@dataclass(frozen=True)
class Token:
    text: str
    span: tuple[int, int]
    bracketed: bool = False

    @property
    def start(self) -> int:
        return self.span[0]

    @property
    def end(self) -> int:
        return self.span[1]


def tokenize(question: str) -> list[Token]:
    tokens = []
    for m in _SCAN_RE.finditer(question):
        text = m.group(0)
        if text in "[]":
            raise AnnotationError(f"unbalanced bracket at offset {m.start()} in {question!r}")
        if m.group(1) is not None:
            content = m.group(1).strip()
            if not WORD_RE.search(content):
                raise AnnotationError(f"empty annotation at offset {m.start()} in {question!r}")
            tokens.append(Token(content, m.span(), True))
        else:
            tokens.append(Token(text, m.span()))
    return tokens


def surface_of(text: str) -> tuple[str, ...]:
    """Lowercased word-token sequence used as a catalog lookup key."""
    return tuple(w.lower() for w in WORD_RE.findall(text))
