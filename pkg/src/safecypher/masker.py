"""Question masking and local restoration.

:func:`mask` hides every sensitive span behind a class placeholder
(``NODE_VALUE``, ``AD_HOC_2``, ...) and notes where key entities were found;
:func:`substitute_synonyms` then rewrites those key entities to canonical
schema identifiers.  The restoration map never leaves the process.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

from .catalog import (
    PLACEHOLDER_RE,
    CatalogEntry,
    EntityCatalog,
    EntityClass,
    add_ad_hoc,
    is_placeholder,
)
from .errors import UnresolvedPlaceholderError
from .text import Token, tokenize

__all__ = [
    "Placeholder",
    "Substitution",
    "MaskedQuestion",
    "Token",
    "tokenize",
    "mask",
    "substitute_synonyms",
    "restore",
]


@dataclass(frozen=True)
class Placeholder:
    entity_class: EntityClass
    ordinal: int = 1

    @property
    def rendered(self) -> str:
        base = self.entity_class.value
        return base if self.ordinal == 1 else f"{base}_{self.ordinal}"


@dataclass(frozen=True)
class Substitution:
    surface: str
    canonical: str
    entity_class: EntityClass
    span: tuple[int, int]  # into MaskedQuestion.masked_text


@dataclass(frozen=True)
class MaskedQuestion:
    masked_text: str
    restorations: Mapping[str, str] = field(default_factory=dict)
    substitutions: tuple[Substitution, ...] = ()


def _longest(catalog: EntityCatalog, tokens: list[Token], i: int, limit: int, want_sensitive: bool):
    """Longest run starting at ``i`` whose top entry has the wanted sensitivity."""
    for n in range(min(limit, len(tokens) - i), 0, -1):
        window = tokens[i : i + n]
        if any(t.bracketed for t in window):
            continue
        # Placeholder-shaped words never start a key match, but a sensitive
        # value that happens to contain one must still be hidden.
        if not want_sensitive and any(is_placeholder(t.text) for t in window):
            continue
        found = catalog.lookup([t.text for t in window])
        if found and found[0].sensitive == want_sensitive:
            return n, found[0]
    return 0, None


def mask(question: str, catalog: EntityCatalog) -> MaskedQuestion:
    tokens = tokenize(question)
    for t in tokens:
        if t.bracketed:
            catalog = add_ad_hoc(catalog, t.text)
    limit = catalog.max_surface_len

    # Pass 1: sensitive spans.  Running it before key entities means a key
    # term can never swallow part of a sensitive value.
    covered = [False] * len(tokens)
    sensitive_hits: list[tuple[int, int, CatalogEntry | None]] = []
    i = 0
    while i < len(tokens):
        t = tokens[i]
        if t.bracketed:
            sensitive_hits.append((i, 1, None))
            covered[i] = True
            i += 1
            continue
        n, entry = _longest(catalog, tokens, i, limit, True)
        if n:
            sensitive_hits.append((i, n, entry))
            covered[i : i + n] = [True] * n
            i += n
        else:
            i += 1

    # Pass 2: key entities over the uncovered runs.
    key_hits: list[tuple[int, int, CatalogEntry]] = []
    i = 0
    while i < len(tokens):
        if covered[i]:
            i += 1
            continue
        run_end = i
        while run_end < len(tokens) and not covered[run_end]:
            run_end += 1
        n, entry = _longest(catalog, tokens[:run_end], i, limit, False)
        if n and entry.is_key:
            key_hits.append((i, n, entry))
        i += max(n, 1)

    # Number placeholders left to right; identical values share one.
    ordinals: dict[EntityClass, int] = {}
    assigned: dict[tuple[EntityClass, str], str] = {}
    restorations: dict[str, str] = {}
    edits: list[tuple[int, int, str, Substitution | None]] = []
    for i, n, entry in sensitive_hits:
        start, end = tokens[i].start, tokens[i + n - 1].end
        if entry is None:
            cls, original = EntityClass.AD_HOC, tokens[i].text
        else:
            cls, original = entry.entity_class, question[start:end]
        key = (cls, original)
        if key not in assigned:
            ordinals[cls] = ordinals.get(cls, 0) + 1
            rendered = Placeholder(cls, ordinals[cls]).rendered
            assigned[key] = rendered
            restorations[rendered] = original
        edits.append((start, end, assigned[key], None))
    for i, n, entry in key_hits:
        start, end = tokens[i].start, tokens[i + n - 1].end
        edits.append((start, end, question[start:end], Substitution(question[start:end], entry.canonical, entry.entity_class, (0, 0))))

    edits.sort(key=lambda e: e[0])
    parts, subs, pos, out_len = [], [], 0, 0
    for start, end, text, sub in edits:
        gap = question[pos:start]
        parts.append(gap)
        out_len += len(gap)
        if sub is not None:
            subs.append(replace(sub, span=(out_len, out_len + len(text))))
        parts.append(text)
        out_len += len(text)
        pos = end
    parts.append(question[pos:])
    return MaskedQuestion("".join(parts), restorations, tuple(subs))


def substitute_synonyms(masked: MaskedQuestion) -> MaskedQuestion:
    """Rewrite every recorded key-entity span to its canonical identifier."""
    text = masked.masked_text
    parts, subs, pos, shift = [], [], 0, 0
    for sub in sorted(masked.substitutions, key=lambda s: s.span):
        start, end = sub.span
        parts.append(text[pos:start])
        parts.append(sub.canonical)
        new_start = start + shift
        subs.append(replace(sub, span=(new_start, new_start + len(sub.canonical))))
        shift += len(sub.canonical) - (end - start)
        pos = end
    parts.append(text[pos:])
    return MaskedQuestion("".join(parts), masked.restorations, tuple(subs))


def restore(text: str, restorations: Mapping[str, str]) -> str:
    """Replace whole placeholder tokens with their original values."""
    missing = [m.group(0) for m in PLACEHOLDER_RE.finditer(text) if m.group(0) not in restorations]
    if missing:
        raise UnresolvedPlaceholderError(missing)
    return PLACEHOLDER_RE.sub(lambda m: restorations[m.group(0)], text)
