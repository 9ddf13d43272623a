"""Randomised question corpus shared by the masking property tests."""
from __future__ import annotations

import re

from hypothesis import strategies as st

from safecypher.catalog import EntityCatalog

FILLER = (
    "which what who when did the a and of in with was is by from how many "
    "also tell me about films acted directed movies starring together co "
    "any please list show year language genre"
).split()
SEPARATORS = [" ", " ", " ", ", ", "-", "? ", " (", ") ", "'s "]


def catalog_pools(catalog: EntityCatalog):
    sensitive, exempt, keys = set(), set(), set()
    for e in catalog.entries:
        if e.is_key:
            keys.add(" ".join(e.surface_form))
        elif e.sensitive:
            sensitive.add(e.canonical)
        else:
            exempt.add(e.canonical)
    return sorted(sensitive), sorted(exempt), sorted(keys)


def _recase(draw, text: str) -> str:
    style = draw(st.sampled_from(["keep", "lower", "upper", "title"]))
    return {"keep": text, "lower": text.lower(), "upper": text.upper(), "title": text.title()}[style]


def questions(catalog: EntityCatalog, max_segments: int = 12):
    sensitive, exempt, keys = catalog_pools(catalog)

    @st.composite
    def build(draw):
        n = draw(st.integers(1, max_segments))
        parts = []
        for _ in range(n):
            kind = draw(st.sampled_from(["sensitive", "sensitive", "exempt", "key", "filler", "filler", "bracket"]))
            if kind == "sensitive":
                seg = _recase(draw, draw(st.sampled_from(sensitive)))
            elif kind == "exempt" and exempt:
                seg = draw(st.sampled_from(exempt))
            elif kind == "key":
                seg = draw(st.sampled_from(keys))
            elif kind == "bracket":
                inner = draw(st.sampled_from(sensitive + FILLER))
                seg = f"[{inner}]"
            else:
                seg = draw(st.sampled_from(FILLER))
            parts.append(seg)
            parts.append(draw(st.sampled_from(SEPARATORS)))
        return "".join(parts).strip()

    return build()


def value_pattern(value: str) -> re.Pattern:
    """Token-aligned, case-insensitive matcher for a catalog value."""
    words = re.findall(r"\w+", value)
    return re.compile(r"(?<!\w)" + r"\W+".join(map(re.escape, words)) + r"(?!\w)", re.IGNORECASE)


def leaked(text: str, values) -> list[str]:
    return [v for v in values if value_pattern(v).search(text)]


def unbracket(question: str) -> str:
    return re.sub(r"\[\s*([^\[\]]*?)\s*\]", r"\1", question)
