"""Gazetteer of key entities and sensitive values.

Key entities are schema terms (labels, relation types, property names) plus
user synonyms for them; they are canonicalized in questions.  Values are
every property value found in the graph; a :class:`SensitivityPolicy` decides
which of them must never leave the process.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import AmbiguityError, ParseError, UnknownLabelError
from .schema import GraphSchema
from .text import WORD_RE, surface_of


class EntityClass(str, Enum):
    NODE_LABEL = "NODE_LABEL"
    NODE_PROPERTY = "NODE_PROPERTY"
    RELATION_LABEL = "RELATION_LABEL"
    RELATION_PROPERTY = "RELATION_PROPERTY"
    NODE_VALUE = "NODE_VALUE"
    AD_HOC = "AD_HOC"

    def __str__(self) -> str:
        return self.value


KEY_CLASSES = frozenset(
    {EntityClass.NODE_LABEL, EntityClass.NODE_PROPERTY, EntityClass.RELATION_LABEL, EntityClass.RELATION_PROPERTY}
)
# Order in which a canonical identifier is classified when it is, say, both a
# relation label and a property name (METAQA mirrors relations onto Movie).
_KEY_ORDER = (
    EntityClass.NODE_LABEL,
    EntityClass.RELATION_LABEL,
    EntityClass.NODE_PROPERTY,
    EntityClass.RELATION_PROPERTY,
)
RESERVED_PROPERTIES = frozenset({"name"})

# Rendered placeholders: a class name, optionally with an ordinal suffix.
PLACEHOLDER_PATTERN = r"(?:%s)(?:_[0-9]+)?" % "|".join(c.value for c in EntityClass)
PLACEHOLDER_RE = re.compile(r"(?<![A-Za-z0-9_])" + PLACEHOLDER_PATTERN + r"(?![A-Za-z0-9_])")
_PLACEHOLDER_FULL_RE = re.compile(PLACEHOLDER_PATTERN, re.IGNORECASE)


def is_placeholder(token: str) -> bool:
    return re.fullmatch(PLACEHOLDER_PATTERN, token) is not None


@dataclass(frozen=True)
class CatalogEntry:
    surface_form: tuple[str, ...]
    canonical: str
    entity_class: EntityClass
    sensitive: bool
    from_synonym: bool = False

    def __post_init__(self):
        if not self.surface_form:
            raise ValueError("surface form must be non-empty")
        if self.entity_class in KEY_CLASSES and self.sensitive:
            raise ValueError("key entities are never sensitive")
        if self.entity_class is EntityClass.AD_HOC and not self.sensitive:
            raise ValueError("ad-hoc entries are always sensitive")

    @property
    def is_key(self) -> bool:
        return self.entity_class in KEY_CLASSES

    @property
    def rank(self) -> int:
        """Precedence when several entries share a surface form (lower wins)."""
        if self.entity_class is EntityClass.AD_HOC:
            return 0
        if self.sensitive:
            return 1
        if self.is_key:
            return (2 if self.from_synonym else 3) * 10 + _KEY_ORDER.index(self.entity_class)
        return 100


# -- synonyms ------------------------------------------------------------------

class SynonymTable:
    """canonical identifier -> surface forms, with collisions rejected."""

    def __init__(self, mapping: Mapping[str, Sequence[str]] | None = None):
        self._forms: dict[str, tuple[str, ...]] = {}
        owner: dict[tuple[str, ...], str] = {}
        for canonical, forms in (mapping or {}).items():
            kept = []
            for form in forms:
                surf = surface_of(form)
                if not surf:
                    continue
                prev = owner.get(surf)
                if prev is not None and prev != canonical:
                    raise AmbiguityError(" ".join(surf), prev, canonical)
                owner[surf] = canonical
                kept.append(form)
            self._forms[canonical] = tuple(kept)

    def items(self):
        return self._forms.items()

    def canonicals(self) -> frozenset[str]:
        return frozenset(self._forms)

    def as_dict(self) -> dict[str, list[str]]:
        return {k: list(v) for k, v in self._forms.items()}

    def __len__(self) -> int:
        return len(self._forms)


def load_synonyms(path: str | Path) -> SynonymTable:
    """Parse a two-column synonym file: ``canonical  form, form, ...``.

    Columns are separated by a tab, a ``|`` or whitespace; ``#`` starts a
    comment.  The same canonical may span several lines.
    """
    mapping: dict[str, list[str]] = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ParseError(f"cannot read synonym file: {exc}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = re.split(r"\s*\|\s*|\t+|\s+", line, maxsplit=1)
        if len(parts) != 2 or not parts[1].strip():
            raise ParseError("expected 'canonical<TAB>form, form, ...'", line=lineno)
        canonical, forms = parts[0], parts[1]
        mapping.setdefault(canonical, []).extend(f.strip() for f in forms.split(",") if f.strip())
    return SynonymTable(mapping)


# -- sensitivity policy --------------------------------------------------------

PREDICATES = ("always", "never", "multi_word_only")
VERDICTS = ("sensitive", "exempt")


@dataclass(frozen=True)
class PolicyRule:
    selector: str  # node label, property name, or "Label.property"
    predicate: str
    verdict: str

    def __post_init__(self):
        if self.predicate not in PREDICATES:
            raise ValueError(f"unknown predicate {self.predicate!r}")
        if self.verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {self.verdict!r}")

    def selects(self, owner_label: str, prop: str) -> bool:
        return self.selector in (owner_label, prop, f"{owner_label}.{prop}")

    def holds(self, value: str) -> bool:
        if self.predicate == "always":
            return True
        if self.predicate == "never":
            return False
        return len(surface_of(value)) > 1


@dataclass(frozen=True)
class SensitivityPolicy:
    """Ordered rules; the first rule that selects and holds decides.

    With no matching rule a value is sensitive.
    """

    rules: tuple[PolicyRule, ...] = ()

    def is_sensitive(self, owner_label: str, prop: str, value: str) -> bool:
        for rule in self.rules:
            if rule.selects(owner_label, prop) and rule.holds(value):
                return rule.verdict == "sensitive"
        return True


def load_policy(path: str | Path) -> SensitivityPolicy:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ParseError(f"cannot read policy file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None
    if not isinstance(doc, dict) or not isinstance(doc.get("rules"), list):
        raise ParseError("policy document needs a 'rules' list", field="rules")
    rules = []
    for i, r in enumerate(doc["rules"]):
        try:
            rules.append(PolicyRule(r["selector"], r["predicate"], r["verdict"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad rule: {exc}", field=f"rules[{i}]") from None
    return SensitivityPolicy(tuple(rules))


def dumps_policy(policy: SensitivityPolicy) -> str:
    doc = {
        "format_version": 1,
        "rules": [{"selector": r.selector, "predicate": r.predicate, "verdict": r.verdict} for r in policy.rules],
    }
    return json.dumps(doc, indent=2) + "\n"


# -- catalog -------------------------------------------------------------------

@dataclass(frozen=True)
class Classification:
    canonical: str
    entity_class: EntityClass
    sensitive: bool


@dataclass(frozen=True)
class EntityCatalog:
    """Surface form -> entries, ordered by precedence, for longest-match lookup."""

    index: Mapping[tuple[str, ...], tuple[CatalogEntry, ...]] = field(default_factory=dict)

    @classmethod
    def from_entries(cls, entries: Iterable[CatalogEntry]) -> "EntityCatalog":
        merged: dict[tuple, CatalogEntry] = {}
        for e in entries:
            key = (e.surface_form, e.canonical, e.entity_class, e.from_synonym)
            prev = merged.get(key)
            if prev is not None and prev.sensitive != e.sensitive:
                # Same value seen under two policies: privacy wins.
                e = CatalogEntry(e.surface_form, e.canonical, e.entity_class, True, e.from_synonym)
            if prev is None or e.sensitive:
                merged[key] = e
        index: dict[tuple[str, ...], list[CatalogEntry]] = {}
        for e in merged.values():
            index.setdefault(e.surface_form, []).append(e)
        return cls({k: _ordered(v) for k, v in index.items()})

    @property
    def max_surface_len(self) -> int:
        return max((len(k) for k in self.index), default=0)

    @property
    def entries(self) -> frozenset[CatalogEntry]:
        return frozenset(e for es in self.index.values() for e in es)

    def __len__(self) -> int:
        return sum(len(v) for v in self.index.values())

    def lookup(self, surface: Sequence[str]) -> tuple[CatalogEntry, ...]:
        return self.index.get(tuple(w.lower() for w in surface), ())

    def classify(self, surface: str | Sequence[str]) -> Classification | None:
        key = surface_of(surface) if isinstance(surface, str) else tuple(w.lower() for w in surface)
        found = self.index.get(key)
        if not found:
            return None
        e = found[0]
        return Classification(e.canonical, e.entity_class, e.sensitive)

    def sensitive_values(self) -> frozenset[str]:
        return frozenset(e.canonical for es in self.index.values() for e in es if e.sensitive)

    def find_sensitive(self, text: str) -> list[tuple[CatalogEntry, tuple[int, int]]]:
        """Token-aligned occurrences of sensitive entries in ``text``."""
        words = [(m.group(0).lower(), m.span()) for m in WORD_RE.finditer(text)]
        hits = []
        longest = self.max_surface_len
        for i in range(len(words)):
            for n in range(1, min(longest, len(words) - i) + 1):
                found = self.index.get(tuple(w for w, _ in words[i : i + n]))
                if found and found[0].sensitive:
                    hits.append((found[0], (words[i][1][0], words[i + n - 1][1][1])))
        return hits


def _ordered(entries) -> tuple[CatalogEntry, ...]:
    return tuple(sorted(entries, key=lambda e: (e.rank, e.canonical)))


def _schema_key_classes(schema: GraphSchema) -> dict[str, list[EntityClass]]:
    classes: dict[str, list[EntityClass]] = {}
    for n in schema.node_types:
        classes.setdefault(n.label, []).append(EntityClass.NODE_LABEL)
    for name in sorted(schema.node_property_names() | RESERVED_PROPERTIES):
        classes.setdefault(name, []).append(EntityClass.NODE_PROPERTY)
    for label in sorted(schema.relation_labels):
        classes.setdefault(label, []).append(EntityClass.RELATION_LABEL)
    for name in sorted(schema.relation_property_names()):
        classes.setdefault(name, []).append(EntityClass.RELATION_PROPERTY)
    return classes


def build_catalog(
    schema: GraphSchema,
    value_source: Iterable = (),
    synonyms: SynonymTable | None = None,
    policy: SensitivityPolicy | None = None,
) -> EntityCatalog:
    """Build the gazetteer.

    ``value_source`` yields :class:`~safecypher.store.PropertyValue` objects or
    ``(owner_label, property, value)`` triples.
    """
    synonyms = synonyms or SynonymTable()
    policy = policy or SensitivityPolicy()
    key_classes = _schema_key_classes(schema)
    entries: list[CatalogEntry] = []
    for ident, classes in key_classes.items():
        surf = surface_of(ident)
        if surf:
            entries.extend(CatalogEntry(surf, ident, c, False) for c in classes)
    for canonical, forms in synonyms.items():
        if canonical not in key_classes:
            raise UnknownLabelError(f"synonym canonical {canonical!r} is not in the schema")
        cls = min(key_classes[canonical], key=_KEY_ORDER.index)
        for form in forms:
            entries.append(CatalogEntry(surface_of(form), canonical, cls, False, from_synonym=True))
    for item in value_source:
        if isinstance(item, tuple):
            owner, prop, value = item
        else:
            owner, prop, value = item.owner_label, item.prop, item.value
        value = str(value).strip()
        surf = surface_of(value)
        if not surf or _PLACEHOLDER_FULL_RE.fullmatch(value):
            continue
        entries.append(CatalogEntry(surf, value, EntityClass.NODE_VALUE, policy.is_sensitive(owner, prop, value)))
    return EntityCatalog.from_entries(entries)


def strip_brackets(value: str) -> str:
    value = value.strip()
    if value.startswith("[") and value.endswith("]"):
        value = value[1:-1].strip()
    return value


def add_ad_hoc(catalog: EntityCatalog, value: str) -> EntityCatalog:
    """Return a new catalog in which ``value`` classifies as AD_HOC."""
    value = strip_brackets(value)
    surf = surface_of(value)
    if not surf:
        raise ValueError("ad-hoc value must contain at least one word")
    entry = CatalogEntry(surf, value, EntityClass.AD_HOC, True)
    existing = catalog.index.get(surf, ())
    if entry in existing:
        return catalog
    index = dict(catalog.index)
    index[surf] = _ordered(existing + (entry,))
    return EntityCatalog(index)
