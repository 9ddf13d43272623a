"""Non-sensitive structure of a property graph.

The schema is the only graph-derived content allowed into a prompt: labels,
property names and property kinds, never property values.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .errors import (
    EmptySchemaError,
    ParseError,
    ReferentialIntegrityError,
    StoreError,
    UnknownLabelError,
)

FORMAT_VERSION = 1
VALUE_KINDS = ("string", "integer", "float", "list-of-string")
DEFAULT_SAMPLE_SIZE = 1000


@dataclass(frozen=True)
class PropertySpec:
    name: str
    value_kind: str = "string"

    def __post_init__(self):
        if not self.name:
            raise ValueError("property name must be non-empty")
        if self.value_kind not in VALUE_KINDS:
            raise ValueError(f"unknown value kind {self.value_kind!r}")


def _check_unique_props(owner: str, props: tuple[PropertySpec, ...]) -> None:
    seen = set()
    for p in props:
        if p.name in seen:
            raise ValueError(f"duplicate property {p.name!r} on {owner}")
        seen.add(p.name)


@dataclass(frozen=True)
class NodeTypeSpec:
    label: str
    properties: tuple[PropertySpec, ...] = ()

    def __post_init__(self):
        if not self.label:
            raise ValueError("node label must be non-empty")
        object.__setattr__(self, "properties", tuple(sorted(self.properties, key=lambda p: p.name)))
        _check_unique_props(self.label, self.properties)


@dataclass(frozen=True)
class RelationTypeSpec:
    label: str
    source_label: str
    target_label: str
    properties: tuple[PropertySpec, ...] = ()

    def __post_init__(self):
        if not self.label:
            raise ValueError("relation label must be non-empty")
        object.__setattr__(self, "properties", tuple(sorted(self.properties, key=lambda p: p.name)))
        _check_unique_props(self.label, self.properties)

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.label, self.source_label, self.target_label)


@dataclass(frozen=True)
class GraphSchema:
    """Node and relation types, kept sorted so equal schemas compare equal.

    A relation label may occur more than once when it connects several
    (source, target) label pairs; each pair is its own entry.
    """

    node_types: tuple[NodeTypeSpec, ...] = ()
    relation_types: tuple[RelationTypeSpec, ...] = ()

    def __post_init__(self):
        nodes = tuple(sorted(self.node_types, key=lambda n: n.label))
        rels = tuple(sorted(self.relation_types, key=lambda r: r.key))
        labels = [n.label for n in nodes]
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate node label in schema")
        keys = [r.key for r in rels]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate relation type in schema")
        known = set(labels)
        for r in rels:
            for end in (r.source_label, r.target_label):
                if end not in known:
                    raise ReferentialIntegrityError(
                        f"relation {r.label!r} references unknown node label {end!r}"
                    )
        object.__setattr__(self, "node_types", nodes)
        object.__setattr__(self, "relation_types", rels)

    @property
    def node_labels(self) -> frozenset[str]:
        return frozenset(n.label for n in self.node_types)

    @property
    def relation_labels(self) -> frozenset[str]:
        return frozenset(r.label for r in self.relation_types)

    def node(self, label: str) -> NodeTypeSpec:
        for n in self.node_types:
            if n.label == label:
                return n
        raise KeyError(label)

    def node_property_names(self) -> frozenset[str]:
        return frozenset(p.name for n in self.node_types for p in n.properties)

    def relation_property_names(self) -> frozenset[str]:
        return frozenset(p.name for r in self.relation_types for p in r.properties)

    def is_empty(self) -> bool:
        return not self.node_types


@dataclass(frozen=True)
class RbacGrant:
    """The sub-structure a user may see."""

    allowed_node_labels: frozenset[str] = field(default_factory=frozenset)
    allowed_relation_labels: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "allowed_node_labels", frozenset(self.allowed_node_labels))
        object.__setattr__(self, "allowed_relation_labels", frozenset(self.allowed_relation_labels))

    @classmethod
    def full(cls, schema: GraphSchema) -> "RbacGrant":
        return cls(schema.node_labels, schema.relation_labels)


# -- extraction --------------------------------------------------------------

def infer_value_kind(values: Iterable[Any]) -> str:
    """Pick a value kind from sampled values.

    Any list makes the property ``list-of-string``; otherwise all-integer
    gives ``integer``, all-numeric gives ``float``, anything else ``string``.
    """
    values = [v for v in values if v is not None]
    if not values:
        return "string"
    if any(isinstance(v, (list, tuple)) for v in values):
        return "list-of-string"
    if all(isinstance(v, int) and not isinstance(v, bool) for v in values):
        return "integer"
    if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
        return "float"
    return "string"


def _props_from_samples(samples: dict[str, list[Any]]) -> tuple[PropertySpec, ...]:
    return tuple(PropertySpec(name, infer_value_kind(vals)) for name, vals in samples.items())


def extract_schema(store, sample_size: int = DEFAULT_SAMPLE_SIZE) -> GraphSchema:
    """Read labels, relation types and property names (never values) from a store."""
    try:
        labels = sorted(set(store.node_labels()))
        if not labels:
            raise EmptySchemaError("store contains no nodes")
        nodes = [
            NodeTypeSpec(label, _props_from_samples(store.node_property_samples(label, sample_size)))
            for label in labels
        ]
        rels = []
        for rel_type in sorted(set(store.relationship_types())):
            props = _props_from_samples(store.relationship_property_samples(rel_type, sample_size))
            for src, dst in sorted(set(store.relationship_endpoints(rel_type))):
                rels.append(RelationTypeSpec(rel_type, src, dst, props))
    except (EmptySchemaError, StoreError):
        raise
    except OSError as exc:
        raise StoreError(f"cannot read schema from store: {exc}") from exc
    return GraphSchema(tuple(nodes), tuple(rels))


# -- documents ---------------------------------------------------------------

def schema_to_dict(schema: GraphSchema) -> dict[str, Any]:
    def props(ps):
        return [{"name": p.name, "value_kind": p.value_kind} for p in ps]

    return {
        "format_version": FORMAT_VERSION,
        "node_types": [{"label": n.label, "properties": props(n.properties)} for n in schema.node_types],
        "relation_types": [
            {
                "label": r.label,
                "source": r.source_label,
                "target": r.target_label,
                "properties": props(r.properties),
            }
            for r in schema.relation_types
        ],
    }


def dumps_schema(schema: GraphSchema) -> str:
    return json.dumps(schema_to_dict(schema), indent=2, ensure_ascii=False) + "\n"


def save_schema(schema: GraphSchema, path: str | Path) -> None:
    Path(path).write_text(dumps_schema(schema), encoding="utf-8")


def _require(obj: dict, key: str, kind, where: str):
    if not isinstance(obj, dict):
        raise ParseError("expected an object", field=where)
    if key not in obj:
        raise ParseError("missing field", field=f"{where}.{key}" if where else key)
    value = obj[key]
    if not isinstance(value, kind):
        raise ParseError(f"expected {getattr(kind, '__name__', kind)}", field=f"{where}.{key}" if where else key)
    return value


def _parse_props(raw: list, where: str) -> tuple[PropertySpec, ...]:
    out = []
    for i, p in enumerate(raw):
        loc = f"{where}[{i}]"
        name = _require(p, "name", str, loc)
        kind = p.get("value_kind", "string")
        try:
            out.append(PropertySpec(name, kind))
        except ValueError as exc:
            raise ParseError(str(exc), field=loc) from None
    return tuple(out)


def loads_schema(text: str) -> GraphSchema:
    """Parse a schema document.

    Raises :class:`ParseError` (with line or field), :class:`EmptySchemaError`
    or :class:`ReferentialIntegrityError`.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None
    version = _require(doc, "format_version", int, "")
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported format_version {version}", field="format_version")
    raw_nodes = _require(doc, "node_types", list, "")
    raw_rels = doc.get("relation_types", [])
    if not isinstance(raw_rels, list):
        raise ParseError("expected list", field="relation_types")
    if not raw_nodes:
        raise EmptySchemaError("schema document has no node types")
    nodes = []
    for i, n in enumerate(raw_nodes):
        loc = f"node_types[{i}]"
        try:
            nodes.append(NodeTypeSpec(_require(n, "label", str, loc), _parse_props(n.get("properties", []), f"{loc}.properties")))
        except ValueError as exc:
            raise ParseError(str(exc), field=loc) from None
    rels = []
    for i, r in enumerate(raw_rels):
        loc = f"relation_types[{i}]"
        try:
            rels.append(
                RelationTypeSpec(
                    _require(r, "label", str, loc),
                    _require(r, "source", str, loc),
                    _require(r, "target", str, loc),
                    _parse_props(r.get("properties", []), f"{loc}.properties"),
                )
            )
        except ValueError as exc:
            raise ParseError(str(exc), field=loc) from None
    try:
        return GraphSchema(tuple(nodes), tuple(rels))
    except ReferentialIntegrityError:
        raise
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def load_schema(source: str | Path) -> GraphSchema:
    try:
        text = Path(source).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read schema document: {exc}") from None
    return loads_schema(text)


def load_grant(source: str | Path) -> RbacGrant:
    """Read a grant file: ``{"nodes": [...], "relations": [...]}``."""
    try:
        doc = json.loads(Path(source).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ParseError(f"cannot read grant file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None
    nodes = doc.get("nodes", []) if isinstance(doc, dict) else None
    rels = doc.get("relations", []) if isinstance(doc, dict) else None
    if not isinstance(nodes, list) or not isinstance(rels, list):
        raise ParseError("grant must hold 'nodes' and 'relations' lists")
    return RbacGrant(frozenset(nodes), frozenset(rels))


# -- RBAC & rendering ----------------------------------------------------------

def filter_schema(schema: GraphSchema, grant: RbacGrant) -> GraphSchema:
    """Keep granted node types, and relations whose label and both ends are granted."""
    unknown = (grant.allowed_node_labels - schema.node_labels) | (
        grant.allowed_relation_labels - schema.relation_labels
    )
    if unknown:
        raise UnknownLabelError("grant references unknown label(s): " + ", ".join(sorted(unknown)))
    nodes = tuple(n for n in schema.node_types if n.label in grant.allowed_node_labels)
    rels = tuple(
        r
        for r in schema.relation_types
        if r.label in grant.allowed_relation_labels
        and r.source_label in grant.allowed_node_labels
        and r.target_label in grant.allowed_node_labels
    )
    return GraphSchema(nodes, rels)


def _render_props(props: tuple[PropertySpec, ...]) -> str:
    return ", ".join(f"{p.name}: {p.value_kind}" for p in props)


def render_schema(schema: GraphSchema) -> str:
    """Deterministic one-line-per-element rendering for prompts.

    Node types come first as ``Label(prop: kind, ...)``, then relations as
    ``(:Source)-[label]-(:Target)``, undirected on purpose.
    """
    lines = [f"{n.label}({_render_props(n.properties)})" for n in schema.node_types]
    for r in schema.relation_types:
        inner = r.label if not r.properties else f"{r.label} {{{_render_props(r.properties)}}}"
        lines.append(f"(:{r.source_label})-[{inner}]-(:{r.target_label})")
    return "\n".join(lines)
