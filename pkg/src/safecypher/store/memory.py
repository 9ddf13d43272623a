"""In-process property graph with an optional JSON snapshot file."""
from __future__ import annotations

import json
import threading
from pathlib import Path
from typing import Any, Iterable, Iterator

from ..errors import StoreError, StoreUnavailableError
from . import PropertyValue, flatten_values
from .engine import Node, Rel, execute

SNAPSHOT_VERSION = 1


class MemoryGraphStore:
    """Nodes keyed by ``(label, name)`` for merges; relationships by ``(type, start, end)``.

    Reads are safe from several threads; writes take a lock.  When ``path``
    is set, :meth:`close` writes the snapshot back if anything changed.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._nodes: dict[int, Node] = {}
        self._rels: dict[int, Rel] = {}
        self._by_label: dict[str, dict[int, None]] = {}
        self._by_key: dict[tuple[str, Any], int] = {}
        self._out: dict[int, list[int]] = {}
        self._in: dict[int, list[int]] = {}
        self._rel_key: dict[tuple[str, int, int], int] = {}
        self._next_id = 0
        self._lock = threading.Lock()
        self.dirty = False

    # -- raw construction --
    def create_node(self, labels: str | Iterable[str], props: dict[str, Any] | None = None) -> Node:
        labels = (labels,) if isinstance(labels, str) else tuple(labels)
        with self._lock:
            node = Node(self._next_id, labels, dict(props or {}))
            self._next_id += 1
            self._nodes[node.id] = node
            self._out[node.id] = []
            self._in[node.id] = []
            for lab in labels:
                self._by_label.setdefault(lab, {})[node.id] = None
                if "name" in node.props:
                    self._by_key.setdefault((lab, node.props["name"]), node.id)
            self.dirty = True
            return node

    def create_relationship(self, start: Node | int, rel_type: str, end: Node | int, props: dict[str, Any] | None = None) -> Rel:
        s = start.id if isinstance(start, Node) else start
        e = end.id if isinstance(end, Node) else end
        if s not in self._nodes or e not in self._nodes:
            raise StoreError("relationship endpoint does not exist")
        with self._lock:
            rel = Rel(self._next_id, rel_type, s, e, dict(props or {}))
            self._next_id += 1
            self._rels[rel.id] = rel
            self._out[s].append(rel.id)
            self._in[e].append(rel.id)
            self._rel_key.setdefault((rel_type, s, e), rel.id)
            self.dirty = True
            return rel

    # -- engine hooks --
    def _nodes_with_label(self, label: str) -> list[Node]:
        return [self._nodes[i] for i in self._by_label.get(label, ())]

    def _all_nodes(self) -> list[Node]:
        return list(self._nodes.values())

    def _incident(self, node_id: int, direction: str) -> Iterator[Rel]:
        if direction in ("out", "both"):
            for rid in self._out.get(node_id, ()):
                yield self._rels[rid]
        if direction in ("in", "both"):
            for rid in self._in.get(node_id, ()):
                r = self._rels[rid]
                if direction == "both" and r.start == r.end:
                    continue  # self-loop already yielded
                yield r

    def find_node(self, label: str, name: Any) -> Node | None:
        nid = self._by_key.get((label, name))
        return None if nid is None else self._nodes[nid]

    # -- GraphStore protocol --
    def node_labels(self) -> list[str]:
        return sorted(lab for lab, ids in self._by_label.items() if ids)

    def relationship_types(self) -> list[str]:
        return sorted({r.type for r in self._rels.values()})

    def node_property_samples(self, label: str, limit: int = 1000) -> dict[str, list[Any]]:
        samples: dict[str, list[Any]] = {}
        for node in self._nodes_with_label(label):
            for key, value in node.props.items():
                bucket = samples.setdefault(key, [])
                if len(bucket) < limit:
                    bucket.append(value)
        return samples

    def relationship_endpoints(self, rel_type: str) -> list[tuple[str, str]]:
        pairs = set()
        for r in self._rels.values():
            if r.type == rel_type:
                for a in self._nodes[r.start].labels:
                    for b in self._nodes[r.end].labels:
                        pairs.add((a, b))
        return sorted(pairs)

    def relationship_property_samples(self, rel_type: str, limit: int = 1000) -> dict[str, list[Any]]:
        samples: dict[str, list[Any]] = {}
        for r in self._rels.values():
            if r.type != rel_type:
                continue
            for key, value in r.props.items():
                bucket = samples.setdefault(key, [])
                if len(bucket) < limit:
                    bucket.append(value)
        return samples

    def iter_property_values(self) -> Iterator[PropertyValue]:
        for node in self._nodes.values():
            for key, value in node.props.items():
                for s in flatten_values(value):
                    for lab in node.labels:
                        yield PropertyValue("node", lab, key, s)
        for r in self._rels.values():
            for key, value in r.props.items():
                for s in flatten_values(value):
                    yield PropertyValue("relation", r.type, key, s)

    def merge_nodes(self, label: str, rows: Iterable[dict[str, Any]]) -> None:
        """MERGE on ``(label, name)``; list properties are unioned, scalars set."""
        for row in rows:
            name = row["name"]
            node = self.find_node(label, name)
            if node is None:
                self.create_node(label, row)
                continue
            with self._lock:
                for key, value in row.items():
                    if isinstance(value, list):
                        current = node.props.get(key)
                        current = [] if current is None else (current if isinstance(current, list) else [current])
                        merged = current + [v for v in value if v not in current]
                        if merged != node.props.get(key):
                            node.props[key] = merged
                            self.dirty = True
                    elif node.props.get(key) != value:
                        node.props[key] = value
                        self.dirty = True

    def merge_relationships(self, rel_type: str, source_label: str, target_label: str, pairs: Iterable[tuple[str, str]]) -> None:
        for src_name, dst_name in pairs:
            src = self.find_node(source_label, src_name)
            dst = self.find_node(target_label, dst_name)
            if src is None or dst is None:
                missing = (source_label, src_name) if src is None else (target_label, dst_name)
                raise StoreError(f"cannot merge {rel_type}: no {missing[0]} node named {missing[1]!r}")
            if (rel_type, src.id, dst.id) not in self._rel_key:
                self.create_relationship(src, rel_type, dst)

    def count_nodes(self, label: str | None = None) -> int:
        if label is None:
            return len(self._nodes)
        return len(self._by_label.get(label, ()))

    def count_relationships(self, rel_type: str | None = None) -> int:
        if rel_type is None:
            return len(self._rels)
        return sum(1 for r in self._rels.values() if r.type == rel_type)

    def run(self, statement: str, params: dict[str, Any] | None = None) -> list[dict[str, Any]]:
        return execute(self, statement, params)

    def close(self) -> None:
        if self.path is not None and self.dirty:
            self.save(self.path)

    # -- persistence --
    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": SNAPSHOT_VERSION,
            "nodes": [{"id": n.id, "labels": list(n.labels), "properties": n.props} for n in self._nodes.values()],
            "relationships": [
                {"id": r.id, "type": r.type, "start": r.start, "end": r.end, "properties": r.props}
                for r in self._rels.values()
            ],
        }

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps(self.to_dict(), ensure_ascii=False), encoding="utf-8")
        tmp.replace(path)
        self.dirty = False

    @classmethod
    def load(cls, path: str | Path) -> "MemoryGraphStore":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise StoreUnavailableError(f"cannot open graph snapshot {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise StoreUnavailableError(f"corrupt graph snapshot {path}: {exc.msg} (line {exc.lineno})") from None
        if not isinstance(doc, dict) or doc.get("format_version") != SNAPSHOT_VERSION:
            raise StoreUnavailableError(f"{path} is not a version {SNAPSHOT_VERSION} graph snapshot")
        store = cls(path=path)
        remap = {}
        try:
            for n in doc.get("nodes", []):
                remap[n["id"]] = store.create_node(n["labels"], n.get("properties")).id
            for r in doc.get("relationships", []):
                store.create_relationship(remap[r["start"]], r["type"], remap[r["end"]], r.get("properties"))
        except (KeyError, TypeError) as exc:
            raise StoreUnavailableError(f"malformed graph snapshot {path}: {exc!r}") from None
        store.dirty = False
        return store

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
