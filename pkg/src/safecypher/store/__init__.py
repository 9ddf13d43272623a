"""Graph-store adapters.

Everything that talks to a property graph goes through the small
:class:`GraphStore` protocol below.  Two adapters ship with the package:

* :class:`~safecypher.store.memory.MemoryGraphStore`, an in-process store with a
  Cypher-subset executor, optionally persisted to a JSON snapshot file;
* :class:`~safecypher.store.bolt.BoltGraphStore`, a thin wrapper over the
  official ``neo4j`` driver (optional dependency).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator, Protocol, runtime_checkable

from ..errors import StoreUnavailableError


@dataclass(frozen=True)
class PropertyValue:
    """One property value observed in the store, with where it came from."""

    owner_kind: str  # "node" | "relation"
    owner_label: str
    prop: str
    value: str


@runtime_checkable
class GraphStore(Protocol):
    def node_labels(self) -> list[str]: ...

    def relationship_types(self) -> list[str]: ...

    def node_property_samples(self, label: str, limit: int = 1000) -> dict[str, list[Any]]: ...

    def relationship_endpoints(self, rel_type: str) -> list[tuple[str, str]]: ...

    def relationship_property_samples(self, rel_type: str, limit: int = 1000) -> dict[str, list[Any]]: ...

    def iter_property_values(self) -> Iterator[PropertyValue]: ...

    def merge_nodes(self, label: str, rows: Iterable[dict[str, Any]]) -> None: ...

    def merge_relationships(
        self, rel_type: str, source_label: str, target_label: str, pairs: Iterable[tuple[str, str]]
    ) -> None: ...

    def count_nodes(self, label: str | None = None) -> int: ...

    def count_relationships(self, rel_type: str | None = None) -> int: ...

    def run(self, statement: str, params: dict[str, Any] | None = None) -> list[dict[str, Any]]: ...

    def close(self) -> None: ...


def flatten_values(value: Any) -> Iterator[str]:
    """Yield the string forms of a property value (lists are flattened)."""
    if value is None:
        return
    if isinstance(value, (list, tuple)):
        for item in value:
            yield from flatten_values(item)
    elif isinstance(value, bool):
        yield "true" if value else "false"
    else:
        yield str(value)


def open_store(ref: str, *, create: bool = False) -> GraphStore:
    """Open a store from a reference string.

    ``memory:`` gives an empty ephemeral store; ``bolt://``/``neo4j://`` URIs
    use the Bolt adapter (credentials from ``NEO4J_USER``/``NEO4J_PASSWORD``);
    anything else is a path to a JSON snapshot (``file:`` prefix optional).
    """
    from .memory import MemoryGraphStore

    if ref == "memory:":
        return MemoryGraphStore()
    if ref.split("://", 1)[0] in {"bolt", "bolt+s", "bolt+ssc", "neo4j", "neo4j+s", "neo4j+ssc"}:
        from .bolt import BoltGraphStore

        return BoltGraphStore.connect(ref)
    path = Path(ref[5:] if ref.startswith("file:") else ref)
    if not path.exists():
        if not create:
            raise StoreUnavailableError(f"graph snapshot not found: {path}")
        return MemoryGraphStore(path=path)
    return MemoryGraphStore.load(path)
