"""Neo4j adapter over the official driver (``pip install safecypher[bolt]``)."""
from __future__ import annotations

import os
from typing import Any, Iterable, Iterator

from ..errors import ExecutionError, StoreError, StoreUnavailableError
from . import PropertyValue, flatten_values

BATCH_SIZE = 1000


def _quote(name: str) -> str:
    return "`" + name.replace("`", "``") + "`"


class BoltGraphStore:
    """Implements the store protocol with plain Cypher over a driver session.

    ``driver`` is anything with ``session()`` returning an object whose
    ``run(query, params)`` yields records supporting ``.data()``; tests pass a
    fake.
    """

    def __init__(self, driver, database: str | None = None):
        self.driver = driver
        self.database = database

    @classmethod
    def connect(cls, uri: str, user: str | None = None, password: str | None = None, database: str | None = None):
        try:
            import neo4j
        except ImportError:
            raise StoreUnavailableError(
                "the neo4j driver is not installed; install the 'bolt' extra to use bolt:// stores"
            ) from None
        user = user or os.environ.get("NEO4J_USER", "neo4j")
        password = password if password is not None else os.environ.get("NEO4J_PASSWORD", "")
        try:
            driver = neo4j.GraphDatabase.driver(uri, auth=(user, password))
            driver.verify_connectivity()
        except Exception as exc:  # driver raises several unrelated types
            raise StoreUnavailableError(f"cannot reach {uri}: {exc}") from exc
        return cls(driver, database or os.environ.get("NEO4J_DATABASE"))

    def _query(self, statement: str, params: dict[str, Any] | None = None) -> list[dict[str, Any]]:
        kwargs = {"database": self.database} if self.database else {}
        try:
            with self.driver.session(**kwargs) as session:
                return [record.data() for record in session.run(statement, params or {})]
        except StoreError:
            raise
        except Exception as exc:
            name = type(exc).__name__
            if "ServiceUnavailable" in name or "SessionExpired" in name or isinstance(exc, OSError):
                raise StoreUnavailableError(str(exc)) from exc
            raise ExecutionError(getattr(exc, "message", None) or str(exc)) from exc

    def node_labels(self) -> list[str]:
        return sorted(r["label"] for r in self._query("CALL db.labels() YIELD label RETURN label"))

    def relationship_types(self) -> list[str]:
        rows = self._query("CALL db.relationshipTypes() YIELD relationshipType RETURN relationshipType")
        return sorted(r["relationshipType"] for r in rows)

    def node_property_samples(self, label: str, limit: int = 1000) -> dict[str, list[Any]]:
        keys = self._query(f"MATCH (n:{_quote(label)}) UNWIND keys(n) AS k RETURN DISTINCT k")
        out = {}
        for row in keys:
            k = row["k"]
            vals = self._query(
                f"MATCH (n:{_quote(label)}) WHERE n[$k] IS NOT NULL RETURN n[$k] AS v LIMIT $limit",
                {"k": k, "limit": limit},
            )
            out[k] = [v["v"] for v in vals]
        return out

    def relationship_endpoints(self, rel_type: str) -> list[tuple[str, str]]:
        rows = self._query(
            f"MATCH (a)-[:{_quote(rel_type)}]->(b) UNWIND labels(a) AS s UNWIND labels(b) AS t "
            "RETURN DISTINCT s, t"
        )
        return sorted((r["s"], r["t"]) for r in rows)

    def relationship_property_samples(self, rel_type: str, limit: int = 1000) -> dict[str, list[Any]]:
        keys = self._query(f"MATCH ()-[r:{_quote(rel_type)}]->() UNWIND keys(r) AS k RETURN DISTINCT k")
        out = {}
        for row in keys:
            k = row["k"]
            vals = self._query(
                f"MATCH ()-[r:{_quote(rel_type)}]->() WHERE r[$k] IS NOT NULL RETURN r[$k] AS v LIMIT $limit",
                {"k": k, "limit": limit},
            )
            out[k] = [v["v"] for v in vals]
        return out

    def iter_property_values(self) -> Iterator[PropertyValue]:
        for row in self._query("MATCH (n) UNWIND labels(n) AS l UNWIND keys(n) AS k RETURN l, k, n[k] AS v"):
            for s in flatten_values(row["v"]):
                yield PropertyValue("node", row["l"], row["k"], s)
        for row in self._query("MATCH ()-[r]->() UNWIND keys(r) AS k RETURN type(r) AS t, k, r[k] AS v"):
            for s in flatten_values(row["v"]):
                yield PropertyValue("relation", row["t"], row["k"], s)

    def merge_nodes(self, label: str, rows: Iterable[dict[str, Any]]) -> None:
        rows = list(rows)
        if not rows:
            return
        list_keys = sorted({k for r in rows for k, v in r.items() if isinstance(v, list)})
        sets = [
            f"SET n.{_quote(k)} = coalesce(n.{_quote(k)}, []) + "
            f"[x IN coalesce(row.{_quote(k)}, []) WHERE NOT x IN coalesce(n.{_quote(k)}, [])]"
            for k in list_keys
        ]
        statement = (
            f"UNWIND $rows AS row MERGE (n:{_quote(label)} {{name: row.name}}) "
            f"SET n += row.scalars " + " ".join(sets)
        )
        for i in range(0, len(rows), BATCH_SIZE):
            batch = rows[i : i + BATCH_SIZE]
            payload = [
                {"name": r["name"], "scalars": {k: v for k, v in r.items() if not isinstance(v, list)},
                 **{k: v for k, v in r.items() if isinstance(v, list)}}
                for r in batch
            ]
            self._query(statement, {"rows": payload})

    def merge_relationships(self, rel_type: str, source_label: str, target_label: str, pairs: Iterable[tuple[str, str]]) -> None:
        pairs = [{"s": s, "t": t} for s, t in pairs]
        statement = (
            f"UNWIND $rows AS row MATCH (a:{_quote(source_label)} {{name: row.s}}) "
            f"MATCH (b:{_quote(target_label)} {{name: row.t}}) MERGE (a)-[:{_quote(rel_type)}]->(b)"
        )
        for i in range(0, len(pairs), BATCH_SIZE):
            self._query(statement, {"rows": pairs[i : i + BATCH_SIZE]})

    def count_nodes(self, label: str | None = None) -> int:
        pattern = f"(n:{_quote(label)})" if label else "(n)"
        return self._query(f"MATCH {pattern} RETURN count(n) AS c")[0]["c"]

    def count_relationships(self, rel_type: str | None = None) -> int:
        pattern = f"()-[r:{_quote(rel_type)}]->()" if rel_type else "()-[r]->()"
        return self._query(f"MATCH {pattern} RETURN count(r) AS c")[0]["c"]

    def run(self, statement: str, params: dict[str, Any] | None = None) -> list[dict[str, Any]]:
        return self._query(statement, params)

    def close(self) -> None:
        self.driver.close()
