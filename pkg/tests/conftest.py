from __future__ import annotations

import functools
from pathlib import Path

import pytest

from safecypher.catalog import SynonymTable, build_catalog
from safecypher.metaqa import ingest, metaqa_policy, metaqa_synonyms, parse_kb
from safecypher.schema import extract_schema
from safecypher.store.memory import MemoryGraphStore

FIXTURES = Path(__file__).parent / "fixtures"
GOLDENS = Path(__file__).parent / "goldens"

WORKED_QUESTION = "Which film [Will Smith] and Martin Lawrence co-acted?"

# The model reply for the worked example.  The second placeholder reads
# NODE_VALUE so it matches the masked question that was actually sent.
WORKED_REPLY = (
    'MATCH (m:Movie)-[r:STARRED_IN]-(a1:Actor),\n'
    '(m)-[r2:STARRED_IN]-(a2:Actor)\n'
    'WHERE toLower(a1.name) = toLower("AD_HOC")\n'
    'AND toLower(a2.name) = toLower("NODE_VALUE")\n'
    'RETURN m.name'
)

CASTS = {
    "Bad Boys": ["Will Smith", "Martin Lawrence", "Tea Leoni"],
    "Bad Boys II": ["Will Smith", "Martin Lawrence"],
    "Men in Black": ["Will Smith", "Tommy Lee Jones"],
    "Blue Streak": ["Martin Lawrence", "Luke Wilson"],
    "Creator": ["Peter O'Toole"],
}


def build_costar_store() -> MemoryGraphStore:
    """Movies linked to actors by STARRED_IN, with the cast mirrored on Movie."""
    store = MemoryGraphStore()
    store.merge_nodes("Movie", [{"name": m, "starred_actors": cast} for m, cast in CASTS.items()])
    actors = sorted({a for cast in CASTS.values() for a in cast})
    store.merge_nodes("Actor", [{"name": a} for a in actors])
    store.merge_relationships(
        "STARRED_IN", "Movie", "Actor", [(m, a) for m, cast in CASTS.items() for a in cast]
    )
    return store


def worked_synonyms() -> SynonymTable:
    return SynonymTable({"Movie": ["film", "movies", "films"], "starred_actors": ["acted", "starred"]})


@pytest.fixture
def costar_store():
    return build_costar_store()


@pytest.fixture(scope="session")
def kb_triples():
    return parse_kb(FIXTURES / "kb_50.txt")


@pytest.fixture
def metaqa_store(kb_triples):
    store = MemoryGraphStore()
    ingest(kb_triples, store)
    return store


@pytest.fixture(scope="session")
def metaqa_session_store(kb_triples):
    """Read-only ingested fixture shared across a session."""
    store = MemoryGraphStore()
    ingest(kb_triples, store)
    return store


@pytest.fixture(scope="session")
def metaqa_schema(metaqa_session_store):
    return extract_schema(metaqa_session_store)


@functools.lru_cache(maxsize=None)
def fixture_catalog():
    """Catalog over the ingested 50-movie fixture; usable at import time."""
    store = MemoryGraphStore()
    ingest(parse_kb(FIXTURES / "kb_50.txt"), store)
    return build_catalog(extract_schema(store), store.iter_property_values(), metaqa_synonyms(), metaqa_policy())


@pytest.fixture(scope="session")
def metaqa_catalog():
    return fixture_catalog()


class PanickingBackend:
    """Fails the test if anything tries to reach a model."""

    def complete(self, prompt):
        raise AssertionError("backend must not be called")


def panicking_factory(config, cache_dir=None):
    return PanickingBackend()
