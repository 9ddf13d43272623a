"""METAQA ingestion and evaluation harness.

The knowledge base (``subject|relation|object`` lines) becomes a property
graph: one ``Movie`` node per subject, one peer node per distinct object of
an entity-valued relation, and the relations mirrored onto the Movie node as
properties.  Question files are ``question<TAB>answer|answer|...`` with
entities annotated in brackets.
"""
from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping

from .catalog import SensitivityPolicy, SynonymTable, load_policy, load_synonyms
from .cypher import FinalQuery
from .errors import EmptyEvalError, ParseError, PolicyError, StoreError
from .store import GraphStore, flatten_values
from .store.engine import Node, Rel

RELATIONS = (
    "directed_by",
    "written_by",
    "starred_actors",
    "release_year",
    "in_language",
    "has_tags",
    "has_genre",
    "has_imdb_votes",
    "has_imdb_rating",
)
ENTITY_RELATIONS = {
    "directed_by": "Director",
    "written_by": "Writer",
    "starred_actors": "Actor",
    "release_year": "Year",
    "in_language": "Language",
    "has_tags": "Tag",
    "has_genre": "Genre",
}
SCALAR_RELATIONS = ("release_year", "has_imdb_votes", "has_imdb_rating")
MIRRORED_RELATIONS = tuple(r for r in ENTITY_RELATIONS if r not in SCALAR_RELATIONS)
MOVIE = "Movie"
MODES = ("no_privacy", "privacy_no_synonyms", "privacy_complete")
SLOT = "[]"
BATCH_SIZE = 1000


def metaqa_synonyms() -> SynonymTable:
    with resources.as_file(resources.files("safecypher").joinpath("data/metaqa_synonyms.tsv")) as p:
        return load_synonyms(p)


def metaqa_policy() -> SensitivityPolicy:
    with resources.as_file(resources.files("safecypher").joinpath("data/metaqa_policy.json")) as p:
        return load_policy(p)


# -- knowledge base --------------------------------------------------------------

@dataclass(frozen=True)
class Triple:
    subject: str
    relation: str
    object: str

    def __post_init__(self):
        if self.relation not in RELATIONS:
            raise ValueError(f"unknown METAQA relation {self.relation!r}")
        if not self.subject or not self.object:
            raise ValueError("subject and object must be non-empty")


def parse_kb_lines(lines: Iterable[str]) -> list[Triple]:
    triples = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        parts = line.split("|")
        if len(parts) < 3:
            raise ParseError("expected 'subject|relation|object'", line=lineno)
        if len(parts) == 3:
            subject, relation, obj = parts
        else:  # a '|' inside a name: anchor on the first known relation
            idx = next((i for i in range(1, len(parts) - 1) if parts[i] in RELATIONS), None)
            if idx is None:
                raise ParseError(f"unknown relation in {line!r}", line=lineno)
            subject, relation, obj = "|".join(parts[:idx]), parts[idx], "|".join(parts[idx + 1 :])
        if relation not in RELATIONS:
            raise ParseError(f"unknown relation {relation!r}", line=lineno)
        if not subject.strip() or not obj.strip():
            raise ParseError("empty subject or object", line=lineno)
        triples.append(Triple(subject.strip(), relation, obj.strip()))
    return triples


def parse_kb(source: str | Path) -> list[Triple]:
    try:
        with open(source, encoding="utf-8") as fh:
            return parse_kb_lines(fh)
    except OSError as exc:
        raise ParseError(f"cannot read knowledge base: {exc}") from None


def _coerce(value: str):
    if re.fullmatch(r"-?\d+", value):
        return int(value)
    if re.fullmatch(r"-?\d+\.\d+", value):
        return float(value)
    return value


@dataclass
class IngestionSummary:
    triples: int = 0
    nodes: dict[str, int] = field(default_factory=dict)
    relationships: dict[str, int] = field(default_factory=dict)

    @property
    def total_nodes(self) -> int:
        return sum(self.nodes.values())

    @property
    def total_relationships(self) -> int:
        return sum(self.relationships.values())


def ingest(triples: list[Triple], store: GraphStore) -> IngestionSummary:
    """Merge triples into ``store``; running it twice changes nothing."""
    if not triples:
        return IngestionSummary()
    movies: dict[str, dict[str, Any]] = {}
    peers: dict[str, dict[str, None]] = {}
    edges: dict[str, dict[tuple[str, str], None]] = {}
    scalars: dict[tuple[str, str], list] = {}
    for t in triples:
        movie = movies.setdefault(t.subject, {"name": t.subject})
        if t.relation in ENTITY_RELATIONS:
            peers.setdefault(ENTITY_RELATIONS[t.relation], {})[t.object] = None
            edges.setdefault(t.relation, {})[(t.subject, t.object)] = None
        if t.relation in MIRRORED_RELATIONS:
            values = movie.setdefault(t.relation, [])
            if t.object not in values:
                values.append(t.object)
        if t.relation in SCALAR_RELATIONS:
            values = scalars.setdefault((t.subject, t.relation), [])
            v = _coerce(t.object)
            if v not in values:
                values.append(v)
    for (subject, relation), values in scalars.items():
        movies[subject][relation] = values[0] if len(values) == 1 else values

    def batched(label, rows):
        rows = list(rows)
        for b, i in enumerate(range(0, len(rows), BATCH_SIZE)):
            try:
                store.merge_nodes(label, rows[i : i + BATCH_SIZE])
            except StoreError as exc:
                raise type(exc)(f"{label} node batch {b} failed: {exc}") from exc

    batched(MOVIE, movies.values())
    for label, names in peers.items():
        batched(label, ({"name": n} for n in names))
    for relation, pairs in edges.items():
        pairs = list(pairs)
        for b, i in enumerate(range(0, len(pairs), BATCH_SIZE)):
            try:
                store.merge_relationships(relation, MOVIE, ENTITY_RELATIONS[relation], pairs[i : i + BATCH_SIZE])
            except StoreError as exc:
                raise type(exc)(f"{relation} relationship batch {b} failed: {exc}") from exc

    summary = IngestionSummary(triples=len(triples))
    for label in [MOVIE] + sorted(peers):
        summary.nodes[label] = store.count_nodes(label)
    for relation in sorted(edges):
        summary.relationships[relation] = store.count_relationships(relation)
    return summary


# -- questions -------------------------------------------------------------------

_BRACKET_RE = re.compile(r"\[[^\[\]]*\]")


def pattern_of(question: str) -> str:
    """The question with every bracketed entity replaced by one generic slot."""
    return _BRACKET_RE.sub(SLOT, question)


@dataclass(frozen=True)
class QAItem:
    question: str
    expected_answers: frozenset[str]
    pattern: str = ""
    qid: int = 0

    def __post_init__(self):
        if not self.expected_answers:
            raise ValueError("expected_answers must be non-empty")
        if not self.pattern:
            object.__setattr__(self, "pattern", pattern_of(self.question))

    @property
    def entities(self) -> list[str]:
        return [m.group(0)[1:-1] for m in _BRACKET_RE.finditer(self.question)]


def parse_qa_lines(lines: Iterable[str]) -> list[QAItem]:
    items = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        if "\t" not in line:
            raise ParseError("expected 'question<TAB>answers'", line=lineno)
        question, answers = line.split("\t", 1)
        expected = frozenset(a.strip() for a in answers.split("|") if a.strip())
        if not expected:
            raise ParseError("empty answer field", line=lineno)
        items.append(QAItem(question.strip(), expected, qid=lineno))
    return items


def parse_qa(source: str | Path) -> list[QAItem]:
    try:
        with open(source, encoding="utf-8") as fh:
            return parse_qa_lines(fh)
    except OSError as exc:
        raise ParseError(f"cannot read QA file: {exc}") from None


def dedupe_patterns(items: Iterable[QAItem]) -> list[QAItem]:
    """First item per distinct pattern, in input order."""
    seen: set[str] = set()
    out = []
    for item in items:
        if item.pattern not in seen:
            seen.add(item.pattern)
            out.append(item)
    return out


# -- execution & scoring -----------------------------------------------------------

def _strings(value) -> list[str]:
    if isinstance(value, (Node, Rel)):
        value = value.props.get("name", json.dumps(value.props, sort_keys=True, default=str))
    elif isinstance(value, dict):
        value = value.get("name", json.dumps(value, sort_keys=True, default=str))
    elif isinstance(value, (list, tuple)):
        return [s for v in value for s in _strings(v)]
    return list(flatten_values(value))


def execute(store: GraphStore, q: FinalQuery | str) -> set[str]:
    """Run a restored query and flatten every returned column into one set."""
    statement = q.statement if isinstance(q, FinalQuery) else q
    rows = store.run(statement)
    out: set[str] = set()
    if not rows:
        return out
    for col in rows[0].keys():
        for row in rows:
            out.update(_strings(row.get(col)))
    return out


def _norm(values: Iterable[str]) -> set[str]:
    return {v.strip().lower() for v in values}


def compare_answers(actual: Iterable[str], expected: Iterable[str]) -> bool:
    return _norm(actual) == _norm(expected)


# -- evaluation --------------------------------------------------------------------

@dataclass(frozen=True)
class EvalConfig:
    mode: str = "privacy_complete"
    parallelism: int = 4
    manual_overrides: Mapping[int, bool] = field(default_factory=dict)
    allow_leak: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.parallelism < 1:
            raise ValueError("parallelism must be positive")
        if any(v is not True for v in self.manual_overrides.values()):
            raise ValueError("manual overrides may only mark answers correct")


@dataclass
class QuestionRecord:
    qid: int
    question: str
    masked_text: str | None
    final_query: str | None
    results: list[str]
    expected: list[str]
    verdict: bool
    error: str | None = None
    overridden: bool = False
    violations: list[str] = field(default_factory=list)


@dataclass
class EvalReport:
    records: list[QuestionRecord]
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return len(self.records)

    @property
    def correct(self) -> int:
        return sum(1 for r in self.records if r.verdict)

    @property
    def accuracy(self) -> float:
        return self.correct / self.total

    @property
    def accuracy_with_overrides(self) -> float:
        return sum(1 for r in self.records if r.verdict or r.overridden) / self.total

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": 1,
            "metadata": self.metadata,
            "summary": {
                "total": self.total,
                "correct": self.correct,
                "accuracy": self.accuracy,
                "accuracy_with_overrides": self.accuracy_with_overrides,
            },
            "records": [asdict(r) for r in self.records],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        doc = json.loads(text)
        return cls([QuestionRecord(**r) for r in doc["records"]], doc.get("metadata", {}))

    def to_tsv(self) -> str:
        def cell(s):
            return "" if s is None else str(s).replace("\t", " ").replace("\n", " ")

        lines = ["qid\tverdict\toverridden\tquestion\tmasked\tfinal_query\terror"]
        for r in self.records:
            lines.append(
                "\t".join(
                    [str(r.qid), "1" if r.verdict else "0", "1" if r.overridden else "0",
                     cell(r.question), cell(r.masked_text), cell(r.final_query), cell(r.error)]
                )
            )
        return "\n".join(lines) + "\n"

    def save(self, out_dir: str | Path, stem: str = "report") -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        js, tsv = out_dir / f"{stem}.json", out_dir / f"{stem}.tsv"
        js.write_text(self.to_json(), encoding="utf-8")
        tsv.write_text(self.to_tsv(), encoding="utf-8")
        return js, tsv


def run_eval(items: list[QAItem], config: EvalConfig, pipeline) -> EvalReport:
    """Answer every item through ``pipeline`` and score against the dataset.

    Per-question failures are recorded as incorrect; they never stop the run.
    """
    if not items:
        raise EmptyEvalError("nothing to evaluate")
    if config.mode == "no_privacy" and not config.allow_leak:
        raise PolicyError("no_privacy mode sends questions unmasked; it needs allow_leak")

    def one(item: QAItem) -> QuestionRecord:
        result = pipeline.ask(item.question, mode=config.mode)
        results = sorted(result.results or ())
        verdict = result.error is None and compare_answers(results, item.expected_answers)
        return QuestionRecord(
            qid=item.qid,
            question=item.question,
            masked_text=result.masked.masked_text if result.masked else None,
            final_query=result.final.statement if result.final else None,
            results=results,
            expected=sorted(item.expected_answers),
            verdict=verdict,
            error=None if result.error is None else f"{type(result.error).__name__}: {result.error}",
            overridden=not verdict and config.manual_overrides.get(item.qid, False),
            violations=[v.rule for v in (result.generated.violations if result.generated else ())],
        )

    with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
        records = list(pool.map(one, items))
    metadata = {
        "mode": config.mode,
        "model": getattr(pipeline, "model_name", "unknown"),
        "decoding": getattr(pipeline, "decoding", {}),
        "rules_version": getattr(pipeline, "rules_version", None),
        "parallelism": config.parallelism,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    return EvalReport(records, metadata)
