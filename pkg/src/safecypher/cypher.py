"""Post-processing of LLM replies.

A deliberately small Cypher tokenizer backs three steps: :func:`sanitize`
cuts the statement out of a chatty reply, :func:`validate` reports structural
rule violations against the schema, and :func:`restore_placeholders` puts the
sensitive values back, only ever inside string literals.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping

from .catalog import PLACEHOLDER_RE, is_placeholder
from .errors import NotAQueryError, UnresolvedPlaceholderError, UnsafePositionError
from .schema import GraphSchema

# -- tokenizer -------------------------------------------------------------------

_TOKEN_SPEC = [
    ("WS", r"\s+"),
    ("COMMENT", r"//[^\n]*|/\*.*?\*/"),
    ("STRING", r"'(?:[^'\\]|\\.)*'|\"(?:[^\"\\]|\\.)*\""),
    ("BACKTICK", r"`(?:[^`]|``)*`"),
    ("NUMBER", r"\d+\.\d+(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?"),
    ("PARAM", r"\$\w+"),
    ("IDENT", r"[^\W\d]\w*"),
    ("PUNCT", r"<-|->|<>|<=|>=|=~|\+=|\.\.|[^\s\w]"),
]
_TOKEN_RE = re.compile("|".join(f"(?P<{k}>{p})" for k, p in _TOKEN_SPEC), re.DOTALL)


@dataclass(frozen=True)
class CToken:
    kind: str  # WS COMMENT STRING BACKTICK NUMBER PARAM IDENT PLACEHOLDER PUNCT
    text: str
    start: int
    end: int

    def is_kw(self, *words: str) -> bool:
        return self.kind == "IDENT" and self.text.upper() in words


def tokenize(statement: str) -> list[CToken]:
    """Lossless tokenization: ``"".join(t.text for t in tokens) == statement``."""
    out = []
    pos = 0
    while pos < len(statement):
        m = _TOKEN_RE.match(statement, pos)
        if m is None:  # unterminated quote or comment: keep the rest verbatim
            out.append(CToken("PUNCT", statement[pos:], pos, len(statement)))
            break
        kind = m.lastgroup
        text = m.group(0)
        if kind == "IDENT" and is_placeholder(text):
            kind = "PLACEHOLDER"
        out.append(CToken(kind, text, pos, m.end()))
        pos = m.end()
    return out


def significant(tokens: list[CToken]) -> list[CToken]:
    return [t for t in tokens if t.kind not in ("WS", "COMMENT")]


_ESCAPES = {"\\": "\\", "'": "'", '"': '"', "n": "\n", "t": "\t", "r": "\r", "b": "\b", "f": "\f"}


def decode_string(literal: str) -> str:
    """Value of a quoted Cypher string literal."""
    body = literal[1:-1]
    out, i = [], 0
    while i < len(body):
        c = body[i]
        if c == "\\" and i + 1 < len(body):
            nxt = body[i + 1]
            if nxt == "u" and i + 6 <= len(body):
                out.append(chr(int(body[i + 2 : i + 6], 16)))
                i += 6
                continue
            out.append(_ESCAPES.get(nxt, nxt))
            i += 2
            continue
        out.append(c)
        i += 1
    return "".join(out)


def escape_string(value: str) -> str:
    """Escape a value for use inside either kind of quoted literal."""
    return value.replace("\\", "\\\\").replace("'", "\\'").replace('"', '\\"')


# -- data types -------------------------------------------------------------------

RULE_IDS = (
    "DIRECTED_RELATIONSHIP",
    "MISSING_NODE_LABEL",
    "UNKNOWN_LABEL",
    "RETURNS_WHOLE_NODE",
    "MULTIPLE_STATEMENTS",
)


@dataclass(frozen=True)
class RuleViolation:
    rule: str
    location: tuple[int, int]
    detail: str = ""

    def __post_init__(self):
        if self.rule not in RULE_IDS:
            raise ValueError(f"unknown rule id {self.rule!r}")


@dataclass(frozen=True)
class Advisory:
    """Non-fatal finding, e.g. a relationship type the prompt asked to omit."""

    rule: str
    location: tuple[int, int]
    detail: str = ""


@dataclass(frozen=True)
class GeneratedQuery:
    raw: str
    statement: str
    placeholders_used: frozenset[str] = frozenset()
    violations: tuple[RuleViolation, ...] = ()
    advisories: tuple[Advisory, ...] = ()


@dataclass(frozen=True)
class FinalQuery:
    statement: str
    restored_values: tuple[tuple[str, str], ...] = field(default_factory=tuple)


# -- sanitize ----------------------------------------------------------------------

_FENCE_RE = re.compile(r"```[ \t]*([A-Za-z0-9_-]*)[ \t]*\n?(.*?)```", re.DOTALL)
_START_RE = re.compile(r"\b(?:OPTIONAL\s+MATCH|MATCH)\b")
_CONTINUATION_RE = re.compile(r"^\s*(?:ORDER\s+BY|SKIP|LIMIT|,)", re.IGNORECASE)


def _find_start(text: str) -> int | None:
    m = _START_RE.search(text) or re.search(_START_RE.pattern, text, re.IGNORECASE)
    return m.start() if m else None


def sanitize(raw: str) -> GeneratedQuery:
    """Extract the Cypher statement from a raw reply.

    Markdown fences and surrounding prose are dropped.  The statement runs
    from the first MATCH to the end of the last RETURN clause (a trailing
    ``;`` is removed; inner ones are kept so :func:`validate` can flag them).
    """
    text = raw
    fences = [m.group(2) for m in _FENCE_RE.finditer(raw) if _find_start(m.group(2)) is not None]
    if fences:
        text = fences[0]
    start = _find_start(text)
    if start is None:
        raise NotAQueryError(f"no MATCH clause in reply: {raw[:80]!r}")
    text = text[start:]
    returns = [t for t in tokenize(text) if t.is_kw("RETURN")]
    if not returns:
        raise NotAQueryError(f"no RETURN clause in reply: {raw[:80]!r}")
    last = returns[-1]
    lines_end = text.find("\n", last.end)
    end = len(text) if lines_end < 0 else lines_end
    # Multi-line RETURN lists and ORDER BY / SKIP / LIMIT continuation lines.
    while end < len(text):
        line_start = end + 1
        nl = text.find("\n", line_start)
        line_end = len(text) if nl < 0 else nl
        line = text[line_start:line_end]
        if text[:end].rstrip().endswith(",") or _CONTINUATION_RE.match(line):
            end = line_end
        else:
            break
    statement = text[:end].rstrip()
    while statement.endswith(";"):
        statement = statement[:-1].rstrip()
    placeholders = frozenset(m.group(0) for m in PLACEHOLDER_RE.finditer(statement))
    return GeneratedQuery(raw=raw, statement=statement, placeholders_used=placeholders)


# -- validate ----------------------------------------------------------------------

_PATTERN_CLAUSES = ("MATCH", "MERGE", "CREATE")
_CLAUSE_KEYWORDS = {
    "MATCH", "OPTIONAL", "WHERE", "RETURN", "WITH", "UNWIND", "CALL", "MERGE", "CREATE",
    "SET", "DELETE", "DETACH", "REMOVE", "ORDER", "SKIP", "LIMIT", "UNION", "FOREACH", "YIELD",
}


@dataclass
class _NodePattern:
    var: str | None
    labels: list[CToken]
    start: int
    end: int


def _pattern_regions(sig: list[CToken]) -> list[tuple[int, int]]:
    """Index ranges of ``sig`` that hold graph patterns (after MATCH etc.)."""
    regions, i = [], 0
    while i < len(sig):
        if sig[i].is_kw(*_PATTERN_CLAUSES):
            j = i + 1
            depth = 0
            while j < len(sig):
                t = sig[j]
                if t.text in "([{":
                    depth += 1
                elif t.text in ")]}":
                    depth -= 1
                elif depth == 0 and (t.is_kw(*_CLAUSE_KEYWORDS) or t.text == ";"):
                    break
                j += 1
            regions.append((i + 1, j))
            i = j
        else:
            i += 1
    return regions


def _parse_node(sig: list[CToken], i: int) -> tuple[_NodePattern, int] | None:
    """Try to read ``(var:Label:Other {..})`` starting at ``sig[i] == '('``."""
    j = i + 1
    var = None
    if j < len(sig) and sig[j].kind in ("IDENT", "BACKTICK"):
        var = sig[j].text
        j += 1
    labels = []
    while j + 1 < len(sig) and sig[j].text == ":" and sig[j + 1].kind in ("IDENT", "BACKTICK", "PLACEHOLDER"):
        labels.append(sig[j + 1])
        j += 2
    if j < len(sig) and sig[j].text == "{":
        depth = 0
        while j < len(sig):
            if sig[j].text == "{":
                depth += 1
            elif sig[j].text == "}":
                depth -= 1
                if depth == 0:
                    break
            j += 1
        j += 1
    if j < len(sig) and sig[j].text == ")":
        return _NodePattern(var, labels, sig[i].start, sig[j].end), j + 1
    return None


def _label_name(tok: CToken) -> str:
    return tok.text[1:-1].replace("``", "`") if tok.kind == "BACKTICK" else tok.text


def _return_items(sig: list[CToken]) -> list[list[CToken]]:
    """Top-level comma-separated items of the last RETURN clause."""
    idx = [k for k, t in enumerate(sig) if t.is_kw("RETURN")]
    if not idx:
        return []
    k = idx[-1] + 1
    if k < len(sig) and sig[k].is_kw("DISTINCT"):
        k += 1
    items, cur, depth = [], [], 0
    while k < len(sig):
        t = sig[k]
        if depth == 0 and (t.is_kw("ORDER", "SKIP", "LIMIT", "UNION") or t.text == ";"):
            break
        if t.text in "([{":
            depth += 1
        elif t.text in ")]}":
            depth -= 1
        if depth == 0 and t.text == ",":
            items.append(cur)
            cur = []
        else:
            cur.append(t)
        k += 1
    if cur:
        items.append(cur)
    return items


def analyze(q: GeneratedQuery, schema: GraphSchema) -> tuple[list[RuleViolation], list[Advisory]]:
    tokens = tokenize(q.statement)
    sig = significant(tokens)
    violations: list[RuleViolation] = []
    advisories: list[Advisory] = []

    nodes: list[_NodePattern] = []
    for lo, hi in _pattern_regions(sig):
        i = lo
        while i < hi:
            t = sig[i]
            if t.text == "(":
                parsed = _parse_node(sig, i)
                if parsed:
                    nodes.append(parsed[0])
                    i = parsed[1]
                    continue
            elif t.text in ("->", "<-"):
                nxt = sig[i + 1] if i + 1 < len(sig) else None
                prev = sig[i - 1] if i > 0 else None
                if (prev is not None and prev.text in ("]", "-", ")")) or (nxt is not None and nxt.text in ("[", "-", "(")):
                    violations.append(RuleViolation("DIRECTED_RELATIONSHIP", (t.start, t.end), f"arrow {t.text!r}"))
            elif t.text == "[" and i > 0 and sig[i - 1].text in ("-", "<-"):
                j = i + 1
                if j < len(sig) and sig[j].kind in ("IDENT", "BACKTICK"):
                    j += 1
                if j < len(sig) and sig[j].text == ":":
                    end = j
                    while end < len(sig) and sig[end].text != "]":
                        end += 1
                    types = " ".join(x.text for x in sig[j + 1 : end] if x.kind in ("IDENT", "BACKTICK"))
                    known = all(
                        _label_name(x) in schema.relation_labels
                        for x in sig[j + 1 : end]
                        if x.kind in ("IDENT", "BACKTICK")
                    )
                    detail = f"relationship type {types}" + ("" if known else " (not in schema)")
                    advisories.append(Advisory("RELATIONSHIP_TYPE", (sig[j].start, sig[end - 1].end), detail))
            i += 1

    labelled_vars = {n.var for n in nodes if n.var and n.labels}
    for n in nodes:
        if not n.labels and (n.var is None or n.var not in labelled_vars):
            violations.append(RuleViolation("MISSING_NODE_LABEL", (n.start, n.end), f"node {n.var or '()'} has no label"))
        for lab in n.labels:
            if _label_name(lab) not in schema.node_labels:
                violations.append(RuleViolation("UNKNOWN_LABEL", (lab.start, lab.end), f"label {lab.text!r} not in schema"))

    node_vars = {n.var for n in nodes if n.var}
    for item in _return_items(sig):
        expr = item
        for k, t in enumerate(item):
            if t.is_kw("AS"):
                expr = item[:k]
                break
        if len(expr) == 1 and ((expr[0].kind == "IDENT" and expr[0].text in node_vars) or (expr[0].text == "*" and node_vars)):
            violations.append(RuleViolation("RETURNS_WHOLE_NODE", (expr[0].start, expr[0].end), f"returns {expr[0].text}"))

    for k, t in enumerate(sig):
        if t.text == ";" and k + 1 < len(sig):
            violations.append(RuleViolation("MULTIPLE_STATEMENTS", (t.start, t.end), "more than one statement"))

    violations.sort(key=lambda v: (v.location, v.rule))
    advisories.sort(key=lambda a: (a.location, a.rule))
    return violations, advisories


def validate(q: GeneratedQuery, schema: GraphSchema) -> list[RuleViolation]:
    """Structural rule violations, sorted by span.  Never alters the statement."""
    return analyze(q, schema)[0]


def check(q: GeneratedQuery, schema: GraphSchema) -> GeneratedQuery:
    """Return ``q`` with its violations and advisories filled in."""
    violations, advisories = analyze(q, schema)
    return GeneratedQuery(q.raw, q.statement, q.placeholders_used, tuple(violations), tuple(advisories))


# -- restoration -----------------------------------------------------------------

def restore_placeholders(q: GeneratedQuery, restorations: Mapping[str, str]) -> FinalQuery:
    """Substitute original values for placeholders inside string literals.

    Values are escaped so they cannot terminate the literal.  A placeholder in
    any other position (identifier, label, bare token) is refused.
    """
    missing = q.placeholders_used - set(restorations)
    if missing:
        raise UnresolvedPlaceholderError(missing)
    parts = []
    restored: list[tuple[str, str]] = []
    for tok in tokenize(q.statement):
        if tok.kind == "STRING":
            body = tok.text[1:-1]

            def swap(m):
                name = m.group(0)
                if name not in restorations:
                    raise UnresolvedPlaceholderError([name])
                restored.append((name, restorations[name]))
                return escape_string(restorations[name])

            parts.append(tok.text[0] + PLACEHOLDER_RE.sub(swap, body) + tok.text[-1])
        elif PLACEHOLDER_RE.search(tok.text):
            raise UnsafePositionError(
                f"placeholder {PLACEHOLDER_RE.search(tok.text).group(0)} outside a string literal at offset {tok.start}"
            )
        else:
            parts.append(tok.text)
    return FinalQuery("".join(parts), tuple(restored))
