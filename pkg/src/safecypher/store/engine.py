"""Read-only Cypher subset executed against a :class:`MemoryGraphStore`.

Supported: ``[OPTIONAL] MATCH`` with node/relationship patterns (any
direction, type alternation, variable length, inline property maps, path
variables), ``WHERE``, ``WITH``, ``UNWIND``, ``RETURN [DISTINCT]`` with
aliases, top-level aggregates (count, collect, sum, avg, min, max),
``ORDER BY``, ``SKIP``, ``LIMIT`` and ``UNION [ALL]``.  Anything else raises
:class:`~safecypher.errors.ExecutionError`, as a real store would on a
statement it cannot run.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Any

from ..cypher import CToken, decode_string, significant, tokenize
from ..errors import ExecutionError

AGGREGATES = {"count", "collect", "sum", "avg", "min", "max"}


@dataclass(eq=False)
class Node:
    id: int
    labels: tuple[str, ...]
    props: dict[str, Any]

    def __eq__(self, other):
        return isinstance(other, Node) and other.id == self.id

    def __hash__(self):
        return hash(("node", self.id))


@dataclass(eq=False)
class Rel:
    id: int
    type: str
    start: int
    end: int
    props: dict[str, Any]

    def __eq__(self, other):
        return isinstance(other, Rel) and other.id == self.id

    def __hash__(self):
        return hash(("rel", self.id))


@dataclass(frozen=True)
class Path:
    nodes: tuple[Node, ...]
    rels: tuple[Rel, ...]


# -- AST -------------------------------------------------------------------------

@dataclass
class NodePat:
    var: str | None
    labels: list[str]
    props: dict[str, Any]  # name -> expr


@dataclass
class RelPat:
    var: str | None
    types: list[str]
    direction: str  # "out" | "in" | "both"
    props: dict[str, Any]
    min_hops: int = 1
    max_hops: int | None = 1


@dataclass
class PathPat:
    var: str | None
    nodes: list[NodePat]
    rels: list[RelPat]


@dataclass
class Match:
    patterns: list[PathPat]
    where: Any = None
    optional: bool = False


@dataclass
class Unwind:
    expr: Any
    var: str


@dataclass
class Projection:
    items: list[tuple[Any, str]]  # (expr, column name); expr None means '*'
    distinct: bool = False
    where: Any = None
    order: list[tuple[Any, bool]] = field(default_factory=list)
    skip: Any = None
    limit: Any = None
    is_return: bool = False


# expression nodes are plain tuples: ("lit", v) ("param", name) ("var", name)
# ("prop", expr, key) ("index", expr, idx) ("slice", expr, lo, hi) ("list", [..])
# ("map", {..}) ("call", name, distinct, [args]) ("countstar",) ("op", op, a, b)
# ("not", a) ("neg", a) ("isnull", a, negate)


class _Parser:
    def __init__(self, statement: str):
        self.toks: list[CToken] = [t for t in significant(tokenize(statement))]
        for t in self.toks:
            if t.kind == "PLACEHOLDER":
                object.__setattr__(t, "kind", "IDENT")
        self.i = 0

    # token helpers
    def peek(self, k: int = 0) -> CToken | None:
        j = self.i + k
        return self.toks[j] if j < len(self.toks) else None

    def at(self, *texts: str, k: int = 0) -> bool:
        t = self.peek(k)
        return t is not None and t.text in texts and t.kind == "PUNCT"

    def at_kw(self, *words: str, k: int = 0) -> bool:
        t = self.peek(k)
        return t is not None and t.is_kw(*words)

    def take(self) -> CToken:
        t = self.peek()
        if t is None:
            raise ExecutionError("unexpected end of statement")
        self.i += 1
        return t

    def expect(self, text: str) -> CToken:
        t = self.take()
        if t.text != text:
            raise ExecutionError(f"expected {text!r} at offset {t.start}, found {t.text!r}")
        return t

    def expect_kw(self, word: str) -> CToken:
        t = self.take()
        if not t.is_kw(word):
            raise ExecutionError(f"expected {word} at offset {t.start}, found {t.text!r}")
        return t

    def name(self) -> str:
        t = self.take()
        if t.kind == "IDENT":
            return t.text
        if t.kind == "BACKTICK":
            return t.text[1:-1].replace("``", "`")
        raise ExecutionError(f"expected a name at offset {t.start}, found {t.text!r}")

    # statements
    def parse(self) -> list[tuple[list, bool]]:
        """Return [(clauses, union_all_before)] for each UNION part."""
        parts = [(self.single_query(), False)]
        while self.at_kw("UNION"):
            self.take()
            all_ = False
            if self.at_kw("ALL"):
                self.take()
                all_ = True
            parts.append((self.single_query(), all_))
        if self.at(";"):
            self.take()
        if self.peek() is not None:
            t = self.peek()
            raise ExecutionError(f"unexpected {t.text!r} at offset {t.start}")
        return parts

    def single_query(self) -> list:
        clauses = []
        while True:
            if self.at_kw("OPTIONAL"):
                self.take()
                self.expect_kw("MATCH")
                clauses.append(self.match(optional=True))
            elif self.at_kw("MATCH"):
                self.take()
                clauses.append(self.match(optional=False))
            elif self.at_kw("UNWIND"):
                self.take()
                expr = self.expr()
                self.expect_kw("AS")
                clauses.append(Unwind(expr, self.name()))
            elif self.at_kw("WITH"):
                self.take()
                clauses.append(self.projection(is_return=False))
            elif self.at_kw("RETURN"):
                self.take()
                clauses.append(self.projection(is_return=True))
                return clauses
            else:
                t = self.peek()
                if t is None:
                    raise ExecutionError("query must end with RETURN")
                raise ExecutionError(f"unsupported clause {t.text!r} at offset {t.start}")

    def match(self, optional: bool) -> Match:
        patterns = [self.path()]
        while self.at(","):
            self.take()
            patterns.append(self.path())
        where = None
        if self.at_kw("WHERE"):
            self.take()
            where = self.expr()
        return Match(patterns, where, optional)

    def path(self) -> PathPat:
        var = None
        t0, t1 = self.peek(), self.peek(1)
        if t0 is not None and t0.kind in ("IDENT", "BACKTICK") and t1 is not None and t1.text == "=":
            var = self.name()
            self.take()
        nodes = [self.node()]
        rels = []
        while self.at("-", "<-"):
            rels.append(self.rel())
            nodes.append(self.node())
        return PathPat(var, nodes, rels)

    def node(self) -> NodePat:
        self.expect("(")
        var = None
        if self.peek() is not None and self.peek().kind in ("IDENT", "BACKTICK"):
            var = self.name()
        labels = []
        while self.at(":"):
            self.take()
            labels.append(self.name())
        props = self.map_literal() if self.at("{") else {}
        self.expect(")")
        return NodePat(var, labels, props)

    def rel(self) -> RelPat:
        left_in = self.take().text == "<-"
        var, types, props, lo, hi = None, [], {}, 1, 1
        if self.at("["):
            self.take()
            if self.peek() is not None and self.peek().kind in ("IDENT", "BACKTICK"):
                var = self.name()
            if self.at(":"):
                self.take()
                types.append(self.name())
                while self.at("|"):
                    self.take()
                    if self.at(":"):
                        self.take()
                    types.append(self.name())
            if self.at("*"):
                self.take()
                lo, hi = 1, None
                if self.peek() is not None and self.peek().kind == "NUMBER":
                    lo = int(self.take().text)
                    hi = lo
                if self.at(".."):
                    self.take()
                    hi = None
                    if self.peek() is not None and self.peek().kind == "NUMBER":
                        hi = int(self.take().text)
            if self.at("{"):
                props = self.map_literal()
            self.expect("]")
        end = self.take().text
        if end not in ("-", "->"):
            raise ExecutionError(f"malformed relationship pattern near {end!r}")
        right_out = end == "->"
        direction = "both" if left_in == right_out else ("in" if left_in else "out")
        return RelPat(var, types, direction, props, lo, hi)

    def map_literal(self) -> dict[str, Any]:
        self.expect("{")
        out = {}
        while not self.at("}"):
            key = self.name()
            self.expect(":")
            out[key] = self.expr()
            if self.at(","):
                self.take()
        self.expect("}")
        return out

    def projection(self, is_return: bool) -> Projection:
        distinct = False
        if self.at_kw("DISTINCT"):
            self.take()
            distinct = True
        items = []
        while True:
            if self.at("*"):
                self.take()
                items.append((None, "*"))
            else:
                begin = self.i
                e = self.expr()
                if self.at_kw("AS"):
                    self.take()
                    col = self.name()
                else:
                    col = self._source_text(begin, self.i)
                items.append((e, col))
            if self.at(","):
                self.take()
                continue
            break
        proj = Projection(items, distinct, is_return=is_return)
        if self.at_kw("ORDER"):
            self.take()
            self.expect_kw("BY")
            while True:
                e = self.expr()
                desc = False
                if self.at_kw("DESC", "DESCENDING"):
                    self.take()
                    desc = True
                elif self.at_kw("ASC", "ASCENDING"):
                    self.take()
                proj.order.append((e, desc))
                if self.at(","):
                    self.take()
                    continue
                break
        if self.at_kw("SKIP"):
            self.take()
            proj.skip = self.expr()
        if self.at_kw("LIMIT"):
            self.take()
            proj.limit = self.expr()
        if not is_return and self.at_kw("WHERE"):
            self.take()
            proj.where = self.expr()
        return proj

    def _source_text(self, lo: int, hi: int) -> str:
        return "".join(
            (" " if k > lo and self.toks[k].start > self.toks[k - 1].end else "") + self.toks[k].text
            for k in range(lo, hi)
        )

    # expressions
    def expr(self):
        return self.or_expr()

    def or_expr(self):
        left = self.xor_expr()
        while self.at_kw("OR"):
            self.take()
            left = ("op", "OR", left, self.xor_expr())
        return left

    def xor_expr(self):
        left = self.and_expr()
        while self.at_kw("XOR"):
            self.take()
            left = ("op", "XOR", left, self.and_expr())
        return left

    def and_expr(self):
        left = self.not_expr()
        while self.at_kw("AND"):
            self.take()
            left = ("op", "AND", left, self.not_expr())
        return left

    def not_expr(self):
        if self.at_kw("NOT"):
            self.take()
            return ("not", self.not_expr())
        return self.comparison()

    def comparison(self):
        left = self.additive()
        while True:
            if self.at("=", "<>", "<", ">", "<=", ">=", "=~"):
                op = self.take().text
                left = ("op", op, left, self.additive())
            elif self.at_kw("IN"):
                self.take()
                left = ("op", "IN", left, self.additive())
            elif self.at_kw("CONTAINS"):
                self.take()
                left = ("op", "CONTAINS", left, self.additive())
            elif self.at_kw("STARTS") and self.at_kw("WITH", k=1):
                self.take(), self.take()
                left = ("op", "STARTS", left, self.additive())
            elif self.at_kw("ENDS") and self.at_kw("WITH", k=1):
                self.take(), self.take()
                left = ("op", "ENDS", left, self.additive())
            elif self.at_kw("IS"):
                self.take()
                negate = False
                if self.at_kw("NOT"):
                    self.take()
                    negate = True
                self.expect_kw("NULL")
                left = ("isnull", left, negate)
            else:
                return left

    def additive(self):
        left = self.multiplicative()
        while self.at("+", "-"):
            op = self.take().text
            left = ("op", op, left, self.multiplicative())
        return left

    def multiplicative(self):
        left = self.unary()
        while self.at("*", "/", "%"):
            op = self.take().text
            left = ("op", op, left, self.unary())
        return left

    def unary(self):
        if self.at("-"):
            self.take()
            return ("neg", self.unary())
        if self.at("+"):
            self.take()
            return self.unary()
        return self.postfix()

    def postfix(self):
        e = self.atom()
        while True:
            if self.at("."):
                self.take()
                e = ("prop", e, self.name())
            elif self.at("["):
                self.take()
                lo = None if self.at("..") else self.expr()
                if self.at(".."):
                    self.take()
                    hi = None if self.at("]") else self.expr()
                    self.expect("]")
                    e = ("slice", e, lo, hi)
                else:
                    self.expect("]")
                    e = ("index", e, lo)
            else:
                return e

    def atom(self):
        t = self.take()
        if t.kind == "NUMBER":
            return ("lit", float(t.text) if any(c in t.text for c in ".eE") else int(t.text))
        if t.kind == "STRING":
            return ("lit", decode_string(t.text))
        if t.kind == "PARAM":
            return ("param", t.text[1:])
        if t.kind == "BACKTICK":
            return ("var", t.text[1:-1].replace("``", "`"))
        if t.kind == "PUNCT":
            if t.text == "(":
                e = self.expr()
                self.expect(")")
                return e
            if t.text == "[":
                items = []
                while not self.at("]"):
                    items.append(self.expr())
                    if self.at(","):
                        self.take()
                self.expect("]")
                return ("list", items)
            if t.text == "{":
                self.i -= 1
                return ("map", self.map_literal())
            raise ExecutionError(f"unexpected {t.text!r} at offset {t.start}")
        if t.kind == "IDENT":
            word = t.text.upper()
            if word == "TRUE":
                return ("lit", True)
            if word == "FALSE":
                return ("lit", False)
            if word == "NULL":
                return ("lit", None)
            if self.at("("):
                self.take()
                fname = t.text.lower()
                if fname == "count" and self.at("*"):
                    self.take()
                    self.expect(")")
                    return ("countstar",)
                distinct = False
                if self.at_kw("DISTINCT"):
                    self.take()
                    distinct = True
                args = []
                while not self.at(")"):
                    args.append(self.expr())
                    if self.at(","):
                        self.take()
                self.expect(")")
                return ("call", fname, distinct, args)
            return ("var", t.text)
        raise ExecutionError(f"unexpected {t.text!r} at offset {t.start}")


def parse(statement: str):
    return _Parser(statement).parse()


# -- evaluation ------------------------------------------------------------------

def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _equal(a, b):
    if a is None or b is None:
        return None
    if _is_num(a) and _is_num(b):
        return a == b
    if isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
        if len(a) != len(b):
            return False
        results = [_equal(x, y) for x, y in zip(a, b)]
        if False in results:
            return False
        return None if None in results else True
    if type(a) is not type(b):
        return False
    return a == b


def _compare(op, a, b):
    if a is None or b is None:
        return None
    if not ((_is_num(a) and _is_num(b)) or (isinstance(a, str) and isinstance(b, str))):
        return None
    return {"<": a < b, ">": a > b, "<=": a <= b, ">=": a >= b}[op]


def _and(a, b):
    if a is False or b is False:
        return False
    if a is None or b is None:
        return None
    return True


def _or(a, b):
    if a is True or b is True:
        return True
    if a is None or b is None:
        return None
    return False


def _truth(v):
    if v is None or isinstance(v, bool):
        return v
    raise ExecutionError(f"expected a boolean, got {v!r}")


def _to_string(v):
    if v is None:
        return None
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float) and v.is_integer():
        return f"{v:.1f}"
    return str(v)


def _to_int(v):
    if v is None:
        return None
    try:
        return int(float(v)) if isinstance(v, str) else int(v)
    except (TypeError, ValueError):
        return None


def _to_float(v):
    if v is None:
        return None
    try:
        return float(v)
    except (TypeError, ValueError):
        return None


def _str_fn(f):
    def wrapped(v):
        if v is None:
            return None
        if not isinstance(v, str):
            raise ExecutionError(f"expected a string, got {v!r}")
        return f(v)

    return wrapped


def _size(v):
    if v is None:
        return None
    if isinstance(v, (str, list, tuple)):
        return len(v)
    raise ExecutionError(f"size() of {v!r}")


def _length(v):
    if isinstance(v, Path):
        return len(v.rels)
    return _size(v)


FUNCTIONS = {
    "tolower": _str_fn(str.lower),
    "toupper": _str_fn(str.upper),
    "lower": _str_fn(str.lower),
    "upper": _str_fn(str.upper),
    "trim": _str_fn(str.strip),
    "ltrim": _str_fn(str.lstrip),
    "rtrim": _str_fn(str.rstrip),
    "tostring": _to_string,
    "tointeger": _to_int,
    "toint": _to_int,
    "tofloat": _to_float,
    "size": _size,
    "length": _length,
    "abs": lambda v: None if v is None else abs(v),
    "labels": lambda v: None if v is None else list(v.labels),
    "type": lambda v: None if v is None else v.type,
    "id": lambda v: None if v is None else v.id,
    "keys": lambda v: None if v is None else sorted(v.props if isinstance(v, (Node, Rel)) else v),
    "properties": lambda v: None if v is None else dict(v.props),
    "nodes": lambda v: None if v is None else list(v.nodes),
    "relationships": lambda v: None if v is None else list(v.rels),
    "head": lambda v: None if not v else v[0],
    "last": lambda v: None if not v else v[-1],
    "reverse": lambda v: None if v is None else (v[::-1]),
    "round": lambda v: None if v is None else float(math.floor(v + 0.5)),
}


class _Evaluator:
    def __init__(self, store, params):
        self.store = store
        self.params = params or {}

    def eval(self, e, row):
        kind = e[0]
        if kind == "lit":
            return e[1]
        if kind == "param":
            if e[1] not in self.params:
                raise ExecutionError(f"missing parameter ${e[1]}")
            return self.params[e[1]]
        if kind == "var":
            if e[1] not in row:
                raise ExecutionError(f"variable `{e[1]}` not defined")
            return row[e[1]]
        if kind == "prop":
            base = self.eval(e[1], row)
            if base is None:
                return None
            if isinstance(base, (Node, Rel)):
                return base.props.get(e[2])
            if isinstance(base, dict):
                return base.get(e[2])
            raise ExecutionError(f"cannot read property {e[2]!r} of {base!r}")
        if kind == "index":
            base, idx = self.eval(e[1], row), self.eval(e[2], row)
            if base is None or idx is None:
                return None
            if isinstance(base, dict):
                return base.get(idx)
            if isinstance(base, (Node, Rel)):
                return base.props.get(idx)
            try:
                return base[idx]
            except (IndexError, TypeError):
                return None
        if kind == "slice":
            base = self.eval(e[1], row)
            lo = self.eval(e[2], row) if e[2] is not None else None
            hi = self.eval(e[3], row) if e[3] is not None else None
            return None if base is None else base[lo:hi]
        if kind == "list":
            return [self.eval(x, row) for x in e[1]]
        if kind == "map":
            return {k: self.eval(v, row) for k, v in e[1].items()}
        if kind == "not":
            v = _truth(self.eval(e[1], row))
            return None if v is None else not v
        if kind == "neg":
            v = self.eval(e[1], row)
            return None if v is None else -v
        if kind == "isnull":
            v = self.eval(e[1], row) is None
            return not v if e[2] else v
        if kind == "op":
            return self.binop(e[1], e[2], e[3], row)
        if kind == "call":
            name = e[1]
            if name in AGGREGATES:
                if "__agg__" in row and id(e) in row["__agg__"]:
                    return row["__agg__"][id(e)]
                raise ExecutionError(f"aggregate {name}() is only supported as a whole projection item")
            if name == "coalesce":
                for a in e[3]:
                    v = self.eval(a, row)
                    if v is not None:
                        return v
                return None
            fn = FUNCTIONS.get(name)
            if fn is None:
                raise ExecutionError(f"unknown function {name}()")
            args = [self.eval(a, row) for a in e[3]]
            if len(args) != 1:
                raise ExecutionError(f"{name}() takes one argument")
            return fn(args[0])
        if kind == "countstar":
            if "__agg__" in row and id(e) in row["__agg__"]:
                return row["__agg__"][id(e)]
            raise ExecutionError("count(*) is only supported as a whole projection item")
        raise ExecutionError(f"cannot evaluate {kind}")

    def binop(self, op, le, re_, row):
        if op == "AND":
            a = _truth(self.eval(le, row))
            if a is False:
                return False
            return _and(a, _truth(self.eval(re_, row)))
        if op == "OR":
            a = _truth(self.eval(le, row))
            if a is True:
                return True
            return _or(a, _truth(self.eval(re_, row)))
        a, b = self.eval(le, row), self.eval(re_, row)
        if op == "XOR":
            a, b = _truth(a), _truth(b)
            return None if a is None or b is None else a != b
        if op == "=":
            return _equal(a, b)
        if op == "<>":
            r = _equal(a, b)
            return None if r is None else not r
        if op in ("<", ">", "<=", ">="):
            return _compare(op, a, b)
        if op == "=~":
            if a is None or b is None:
                return None
            return re.fullmatch(b, a) is not None
        if op == "IN":
            if b is None:
                return None
            if not isinstance(b, (list, tuple)):
                raise ExecutionError("IN expects a list")
            results = [_equal(a, x) for x in b]
            if True in results:
                return True
            return None if None in results else False
        if op in ("CONTAINS", "STARTS", "ENDS"):
            if a is None or b is None:
                return None
            if not isinstance(a, str) or not isinstance(b, str):
                return None
            return {"CONTAINS": b in a, "STARTS": a.startswith(b), "ENDS": a.endswith(b)}[op]
        if a is None or b is None:
            return None
        try:
            if op == "+":
                if isinstance(a, list) or isinstance(b, list):
                    return (a if isinstance(a, list) else [a]) + (b if isinstance(b, list) else [b])
                if isinstance(a, str) or isinstance(b, str):
                    return _to_string(a) + _to_string(b)
                return a + b
            if op == "-":
                return a - b
            if op == "*":
                return a * b
            if op == "/":
                return a // b if isinstance(a, int) and isinstance(b, int) else a / b
            if op == "%":
                return a % b
        except (TypeError, ZeroDivisionError) as exc:
            raise ExecutionError(str(exc)) from None
        raise ExecutionError(f"unsupported operator {op}")


def _vars_of(e, out: set) -> set:
    if isinstance(e, tuple):
        if e and e[0] == "var":
            out.add(e[1])
        for x in e[1:]:
            _vars_of(x, out)
    elif isinstance(e, list):
        for x in e:
            _vars_of(x, out)
    elif isinstance(e, dict):
        for x in e.values():
            _vars_of(x, out)
    return out


def _conjuncts(e) -> list:
    if e is None:
        return []
    if e[0] == "op" and e[1] == "AND":
        return _conjuncts(e[2]) + _conjuncts(e[3])
    return [e]


def _hashable(v):
    if isinstance(v, list):
        return ("__list__",) + tuple(_hashable(x) for x in v)
    if isinstance(v, dict):
        return ("__map__",) + tuple(sorted((k, _hashable(x)) for k, x in v.items()))
    if isinstance(v, Path):
        return ("__path__", tuple(n.id for n in v.nodes), tuple(r.id for r in v.rels))
    if isinstance(v, float) and v.is_integer():
        return int(v)
    return v


_TYPE_RANK = {dict: 0, Node: 1, Rel: 2, list: 3, Path: 4, str: 5, bool: 6}


def _sort_key(v):
    if v is None:
        return (9, 0)
    if _is_num(v):
        return (7, v)
    rank = _TYPE_RANK.get(type(v), 8)
    if isinstance(v, (Node, Rel)):
        return (rank, v.id)
    if isinstance(v, list):
        return (rank, tuple(_sort_key(x) for x in v))
    if isinstance(v, (str, bool)):
        return (rank, v)
    return (rank, repr(v))


class _Desc:
    __slots__ = ("k",)

    def __init__(self, k):
        self.k = k

    def __lt__(self, other):
        return other.k < self.k

    def __eq__(self, other):
        return self.k == other.k


class Executor:
    def __init__(self, store, params=None):
        self.store = store
        self.ev = _Evaluator(store, params)

    def run(self, statement: str) -> list[dict[str, Any]]:
        parts = parse(statement)
        result_cols = None
        rows: list[dict] = []
        dedupe = False
        for clauses, all_ in parts:
            cols, part_rows = self.single(clauses)
            if result_cols is None:
                result_cols = cols
            elif cols != result_cols:
                raise ExecutionError("all sub queries in a UNION must have the same return column names")
            rows.extend(part_rows)
            if not all_ and len(parts) > 1:
                dedupe = True
        if dedupe:
            seen, unique = set(), []
            for r in rows:
                key = tuple(_hashable(v) for v in r.values())
                if key not in seen:
                    seen.add(key)
                    unique.append(r)
            rows = unique
        return rows

    def single(self, clauses):
        rows: list[dict] = [{}]
        cols: list[str] = []
        for clause in clauses:
            if isinstance(clause, Match):
                rows = self.match(clause, rows)
            elif isinstance(clause, Unwind):
                out = []
                for r in rows:
                    v = self.ev.eval(clause.expr, r)
                    if v is None:
                        continue
                    for item in v if isinstance(v, list) else [v]:
                        out.append({**r, clause.var: item})
                rows = out
            else:
                cols, rows = self.project(clause, rows)
        return cols, [{c: r[c] for c in cols} for r in rows]

    # -- matching --
    def match(self, clause: Match, rows):
        conjuncts = [(c, _vars_of(c, set())) for c in _conjuncts(clause.where)]
        new_vars: list[str] = []
        for p in clause.patterns:
            for v in [p.var] + [n.var for n in p.nodes] + [r.var for r in p.rels]:
                if v and v not in new_vars:
                    new_vars.append(v)
        out = []
        for row in rows:
            bound_before = set(row)
            fresh = [v for v in new_vars if v not in bound_before]
            pending = [(c, vs) for c, vs in conjuncts]
            found = False
            for env in self._match_patterns(clause.patterns, 0, dict(row), set(), pending):
                if all(self.ev.eval(c, env) is True for c, _ in pending):
                    found = True
                    out.append(env)
            if not found and clause.optional:
                out.append({**row, **{v: None for v in fresh}})
        return out

    def _ready(self, pending, env):
        names = set(env)
        return all(self.ev.eval(c, env) is True for c, vs in pending if vs <= names)

    def _match_patterns(self, patterns, k, env, used, pending):
        if k == len(patterns):
            yield env
            return
        p = patterns[k]
        for env2, used2 in self._match_path(p, env, used, pending):
            yield from self._match_patterns(patterns, k + 1, env2, used2, pending)

    def _node_ok(self, node: Node, pat: NodePat, env) -> bool:
        if any(lab not in node.labels for lab in pat.labels):
            return False
        for key, e in pat.props.items():
            if _equal(node.props.get(key), self.ev.eval(e, env)) is not True:
                return False
        return True

    def _candidates(self, pat: NodePat, env):
        if pat.var and pat.var in env:
            v = env[pat.var]
            if v is None:
                return []
            if not isinstance(v, Node):
                raise ExecutionError(f"variable `{pat.var}` is not a node")
            return [v] if self._node_ok(v, pat, env) else []
        if pat.labels:
            pool = self.store._nodes_with_label(pat.labels[0])
        else:
            pool = self.store._all_nodes()
        return [n for n in pool if self._node_ok(n, pat, env)]

    def _anchor(self, p: PathPat, env, pending) -> int:
        def score(i):
            n = p.nodes[i]
            if n.var and n.var in env:
                return (0, 0)
            if n.var and any(vs == {n.var} for _, vs in pending):
                return (1, 0)
            if n.props:
                return (2, 0)
            if n.labels:
                return (3, self.store.count_nodes(n.labels[0]))
            return (4, 0)

        return min(range(len(p.nodes)), key=score)

    def _bind(self, env, var, value, pending):
        if var is None:
            return env
        if var in env:
            return env if env[var] == value else None
        env2 = {**env, var: value}
        if not self._ready([(c, vs) for c, vs in pending if var in vs], env2):
            return None
        return env2

    def _match_path(self, p: PathPat, env, used, pending):
        a = self._anchor(p, env, pending)
        for start in self._candidates(p.nodes[a], env):
            env1 = self._bind(env, p.nodes[a].var, start, pending)
            if env1 is None:
                continue
            for env2, used2, right_nodes, right_rels in self._expand(p, a, +1, start, env1, used, pending):
                for env3, used3, left_nodes, left_rels in self._expand(p, a, -1, start, env2, used2, pending):
                    if p.var:
                        nodes = tuple(reversed(left_nodes)) + (start,) + tuple(right_nodes)
                        rels = tuple(reversed(left_rels)) + tuple(right_rels)
                        env4 = self._bind(env3, p.var, Path(nodes, rels), pending)
                        if env4 is None:
                            continue
                        yield env4, used3
                    else:
                        yield env3, used3

    def _expand(self, p: PathPat, idx, step, current: Node, env, used, pending):
        """Walk from node ``idx`` towards the path end (step=+1) or start (-1)."""
        nxt = idx + step
        if nxt < 0 or nxt >= len(p.nodes):
            yield env, used, [], []
            return
        rel = p.rels[idx] if step > 0 else p.rels[nxt]
        direction = rel.direction
        if step < 0 and direction != "both":
            direction = "in" if direction == "out" else "out"
        target_pat = p.nodes[nxt]
        for hops, end_node in self._hops(rel, direction, current, env, used):
            rel_value = hops[0] if (rel.min_hops, rel.max_hops) == (1, 1) else list(hops)
            env1 = self._bind(env, rel.var, rel_value, pending)
            if env1 is None:
                continue
            if not self._node_ok(end_node, target_pat, env1):
                continue
            env2 = self._bind(env1, target_pat.var, end_node, pending)
            if env2 is None:
                continue
            used2 = used | {r.id for r in hops}
            for env3, used3, nodes, rels in self._expand(p, nxt, step, end_node, env2, used2, pending):
                yield env3, used3, [end_node] + nodes, list(hops) + rels

    def _steps(self, rel: RelPat, direction, node: Node, env):
        for r in self.store._incident(node.id, direction):
            if rel.types and r.type not in rel.types:
                continue
            if any(_equal(r.props.get(k), self.ev.eval(e, env)) is not True for k, e in rel.props.items()):
                continue
            other = r.end if r.start == node.id else r.start
            if direction == "out" and r.start != node.id:
                continue
            if direction == "in" and r.end != node.id:
                continue
            yield r, self.store._nodes[other if r.start != r.end else node.id]

    def _hops(self, rel: RelPat, direction, start: Node, env, used):
        lo, hi = rel.min_hops, rel.max_hops
        if rel.var and rel.var in env and hi == 1:
            r = env[rel.var]
            for cand, other in self._steps(rel, direction, start, env):
                if cand == r and cand.id not in used:
                    yield (cand,), other
            return
        stack = [((), start)]
        while stack:
            path, node = stack.pop()
            if len(path) >= lo and path:
                yield path, node
            if hi is not None and len(path) >= hi:
                continue
            taken = used | {r.id for r in path}
            for r, other in reversed(list(self._steps(rel, direction, node, env))):
                if r.id not in taken:
                    stack.append((path + (r,), other))
        if lo == 0:
            yield (), start

    # -- projection --
    def project(self, proj: Projection, rows):
        items = []
        for e, col in proj.items:
            if e is None:
                for v in sorted({k for r in rows for k in r} if rows else []):
                    items.append((("var", v), v))
            else:
                items.append((e, col))
        cols = [c for _, c in items]
        if len(set(cols)) != len(cols):
            raise ExecutionError("duplicate column names in projection")
        is_agg = [e[0] == "countstar" or (e[0] == "call" and e[1] in AGGREGATES) for e, _ in items]
        if any(is_agg):
            out = self._aggregate(items, is_agg, rows)
            pairs = [(r, r) for r in out]
        else:
            pairs = [({c: self.ev.eval(e, r) for e, c in items}, r) for r in rows]
        if proj.distinct:
            seen, unique = set(), []
            for env, orig in pairs:
                key = tuple(_hashable(env[c]) for c in cols)
                if key not in seen:
                    seen.add(key)
                    unique.append((env, orig))
            pairs = unique
        if proj.order:
            def key(pair):
                env, orig = pair
                ctx = {**orig, **env}
                ks = []
                for e, desc in proj.order:
                    k = _sort_key(self.ev.eval(e, ctx))
                    ks.append(_Desc(k) if desc else k)
                return ks

            pairs.sort(key=key)
        if proj.skip is not None:
            pairs = pairs[int(self.ev.eval(proj.skip, {})):]
        if proj.limit is not None:
            pairs = pairs[: int(self.ev.eval(proj.limit, {}))]
        out = [{c: env[c] for c in cols} for env, _ in pairs]
        if proj.where is not None:
            out = [r for r in out if self.ev.eval(proj.where, r) is True]
        return cols, out

    def _aggregate(self, items, is_agg, rows):
        groups: dict[tuple, list] = {}
        keys: dict[tuple, dict] = {}
        for r in rows:
            vals = {c: self.ev.eval(e, r) for (e, c), agg in zip(items, is_agg) if not agg}
            k = tuple(_hashable(v) for v in vals.values())
            groups.setdefault(k, []).append(r)
            keys.setdefault(k, vals)
        if not groups and not any(not a for a in is_agg):
            groups[()] = []
            keys[()] = {}
        out = []
        for k, members in groups.items():
            row = dict(keys[k])
            for (e, c), agg in zip(items, is_agg):
                if agg:
                    row[c] = self._agg_value(e, members)
            out.append(row)
        return out

    def _agg_value(self, e, members):
        if e[0] == "countstar":
            return len(members)
        name, distinct, args = e[1], e[2], e[3]
        if len(args) != 1:
            raise ExecutionError(f"{name}() takes one argument")
        vals = [self.ev.eval(args[0], m) for m in members]
        vals = [v for v in vals if v is not None]
        if distinct:
            seen, uniq = set(), []
            for v in vals:
                h = _hashable(v)
                if h not in seen:
                    seen.add(h)
                    uniq.append(v)
            vals = uniq
        if name == "count":
            return len(vals)
        if name == "collect":
            return vals
        if not vals:
            return 0 if name == "sum" else None
        if name == "sum":
            return sum(vals)
        if name == "avg":
            return sum(vals) / len(vals)
        if name == "min":
            return min(vals, key=_sort_key)
        return max(vals, key=_sort_key)


def execute(store, statement: str, params: dict | None = None) -> list[dict[str, Any]]:
    try:
        return Executor(store, params).run(statement)
    except ExecutionError:
        raise
    except RecursionError:
        raise ExecutionError("statement too deeply nested") from None
