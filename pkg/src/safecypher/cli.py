"""Command-line interface.

Exit codes: 0 ok, 2 input, 3 store, 4 backend, 5 policy.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from . import metaqa
from .catalog import SensitivityPolicy, SynonymTable, load_policy, load_synonyms
from .errors import InputError, PolicyError, SafeCypherError
from .llm import LlmBackendConfig, make_backend
from .pipeline import Pipeline
from .schema import extract_schema, filter_schema, load_grant, render_schema, save_schema
from .store import open_store

BUILTIN = "metaqa"


@dataclass
class AppConfig:
    store: str = "graph.json"
    backend: LlmBackendConfig = field(default_factory=LlmBackendConfig)
    synonyms: str | None = None
    policy: str | None = None
    grant: str | None = None
    cache_dir: str | None = None
    parallelism: int = 4
    strict: bool = False

    def check_files(self) -> None:
        for name in ("synonyms", "policy", "grant"):
            value = getattr(self, name)
            if value and value != BUILTIN and not Path(value).exists():
                raise InputError(f"{name} file not found: {value}")
        if self.backend.provider == "mock" and self.backend.fixtures and not Path(self.backend.fixtures).exists():
            raise InputError(f"mock fixture file not found: {self.backend.fixtures}")

    def load_synonyms(self) -> SynonymTable | None:
        if not self.synonyms:
            return None
        return metaqa.metaqa_synonyms() if self.synonyms == BUILTIN else load_synonyms(self.synonyms)

    def load_policy(self) -> SensitivityPolicy | None:
        if not self.policy:
            return None
        return metaqa.metaqa_policy() if self.policy == BUILTIN else load_policy(self.policy)


def load_config(path: str | None) -> AppConfig:
    if path is None:
        return AppConfig()
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputError(f"cannot read config file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"config file {path}: {exc.msg} (line {exc.lineno})") from None
    base = Path(path).parent

    def rel(value):
        # Paths in a config file are relative to the file itself.
        if value is None or value == BUILTIN or "://" in value or value.startswith("memory:"):
            return value
        p = Path(value[5:] if value.startswith("file:") else value)
        return str(p if p.is_absolute() else base / p)

    backend = dict(doc.get("backend", {}))
    if backend.get("fixtures"):
        backend["fixtures"] = rel(backend["fixtures"])
    return AppConfig(
        store=rel(doc.get("store", "graph.json")),
        backend=LlmBackendConfig.from_dict(backend),
        synonyms=rel(doc.get("synonyms")),
        policy=rel(doc.get("policy")),
        grant=rel(doc.get("grant")),
        cache_dir=rel(doc.get("cache_dir")),
        parallelism=int(doc.get("parallelism", 4)),
        strict=bool(doc.get("strict", False)),
    )


def _resolve(args) -> AppConfig:
    cfg = load_config(args.config)
    for name in ("store", "synonyms", "policy", "cache_dir", "parallelism", "grant"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if getattr(args, "strict", False):
        cfg.strict = True
    if getattr(args, "fixtures", None):
        cfg.backend = LlmBackendConfig.from_dict({**cfg.backend.__dict__, "provider": "mock", "fixtures": args.fixtures})
    cfg.check_files()
    return cfg


def _pipeline(cfg: AppConfig, backend_factory, with_backend: bool) -> Pipeline:
    store = open_store(cfg.store)
    grant = load_grant(cfg.grant) if cfg.grant else None
    backend = backend_factory(cfg.backend, cfg.cache_dir) if with_backend else None
    return Pipeline.from_store(
        store,
        cfg.load_synonyms(),
        cfg.load_policy(),
        backend,
        grant=grant,
        strict=cfg.strict,
        model_name=cfg.backend.model if cfg.backend.provider == "chat" else "mock",
        decoding=dict(cfg.backend.decoding),
    )


# -- commands --------------------------------------------------------------------

def cmd_ingest(args, cfg: AppConfig, out, backend_factory) -> int:
    triples = metaqa.parse_kb(args.kb)
    store = open_store(cfg.store, create=True)
    try:
        summary = metaqa.ingest(triples, store)
    finally:
        store.close()
    print(f"triples: {summary.triples}", file=out)
    print(f"nodes: {summary.total_nodes}", file=out)
    for label, n in summary.nodes.items():
        print(f"  {label}: {n}", file=out)
    print(f"relationships: {summary.total_relationships}", file=out)
    for rel, n in summary.relationships.items():
        print(f"  {rel}: {n}", file=out)
    return 0


def cmd_schema(args, cfg: AppConfig, out, backend_factory) -> int:
    store = open_store(cfg.store)
    try:
        schema = extract_schema(store)
    finally:
        store.close()
    if cfg.grant:
        schema = filter_schema(schema, load_grant(cfg.grant))
    if args.save:
        save_schema(schema, args.save)
    print(render_schema(schema), file=out)
    return 0


def cmd_mask(args, cfg: AppConfig, out, backend_factory) -> int:
    pipe = _pipeline(cfg, backend_factory, with_backend=False)
    masked = pipe.mask_question(args.question, synonyms=not args.no_synonyms)
    if args.json:
        doc = {
            "masked_text": masked.masked_text,
            "restorations": dict(masked.restorations),
            "substitutions": [
                {"surface": s.surface, "canonical": s.canonical, "class": s.entity_class.value}
                for s in masked.substitutions
            ],
        }
        print(json.dumps(doc, indent=2, ensure_ascii=False), file=out)
        return 0
    print(masked.masked_text, file=out)
    print("", file=out)
    print("placeholder\tvalue", file=out)
    for key, value in masked.restorations.items():
        print(f"{key}\t{value}", file=out)
    return 0


def _check_leak_gate(args) -> None:
    if args.mode == "no_privacy" and not args.allow_leak:
        raise PolicyError("no_privacy mode sends the question unmasked; pass --allow-leak to confirm")


def cmd_ask(args, cfg: AppConfig, out, backend_factory) -> int:
    _check_leak_gate(args)
    pipe = _pipeline(cfg, backend_factory, with_backend=not args.dry_run)
    try:
        result = pipe.answer(args.question, mode=args.mode, dry_run=args.dry_run)
    finally:
        pipe.store.close()
    if args.dry_run:
        print(result.prompt.full_text, end="", file=out)
        print(f"[estimated tokens: {result.prompt.token_estimate}]", file=sys.stderr)
        return 0
    if args.show_query:
        print(result.final.statement, file=sys.stderr)
    if args.show_violations:
        for v in result.generated.violations:
            print(f"violation {v.rule} at {v.location[0]}-{v.location[1]}: {v.detail}", file=sys.stderr)
        for a in result.generated.advisories:
            print(f"advisory {a.rule} at {a.location[0]}-{a.location[1]}: {a.detail}", file=sys.stderr)
    for value in sorted(result.results):
        print(value, file=out)
    return 0


def cmd_eval(args, cfg: AppConfig, out, backend_factory) -> int:
    _check_leak_gate(args)
    items = metaqa.parse_qa(args.qa)
    if args.dedupe:
        items = metaqa.dedupe_patterns(items)
    if args.limit:
        items = items[: args.limit]
    overrides = {}
    if args.overrides:
        try:
            raw = json.loads(Path(args.overrides).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read overrides: {exc}") from None
        overrides = {int(k): bool(v) for k, v in raw.items()}
    try:
        config = metaqa.EvalConfig(args.mode, cfg.parallelism, overrides, allow_leak=args.allow_leak)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    pipe = _pipeline(cfg, backend_factory, with_backend=True)
    try:
        report = metaqa.run_eval(items, config, pipe)
    finally:
        pipe.store.close()
    js, tsv = report.save(args.out, stem=f"report_{args.mode}")
    print(f"accuracy: {report.accuracy:.3f} ({report.correct}/{report.total})", file=out)
    if overrides:
        print(f"accuracy with overrides: {report.accuracy_with_overrides:.3f}", file=out)
    print(f"report: {js}", file=out)
    print(f"table: {tsv}", file=out)
    return 0


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file")
    common.add_argument("--store", default=argparse.SUPPRESS, help="graph snapshot path, memory:, or bolt:// URI")
    common.add_argument("--synonyms", default=argparse.SUPPRESS, help="synonym file, or 'metaqa'")
    common.add_argument("--policy", default=argparse.SUPPRESS, help="sensitivity policy file, or 'metaqa'")
    common.add_argument("--grant", default=argparse.SUPPRESS, help="RBAC grant file restricting the schema")
    common.add_argument("--cache-dir", dest="cache_dir", default=argparse.SUPPRESS)
    common.add_argument("--parallelism", type=int, default=argparse.SUPPRESS)
    common.add_argument("--strict", action="store_true", default=argparse.SUPPRESS, help="treat rule violations as fatal")
    common.add_argument("--fixtures", default=argparse.SUPPRESS, help="use the mock backend with this fixture file")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="safecypher", description=__doc__, parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="load a METAQA kb file into the store")
    p.add_argument("kb")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("schema", parents=[common], help="print the schema used as prompt context")
    p.add_argument("--save", help="also write the schema document here")
    p.set_defaults(func=cmd_schema)

    p = sub.add_parser("mask", parents=[common], help="show the masked question (no backend call)")
    p.add_argument("question")
    p.add_argument("--dry-run", action="store_true", help="accepted for symmetry; mask never calls a backend")
    p.add_argument("--no-synonyms", action="store_true")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_mask)

    modes = metaqa.MODES
    p = sub.add_parser("ask", parents=[common], help="answer one question")
    p.add_argument("question")
    p.add_argument("--mode", choices=modes, default="privacy_complete")
    p.add_argument("--allow-leak", action="store_true")
    p.add_argument("--show-query", action="store_true")
    p.add_argument("--show-violations", action="store_true")
    p.add_argument("--dry-run", action="store_true", help="print the prompt and stop before the backend")
    p.set_defaults(func=cmd_ask)

    p = sub.add_parser("eval", parents=[common], help="score a METAQA question file")
    p.add_argument("qa")
    p.add_argument("--mode", choices=modes, default="privacy_complete")
    p.add_argument("--allow-leak", action="store_true")
    p.add_argument("--out", default="reports")
    p.add_argument("--dedupe", action="store_true", help="keep one question per pattern")
    p.add_argument("--limit", type=int)
    p.add_argument("--overrides", help="JSON map of question id -> true (manual reassessment)")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None, backend_factory: Callable[..., Any] | None = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("config", "store", "synonyms", "policy", "grant", "cache_dir", "parallelism", "fixtures"):
        if not hasattr(args, name):
            setattr(args, name, None)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING)
    try:
        cfg = _resolve(args)
        return args.func(args, cfg, out, backend_factory or make_backend)
    except SafeCypherError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
